//! Per-layer distribution summaries of a diagonal Fisher.

use serde::{Deserialize, Serialize};

use super::DiagFim;

/// log10 bin edges; bin `i` is `[BIN_EDGES[i], BIN_EDGES[i + 1])`. Exact zeros
/// are counted separately and never enter a bin.
pub const BIN_EDGES: [f64; 13] = [f64::NEG_INFINITY, -30.0, -25.0, -20.0, -15.0, -12.0, -10.0, -8.0, -6.0, -4.0, -2.0, 0.0, f64::INFINITY];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub layer: String,
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub zero_count: usize,
    pub zero_fraction: f64,
    /// Counts per log10 bin, aligned with consecutive pairs of `bin_edges`.
    pub histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FimStats {
    pub bin_edges: Vec<String>,
    pub total_params: usize,
    pub layers: Vec<LayerStats>,
}

/// Bin index of a positive value, `None` for zero.
pub fn log10_bin(value: f64) -> Option<usize> {
    if value == 0.0 {
        return None;
    }
    let l = value.log10();
    let bins = BIN_EDGES.len() - 1;
    Some((0..bins).rev().find(|&i| l >= BIN_EDGES[i]).unwrap_or(0))
}

pub fn fim_stats(fim: &DiagFim) -> FimStats {
    let values = fim.values();
    let layers = values
        .layout()
        .segments()
        .iter()
        .map(|seg| {
            let v = &values.values()[seg.offset..seg.offset + seg.len];
            let mut histogram = vec![0; BIN_EDGES.len() - 1];
            let mut zero_count = 0;
            for &x in v {
                match log10_bin(x) {
                    Some(b) => histogram[b] += 1,
                    None => zero_count += 1,
                }
            }
            let (min, max) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
            let n = v.len();
            LayerStats {
                layer: seg.name.clone(),
                count: n,
                min: if n == 0 { 0.0 } else { min },
                max: if n == 0 { 0.0 } else { max },
                mean: if n == 0 { 0.0 } else { v.iter().sum::<f64>() / n as f64 },
                zero_count,
                zero_fraction: if n == 0 { 0.0 } else { zero_count as f64 / n as f64 },
                histogram,
            }
        })
        .collect();
    FimStats {
        bin_edges: BIN_EDGES.iter().map(|e| format!("{e}")).collect(),
        total_params: values.len(),
        layers,
    }
}
