//! Diagonal Fisher information.
//!
//! The exact estimator enumerates every class under the model's own predictive
//! distribution:
//!
//! `F = 1/N sum_i sum_c p(c|x_i) * (d/dtheta log p(c|x_i))^2`
//!
//! The empirical estimators replace the expectation with one label per input,
//! either sampled from the model or read from the data. Accumulation always
//! runs in ascending sample then ascending class order, so results are
//! bit-reproducible for a fixed shard count.

mod artifact;
mod stats;

pub use artifact::{artifact_from_bytes, fim_to_bytes, load_artifact, load_fim, load_params, params_to_bytes, save_fim, save_params, Artifact, ArtifactHeader, ArtifactKind, FORMAT_VERSION, MAGIC};
pub use stats::{fim_stats, log10_bin, FimStats, LayerStats, BIN_EDGES};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{FeatureRows, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{softmax, ModelState, ParamVector, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FimMode {
    Exact,
    EmpiricalSampled,
    EmpiricalLabels,
}

impl FimMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FimMode::Exact => "exact",
            FimMode::EmpiricalSampled => "empirical_sampled",
            FimMode::EmpiricalLabels => "empirical_labels",
        }
    }
}

/// Where empirical estimators take their labels from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    /// One label per input drawn from the model's predictive distribution.
    Sample { seed: u64 },
    /// The dataset's own labels.
    DatasetLabels,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagFim {
    values: ParamVector,
    mode: FimMode,
    n_samples: usize,
    model_fingerprint: String,
    /// Set when the values were produced by [`adjust_fim`].
    alpha: Option<f64>,
    shards: usize,
}

/// Hex prefix of the SHA-256 of the little-endian parameter bytes.
pub fn fingerprint(params: &ParamVector) -> String {
    let mut h = Sha256::new();
    for seg in params.layout().segments() {
        h.update(seg.name.as_bytes());
        h.update((seg.len as u64).to_le_bytes());
    }
    h.update(params.to_le_bytes());
    h.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect()
}

impl DiagFim {
    /// Wraps precomputed values; every entry must be finite and nonnegative.
    pub fn from_parts(values: ParamVector, mode: FimMode, n_samples: usize, model_fingerprint: String) -> Result<Self> {
        if let Some(v) = values.values().iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::OutOfRange(format!("Fisher entries must be finite and nonnegative, found {v}")));
        }
        Ok(Self { values, mode, n_samples, model_fingerprint, alpha: None, shards: 1 })
    }

    pub fn values(&self) -> &ParamVector {
        &self.values
    }

    pub fn mode(&self) -> FimMode {
        self.mode
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn model_fingerprint(&self) -> &str {
        &self.model_fingerprint
    }

    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }

    pub fn shards(&self) -> usize {
        self.shards
    }

    pub(crate) fn with_meta(mut self, alpha: Option<f64>, shards: usize) -> Self {
        self.alpha = alpha;
        self.shards = shards;
        self
    }

    /// Global mean of all entries.
    pub fn mean(&self) -> f64 {
        self.values.mean()
    }

    pub fn zero_fraction(&self) -> f64 {
        let zeros = self.values.values().iter().filter(|&&v| v == 0.0).count();
        zeros as f64 / self.values.len().max(1) as f64
    }

    /// Checks that this Fisher lines up with `model`'s parameter layout.
    pub fn bind(&self, model: &ModelState) -> Result<()> {
        if !self.values.same_layout(model.params()) {
            return Err(Error::LayoutMismatch(format!(
                "Fisher has {} entries in {} segments, model has {} parameters in {} segments",
                self.values.len(),
                self.values.layout().segments().len(),
                model.params().len(),
                model.params().layout().segments().len()
            )));
        }
        Ok(())
    }
}

fn check_inputs<R: FeatureRows + ?Sized>(model: &ModelState, inputs: &R) -> Result<()> {
    if inputs.len() == 0 {
        return Err(Error::Empty("Fisher inputs"));
    }
    if inputs.dim() != model.spec().input_dim {
        return Err(Error::DimensionMismatch { expected: model.spec().input_dim, got: inputs.dim() });
    }
    Ok(())
}

/// Sum over `range` of the per-sample exact Fisher contributions.
fn exact_partial<R: FeatureRows + ?Sized>(model: &ModelState, inputs: &R, range: std::ops::Range<usize>) -> Vec<f64> {
    let k = model.spec().num_classes;
    let mut acc = vec![0.0; model.params().len()];
    let mut g = vec![0.0; acc.len()];
    let mut tape = Tape::default();
    let mut dlogits = vec![0.0; k];
    for i in range {
        model.forward_tape(inputs.row(i), &mut tape);
        let p = softmax(tape.logits());
        for c in 0..k {
            if p[c] == 0.0 {
                continue;
            }
            // d(-log p_c)/dz = p - e_c; its square equals that of the score
            for j in 0..k {
                dlogits[j] = p[j];
            }
            dlogits[c] -= 1.0;
            g.iter_mut().for_each(|v| *v = 0.0);
            model.backward(&tape, &dlogits, 1.0, &mut g);
            let w = p[c];
            for (a, gi) in acc.iter_mut().zip(&g) {
                *a += w * gi * gi;
            }
        }
    }
    acc
}

fn finish(model: &ModelState, mut acc: Vec<f64>, n: usize, mode: FimMode, shards: usize) -> Result<DiagFim> {
    let inv = 1.0 / n as f64;
    acc.iter_mut().for_each(|v| *v *= inv);
    let values = ParamVector::new(acc, model.params().layout().clone())?;
    Ok(DiagFim::from_parts(values, mode, n, fingerprint(model.params()))?.with_meta(None, shards))
}

/// Exact-expectation diagonal Fisher over all parameters of `model`.
pub fn compute_fim_exact<R: FeatureRows + ?Sized>(model: &ModelState, inputs: &R) -> Result<DiagFim> {
    check_inputs(model, inputs)?;
    let acc = exact_partial(model, inputs, 0..inputs.len());
    finish(model, acc, inputs.len(), FimMode::Exact, 1)
}

/// Exact Fisher with the inputs cut into `shards` contiguous blocks computed in
/// parallel; partial sums merge in ascending shard order, so the result depends
/// on the shard count but not on thread scheduling.
pub fn compute_fim_exact_sharded<R: FeatureRows + Sync + ?Sized>(model: &ModelState, inputs: &R, shards: usize) -> Result<DiagFim> {
    check_inputs(model, inputs)?;
    let n = inputs.len();
    let shards = shards.clamp(1, n);
    if shards == 1 {
        return compute_fim_exact(model, inputs);
    }
    let bounds: Vec<(usize, usize)> = (0..shards).map(|s| (s * n / shards, (s + 1) * n / shards)).collect();
    let partials: Vec<Vec<f64>> = bounds.par_iter().map(|&(a, b)| exact_partial(model, inputs, a..b)).collect();
    let mut acc = vec![0.0; model.params().len()];
    for part in &partials {
        for (a, p) in acc.iter_mut().zip(part) {
            *a += p;
        }
    }
    finish(model, acc, n, FimMode::Exact, shards)
}

fn sample_class(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (c, &pc) in p.iter().enumerate() {
        cum += pc;
        if u < cum {
            return c;
        }
    }
    // rounding left u above the total; take the last class with mass
    p.iter().rposition(|&pc| pc > 0.0).unwrap_or(p.len() - 1)
}

fn empirical<F>(model: &ModelState, n: usize, row: impl Fn(usize) -> (Vec<f64>, Option<usize>), mut pick: F, mode: FimMode) -> Result<DiagFim>
where
    F: FnMut(usize, &[f64], Option<usize>) -> Result<usize>,
{
    let k = model.spec().num_classes;
    let mut acc = vec![0.0; model.params().len()];
    let mut g = vec![0.0; acc.len()];
    let mut tape = Tape::default();
    for i in 0..n {
        let (x, label) = row(i);
        model.forward_tape(&x, &mut tape);
        let mut d = softmax(tape.logits());
        let y = pick(i, &d, label)?;
        if y >= k {
            return Err(Error::OutOfRange(format!("label {y} >= num_classes {k}")));
        }
        d[y] -= 1.0;
        g.iter_mut().for_each(|v| *v = 0.0);
        model.backward(&tape, &d, 1.0, &mut g);
        for (a, gi) in acc.iter_mut().zip(&g) {
            *a += gi * gi;
        }
    }
    finish(model, acc, n, mode, 1)
}

/// Empirical Fisher with labels sampled from the model.
pub fn compute_fim_sampled<R: FeatureRows + ?Sized>(model: &ModelState, inputs: &R, seed: u64) -> Result<DiagFim> {
    check_inputs(model, inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    empirical(model, inputs.len(), |i| (inputs.row(i).to_vec(), None), |_, p, _| Ok(sample_class(p, &mut rng)), FimMode::EmpiricalSampled)
}

/// Empirical Fisher from `label_source`. Dataset labels are required for
/// [`LabelSource::DatasetLabels`].
pub fn compute_fim_empirical(model: &ModelState, data: &LabeledDataset, label_source: LabelSource) -> Result<DiagFim> {
    match label_source {
        LabelSource::Sample { seed } => compute_fim_sampled(model, data, seed),
        LabelSource::DatasetLabels => {
            check_inputs(model, data)?;
            empirical(
                model,
                data.len(),
                |i| (data.row(i).to_vec(), Some(data.label(i))),
                |_, _, label| label.ok_or(Error::MissingLabels("empirical_labels mode")),
                FimMode::EmpiricalLabels,
            )
        }
    }
}

/// `F_alpha = (1 - alpha) F + alpha * mean(F)`.
pub fn adjust_fim(fim: &DiagFim, alpha: f64) -> Result<DiagFim> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::OutOfRange(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let mean = fim.mean();
    let vals: Vec<f64> = fim.values.values().iter().map(|&f| (1.0 - alpha) * f + alpha * mean).collect();
    let values = ParamVector::new(vals, fim.values.layout().clone())?;
    Ok(DiagFim { values, alpha: Some(alpha), ..fim.clone() })
}
