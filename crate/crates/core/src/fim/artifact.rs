//! Container for Fisher diagonals and parameter snapshots.
//!
//! ```text
//! [0..8)    magic "FIMDIAG1"
//! [8..12)   header length H, u32 little-endian
//! [12..12+H) UTF-8 JSON header
//! [..]      payload: little-endian f64 values in layout order
//! [last 4)  CRC32C over bytes [8, len-4) (length prefix, header, payload), LE
//! ```
//!
//! Loading checks, in order: magic, header bounds, header JSON, version,
//! layout, payload length, checksum.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{fingerprint, DiagFim, FimMode};
use crate::error::{Error, Result};
use crate::nn::{Layout, MlpSpec, ModelState, ParamVector, Segment};

pub const MAGIC: &[u8; 8] = b"FIMDIAG1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArtifactKind {
    Fim,
    Params,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub version: u32,
    pub kind: ArtifactKind,
    pub mode: Option<FimMode>,
    pub n_samples: Option<usize>,
    pub model_fingerprint: String,
    pub layout: Vec<Segment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Number of contiguous sample shards whose partial sums were merged in order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shards: Option<usize>,
    /// Which parameters the Fisher covers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_spec: Option<MlpSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    Fim(DiagFim),
    Params { params: ParamVector, spec: Option<MlpSpec>, fingerprint: String },
}

fn encode(header: &ArtifactHeader, values: &[f64]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let hlen = u32::try_from(json.len()).map_err(|_| Error::Malformed("header too large".into()))?;
    let mut buf = Vec::with_capacity(16 + json.len() + values.len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&hlen.to_le_bytes());
    buf.extend_from_slice(&json);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32c::crc32c(&buf[8..]);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

pub fn fim_to_bytes(fim: &DiagFim) -> Result<Vec<u8>> {
    let header = ArtifactHeader {
        version: FORMAT_VERSION,
        kind: ArtifactKind::Fim,
        mode: Some(fim.mode()),
        n_samples: Some(fim.n_samples()),
        model_fingerprint: fim.model_fingerprint().to_string(),
        layout: fim.values().layout().segments().to_vec(),
        alpha: fim.alpha(),
        shards: Some(fim.shards()),
        coverage: Some("all_parameters".into()),
        model_spec: None,
    };
    encode(&header, fim.values().values())
}

pub fn params_to_bytes(params: &ParamVector, spec: Option<&MlpSpec>) -> Result<Vec<u8>> {
    let header = ArtifactHeader {
        version: FORMAT_VERSION,
        kind: ArtifactKind::Params,
        mode: None,
        n_samples: None,
        model_fingerprint: fingerprint(params),
        layout: params.layout().segments().to_vec(),
        alpha: None,
        shards: None,
        coverage: None,
        model_spec: spec.cloned(),
    };
    encode(&header, params.values())
}

pub fn artifact_from_bytes(bytes: &[u8]) -> Result<Artifact> {
    if bytes.len() < MAGIC.len() {
        return Err(Error::Truncated(format!("{} bytes, magic needs 8", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 12 {
        return Err(Error::Truncated("missing header length".into()));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let header_end = 12usize.checked_add(hlen).ok_or_else(|| Error::Malformed("header length overflow".into()))?;
    if header_end.checked_add(4).is_none_or(|end| end > bytes.len()) {
        return Err(Error::Truncated(format!("header claims {hlen} bytes but file has {}", bytes.len())));
    }
    let header: ArtifactHeader = serde_json::from_slice(&bytes[12..header_end]).map_err(|e| Error::Malformed(format!("header: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(header.version));
    }
    let layout = Arc::new(Layout::from_segments(header.layout.clone()).map_err(|e| Error::Malformed(format!("layout: {e}")))?);
    let payload_len = layout.len().checked_mul(8).ok_or_else(|| Error::Malformed("payload size overflow".into()))?;
    let expected = header_end + payload_len + 4;
    if bytes.len() < expected {
        return Err(Error::Truncated(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    if bytes.len() > expected {
        return Err(Error::Malformed(format!("{} trailing bytes after checksum", bytes.len() - expected)));
    }
    let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().expect("4 bytes"));
    let computed = crc32c::crc32c(&bytes[8..expected - 4]);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    let values: Vec<f64> = bytes[header_end..header_end + payload_len]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let params = ParamVector::new(values, layout)?;
    match header.kind {
        ArtifactKind::Fim => {
            let mode = header.mode.ok_or_else(|| Error::Malformed("fim artifact without mode".into()))?;
            let n = header.n_samples.ok_or_else(|| Error::Malformed("fim artifact without n_samples".into()))?;
            let fim = DiagFim::from_parts(params, mode, n, header.model_fingerprint)
                .map_err(|e| Error::Malformed(e.to_string()))?
                .with_meta(header.alpha, header.shards.unwrap_or(1));
            Ok(Artifact::Fim(fim))
        }
        ArtifactKind::Params => Ok(Artifact::Params { params, spec: header.model_spec, fingerprint: header.model_fingerprint }),
    }
}

pub fn save_fim(fim: &DiagFim, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, fim_to_bytes(fim)?)?;
    Ok(())
}

pub fn load_artifact(path: impl AsRef<Path>) -> Result<Artifact> {
    artifact_from_bytes(&fs::read(path)?)
}

pub fn load_fim(path: impl AsRef<Path>) -> Result<DiagFim> {
    match load_artifact(path)? {
        Artifact::Fim(f) => Ok(f),
        Artifact::Params { .. } => Err(Error::Malformed("expected a fim artifact, found params".into())),
    }
}

pub fn save_params(model: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, params_to_bytes(model.params(), Some(model.spec()))?)?;
    Ok(())
}

/// Loads a parameter snapshot back into a model; the header must carry the spec.
pub fn load_params(path: impl AsRef<Path>) -> Result<ModelState> {
    match load_artifact(path)? {
        Artifact::Params { params, spec: Some(spec), .. } => {
            let layout = Arc::new(spec.layout());
            if **params.layout() != *layout {
                return Err(Error::LayoutMismatch("stored layout does not match stored model spec".into()));
            }
            ModelState::new(spec, ParamVector::new(params.into_values(), layout)?)
        }
        Artifact::Params { spec: None, .. } => Err(Error::Malformed("params artifact has no model_spec".into())),
        Artifact::Fim(_) => Err(Error::Malformed("expected a params artifact, found fim".into())),
    }
}
