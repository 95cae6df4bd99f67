// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation dump container and its on-disk formats.
//!
//! A dump is a binary `.actd` file holding pooled per-sample, per-layer
//! residual vectors, plus a JSON sidecar `<name>.meta.json` carrying one
//! [`SampleMeta`] per sample in sample order.
//!
//! Binary layout (little-endian):
//!
//! | offset | size | field                          |
//! |--------|------|--------------------------------|
//! | 0      | 4    | magic `ACTD`                   |
//! | 4      | 4    | format version (`u32` = 1)     |
//! | 8      | 4    | `n_samples` (`u32`)            |
//! | 12     | 4    | `n_layers` (`u32`)             |
//! | 16     | 4    | `d_model` (`u32`)              |
//! | 20     | 1    | pooling mode (0 mean, 1 last)  |
//! | 21     | 3    | reserved, zero                 |
//! | 24     | ...  | `f32` payload `[sample][layer][dim]` |

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"ACTD";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

const MOMENT_TOL: f64 = 1e-6;
const POOLING_TOL: f64 = 1e-5;

/// How per-token activations were reduced to one vector per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingMode {
    Mean,
    LastToken,
}

impl PoolingMode {
    pub fn to_byte(self) -> u8 {
        match self {
            Self::Mean => 0,
            Self::LastToken => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Self::Mean),
            1 => Some(Self::LastToken),
            _ => None,
        }
    }
}

/// Dataset a sample was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Persuasion,
    Gm,
    Cmv,
    Llar,
    Pei,
    Synthetic,
}

impl Source {
    /// The five annotated corpora, in canonical order.
    pub const DATASETS: [Source; 5] =
        [Source::Persuasion, Source::Gm, Source::Cmv, Source::Llar, Source::Pei];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Persuasion => "persuasion",
            Self::Gm => "gm",
            Self::Cmv => "cmv",
            Self::Llar => "llar",
            Self::Pei => "pei",
            Self::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-sample metadata stored in the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub sample_id: String,
    pub source: Source,
    pub raw_score: f64,
    pub std_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

/// Token-level activations for a single sample, `[token][layer][dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenActivations {
    pub n_tokens: usize,
    pub data: Vec<f32>,
}

/// Pooled residual activations, `[sample][layer][dim]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDump {
    n_samples: usize,
    n_layers: usize,
    d_model: usize,
    pooling: PoolingMode,
    pooled: Vec<f32>,
    per_token: Option<Vec<TokenActivations>>,
}

impl ActivationDump {
    /// Build and validate a dump from a pooled payload.
    pub fn new(
        n_samples: usize,
        n_layers: usize,
        d_model: usize,
        pooling: PoolingMode,
        pooled: Vec<f32>,
    ) -> Result<Self> {
        let dump = Self { n_samples, n_layers, d_model, pooling, pooled, per_token: None };
        dump.validate()?;
        Ok(dump)
    }

    pub fn zeros(n_samples: usize, n_layers: usize, d_model: usize) -> Result<Self> {
        Self::new(
            n_samples,
            n_layers,
            d_model,
            PoolingMode::Mean,
            vec![0.0; n_samples * n_layers * d_model],
        )
    }

    /// Attach token-level activations; checked against the pooled payload.
    pub fn with_per_token(mut self, per_token: Vec<TokenActivations>) -> Result<Self> {
        self.per_token = Some(per_token);
        self.validate()?;
        Ok(self)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn pooling(&self) -> PoolingMode {
        self.pooling
    }

    pub fn pooled(&self) -> &[f32] {
        &self.pooled
    }

    pub fn per_token(&self) -> Option<&[TokenActivations]> {
        self.per_token.as_deref()
    }

    #[inline]
    fn offset(&self, sample: usize, layer: usize) -> usize {
        (sample * self.n_layers + layer) * self.d_model
    }

    /// Pooled vector of one sample at one layer.
    #[inline]
    pub fn vector(&self, sample: usize, layer: usize) -> &[f32] {
        let o = self.offset(sample, layer);
        &self.pooled[o..o + self.d_model]
    }

    #[inline]
    pub fn vector_mut(&mut self, sample: usize, layer: usize) -> &mut [f32] {
        let o = self.offset(sample, layer);
        &mut self.pooled[o..o + self.d_model]
    }

    /// All sample vectors at `layer`, in sample order.
    pub fn layer_rows(&self, layer: usize) -> Vec<&[f32]> {
        (0..self.n_samples).map(|s| self.vector(s, layer)).collect()
    }

    /// Copy of the `[sample][dim]` matrix at `layer`.
    pub fn layer_matrix(&self, layer: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.n_samples * self.d_model);
        for s in 0..self.n_samples {
            out.extend_from_slice(self.vector(s, layer));
        }
        out
    }

    /// Overwrite `layer` from a `[sample][dim]` matrix.
    pub fn set_layer_matrix(&mut self, layer: usize, data: &[f32]) -> Result<()> {
        if data.len() != self.n_samples * self.d_model {
            return Err(Error::validation(format!(
                "layer matrix has {} values, expected {}",
                data.len(),
                self.n_samples * self.d_model
            )));
        }
        let d = self.d_model;
        for s in 0..self.n_samples {
            self.vector_mut(s, layer).copy_from_slice(&data[s * d..(s + 1) * d]);
        }
        Ok(())
    }

    pub fn check_layer(&self, layer: usize) -> Result<()> {
        if layer >= self.n_layers {
            return Err(Error::validation(format!(
                "layer {layer} out of range (dump has {} layers)",
                self.n_layers
            )));
        }
        Ok(())
    }

    /// Check every documented invariant; reports the first violation.
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::validation(format!("n_samples must be >= 2, got {}", self.n_samples)));
        }
        if self.n_layers < 1 {
            return Err(Error::validation("n_layers must be >= 1, got 0"));
        }
        if self.d_model < 2 {
            return Err(Error::validation(format!("d_model must be >= 2, got {}", self.d_model)));
        }
        let expected = self.n_samples * self.n_layers * self.d_model;
        if self.pooled.len() != expected {
            return Err(Error::validation(format!(
                "pooled payload has {} values, expected {expected}",
                self.pooled.len()
            )));
        }
        if let Some(i) = self.pooled.iter().position(|v| !v.is_finite()) {
            let d = i % self.d_model;
            let l = (i / self.d_model) % self.n_layers;
            let s = i / (self.d_model * self.n_layers);
            return Err(Error::validation(format!("non-finite value at ({s},{l},{d})")));
        }
        if let Some(tokens) = &self.per_token {
            self.validate_per_token(tokens)?;
        }
        Ok(())
    }

    fn validate_per_token(&self, tokens: &[TokenActivations]) -> Result<()> {
        if tokens.len() != self.n_samples {
            return Err(Error::validation(format!(
                "per-token payload has {} samples, expected {}",
                tokens.len(),
                self.n_samples
            )));
        }
        let width = self.n_layers * self.d_model;
        for (s, t) in tokens.iter().enumerate() {
            if t.n_tokens == 0 || t.data.len() != t.n_tokens * width {
                return Err(Error::validation(format!(
                    "sample {s}: per-token payload shape does not match {} tokens x {width}",
                    t.n_tokens
                )));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("sample {s}: non-finite per-token value")));
            }
            for l in 0..self.n_layers {
                let pooled = self.vector(s, l);
                let reduced: Vec<f64> = match self.pooling {
                    PoolingMode::Mean => (0..self.d_model)
                        .map(|d| {
                            (0..t.n_tokens)
                                .map(|k| t.data[k * width + l * self.d_model + d] as f64)
                                .sum::<f64>()
                                / t.n_tokens as f64
                        })
                        .collect(),
                    PoolingMode::LastToken => {
                        let o = (t.n_tokens - 1) * width + l * self.d_model;
                        t.data[o..o + self.d_model].iter().map(|&v| v as f64).collect()
                    }
                };
                let diff: f64 = reduced
                    .iter()
                    .zip(pooled)
                    .map(|(r, &p)| (r - p as f64).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let scale: f64 = pooled.iter().map(|&p| (p as f64).powi(2)).sum::<f64>().sqrt();
                if diff > POOLING_TOL * scale.max(f32::MIN_POSITIVE as f64) {
                    return Err(Error::validation(format!(
                        "sample {s} layer {l}: pooled vector disagrees with per-token reduction"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Check sidecar metadata against a dump of `n_samples` samples.
pub fn validate_meta(meta: &[SampleMeta], n_samples: usize) -> Result<()> {
    if meta.len() != n_samples {
        return Err(Error::validation(format!(
            "metadata has {} entries but dump has {n_samples} samples",
            meta.len()
        )));
    }
    let mut seen = HashSet::with_capacity(meta.len());
    for m in meta {
        if !seen.insert(m.sample_id.as_str()) {
            return Err(Error::validation(format!("duplicate sample_id '{}'", m.sample_id)));
        }
        if !m.raw_score.is_finite() || !m.std_score.is_finite() {
            return Err(Error::validation(format!("non-finite score for '{}'", m.sample_id)));
        }
    }
    let n = meta.len() as f64;
    let mean = meta.iter().map(|m| m.std_score).sum::<f64>() / n;
    let var = meta.iter().map(|m| (m.std_score - mean).powi(2)).sum::<f64>() / n;
    if mean.abs() > MOMENT_TOL || (var.sqrt() - 1.0).abs() > MOMENT_TOL {
        return Err(Error::validation(format!(
            "std_score is not standardized (mean {mean:.3e}, std {:.9})",
            var.sqrt()
        )));
    }
    Ok(())
}

/// Map from sample id to sample index.
pub fn id_index(meta: &[SampleMeta]) -> HashMap<&str, usize> {
    meta.iter().enumerate().map(|(i, m)| (m.sample_id.as_str(), i)).collect()
}

/// Sidecar path for a dump: `run.actd` -> `run.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Serialize the binary part of a dump.
pub fn encode(dump: &ActivationDump) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + dump.pooled.len() * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [dump.n_samples, dump.n_layers, dump.d_model] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(dump.pooling.to_byte());
    out.extend_from_slice(&[0u8; 3]);
    for v in &dump.pooled {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parse and validate the binary part of a dump.
pub fn decode(bytes: &[u8]) -> Result<ActivationDump> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Error::Format("unrecognized magic".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "expected {HEADER_LEN} bytes, found {}",
            bytes.len()
        )));
    }
    let word = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let version = word(4);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let (n_samples, n_layers, d_model) = (word(8) as usize, word(12) as usize, word(16) as usize);
    let pooling = PoolingMode::from_byte(bytes[20])
        .ok_or_else(|| Error::Format(format!("unknown pooling mode {}", bytes[20])))?;
    if bytes[21..24] != [0, 0, 0] {
        return Err(Error::Format("reserved header bytes must be zero".into()));
    }
    let count = n_samples
        .checked_mul(n_layers)
        .and_then(|v| v.checked_mul(d_model))
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    let expected = HEADER_LEN + count * 4;
    if bytes.len() < expected {
        return Err(Error::Format(format!(
            "expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    if bytes.len() > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            bytes.len() - expected
        )));
    }
    let pooled = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    ActivationDump::new(n_samples, n_layers, d_model, pooling, pooled)
}

/// Write `path` and its JSON sidecar.
///
/// Only the pooled payload is persisted; token-level activations stay in
/// memory.
pub fn write_dump(dump: &ActivationDump, meta: &[SampleMeta], path: &Path) -> Result<()> {
    dump.validate()?;
    validate_meta(meta, dump.n_samples)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode(dump)).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    write_json(&sidecar_path(path), &meta)
}

/// Read and validate a dump and its sidecar.
pub fn read_dump(path: &Path) -> Result<(ActivationDump, Vec<SampleMeta>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let dump = decode(&bytes)?;
    let meta: Vec<SampleMeta> = read_json(&sidecar_path(path))?;
    validate_meta(&meta, dump.n_samples)?;
    Ok((dump, meta))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|source| Error::Json { path: path.to_owned(), source })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_owned(), source })
}
