// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic dumps with planted low/high structure and two orthogonal
//! high-score sub-components.
//!
//! Every sample carries a shared background vector and its source offset at
//! every layer, plus isotropic noise. At the signal layer high items load
//! strongly on exactly one of the emotional or logical axes, a subset of low
//! items loads weakly on the emotional axis, and the remaining low items
//! scatter along it with zero mean. Raw scores are linear in the loadings.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dump::{ActivationDump, PoolingMode, SampleMeta, Source};
use crate::error::{Error, Result};
use crate::linalg::gram_schmidt;
use crate::preprocess::standardize_scores;

pub const GROUP_HIGH_LOGICAL: &str = "high-logical";
pub const GROUP_HIGH_EMOTIONAL: &str = "high-emotional";
pub const GROUP_LOW_EMOTIONAL: &str = "low-emotional";
pub const GROUP_LOW_OTHER: &str = "low-other";

/// Linear map from axis loadings to raw score, plus additive score noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub emotional: f64,
    pub logical: f64,
    pub noise_low: f64,
    pub noise_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub n_samples: usize,
    pub n_layers: usize,
    pub d_model: usize,
    pub signal_layer: usize,
    pub n_low: usize,
    pub n_high: usize,
    /// High items on the emotional axis; the rest load on the logical axis.
    pub n_high_emotional: usize,
    /// Low items with a weak emotional loading.
    pub n_low_emotional: usize,
    pub noise_sigma: f64,
    pub sources: Vec<Source>,
    pub source_offset_norm: f64,
    pub background_norm: f64,
    pub emotional_loading: f64,
    pub logical_loading: f64,
    /// Weak emotional shift of the low-emotional subset, as a fraction of
    /// `emotional_loading`.
    pub low_emotional_shift: f64,
    /// Score-scale spread of the low items' emotional loadings.
    pub low_spread: f64,
    pub score_model: ScoreModel,
    pub seed: u64,
}

impl Default for PlantSpec {
    fn default() -> Self {
        let gap = 9.0;
        let (he, hl) = (48.0, 144.0);
        Self {
            n_samples: 645,
            n_layers: 16,
            d_model: 256,
            signal_layer: 5,
            n_low: 620,
            n_high: 25,
            n_high_emotional: 13,
            n_low_emotional: 25,
            noise_sigma: 0.5,
            sources: Source::DATASETS.to_vec(),
            source_offset_norm: 8.0,
            background_norm: 4.0,
            emotional_loading: he,
            logical_loading: hl,
            low_emotional_shift: 0.25,
            low_spread: 0.8,
            score_model: ScoreModel { emotional: gap / he, logical: gap / hl, noise_low: 1.0, noise_high: 1.2 },
            seed: 0,
        }
    }
}

impl PlantSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::validation(m));
        if self.n_low + self.n_high != self.n_samples {
            return bad(format!("split {}+{} does not sum to {}", self.n_low, self.n_high, self.n_samples));
        }
        if self.signal_layer >= self.n_layers {
            return bad(format!("signal layer {} out of range for {} layers", self.signal_layer, self.n_layers));
        }
        if self.sources.is_empty() {
            return bad("at least one source is required".into());
        }
        let distinct: BTreeSet<_> = self.sources.iter().collect();
        if distinct.len() != self.sources.len() {
            return bad("duplicate source tag".into());
        }
        let needed = self.sources.len() + 3;
        if self.d_model < needed {
            return bad(format!("d_model {} too small: need at least {needed}", self.d_model));
        }
        if self.n_high_emotional > self.n_high || self.n_low_emotional > self.n_low {
            return bad("planted subgroup larger than its parent group".into());
        }
        if self.n_low < 2 * self.sources.len() || self.n_high < self.sources.len() {
            return bad("too few samples per source".into());
        }
        let reals = [
            self.noise_sigma,
            self.source_offset_norm,
            self.background_norm,
            self.emotional_loading,
            self.logical_loading,
            self.low_emotional_shift,
            self.low_spread,
            self.score_model.emotional,
            self.score_model.logical,
            self.score_model.noise_low,
            self.score_model.noise_high,
        ];
        if reals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("plant parameters must be finite and nonnegative".into());
        }
        Ok(())
    }
}

/// Ground truth behind a generated dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantTruth {
    pub signal_layer: usize,
    pub n_low: usize,
    pub n_high: usize,
    pub emotional_axis: Vec<f64>,
    pub logical_axis: Vec<f64>,
    pub background: Vec<f64>,
    pub source_offsets: BTreeMap<Source, Vec<f64>>,
    pub emotional_loadings: Vec<f64>,
    pub logical_loadings: Vec<f64>,
    /// Planted group name per sample, in dump order.
    pub groups: Vec<String>,
}

impl PlantTruth {
    /// `sample_id -> group` for the four planted evaluation groups.
    pub fn group_labels(&self, meta: &[SampleMeta]) -> BTreeMap<String, String> {
        meta.iter().zip(&self.groups).map(|(m, g)| (m.sample_id.clone(), g.clone())).collect()
    }

    /// Sample ids of one planted group.
    pub fn members(&self, meta: &[SampleMeta], group: &str) -> BTreeSet<String> {
        meta.iter()
            .zip(&self.groups)
            .filter(|(_, g)| g.as_str() == group)
            .map(|(m, _)| m.sample_id.clone())
            .collect()
    }
}

fn group_of(spec: &PlantSpec, i: usize) -> &'static str {
    if i < spec.n_low_emotional {
        GROUP_LOW_EMOTIONAL
    } else if i < spec.n_low {
        GROUP_LOW_OTHER
    } else {
        // Spread the emotional highs evenly through the high block so that
        // tied scores never order one kind entirely before the other.
        let (j, ne, nh) = (i - spec.n_low, spec.n_high_emotional, spec.n_high);
        if (j + 1) * ne / nh > j * ne / nh {
            GROUP_HIGH_EMOTIONAL
        } else {
            GROUP_HIGH_LOGICAL
        }
    }
}

/// Generate a dump, its metadata and the planted truth.
pub fn generate(spec: &PlantSpec) -> Result<(ActivationDump, Vec<SampleMeta>, PlantTruth)> {
    spec.validate()?;
    let (n, nl, d) = (spec.n_samples, spec.n_layers, spec.d_model);
    let ns = spec.sources.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let raw_basis: Vec<Vec<f64>> =
        (0..ns + 3).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let once: Vec<Vec<f64>> = gram_schmidt(&raw_basis, 0.0).into_iter().map(|(_, v)| v).collect();
    let basis: Vec<Vec<f64>> = gram_schmidt(&once, 0.0).into_iter().map(|(_, v)| v).collect();
    if basis.len() != ns + 3 {
        return Err(Error::validation("failed to draw an orthonormal plant basis"));
    }
    let scaled = |v: &[f64], s: f64| v.iter().map(|x| x * s).collect::<Vec<f64>>();
    let offsets: Vec<Vec<f64>> = basis[..ns].iter().map(|v| scaled(v, spec.source_offset_norm)).collect();
    let emotional = basis[ns].clone();
    let logical = basis[ns + 1].clone();
    let background = scaled(&basis[ns + 2], spec.background_norm);

    let source_idx: Vec<usize> = (0..n).map(|i| if i < spec.n_low { i % ns } else { (i - spec.n_low) % ns }).collect();

    let sm = &spec.score_model;
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    let tau = if sm.emotional > 0.0 { spec.low_spread / sm.emotional } else { 0.0 };
    for (i, ai) in a.iter_mut().enumerate().take(spec.n_low) {
        let z: f64 = rng.sample(StandardNormal);
        *ai = tau * z;
        if i < spec.n_low_emotional {
            *ai += spec.low_emotional_shift * spec.emotional_loading;
        }
    }
    let low_mean = a[..spec.n_low].iter().sum::<f64>() / spec.n_low as f64;
    a[..spec.n_low].iter_mut().for_each(|v| *v -= low_mean);
    for i in spec.n_low..n {
        if group_of(spec, i) == GROUP_HIGH_EMOTIONAL {
            a[i] = spec.emotional_loading;
        } else {
            b[i] = spec.logical_loading;
        }
    }
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let sd = if i < spec.n_low { sm.noise_low } else { sm.noise_high };
            let z: f64 = rng.sample(StandardNormal);
            sm.emotional * a[i] + sm.logical * b[i] + sd * z
        })
        .collect();
    let std = standardize_scores(&raw)?;

    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::validation(e.to_string()))?;
    let seed = spec.seed;
    let mut pooled = vec![0.0f32; n * nl * d];
    pooled.par_chunks_mut(nl * d).enumerate().for_each(|(i, sample)| {
        let mut srng = ChaCha8Rng::seed_from_u64(seed);
        srng.set_stream(i as u64 + 1);
        let off = &offsets[source_idx[i]];
        for (layer, row) in sample.chunks_mut(d).enumerate() {
            for k in 0..d {
                let mut v = noise.sample(&mut srng) + background[k] + off[k];
                if layer == spec.signal_layer {
                    v += a[i] * emotional[k] + b[i] * logical[k];
                }
                row[k] = v as f32;
            }
        }
    });
    let dump = ActivationDump::new(n, nl, d, PoolingMode::Mean, pooled)?;

    let meta: Vec<SampleMeta> = (0..n)
        .map(|i| SampleMeta {
            sample_id: format!("s{i:04}"),
            source: spec.sources[source_idx[i]],
            raw_score: raw[i],
            std_score: std[i],
            text: None,
        })
        .collect();
    let truth = PlantTruth {
        signal_layer: spec.signal_layer,
        n_low: spec.n_low,
        n_high: spec.n_high,
        emotional_axis: emotional,
        logical_axis: logical,
        background,
        source_offsets: spec.sources.iter().copied().zip(offsets).collect(),
        emotional_loadings: a,
        logical_loadings: b,
        groups: (0..n).map(|i| group_of(spec, i).to_string()).collect(),
    };
    Ok((dump, meta, truth))
}
