// SPDX-License-Identifier: MIT OR Apache-2.0

//! Score standardization and removal of dataset-source bias directions.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dump::{ActivationDump, SampleMeta, Source};
use crate::error::{Error, Result};
use crate::linalg::{dot, gram_schmidt, mean_of, norm};
use crate::scalar::Scalar;

/// Offsets whose Gram-Schmidt residual is below this fraction of the RMS
/// sample norm are treated as numerically absent. The cut sits well above
/// f32 storage round-off, which keeps a second debias pass a no-op.
pub const DEBIAS_REL_THRESHOLD: f64 = 1e-5;

/// Z-score with the population standard deviation.
pub fn standardize_scores<T: Scalar>(raw: &[T]) -> Result<Vec<T>> {
    if raw.len() < 2 {
        return Err(Error::validation("need at least 2 scores to standardize"));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("non-finite score"));
    }
    let n = raw.len() as f64;
    let mean = raw.iter().map(|v| v.widen()).sum::<f64>() / n;
    let var = raw.iter().map(|v| (v.widen() - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd == 0.0 || raw.iter().all(|v| v.widen() == raw[0].widen()) {
        return Err(Error::validation("zero variance"));
    }
    Ok(raw.iter().map(|v| T::narrow((v.widen() - mean) / sd)).collect())
}

/// One removed source direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDirection {
    pub source: Source,
    /// Orthonormalized direction that was projected out.
    pub direction: Vec<f64>,
    /// Norm of the raw source-mean offset before orthonormalization.
    pub offset_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasReport {
    pub layer: usize,
    pub source_directions: Vec<SourceDirection>,
    pub removed_rank: usize,
}

impl DebiasReport {
    fn empty(layer: usize) -> Self {
        Self { layer, source_directions: Vec::new(), removed_rank: 0 }
    }
}

fn groups_by_source(meta: &[SampleMeta]) -> BTreeMap<Source, Vec<usize>> {
    let mut groups: BTreeMap<Source, Vec<usize>> = BTreeMap::new();
    for (i, m) in meta.iter().enumerate() {
        groups.entry(m.source).or_default().push(i);
    }
    groups
}

/// Debias one `[sample][dim]` matrix in place.
fn debias_matrix(
    data: &mut [f32],
    d_model: usize,
    groups: &BTreeMap<Source, Vec<usize>>,
    layer: usize,
) -> DebiasReport {
    let rows: Vec<&[f32]> = data.chunks_exact(d_model).collect();
    let global = mean_of(&rows);
    let rms_norm = (rows.iter().map(|r| dot(r, r)).sum::<f64>() / rows.len() as f64).sqrt();

    let offsets: Vec<(Source, Vec<f64>)> = groups
        .iter()
        .map(|(src, idx)| {
            let members: Vec<&[f32]> = idx.iter().map(|&i| rows[i]).collect();
            let mean = mean_of(&members);
            let off = mean.iter().zip(&global).map(|(m, g)| m - g).collect();
            (*src, off)
        })
        .collect();
    let raw: Vec<Vec<f64>> = offsets.iter().map(|(_, v)| v.clone()).collect();
    let basis = gram_schmidt(&raw, DEBIAS_REL_THRESHOLD * rms_norm);

    for row in data.chunks_exact_mut(d_model) {
        let mut x: Vec<f64> = row.iter().map(|&v| v as f64).collect();
        for (_, q) in &basis {
            let c = dot(&x, q);
            x.iter_mut().zip(q).for_each(|(xi, qi)| *xi -= c * qi);
        }
        row.iter_mut().zip(&x).for_each(|(r, v)| *r = *v as f32);
    }

    let source_directions: Vec<SourceDirection> = basis
        .into_iter()
        .map(|(idx, direction)| SourceDirection {
            source: offsets[idx].0,
            offset_norm: norm(&offsets[idx].1),
            direction,
        })
        .collect();
    DebiasReport { layer, removed_rank: source_directions.len(), source_directions }
}

fn check_sources(meta: &[SampleMeta]) -> Result<Option<BTreeMap<Source, Vec<usize>>>> {
    let groups = groups_by_source(meta);
    if groups.len() < 2 {
        return Ok(None);
    }
    if let Some((src, idx)) = groups.iter().find(|(_, idx)| idx.len() < 2) {
        return Err(Error::validation(format!(
            "source '{src}' has {} sample(s); debiasing needs at least 2 per source",
            idx.len()
        )));
    }
    Ok(Some(groups))
}

/// Project the span of per-source mean offsets out of every sample at `layer`.
///
/// With a single source the dump is returned unchanged with an empty report.
pub fn source_debias(
    dump: &ActivationDump,
    meta: &[SampleMeta],
    layer: usize,
) -> Result<(ActivationDump, DebiasReport)> {
    dump.check_layer(layer)?;
    if meta.len() != dump.n_samples() {
        return Err(Error::validation("metadata length does not match dump"));
    }
    let Some(groups) = check_sources(meta)? else {
        return Ok((dump.clone(), DebiasReport::empty(layer)));
    };
    let mut out = dump.clone();
    let mut data = dump.layer_matrix(layer);
    let report = debias_matrix(&mut data, dump.d_model(), &groups, layer);
    out.set_layer_matrix(layer, &data)?;
    Ok((out, report))
}

/// Debias every layer independently (in parallel).
pub fn debias_all_layers(
    dump: &ActivationDump,
    meta: &[SampleMeta],
) -> Result<(ActivationDump, Vec<DebiasReport>)> {
    if meta.len() != dump.n_samples() {
        return Err(Error::validation("metadata length does not match dump"));
    }
    let Some(groups) = check_sources(meta)? else {
        let reports = (0..dump.n_layers()).map(DebiasReport::empty).collect();
        return Ok((dump.clone(), reports));
    };
    let results: Vec<(Vec<f32>, DebiasReport)> = (0..dump.n_layers())
        .into_par_iter()
        .map(|layer| {
            let mut data = dump.layer_matrix(layer);
            let report = debias_matrix(&mut data, dump.d_model(), &groups, layer);
            (data, report)
        })
        .collect();
    let mut out = dump.clone();
    let mut reports = Vec::with_capacity(results.len());
    for (layer, (data, report)) in results.into_iter().enumerate() {
        out.set_layer_matrix(layer, &data)?;
        reports.push(report);
    }
    Ok((out, reports))
}
