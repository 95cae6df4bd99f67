// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sample-by-sample Pearson similarity at one layer, and the three
//! low/high region averages used to score a partition.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dump::{ActivationDump, SampleMeta};
use crate::error::{Error, Result};
use crate::plot;
use crate::scalar::Scalar;

/// Sample indices sorted by ascending `std_score`, ties by `sample_id`.
pub fn score_order(meta: &[SampleMeta]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..meta.len()).collect();
    order.sort_by(|&a, &b| {
        meta[a]
            .std_score
            .total_cmp(&meta[b].std_score)
            .then_with(|| meta[a].sample_id.cmp(&meta[b].sample_id))
    });
    order
}

/// Pearson correlation between every pair of rows, taken across columns.
///
/// Returns the row-major `n x n` matrix, or the index of the first row with
/// zero variance.
pub fn correlation_rows<T: Scalar>(rows: &[&[T]]) -> std::result::Result<Vec<f64>, usize> {
    let n = rows.len();
    let mut unit: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (i, row) in rows.iter().enumerate() {
        let d = row.len() as f64;
        let mean = row.iter().map(|v| v.widen()).sum::<f64>() / d;
        let mut c: Vec<f64> = row.iter().map(|v| v.widen() - mean).collect();
        let nrm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = row.iter().map(|v| v.widen().abs()).fold(0.0, f64::max) * d.sqrt();
        if nrm <= 1e-12 * scale || nrm == 0.0 {
            return Err(i);
        }
        c.iter_mut().for_each(|v| *v /= nrm);
        unit.push(c);
    }
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| {
                    let r: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
                    r.clamp(-1.0, 1.0)
                })
                .collect()
        })
        .collect();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
        for (k, &r) in upper[i].iter().enumerate() {
            let j = i + 1 + k;
            values[i * n + j] = r;
            values[j * n + i] = r;
        }
    }
    Ok(values)
}

/// Symmetric `n x n` correlation matrix with rows in score order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub layer: usize,
    /// `order[i]` is the dump sample index behind row/column `i`.
    pub order: Vec<usize>,
    /// Sample ids in row order.
    pub sample_ids: Vec<String>,
    /// Row-major values.
    pub values: Vec<f64>,
}

impl SimilarityMatrix {
    /// Wrap a precomputed matrix (rows already in the intended order).
    pub fn from_values(layer: usize, sample_ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let n = sample_ids.len();
        if values.len() != n * n {
            return Err(Error::validation(format!(
                "similarity values have length {}, expected {}",
                values.len(),
                n * n
            )));
        }
        Ok(Self { layer, order: (0..n).collect(), sample_ids, values })
    }

    pub fn n(&self) -> usize {
        self.order.len()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n() + j]
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["sample_id".to_string()];
        header.extend(self.sample_ids.iter().cloned());
        out.write_record(&header).map_err(csv_err)?;
        let n = self.n();
        for i in 0..n {
            let mut rec = vec![self.sample_ids[i].clone()];
            rec.extend(self.values[i * n..(i + 1) * n].iter().map(|v| v.to_string()));
            out.write_record(&rec).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::Format(format!("csv: {e}")))?;
        Ok(())
    }

    /// Heatmap with rows/columns low to high score; brighter is higher.
    pub fn to_svg(&self) -> String {
        plot::heatmap(
            &self.values,
            self.n(),
            &format!("Correlation similarity, layer {}", self.layer),
            "samples (ascending score)",
        )
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// Pearson correlation matrix of the pooled vectors at `layer`, rows and
/// columns in ascending score order.
pub fn correlation_matrix(
    dump: &ActivationDump,
    meta: &[SampleMeta],
    layer: usize,
) -> Result<SimilarityMatrix> {
    dump.check_layer(layer)?;
    if meta.len() != dump.n_samples() {
        return Err(Error::validation("metadata length does not match dump"));
    }
    let order = score_order(meta);
    let rows: Vec<&[f32]> = order.iter().map(|&s| dump.vector(s, layer)).collect();
    let values = correlation_rows(&rows).map_err(|i| {
        Error::validation(format!(
            "sample '{}' has zero variance at layer {layer}",
            meta[order[i]].sample_id
        ))
    })?;
    let sample_ids = order.iter().map(|&s| meta[s].sample_id.clone()).collect();
    Ok(SimilarityMatrix { layer, order, sample_ids, values })
}

/// Mean off-diagonal correlation inside and across the low/high blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    /// Rows `[0, borderline)` are low, `[borderline, n)` are high.
    pub borderline: usize,
    /// `None` when the low block has a single item.
    pub within_low: Option<f64>,
    pub within_high: Option<f64>,
    pub cross: f64,
    pub low_pairs: usize,
    pub high_pairs: usize,
    pub cross_pairs: usize,
}

pub fn region_stats(sim: &SimilarityMatrix, borderline: usize) -> Result<RegionStats> {
    let n = sim.n();
    if borderline < 1 || borderline >= n {
        return Err(Error::validation(format!(
            "borderline {borderline} out of range [1, {}]",
            n.saturating_sub(1)
        )));
    }
    let (mut low, mut high, mut cross) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let r = sim.get(i, j);
            match (i < borderline, j < borderline) {
                (true, true) => low += r,
                (false, false) => high += r,
                _ => cross += r,
            }
        }
    }
    let b = borderline;
    let low_pairs = b * (b - 1) / 2;
    let high_pairs = (n - b) * (n - b - 1) / 2;
    let cross_pairs = b * (n - b);
    let mean = |sum: f64, count: usize| (count > 0).then(|| sum / count as f64);
    Ok(RegionStats {
        borderline,
        within_low: mean(low, low_pairs),
        within_high: mean(high, high_pairs),
        cross: cross / cross_pairs as f64,
        low_pairs,
        high_pairs,
        cross_pairs,
    })
}

/// Mean over all off-diagonal pairs.
pub fn off_diagonal_mean(sim: &SimilarityMatrix) -> f64 {
    let n = sim.n();
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += sim.get(i, j);
        }
    }
    sum / (n * (n - 1) / 2) as f64
}
