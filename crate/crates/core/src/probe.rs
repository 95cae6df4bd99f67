// SPDX-License-Identifier: MIT OR Apache-2.0

//! Ridge-regression score probe and the per-group ablation report.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dump::{id_index, ActivationDump, SampleMeta};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::plot;
use crate::scalar::Scalar;
use crate::similarity::csv_err;
use crate::steering::{Scope, SteeringVector};

pub const DEFAULT_RIDGE_LAMBDA: f64 = 1.0;

/// Frozen linear read-out `w·x + b` at one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe<T = f64> {
    pub layer: usize,
    pub weights: Vec<T>,
    pub bias: T,
    pub ridge_lambda: f64,
}

impl<T: Scalar> Probe<T> {
    pub fn predict<U: Scalar>(&self, x: &[U]) -> f64 {
        dot(&self.weights, x) + self.bias.widen()
    }
}

/// Ridge fit of `targets` on `rows` with an unpenalized intercept.
///
/// Solves the primal system when `d <= n` and the equivalent dual system
/// otherwise.
pub fn fit_ridge<T: Scalar>(rows: &[&[T]], targets: &[f64], lambda: f64) -> Result<(Vec<f64>, f64)> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::validation(format!("ridge probe needs more than one sample, got {n}")));
    }
    if targets.len() != n {
        return Err(Error::validation("target count does not match sample count"));
    }
    if lambda.is_nan() || lambda <= 0.0 || !lambda.is_finite() {
        return Err(Error::validation(format!("ridge lambda must be positive, got {lambda}")));
    }
    let d = rows[0].len();
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j].widen());
    let means = DVector::from_fn(d, |j, _| x.column(j).mean());
    let y_mean = targets.iter().sum::<f64>() / n as f64;
    let mut xc = x;
    for j in 0..d {
        let m = means[j];
        xc.column_mut(j).add_scalar_mut(-m);
    }
    let yc = DVector::from_fn(n, |i, _| targets[i] - y_mean);
    let singular = || Error::validation("ridge system is not positive definite");
    let w = if d <= n {
        let mut a = xc.tr_mul(&xc);
        for k in 0..d {
            a[(k, k)] += lambda;
        }
        a.cholesky().ok_or_else(singular)?.solve(&xc.tr_mul(&yc))
    } else {
        let mut k = &xc * xc.transpose();
        for i in 0..n {
            k[(i, i)] += lambda;
        }
        let alpha = k.cholesky().ok_or_else(singular)?.solve(&yc);
        xc.tr_mul(&alpha)
    };
    let bias = y_mean - w.dot(&means);
    Ok((w.iter().copied().collect(), bias))
}

/// Fit a probe from layer activations to standardized scores.
pub fn fit_probe(
    dump: &ActivationDump,
    meta: &[SampleMeta],
    layer: usize,
    ridge_lambda: f64,
) -> Result<Probe<f64>> {
    dump.check_layer(layer)?;
    if meta.len() != dump.n_samples() {
        return Err(Error::validation("metadata count does not match dump"));
    }
    let targets: Vec<f64> = meta.iter().map(|m| m.std_score).collect();
    let (weights, bias) = fit_ridge(&dump.layer_rows(layer), &targets, ridge_lambda)?;
    Ok(Probe { layer, weights, bias, ridge_lambda })
}

/// Named, disjoint evaluation groups.
pub type Groups = Vec<(String, BTreeSet<String>)>;

/// Invert a `sample_id -> group` label map.
pub fn groups_from_labels(labels: &BTreeMap<String, String>) -> Groups {
    let mut by: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (id, g) in labels {
        by.entry(g.clone()).or_default().insert(id.clone());
    }
    by.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEffect {
    pub name: String,
    pub sample_ids: Vec<String>,
    pub rmse_before: f64,
    pub rmse_after: f64,
    pub delta: f64,
    /// Population std of per-item squared-error deltas over sqrt(group size).
    pub sem: f64,
    /// `|delta| > sem`.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub vector: String,
    pub layer: usize,
    pub groups: Vec<GroupEffect>,
}

/// RMSE before and after removing `vec` from every sample at its layer, with
/// the probe frozen.
pub fn ablate<T: Scalar, U: Scalar>(
    dump: &ActivationDump,
    meta: &[SampleMeta],
    probe: &Probe<T>,
    vec: &SteeringVector<U>,
    groups: &[(String, BTreeSet<String>)],
) -> Result<AblationReport> {
    ablate_scoped(dump, meta, probe, vec, groups, &Scope::All)
}

/// As [`ablate`], removing the direction only from samples in `scope`.
pub fn ablate_scoped<T: Scalar, U: Scalar>(
    dump: &ActivationDump,
    meta: &[SampleMeta],
    probe: &Probe<T>,
    vec: &SteeringVector<U>,
    groups: &[(String, BTreeSet<String>)],
    scope: &Scope,
) -> Result<AblationReport> {
    if probe.layer != vec.layer {
        return Err(Error::validation(format!(
            "probe layer {} differs from steering vector layer {}",
            probe.layer, vec.layer
        )));
    }
    dump.check_layer(probe.layer)?;
    if probe.weights.len() != dump.d_model() || vec.direction.len() != dump.d_model() {
        return Err(Error::validation("probe or vector dimension does not match d_model"));
    }
    if groups.is_empty() {
        return Err(Error::validation("no ablation groups given"));
    }
    let index = id_index(meta);
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    let mut resolved = Vec::with_capacity(groups.len());
    for (name, ids) in groups {
        if ids.is_empty() {
            return Err(Error::validation(format!("ablation group '{name}' is empty")));
        }
        let mut rows = Vec::with_capacity(ids.len());
        for id in ids {
            let &i = index
                .get(id.as_str())
                .ok_or_else(|| Error::validation(format!("group '{name}' names unknown sample_id '{id}'")))?;
            if !seen.insert(id.as_str()) {
                return Err(Error::validation(format!("sample_id '{id}' appears in more than one group")));
            }
            rows.push(i);
        }
        resolved.push((name, ids, rows));
    }

    if let Scope::Samples(ids) = scope {
        if let Some(id) = ids.iter().find(|id| !index.contains_key(id.as_str())) {
            return Err(Error::validation(format!("unknown sample_id '{id}' in removal scope")));
        }
    }
    let in_scope = |i: usize| match scope {
        Scope::All => true,
        Scope::Samples(ids) => ids.contains(&meta[i].sample_id),
    };

    // w·(x − (x·d)d) = w·x − (x·d)(w·d)
    let wd = dot(&probe.weights, &vec.direction);
    let effects = resolved
        .par_iter()
        .map(|(name, ids, rows)| {
            let mut sq_before = Vec::with_capacity(rows.len());
            let mut sq_after = Vec::with_capacity(rows.len());
            for &i in rows {
                let x = dump.vector(i, probe.layer);
                let before = probe.predict(x);
                let after = if in_scope(i) { before - dot(x, &vec.direction) * wd } else { before };
                let y = meta[i].std_score;
                sq_before.push((before - y).powi(2));
                sq_after.push((after - y).powi(2));
            }
            let n = rows.len() as f64;
            let rmse_before = (sq_before.iter().sum::<f64>() / n).sqrt();
            let rmse_after = (sq_after.iter().sum::<f64>() / n).sqrt();
            let diffs: Vec<f64> = sq_after.iter().zip(&sq_before).map(|(a, b)| a - b).collect();
            let mean = diffs.iter().sum::<f64>() / n;
            let var = diffs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sem = var.sqrt() / n.sqrt();
            let delta = rmse_after - rmse_before;
            GroupEffect {
                name: (*name).clone(),
                sample_ids: ids.iter().cloned().collect(),
                rmse_before,
                rmse_after,
                delta,
                sem,
                flagged: delta.abs() > sem,
            }
        })
        .collect();
    Ok(AblationReport { vector: vec.label.clone(), layer: vec.layer, groups: effects })
}

/// One row per (vector, group).
pub fn write_ablation_csv<W: Write>(reports: &[AblationReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["vector", "layer", "group", "n", "rmse_before", "rmse_after", "delta", "sem", "flagged"])
        .map_err(csv_err)?;
    for r in reports {
        for g in &r.groups {
            out.write_record([
                r.vector.clone(),
                r.layer.to_string(),
                g.name.clone(),
                g.sample_ids.len().to_string(),
                g.rmse_before.to_string(),
                g.rmse_after.to_string(),
                g.delta.to_string(),
                g.sem.to_string(),
                g.flagged.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    out.flush().map_err(|e| Error::Format(format!("csv: {e}")))
}

/// RMSE change per group, one bar series per removed vector.
pub fn ablation_svg(reports: &[AblationReport]) -> String {
    let names: Vec<String> = reports.iter().map(|r| format!("remove {}", r.vector)).collect();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let bars: Vec<plot::Bar<'_>> = reports
        .iter()
        .enumerate()
        .flat_map(|(s, r)| {
            r.groups.iter().map(move |g| plot::Bar { group: &g.name, series: s, value: g.delta, err: g.sem })
        })
        .collect();
    plot::grouped_bars(&bars, &name_refs, "RMSE change after vector removal", "delta RMSE")
}
