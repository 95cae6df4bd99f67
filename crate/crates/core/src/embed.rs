// SPDX-License-Identifier: MIT OR Apache-2.0

//! Exact t-SNE for small item sets, a deterministic two-means helper, and
//! the labeled overlay used to draw sub-component clusters.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dump::{read_json, write_json, SampleMeta};
use crate::error::{Error, Result};
use crate::plot;
use crate::scalar::Scalar;
use crate::similarity::csv_err;

const BANDWIDTH_STEPS: usize = 64;
const PERPLEXITY_TOL: f64 = 1e-5;
const PERPLEXITY_FAIL_TOL: f64 = 1e-4;
const INIT_SD: f64 = 1e-4;
const JITTER: f64 = 1e-8;
const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneParams {
    pub perplexity: f64,
    pub iterations: usize,
    /// `None` resolves to `max(n / 12, 50)`.
    pub learning_rate: Option<f64>,
    pub exaggeration: f64,
    pub seed: u64,
    /// Record KL divergence every this many iterations.
    pub kl_every: usize,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 5.0,
            iterations: 1000,
            learning_rate: None,
            exaggeration: 12.0,
            seed: 0,
            kl_every: 50,
        }
    }
}

/// Parameters as actually used by a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingResult<T = f64> {
    pub sample_ids: Vec<String>,
    pub coords: Vec<[T; 2]>,
    /// Iteration index of each `kl_history` entry.
    pub kl_iterations: Vec<usize>,
    pub kl_history: Vec<f64>,
    pub params: ResolvedParams,
}

impl<T: Scalar> EmbeddingResult<T> {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["sample_id", "x", "y"]).map_err(csv_err)?;
        for (id, c) in self.sample_ids.iter().zip(&self.coords) {
            out.write_record([id.clone(), c[0].widen().to_string(), c[1].widen().to_string()])
                .map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::Format(format!("csv: {e}")))
    }
}

/// Symmetrized input affinities and the per-point calibration behind them.
#[derive(Debug, Clone)]
pub struct Affinities {
    pub n: usize,
    /// Row-major joint probabilities, zero diagonal, summing to one.
    pub p: Vec<f64>,
    /// Achieved perplexity of each conditional distribution.
    pub perplexities: Vec<f64>,
}

fn sq_distances(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Conditional row for one point with precision `exp(log_beta)` on distances
/// already scaled by the row mean. Returns (probabilities, perplexity).
fn conditional_row(dist: &[f64], i: usize, log_beta: f64) -> (Vec<f64>, f64) {
    let beta = log_beta.exp();
    let dmin = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = dist
        .iter()
        .enumerate()
        .map(|(j, &v)| if j == i { 0.0 } else { (-beta * (v - dmin)).exp() })
        .collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    let entropy: f64 = p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum();
    (p, entropy.exp())
}

/// Bisection on `ln(beta)` for one point.
fn calibrate_row(dist_row: &[f64], i: usize, perplexity: f64) -> (Vec<f64>, f64) {
    let n = dist_row.len();
    let scale = dist_row.iter().sum::<f64>() / (n - 1) as f64;
    let scaled: Vec<f64> = if scale > 0.0 {
        dist_row.iter().map(|v| v / scale).collect()
    } else {
        vec![0.0; n]
    };
    let (mut lo, mut hi) = (-60.0f64, 60.0f64);
    let mut best = conditional_row(&scaled, i, 0.0);
    for _ in 0..BANDWIDTH_STEPS {
        let mid = 0.5 * (lo + hi);
        let (p, perp) = conditional_row(&scaled, i, mid);
        let done = (perp - perplexity).abs() < PERPLEXITY_TOL;
        if perp > perplexity {
            lo = mid;
        } else {
            hi = mid;
        }
        best = (p, perp);
        if done {
            break;
        }
    }
    best
}

/// Input affinities with per-point bandwidths matched to `perplexity`.
pub fn joint_probabilities<T: Scalar>(vectors: &[&[T]], perplexity: f64) -> Result<Affinities> {
    let x: Vec<Vec<f64>> = vectors.iter().map(|r| r.iter().map(|v| v.widen()).collect()).collect();
    affinities_f64(&x, perplexity)
}

fn affinities_f64(x: &[Vec<f64>], perplexity: f64) -> Result<Affinities> {
    let n = x.len();
    let dist = sq_distances(x);
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| calibrate_row(&dist[i * n..(i + 1) * n], i, perplexity))
        .collect();
    if let Some((i, (_, perp))) = rows
        .iter()
        .enumerate()
        .find(|(_, (_, perp))| (perp - perplexity).abs() > PERPLEXITY_FAIL_TOL)
    {
        return Err(Error::validation(format!(
            "perplexity {perplexity} infeasible for point {i} (reached {perp})"
        )));
    }
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (rows[i].0[j] + rows[j].0[i]) / (2.0 * n as f64);
        }
    }
    Ok(Affinities { n, p, perplexities: rows.into_iter().map(|r| r.1).collect() })
}

/// KL(P || Q) for a 2-D layout.
pub fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2);
                num[i * n + j] = 1.0 / (1.0 + d);
                z += num[i * n + j];
            }
        }
    }
    let mut kl = 0.0;
    for k in 0..n * n {
        if p[k] > 0.0 {
            kl += p[k] * (p[k] / (num[k] / z).max(f64::MIN_POSITIVE)).ln();
        }
    }
    kl
}

/// Perturb exact duplicate rows so every pair has a nonzero distance.
fn jitter_duplicates(x: &mut [Vec<f64>], rng: &mut ChaCha8Rng) -> usize {
    let scale = x.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
    let normal = Normal::new(0.0, JITTER * scale).expect("finite sd");
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    let mut count = 0;
    for row in x.iter_mut() {
        let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
        if !seen.insert(key) {
            row.iter_mut().for_each(|v| *v += normal.sample(rng));
            count += 1;
        }
    }
    count
}

/// Exact t-SNE to two dimensions.
pub fn tsne<T: Scalar>(
    vectors: &[&[T]],
    sample_ids: &[String],
    params: &TsneParams,
) -> Result<EmbeddingResult<T>> {
    let n = vectors.len();
    if sample_ids.len() != n {
        return Err(Error::validation("sample_ids length does not match vectors"));
    }
    if n < 5 {
        return Err(Error::validation(format!("t-SNE needs at least 5 items, got {n}")));
    }
    if params.perplexity.is_nan() || params.perplexity <= 1.0 || 3.0 * params.perplexity >= n as f64 {
        return Err(Error::validation(format!(
            "perplexity {} infeasible for {n} items (need 1 < perplexity < n/3)",
            params.perplexity
        )));
    }
    if params.iterations == 0 || params.exaggeration.is_nan() || params.exaggeration < 1.0 {
        return Err(Error::validation("t-SNE needs iterations >= 1 and exaggeration >= 1"));
    }
    let mut x: Vec<Vec<f64>> = vectors.iter().map(|r| r.iter().map(|v| v.widen()).collect()).collect();
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::validation("non-finite value in t-SNE input"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let jittered = jitter_duplicates(&mut x, &mut rng);
    if jittered > 0 {
        log::warn!("t-SNE: jittered {jittered} duplicate row(s)");
    }
    let aff = affinities_f64(&x, params.perplexity)?;
    let p = &aff.p;

    let resolved = ResolvedParams {
        perplexity: params.perplexity,
        iterations: params.iterations,
        learning_rate: params.learning_rate.unwrap_or((n as f64 / 12.0).max(50.0)),
        exaggeration: params.exaggeration,
        exaggeration_iterations: params.iterations / 4,
        seed: params.seed,
    };

    let init = Normal::new(0.0, INIT_SD).expect("finite sd");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let kl_every = params.kl_every.max(1);
    let mut kl_iterations = vec![0];
    let mut kl_history = vec![kl_divergence(p, &y)];

    for it in 0..params.iterations {
        let early = it < resolved.exaggeration_iterations;
        let exag = if early { resolved.exaggeration } else { 1.0 };
        let momentum = if early { 0.5 } else { 0.8 };

        let num_rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            0.0
                        } else {
                            let d = (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2);
                            1.0 / (1.0 + d)
                        }
                    })
                    .collect()
            })
            .collect();
        let z: f64 = num_rows.iter().map(|r| r.iter().sum::<f64>()).sum();
        let grad: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0; 2];
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let num = num_rows[i][j];
                    let m = (exag * p[i * n + j] - num / z) * num;
                    g[0] += 4.0 * m * (y[i][0] - y[j][0]);
                    g[1] += 4.0 * m * (y[i][1] - y[j][1]);
                }
                g
            })
            .collect();

        for i in 0..n {
            for k in 0..2 {
                let same_sign = (grad[i][k] > 0.0) == (update[i][k] > 0.0);
                gains[i][k] = if same_sign { gains[i][k] * 0.8 } else { gains[i][k] + 0.2 };
                gains[i][k] = gains[i][k].max(MIN_GAIN);
                update[i][k] = momentum * update[i][k] - resolved.learning_rate * gains[i][k] * grad[i][k];
                y[i][k] += update[i][k];
            }
        }
        let cx = y.iter().map(|v| v[0]).sum::<f64>() / n as f64;
        let cy = y.iter().map(|v| v[1]).sum::<f64>() / n as f64;
        y.iter_mut().for_each(|v| {
            v[0] -= cx;
            v[1] -= cy;
        });

        let step = it + 1;
        if step % kl_every == 0 || step == params.iterations {
            kl_iterations.push(step);
            kl_history.push(kl_divergence(p, &y));
        }
    }

    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::validation("t-SNE diverged (non-finite coordinates)"));
    }
    Ok(EmbeddingResult {
        sample_ids: sample_ids.to_vec(),
        coords: y.iter().map(|c| [T::narrow(c[0]), T::narrow(c[1])]).collect(),
        kl_iterations,
        kl_history,
        params: resolved,
    })
}

/// Deterministic 2-means. Seeds are the point farthest from the centroid
/// and the point farthest from that one; labels are renumbered so that the
/// first point is in cluster 0.
pub fn two_means<T: Scalar>(points: &[&[T]]) -> Vec<usize> {
    let n = points.len();
    if n < 2 {
        return vec![0; n];
    }
    let x: Vec<Vec<f64>> = points.iter().map(|r| r.iter().map(|v| v.widen()).collect()).collect();
    let dim = x[0].len();
    let d2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
    let centroid: Vec<f64> = (0..dim).map(|k| x.iter().map(|r| r[k]).sum::<f64>() / n as f64).collect();
    let argmax = |f: &dyn Fn(usize) -> f64| {
        (0..n).fold(0, |best, i| if f(i) > f(best) { i } else { best })
    };
    let a = argmax(&|i| d2(&x[i], &centroid));
    let b = argmax(&|i| d2(&x[i], &x[a]));
    let mut centers = [x[a].clone(), x[b].clone()];
    let mut labels = vec![usize::MAX; n];
    for _ in 0..100 {
        let next: Vec<usize> = x
            .iter()
            .map(|r| usize::from(d2(r, &centers[1]) < d2(r, &centers[0])))
            .collect();
        if next == labels {
            break;
        }
        labels = next;
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = x.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(r, _)| r).collect();
            if !members.is_empty() {
                for k in 0..dim {
                    center[k] = members.iter().map(|r| r[k]).sum::<f64>() / members.len() as f64;
                }
            }
        }
    }
    if labels[0] == 1 {
        labels.iter_mut().for_each(|l| *l = 1 - *l);
    }
    labels
}

/// Manual cluster labels: `sample_id -> label`.
pub type LabelMap = BTreeMap<String, String>;

/// Invert a label map: `label -> sample ids`, both sorted.
pub fn groups_by_label(labels: &LabelMap) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (id, l) in labels {
        out.entry(l.clone()).or_default().push(id.clone());
    }
    out
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    read_json(path)
}

pub fn write_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    write_json(path, labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayPoint {
    pub sample_id: String,
    /// Index of the sample in the dump, used as its on-plot annotation.
    pub index: usize,
    pub x: f64,
    pub y: f64,
    pub std_score: f64,
    /// Fill lightness in [0, 1]; higher score is lighter.
    pub shade: f64,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayGroup {
    pub label: String,
    pub sample_ids: Vec<String>,
    pub centroid: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub points: Vec<OverlayPoint>,
    pub groups: Vec<OverlayGroup>,
}

/// Group embedded points by label and attach score shading.
pub fn region_overlay<T: Scalar>(
    result: &EmbeddingResult<T>,
    labels: &LabelMap,
    meta: &[SampleMeta],
) -> Result<Overlay> {
    let pos: HashMap<&str, usize> =
        result.sample_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    if let Some(id) = labels.keys().find(|id| !pos.contains_key(id.as_str())) {
        return Err(Error::validation(format!("label file names unknown sample_id '{id}'")));
    }
    let index: HashMap<&str, usize> =
        meta.iter().enumerate().map(|(i, m)| (m.sample_id.as_str(), i)).collect();
    let mut scores = Vec::with_capacity(result.sample_ids.len());
    for id in &result.sample_ids {
        let i = *index
            .get(id.as_str())
            .ok_or_else(|| Error::validation(format!("embedded sample '{id}' missing from metadata")))?;
        scores.push((i, meta[i].std_score));
    }
    let (lo, hi) = scores.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), s| (l.min(s.1), h.max(s.1)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let points: Vec<OverlayPoint> = result
        .sample_ids
        .iter()
        .zip(&result.coords)
        .zip(&scores)
        .map(|((id, c), &(index, s))| OverlayPoint {
            sample_id: id.clone(),
            index,
            x: c[0].widen(),
            y: c[1].widen(),
            std_score: s,
            shade: (s - lo) / span,
            label: labels.get(id).cloned(),
        })
        .collect();
    let mut by_label: BTreeMap<&str, Vec<&OverlayPoint>> = BTreeMap::new();
    for p in &points {
        if let Some(l) = &p.label {
            by_label.entry(l.as_str()).or_default().push(p);
        }
    }
    let groups = by_label
        .into_iter()
        .map(|(label, members)| {
            let m = members.len() as f64;
            OverlayGroup {
                label: label.to_string(),
                sample_ids: members.iter().map(|p| p.sample_id.clone()).collect(),
                centroid: [
                    members.iter().map(|p| p.x).sum::<f64>() / m,
                    members.iter().map(|p| p.y).sum::<f64>() / m,
                ],
            }
        })
        .collect();
    Ok(Overlay { points, groups })
}

impl Overlay {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["sample_id", "index", "x", "y", "std_score", "label"]).map_err(csv_err)?;
        for p in &self.points {
            out.write_record([
                p.sample_id.clone(),
                p.index.to_string(),
                p.x.to_string(),
                p.y.to_string(),
                p.std_score.to_string(),
                p.label.clone().unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::Format(format!("csv: {e}")))
    }

    /// Scatter: red fills for positive standardized score, blue otherwise,
    /// lighter for higher scores; one circle per labeled group.
    pub fn to_svg(&self, title: &str) -> String {
        const RED: [u8; 3] = [200, 40, 40];
        const BLUE: [u8; 3] = [40, 70, 200];
        const HULLS: [&str; 4] = ["#2e9e48", "#8a4fbf", "#d08a20", "#20a0c0"];
        let labels: Vec<String> = self.points.iter().map(|p| p.index.to_string()).collect();
        let pts: Vec<plot::ScatterPoint<'_>> = self
            .points
            .iter()
            .zip(&labels)
            .map(|(p, l)| plot::ScatterPoint {
                x: p.x,
                y: p.y,
                label: l,
                fill: plot::shade(if p.std_score > 0.0 { RED } else { BLUE }, p.shade),
            })
            .collect();
        let hulls: Vec<plot::Hull<'_>> = self
            .groups
            .iter()
            .enumerate()
            .map(|(k, g)| plot::Hull {
                name: &g.label,
                color: HULLS[k % HULLS.len()],
                members: self
                    .points
                    .iter()
                    .filter(|p| p.label.as_deref() == Some(g.label.as_str()))
                    .map(|p| (p.x, p.y))
                    .collect(),
            })
            .collect();
        plot::scatter(&pts, &hulls, title)
    }
}
