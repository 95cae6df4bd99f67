// SPDX-License-Identifier: MIT OR Apache-2.0
#![allow(clippy::needless_range_loop)]

//! Brute-force reference implementations used by the acceptance suite.
//!
//! Everything here is written the slow, obvious way and shares no code with
//! the `assertscope` kernels it checks.

use assertscope::SampleMeta;

/// Two-pass Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Sample ids sorted by standardized score, then by id.
pub fn sorted_ids(meta: &[SampleMeta]) -> Vec<String> {
    let mut pairs: Vec<(f64, String)> = meta.iter().map(|m| (m.std_score, m.sample_id.clone())).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    pairs.into_iter().map(|p| p.1).collect()
}

/// Full correlation matrix of `rows`, row-major.
pub fn correlation(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = pearson(&rows[i], &rows[j]);
        }
    }
    out
}

/// Region means by explicit enumeration of ordered pairs `i != j`.
#[derive(Debug, Clone, Copy)]
pub struct Regions {
    pub within_low: Option<f64>,
    pub within_high: Option<f64>,
    pub cross: f64,
}

pub fn regions(r: &[f64], n: usize, b: usize) -> Regions {
    let mut low = Vec::new();
    let mut high = Vec::new();
    let mut cross = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let v = r[i * n + j];
            match (i < b, j < b) {
                (true, true) => low.push(v),
                (false, false) => high.push(v),
                _ => cross.push(v),
            }
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Regions { within_low: mean(&low), within_high: mean(&high), cross: mean(&cross).unwrap() }
}

/// Sweep objective recomputed from scratch at every borderline.
pub fn sweep(r: &[f64], n: usize, min_cluster: usize, contrast: bool) -> Vec<(usize, f64)> {
    (min_cluster..=n - min_cluster)
        .map(|b| {
            let g = regions(r, n, b);
            let v = if contrast {
                g.cross - 0.5 * (g.within_low.unwrap() + g.within_high.unwrap())
            } else {
                g.cross
            };
            (b, v)
        })
        .collect()
}

/// First index of the smallest value.
pub fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..v.len() {
        if v[k] < v[best] {
            best = k;
        }
    }
    best
}

/// Fraction of points whose cluster agrees with the truth, under the better
/// of the two label matchings.
pub fn purity(found: &[usize], truth: &[usize]) -> f64 {
    let same = found.iter().zip(truth).filter(|(a, b)| a == b).count();
    let best = same.max(found.len() - same);
    best as f64 / found.len() as f64
}

/// Shannon entropy of a distribution, in bits.
pub fn perplexity_of(row: &[f64]) -> f64 {
    let h: f64 = row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.log2()).sum();
    2f64.powf(h)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / (na * nb)
}
