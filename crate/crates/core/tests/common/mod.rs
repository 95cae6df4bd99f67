// SPDX-License-Identifier: MIT OR Apache-2.0
#![allow(dead_code, clippy::needless_range_loop)]

use assertscope::{standardize_scores, ActivationDump, PoolingMode, SampleMeta, Source};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random dump with round-robin sources and random distinct scores.
pub fn random_dump(
    rng: &mut ChaCha8Rng,
    n: usize,
    layers: usize,
    d: usize,
    n_sources: usize,
) -> (ActivationDump, Vec<SampleMeta>) {
    let data: Vec<f32> = (0..n * layers * d).map(|_| rng.random_range(-2.0f32..2.0)).collect();
    let dump = ActivationDump::new(n, layers, d, PoolingMode::Mean, data).unwrap();
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    (dump, meta_for(&raw, n_sources))
}

pub fn meta_for(raw: &[f64], n_sources: usize) -> Vec<SampleMeta> {
    let std = standardize_scores(raw).unwrap();
    raw.iter()
        .zip(&std)
        .enumerate()
        .map(|(i, (&r, &s))| SampleMeta {
            sample_id: format!("x{i:03}"),
            source: Source::DATASETS[i % n_sources],
            raw_score: r,
            std_score: s,
            text: None,
        })
        .collect()
}

/// Textbook two-pass Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa.sqrt() * sbb.sqrt())
}

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
