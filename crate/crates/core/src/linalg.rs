// SPDX-License-Identifier: MIT OR Apache-2.0

//! Small dense-vector kernels generic over the storage scalar.
//!
//! All reductions accumulate in `f64`.

use crate::scalar::Scalar;

#[inline]
pub fn dot<A: Scalar, B: Scalar>(a: &[A], b: &[B]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x.widen() * y.widen()).sum()
}

#[inline]
pub fn norm<T: Scalar>(a: &[T]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine of the angle between two nonzero vectors, clamped to [-1, 1].
pub fn cosine<A: Scalar, B: Scalar>(a: &[A], b: &[B]) -> f64 {
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        return 0.0;
    }
    (dot(a, b) / denom).clamp(-1.0, 1.0)
}

/// Column-wise mean of a set of equal-length rows.
pub fn mean_of<T: Scalar>(rows: &[&[T]]) -> Vec<f64> {
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    let mut acc = vec![0.0f64; first.len()];
    for row in rows {
        for (a, v) in acc.iter_mut().zip(row.iter()) {
            *a += v.widen();
        }
    }
    let n = rows.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// `x <- x - (x . u) u` for a unit vector `u`. Returns the removed coefficient.
pub fn project_out<T: Scalar, U: Scalar>(x: &mut [T], unit: &[U]) -> f64 {
    let coef = dot(x, unit);
    for (xi, ui) in x.iter_mut().zip(unit) {
        *xi = T::narrow(xi.widen() - coef * ui.widen());
    }
    coef
}

/// Modified Gram-Schmidt. Vectors whose residual norm falls below
/// `threshold` are dropped; the survivors are returned normalized together
/// with the index of the input they came from.
pub fn gram_schmidt(vectors: &[Vec<f64>], threshold: f64) -> Vec<(usize, Vec<f64>)> {
    let mut basis: Vec<(usize, Vec<f64>)> = Vec::new();
    for (idx, v) in vectors.iter().enumerate() {
        let mut r = v.clone();
        for (_, q) in &basis {
            let c = dot(&r, q);
            r.iter_mut().zip(q).for_each(|(ri, qi)| *ri -= c * qi);
        }
        let n = norm(&r);
        if n >= threshold && n > 0.0 {
            r.iter_mut().for_each(|ri| *ri /= n);
            basis.push((idx, r));
        }
    }
    basis
}
