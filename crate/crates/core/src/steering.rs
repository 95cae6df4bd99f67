// SPDX-License-Identifier: MIT OR Apache-2.0

//! Difference-of-means steering vectors and projection ablation.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dump::{id_index, read_json, write_json, ActivationDump, SampleMeta};
use crate::error::{Error, Result};
use crate::linalg::{dot, mean_of, norm};
use crate::scalar::Scalar;

/// Raw mean differences shorter than this have no usable direction.
pub const DEGENERATE_NORM: f64 = 1e-10;

/// Unit direction plus the length of the mean difference it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringVector<T = f64> {
    pub label: String,
    pub layer: usize,
    pub magnitude: f64,
    pub direction: Vec<T>,
}

impl<T: Scalar> SteeringVector<T> {
    /// Build from an arbitrary nonzero vector.
    pub fn from_raw(label: impl Into<String>, layer: usize, raw: &[f64]) -> Result<Self> {
        let magnitude = norm(raw);
        if !magnitude.is_finite() || magnitude < DEGENERATE_NORM {
            return Err(Error::validation("degenerate direction"));
        }
        Ok(Self {
            label: label.into(),
            layer,
            magnitude,
            direction: raw.iter().map(|v| T::narrow(v / magnitude)).collect(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = norm(&self.direction);
        if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
            return Err(Error::validation(format!(
                "steering vector '{}' direction has norm {n}, expected 1",
                self.label
            )));
        }
        if !self.magnitude.is_finite() || self.magnitude < 0.0 {
            return Err(Error::validation(format!(
                "steering vector '{}' has invalid magnitude {}",
                self.label, self.magnitude
            )));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> SteeringVector<U> {
        SteeringVector {
            label: self.label.clone(),
            layer: self.layer,
            magnitude: self.magnitude,
            direction: self.direction.iter().map(|v| U::narrow(v.widen())).collect(),
        }
    }
}

/// `mean(a) - mean(b)` as a steering vector.
pub fn diff_of_means_rows<T: Scalar>(
    a: &[&[T]],
    b: &[&[T]],
    layer: usize,
    label: &str,
) -> Result<SteeringVector<T>> {
    SteeringVector::from_raw(label, layer, &mean_difference(a, b)?)
}

fn mean_difference<T: Scalar>(a: &[&[T]], b: &[&[T]]) -> Result<Vec<f64>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::validation("difference of means needs two nonempty groups"));
    }
    let (ma, mb) = (mean_of(a), mean_of(b));
    Ok(ma.iter().zip(&mb).map(|(x, y)| x - y).collect())
}

fn resolve<'a>(
    index: &std::collections::HashMap<&str, usize>,
    ids: impl IntoIterator<Item = &'a String>,
    what: &str,
) -> Result<Vec<usize>> {
    ids.into_iter()
        .map(|id| {
            index
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::validation(format!("unknown sample_id '{id}' in {what}")))
        })
        .collect()
}

/// Difference of group means at `layer`, accumulated in `f64`.
pub fn diff_of_means(
    dump: &ActivationDump,
    meta: &[SampleMeta],
    group_a: &BTreeSet<String>,
    group_b: &BTreeSet<String>,
    layer: usize,
    label: &str,
) -> Result<SteeringVector<f64>> {
    dump.check_layer(layer)?;
    if group_a.is_empty() || group_b.is_empty() {
        return Err(Error::validation("difference of means needs two nonempty groups"));
    }
    if let Some(id) = group_a.intersection(group_b).next() {
        return Err(Error::validation(format!("sample '{id}' is in both groups")));
    }
    let index = id_index(meta);
    let ia = resolve(&index, group_a, "group A")?;
    let ib = resolve(&index, group_b, "group B")?;
    let rows_a: Vec<&[f32]> = ia.iter().map(|&s| dump.vector(s, layer)).collect();
    let rows_b: Vec<&[f32]> = ib.iter().map(|&s| dump.vector(s, layer)).collect();
    SteeringVector::from_raw(label, layer, &mean_difference(&rows_a, &rows_b)?)
}

/// Which samples a removal applies to.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum Scope {
    #[default]
    All,
    Samples(BTreeSet<String>),
}

/// Zero the component along `unit` in every row.
pub fn ablate_rows<T: Scalar, U: Scalar>(rows: &mut [&mut [T]], unit: &[U]) {
    for row in rows.iter_mut() {
        let c = dot(row, unit);
        for (x, u) in row.iter_mut().zip(unit) {
            *x = T::narrow(x.widen() - c * u.widen());
        }
    }
}

/// Projection ablation at the vector's own layer.
pub fn remove_vector<T: Scalar>(
    dump: &ActivationDump,
    meta: &[SampleMeta],
    vec: &SteeringVector<T>,
    scope: &Scope,
) -> Result<ActivationDump> {
    remove_vector_at(dump, meta, vec, scope, &[vec.layer])
}

/// Projection ablation of the same direction at several layers.
pub fn remove_vector_at<T: Scalar>(
    dump: &ActivationDump,
    meta: &[SampleMeta],
    vec: &SteeringVector<T>,
    scope: &Scope,
    layers: &[usize],
) -> Result<ActivationDump> {
    if vec.direction.len() != dump.d_model() {
        return Err(Error::validation(format!(
            "steering vector has dimension {}, dump has d_model {}",
            vec.direction.len(),
            dump.d_model()
        )));
    }
    for &l in layers {
        dump.check_layer(l)?;
    }
    let samples: Vec<usize> = match scope {
        Scope::All => (0..dump.n_samples()).collect(),
        Scope::Samples(ids) => resolve(&id_index(meta), ids, "removal scope")?,
    };
    let mut out = dump.clone();
    for &l in layers {
        for &s in &samples {
            let mut row = [out.vector_mut(s, l)];
            ablate_rows(&mut row, &vec.direction);
        }
    }
    Ok(out)
}

/// Cosine between two steering directions at the same layer.
pub fn orthogonality<A: Scalar, B: Scalar>(a: &SteeringVector<A>, b: &SteeringVector<B>) -> Result<f64> {
    if a.layer != b.layer {
        return Err(Error::validation(format!(
            "steering vectors live at different layers ({} vs {})",
            a.layer, b.layer
        )));
    }
    if a.direction.len() != b.direction.len() {
        return Err(Error::validation("steering vectors have different dimensions"));
    }
    Ok(dot(&a.direction, &b.direction).clamp(-1.0, 1.0))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(SteeringVector<f64>),
    Many(Vec<SteeringVector<f64>>),
}

/// Write one vector as a JSON object, or several as an array.
pub fn write_vectors(path: &Path, vectors: &[SteeringVector<f64>]) -> Result<()> {
    match vectors {
        [one] => write_json(path, one),
        many => write_json(path, many),
    }
}

pub fn read_vectors(path: &Path) -> Result<Vec<SteeringVector<f64>>> {
    let vs = match read_json::<OneOrMany>(path)? {
        OneOrMany::One(v) => vec![v],
        OneOrMany::Many(v) => v,
    };
    for v in &vs {
        v.validate()?;
    }
    Ok(vs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dump::{PoolingMode, Source};

    fn meta(n: usize) -> Vec<SampleMeta> {
        let raw: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let z = crate::preprocess::standardize_scores(&raw).unwrap();
        (0..n)
            .map(|i| SampleMeta {
                sample_id: format!("s{i}"),
                source: Source::Synthetic,
                raw_score: raw[i],
                std_score: z[i],
                text: None,
            })
            .collect()
    }

    fn ids(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn opposite_pair() {
        let data = vec![3.0f32, 4.0, -3.0, -4.0];
        let dump = ActivationDump::new(2, 1, 2, PoolingMode::Mean, data).unwrap();
        let v = diff_of_means(&dump, &meta(2), &ids(&["s0"]), &ids(&["s1"]), 0, "x").unwrap();
        assert!((v.magnitude - 10.0).abs() < 1e-12);
        assert!((v.direction[0] - 0.6).abs() < 1e-12 && (v.direction[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn direction_is_unit_in_f64() {
        let data: Vec<f32> = (0..4 * 7).map(|k| ((k * 13 % 11) as f32 - 5.0) / 3.0).collect();
        let dump = ActivationDump::new(4, 1, 7, PoolingMode::Mean, data).unwrap();
        let v = diff_of_means(&dump, &meta(4), &ids(&["s0", "s1"]), &ids(&["s2", "s3"]), 0, "x").unwrap();
        assert!((norm(&v.direction) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn equal_means_degenerate() {
        let data = vec![1.0f32, 2.0, 1.0, 2.0];
        let dump = ActivationDump::new(2, 1, 2, PoolingMode::Mean, data).unwrap();
        let err = diff_of_means(&dump, &meta(2), &ids(&["s0"]), &ids(&["s1"]), 0, "x").unwrap_err();
        assert!(err.to_string().contains("degenerate direction"));
    }

    #[test]
    fn group_errors() {
        let dump = ActivationDump::zeros(3, 1, 2).unwrap();
        let m = meta(3);
        assert!(diff_of_means(&dump, &m, &ids(&["s0"]), &ids(&["s0", "s1"]), 0, "x").is_err());
        assert!(diff_of_means(&dump, &m, &ids(&[]), &ids(&["s1"]), 0, "x").is_err());
        assert!(diff_of_means(&dump, &m, &ids(&["zz"]), &ids(&["s1"]), 0, "x").is_err());
    }

    #[test]
    fn orthogonal_decomposition() {
        // x = 3u + 2w with u = e0, w = e1.
        let data = vec![3.0f32, 2.0, 0.0, 1.0, 1.0, 1.0];
        let dump = ActivationDump::new(2, 1, 3, PoolingMode::Mean, data).unwrap();
        let u = SteeringVector::<f64>::from_raw("u", 0, &[1.0, 0.0, 0.0]).unwrap();
        let out = remove_vector(&dump, &meta(2), &u, &Scope::All).unwrap();
        assert_eq!(out.vector(0, 0), &[0.0, 2.0, 0.0]);
        let twice = remove_vector(&out, &meta(2), &u, &Scope::All).unwrap();
        assert_eq!(twice, out);
    }

    #[test]
    fn scoped_removal_leaves_others() {
        let data = vec![1.0f32, 1.0, 2.0, 2.0];
        let dump = ActivationDump::new(2, 1, 2, PoolingMode::Mean, data).unwrap();
        let u = SteeringVector::<f64>::from_raw("u", 0, &[1.0, 0.0]).unwrap();
        let out = remove_vector(&dump, &meta(2), &u, &Scope::Samples(ids(&["s1"]))).unwrap();
        assert_eq!(out.vector(0, 0), dump.vector(0, 0));
        assert_eq!(out.vector(1, 0), &[0.0, 2.0]);
        let none = remove_vector(&dump, &meta(2), &u, &Scope::Samples(BTreeSet::new())).unwrap();
        assert_eq!(none, dump);
    }

    #[test]
    fn other_layers_untouched() {
        let data: Vec<f32> = (0..8).map(|i| i as f32 + 1.0).collect();
        let dump = ActivationDump::new(2, 2, 2, PoolingMode::Mean, data).unwrap();
        let u = SteeringVector::<f64>::from_raw("u", 1, &[0.0, 1.0]).unwrap();
        let out = remove_vector(&dump, &meta(2), &u, &Scope::All).unwrap();
        assert_eq!(out.vector(0, 0), dump.vector(0, 0));
        assert_eq!(out.vector(1, 1)[1], 0.0);
    }

    #[test]
    fn cosines() {
        let a = SteeringVector::<f64>::from_raw("a", 0, &[1.0, 0.0]).unwrap();
        let b = SteeringVector::<f64>::from_raw("b", 0, &[0.0, 2.0]).unwrap();
        assert_eq!(orthogonality(&a, &a).unwrap(), 1.0);
        assert_eq!(orthogonality(&a, &b).unwrap(), 0.0);
        let c = SteeringVector::<f32>::from_raw("c", 1, &[1.0, 0.0]).unwrap();
        assert!(orthogonality(&a, &c).is_err());
    }

    #[test]
    fn json_shape() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.json");
        let a = SteeringVector::<f64>::from_raw("emotional", 5, &[0.0, 2.0]).unwrap();
        write_vectors(&p, std::slice::from_ref(&a)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(v["label"], "emotional");
        assert_eq!(v["layer"], 5);
        assert_eq!(v["magnitude"], 2.0);
        assert_eq!(v["direction"][1], 1.0);
        assert_eq!(read_vectors(&p).unwrap(), vec![a.clone()]);
        write_vectors(&p, &[a.clone(), a]).unwrap();
        assert_eq!(read_vectors(&p).unwrap().len(), 2);
    }
}
