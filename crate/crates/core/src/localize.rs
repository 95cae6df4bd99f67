// SPDX-License-Identifier: MIT OR Apache-2.0

//! Borderline and layer sweeps.
//!
//! Sign convention: the objective is a *similarity* (mean cross-block
//! correlation), so the best low/high separation is its **minimum**. A
//! separation "peak" in prose corresponds to the trough of this curve.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dump::{ActivationDump, SampleMeta};
use crate::error::{Error, Result};
use crate::plot;
use crate::preprocess::debias_all_layers;
use crate::similarity::{correlation_matrix, csv_err, SimilarityMatrix};

pub const DEFAULT_MIN_CLUSTER: usize = 5;

/// Quantity minimized over borderlines.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Mean cross-block correlation.
    #[default]
    Cross,
    /// Cross mean minus the average of the two within-block means.
    Contrast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionCurve {
    pub layer: usize,
    pub objective_kind: Objective,
    pub borderlines: Vec<usize>,
    pub objective: Vec<f64>,
    pub best_b: usize,
    pub best_value: f64,
}

impl PartitionCurve {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["borderline", "objective"]).map_err(csv_err)?;
        for (b, v) in self.borderlines.iter().zip(&self.objective) {
            out.write_record([b.to_string(), v.to_string()]).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::Format(format!("csv: {e}")))
    }

    pub fn to_svg(&self) -> String {
        let pts: Vec<(f64, f64)> =
            self.borderlines.iter().zip(&self.objective).map(|(&b, &v)| (b as f64, v)).collect();
        plot::line_with_min(
            &pts,
            Some((self.best_b as f64, self.best_value)),
            &format!("Partition sweep, layer {}", self.layer),
            "borderline (number of low items)",
            "cross",
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerPoint {
    pub layer: usize,
    pub best_b: usize,
    pub best_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCurve {
    pub per_layer: Vec<LayerPoint>,
    pub best_layer: usize,
}

impl LayerCurve {
    pub fn best(&self) -> &LayerPoint {
        &self.per_layer[self.best_layer]
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["layer", "objective", "best_borderline"]).map_err(csv_err)?;
        for p in &self.per_layer {
            out.write_record([p.layer.to_string(), p.best_value.to_string(), p.best_b.to_string()])
                .map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::Format(format!("csv: {e}")))
    }

    pub fn to_svg(&self) -> String {
        let pts: Vec<(f64, f64)> =
            self.per_layer.iter().map(|p| (p.layer as f64, p.best_value)).collect();
        let b = self.best();
        plot::line_with_min(
            &pts,
            Some((b.layer as f64, b.best_value)),
            "Layer sweep",
            "layer",
            "best objective",
        )
    }
}

/// Sweep every borderline `b` in `[min_cluster, n - min_cluster]`.
///
/// Block sums are carried incrementally: moving row `b` from the high block
/// to the low block changes the cross sum by `-sum_{j<b} r_bj + sum_{j>b} r_bj`,
/// so the whole sweep costs O(n^2).
pub fn sweep_borderline(
    sim: &SimilarityMatrix,
    min_cluster: usize,
    objective: Objective,
) -> Result<PartitionCurve> {
    let n = sim.n();
    if min_cluster < 2 {
        return Err(Error::validation(format!("min_cluster must be >= 2, got {min_cluster}")));
    }
    if n < 2 * min_cluster {
        return Err(Error::validation(format!(
            "{n} samples is too few for min_cluster {min_cluster} (need {})",
            2 * min_cluster
        )));
    }
    let b0 = min_cluster;
    let (mut low, mut high, mut cross) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..n {
        for j in i + 1..n {
            let r = sim.get(i, j);
            match (i < b0, j < b0) {
                (true, true) => low += r,
                (false, false) => high += r,
                _ => cross += r,
            }
        }
    }

    let value = |b: usize, low: f64, high: f64, cross: f64| {
        let c = cross / (b * (n - b)) as f64;
        match objective {
            Objective::Cross => c,
            Objective::Contrast => {
                let wl = low / (b * (b - 1) / 2) as f64;
                let wh = high / ((n - b) * (n - b - 1) / 2) as f64;
                c - 0.5 * (wl + wh)
            }
        }
    };

    let last = n - min_cluster;
    let mut borderlines = Vec::with_capacity(last - b0 + 1);
    let mut values = Vec::with_capacity(last - b0 + 1);
    let mut b = b0;
    loop {
        borderlines.push(b);
        values.push(value(b, low, high, cross));
        if b == last {
            break;
        }
        let row = &sim.values[b * n..(b + 1) * n];
        let to_low: f64 = row[..b].iter().sum();
        let to_high: f64 = row[b + 1..].iter().sum();
        cross += to_high - to_low;
        low += to_low;
        high -= to_high;
        b += 1;
    }

    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = k;
        }
    }
    Ok(PartitionCurve {
        layer: sim.layer,
        objective_kind: objective,
        best_b: borderlines[best],
        best_value: values[best],
        borderlines,
        objective: values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalizeOptions {
    pub min_cluster: usize,
    pub objective: Objective,
    /// Project out source directions per layer before sweeping.
    pub debias: bool,
}

impl Default for LocalizeOptions {
    fn default() -> Self {
        Self { min_cluster: DEFAULT_MIN_CLUSTER, objective: Objective::Cross, debias: true }
    }
}

/// Layer sweep plus the partition curve of every layer.
#[derive(Debug, Clone)]
pub struct LayerSweep {
    pub curve: LayerCurve,
    pub partitions: Vec<PartitionCurve>,
}

pub fn sweep_layers_full(
    dump: &ActivationDump,
    meta: &[SampleMeta],
    opts: LocalizeOptions,
) -> Result<LayerSweep> {
    let debiased;
    let source = if opts.debias {
        debiased = debias_all_layers(dump, meta)?.0;
        &debiased
    } else {
        dump
    };
    let partitions: Vec<PartitionCurve> = (0..dump.n_layers())
        .into_par_iter()
        .map(|layer| {
            let sim = correlation_matrix(source, meta, layer).map_err(|e| e.at_layer(layer))?;
            sweep_borderline(&sim, opts.min_cluster, opts.objective).map_err(|e| e.at_layer(layer))
        })
        .collect::<Result<_>>()?;
    let per_layer: Vec<LayerPoint> = partitions
        .iter()
        .map(|p| LayerPoint { layer: p.layer, best_b: p.best_b, best_value: p.best_value })
        .collect();
    let mut best = 0;
    for (k, p) in per_layer.iter().enumerate() {
        if p.best_value < per_layer[best].best_value {
            best = k;
        }
    }
    Ok(LayerSweep { curve: LayerCurve { per_layer, best_layer: best }, partitions })
}

/// Best borderline objective per layer; `best_layer` is the argmin.
pub fn sweep_layers(
    dump: &ActivationDump,
    meta: &[SampleMeta],
    opts: LocalizeOptions,
) -> Result<LayerCurve> {
    Ok(sweep_layers_full(dump, meta, opts)?.curve)
}
