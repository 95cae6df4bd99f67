// SPDX-License-Identifier: MIT OR Apache-2.0

//! Localize assertiveness representations in residual-stream activations and
//! decompose them into steerable sub-components.
//!
//! Pipeline: read an `.actd` dump, remove source bias, build score-ordered
//! correlation matrices, sweep the low/high borderline and the layer, embed
//! the high items with t-SNE, derive difference-of-means steering vectors for
//! the resulting clusters and measure what removing them does to a frozen
//! ridge probe.
//!
//! Numeric routines are generic over [`Scalar`] (`f32` or `f64`); reductions
//! always accumulate in `f64`.

pub mod dump;
pub mod embed;
pub mod error;
pub mod linalg;
pub mod localize;
mod plot;
pub mod preprocess;
pub mod probe;
pub mod scalar;
pub mod similarity;
pub mod steering;
pub mod synth;

pub use dump::{read_dump, write_dump, ActivationDump, PoolingMode, SampleMeta, Source};
pub use embed::{tsne, EmbeddingResult, TsneParams};
pub use error::{Error, Result};
pub use localize::{sweep_borderline, sweep_layers, LayerCurve, Objective, PartitionCurve};
pub use preprocess::{source_debias, standardize_scores, DebiasReport};
pub use probe::{ablate, fit_probe, AblationReport, Probe};
pub use scalar::Scalar;
pub use similarity::{correlation_matrix, region_stats, RegionStats, SimilarityMatrix};
pub use steering::{diff_of_means, remove_vector, Scope, SteeringVector};
pub use synth::{generate, PlantSpec, PlantTruth};

pub type SteeringVectorF32 = SteeringVector<f32>;
pub type SteeringVectorF64 = SteeringVector<f64>;
pub type ProbeF32 = Probe<f32>;
pub type ProbeF64 = Probe<f64>;
pub type EmbeddingF32 = EmbeddingResult<f32>;
pub type EmbeddingF64 = EmbeddingResult<f64>;
