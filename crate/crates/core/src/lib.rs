//! Contextual-causality ranking over time-consecutive image pairs.
//!
//! The crate covers the whole desk-scale pipeline: a line-delimited
//! dataset format with validation ([`dataset`]), vote analysis with
//! inter-annotator agreement ([`analysis`]), token/object encoders
//! ([`encoders`]), a cross-attention causality scorer and its ablations
//! ([`model`]) on a small reverse-mode graph ([`autodiff`]), negative-
//! sampled SGD training ([`trainer`]), a Recall@K ranking harness
//! ([`evaluator`]), and a planted-signal generator ([`synthetic`]) that
//! makes the context-dependence of planted rules measurable.
//!
//! All numeric code is generic over [`scalar::Scalar`] (f32 or f64); the
//! aliases below pin the default 64-bit instantiation that the CLI and
//! the test suites use.

pub mod analysis;
pub mod autodiff;
pub mod dataset;
pub mod encoders;
pub mod evaluator;
pub mod fixtures;
pub mod gradcheck;
pub mod model;
pub mod scalar;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use scalar::Scalar;

/// Default 64-bit tensor.
pub type Tensor64 = tensor::Tensor<f64>;
/// Default 64-bit computation graph.
pub type Graph64 = autodiff::Graph<f64>;
/// Default 64-bit embedding table.
pub type EmbeddingTable64 = encoders::EmbeddingTable<f64>;
/// Default 64-bit parameter set.
pub type VccParameters64 = model::VccParameters<f64>;
/// Default 64-bit training outcome.
pub type FitOutcome64 = trainer::FitOutcome<f64>;
