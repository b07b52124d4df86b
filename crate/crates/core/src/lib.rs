//! Component-wise scoring and audit toolkit for medical question answering.
//!
//! A generated answer is scored against an authoritative reference along four
//! independent dimensions:
//!
//! * [`entity`]: biomedical entity precision/recall/F1 under explicit matching rules,
//! * [`semantic`]: embedding cosine similarity,
//! * [`factual`]: NLI-based factual consistency,
//! * [`structure`]: Jaccard overlap of enumerated items,
//!
//! which [`scoring`] composes into the VB-Score. [`stats`] carries the statistical
//! protocol used to compare models, [`harness`] renders prompts, calls model backends
//! and accounts for cost, and [`pipeline`] wires everything into the commands exposed
//! by the CLI.
//!
//! The numeric core is generic over the scalar type (see [`Scalar`]); the aliases at
//! the crate root fix it to `f64`, which is what the file formats use.

pub mod config;
pub mod datamodel;
pub mod entity;
pub mod error;
pub mod factual;
pub mod harness;
pub mod http;
pub mod pipeline;
pub mod scalar;
pub mod scoring;
pub mod semantic;
pub mod stats;
pub mod structure;
pub mod text;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Component scores in `f64`.
pub type Components = datamodel::ComponentScores<f64>;
/// Weight scheme in `f64`.
pub type Scheme = scoring::WeightScheme<f64>;
/// Failure thresholds in `f64`.
pub type Thresholds = scoring::FailureThresholds<f64>;
/// Descriptive summary in `f64`.
pub type Summary = stats::DescriptiveSummary<f64>;
/// Hypothesis test outcome in `f64`.
pub type Test = stats::TestResult<f64>;
/// Component scores in `f32`.
pub type ComponentsF32 = datamodel::ComponentScores<f32>;
/// Weight scheme in `f32`.
pub type SchemeF32 = scoring::WeightScheme<f32>;
