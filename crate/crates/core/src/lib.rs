//! Benchmarking engine for post-hoc feature attribution on text classifiers.
//!
//! The pieces: a [`backend::ModelBackend`] contract with a built-in reference
//! classifier, eight [`explainers`], nine [`metrics`] over faithfulness,
//! plausibility and complexity, rationale-annotated [`datasets`], the
//! [`bench`] runner and an LLM [`verbalizer`] for summaries.

pub mod backend;
pub mod bench;
pub mod datasets;
pub mod error;
pub mod explainers;
pub mod metrics;
pub mod verbalizer;

pub use backend::{
    BackendInfo, Baseline, Capability, EmbeddingMatrix, ModelBackend, ProbabilityVector,
    ReferenceClassifier, RemoteBackend, TokenSequence,
};
pub use datasets::{CanonicalInstance, Dataset, RationaleMask, Task};
pub use error::{Error, Result};
pub use explainers::{explain, Attribution, ExplainerParams, Method};
pub use metrics::{Direction, Metric, MetricResult, MetricTable, Scope};
