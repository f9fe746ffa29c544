//! Interactive data annotation with analogical reasoning.
//!
//! An annotation model `f` proposes labels; a weighted KNN `g` over
//! previously human-labeled examples gives a second opinion; a gating network
//! estimates how far `f` can be trusted on each example and blends the two:
//! `F(x) = lambda * f(x) + (1 - lambda) * g(x)`.

pub mod corpus;
pub mod error;
pub mod gating;
pub mod harness;
pub mod knn;
pub mod math;
pub mod model;
pub mod session;

pub use corpus::{embed_corpus, make_batches, Corpus, EmbedMode, EmbeddingTable, Example, LabelSpace};
pub use error::{Error, Result};
pub use gating::{binarize, build_gating_input, GatingInput, GatingNet};
pub use knn::{knn_infer, retrieve, smooth_label, Datastore, Entry, Eviction, MetricParams, Neighbor, NeighborSet};
pub use model::{uncertainty, AnnotationModel, ExternalModel, ExternalModelConfig, LinearSoftmaxModel, Prediction, PredictionKind};
pub use session::{Ablation, Checkpoint, Counters, FlagMode, LambdaMode, OrderMode, Session, SessionConfig, Suggestion};
pub use harness::{run_experiment, ExperimentConfig, Oracle, OracleSpec, RunReport, SyntheticSpec, Variant};
