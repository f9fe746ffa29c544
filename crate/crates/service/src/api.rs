//! Request and response bodies.

use araida_core::{ExternalModelConfig, SessionConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Linear softmax model trained online on the session's feedback.
    #[default]
    Linear,
    /// Discrete-label annotator behind an HTTP endpoint.
    External(ExternalModelConfig),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSessionRequest {
    pub corpus: String,
    #[serde(default)]
    pub config: Option<SessionConfig>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    /// Checkpoint file (in the server's checkpoint directory) to resume from.
    #[serde(default)]
    pub restore: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub id: String,
    pub classes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborPayload {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub example_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub label: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionPayload {
    pub example_id: String,
    pub text: Option<String>,
    pub suggested_class: String,
    pub lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_probs: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_probs: Option<Vec<f64>>,
    pub neighbors: Vec<NeighborPayload>,
    /// Examples left after this one.
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub example_id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackResponse {
    pub total: u64,
    pub correct: u64,
    pub mca: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsResponse {
    pub total: u64,
    pub correct: u64,
    /// `null` until the first feedback.
    pub mca: Option<f64>,
    pub lambda_histogram: Vec<u64>,
    pub datastore_size: usize,
    pub capacity: usize,
    pub round: u64,
    /// Examples not yet answered, including a pending one.
    pub remaining: usize,
    /// MCA after each feedback, oldest first.
    pub mca_series: Vec<f64>,
    /// Session creation time, seconds since the Unix epoch.
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointResponse {
    pub file: String,
    pub path: String,
}
