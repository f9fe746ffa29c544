//! Annotation models: the built-in online linear-softmax classifier and an
//! HTTP adapter for external discrete-label annotators.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::{Example, LabelSpace};
use crate::error::{Error, Result};
use crate::math::{argmax, softmax};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionKind {
    Probabilistic,
    Discrete,
}

/// Output of an annotation model for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prediction {
    Probabilistic { probs: Vec<f64>, class_idx: usize },
    Discrete { class_idx: usize },
}

impl Prediction {
    /// Builds a probabilistic prediction, taking the argmax (lowest index on ties).
    pub fn from_probs(probs: Vec<f64>) -> Self {
        let class_idx = argmax(&probs);
        Prediction::Probabilistic { probs, class_idx }
    }

    pub fn class_idx(&self) -> usize {
        match self {
            Prediction::Probabilistic { class_idx, .. } | Prediction::Discrete { class_idx } => *class_idx,
        }
    }

    pub fn probs(&self) -> Option<&[f64]> {
        match self {
            Prediction::Probabilistic { probs, .. } => Some(probs),
            Prediction::Discrete { .. } => None,
        }
    }

    pub fn kind(&self) -> PredictionKind {
        match self {
            Prediction::Probabilistic { .. } => PredictionKind::Probabilistic,
            Prediction::Discrete { .. } => PredictionKind::Discrete,
        }
    }
}

/// Shannon entropy of a probabilistic prediction (natural log, `0 log 0 = 0`).
pub fn uncertainty(prediction: &Prediction) -> Result<f64> {
    let probs = prediction
        .probs()
        .ok_or_else(|| Error::Unsupported("cannot estimate uncertainty of a discrete prediction".into()))?;
    Ok(-probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>())
}

/// Serializable state of the built-in model kinds, used by session checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelCheckpoint {
    Linear(LinearSoftmaxModel),
    External(ExternalModelConfig),
}

impl ModelCheckpoint {
    pub fn restore(self, classes: &LabelSpace) -> Result<Box<dyn AnnotationModel>> {
        Ok(match self {
            ModelCheckpoint::Linear(m) => Box::new(m),
            ModelCheckpoint::External(c) => Box::new(ExternalModel::new(c, classes.clone())?),
        })
    }
}

/// The annotation model `f` proposing labels to the human.
pub trait AnnotationModel: Send {
    fn kind(&self) -> PredictionKind;

    fn predict(&self, example: &Example) -> Result<Prediction>;

    /// Prediction from a bare feature vector; used to re-check the model on
    /// datastore entries, which carry no text.
    fn predict_feature(&self, _feature: &[f64]) -> Result<Prediction> {
        Err(Error::Unsupported("model cannot predict from a bare feature".into()))
    }

    /// One training step on labeled pairs. Returns the pre-step loss, or
    /// `None` for frozen models.
    fn update(&mut self, _features: &[&[f64]], _labels: &[usize]) -> Result<Option<f64>> {
        Ok(None)
    }

    fn checkpoint(&self) -> Option<ModelCheckpoint> {
        None
    }
}

/// Multinomial logistic regression trained online by full-batch gradient
/// steps on the mean negative log-likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSoftmaxModel {
    classes: usize,
    dim: usize,
    /// Row-major `classes x dim`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    lr: f64,
}

/// Gradient of the mean NLL with respect to the linear model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearSoftmaxModel {
    /// Zero-initialized model.
    pub fn new(classes: usize, dim: usize, lr: f64) -> Result<Self> {
        if classes < 2 || dim == 0 {
            return Err(Error::Config(format!("linear model needs C >= 2 and D >= 1 (got {classes}, {dim})")));
        }
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("lr_f must be positive, got {lr}")));
        }
        Ok(Self { classes, dim, weights: vec![0.0; classes * dim], bias: vec![0.0; classes], lr })
    }

    pub fn from_parts(weights: Vec<f64>, bias: Vec<f64>, lr: f64) -> Result<Self> {
        let classes = bias.len();
        if classes == 0 || !weights.len().is_multiple_of(classes) {
            return Err(Error::Config("weights must be a classes x dim matrix".into()));
        }
        let mut m = Self::new(classes, weights.len() / classes, lr)?;
        m.weights = weights;
        m.bias = bias;
        Ok(m)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn set_params(&mut self, weights: &[f64], bias: &[f64]) {
        self.weights.copy_from_slice(weights);
        self.bias.copy_from_slice(bias);
    }

    fn check_dim(&self, feature: &[f64]) -> Result<()> {
        if feature.len() == self.dim {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected: self.dim, got: feature.len() })
        }
    }

    pub fn logits(&self, feature: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(feature)?;
        Ok(self
            .weights
            .chunks_exact(self.dim)
            .zip(&self.bias)
            .map(|(row, b)| crate::math::dot(row, feature) + b)
            .collect())
    }

    pub fn probs(&self, feature: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(feature)?))
    }

    /// Mean NLL over the batch and its gradient.
    pub fn loss_and_grad(&self, features: &[&[f64]], labels: &[usize]) -> Result<(f64, LinearGrad)> {
        if features.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if features.len() != labels.len() {
            return Err(Error::LengthMismatch { left: features.len(), right: labels.len() });
        }
        let n = features.len() as f64;
        let mut grad = LinearGrad { weights: vec![0.0; self.weights.len()], bias: vec![0.0; self.classes] };
        let mut loss = 0.0;
        for (x, &y) in features.iter().zip(labels) {
            if y >= self.classes {
                return Err(Error::ClassOutOfRange { index: y, classes: self.classes });
            }
            let p = self.probs(x)?;
            loss -= p[y].max(f64::MIN_POSITIVE).ln();
            for (c, &pc) in p.iter().enumerate() {
                let delta = (pc - if c == y { 1.0 } else { 0.0 }) / n;
                grad.bias[c] += delta;
                for (g, xi) in grad.weights[c * self.dim..(c + 1) * self.dim].iter_mut().zip(x.iter()) {
                    *g += delta * xi;
                }
            }
        }
        Ok((loss / n, grad))
    }

    /// One gradient step with rate `lr`; returns the pre-step loss.
    pub fn step(&mut self, features: &[&[f64]], labels: &[usize]) -> Result<f64> {
        let (loss, grad) = self.loss_and_grad(features, labels)?;
        for (w, g) in self.weights.iter_mut().zip(&grad.weights) {
            *w -= self.lr * g;
        }
        for (b, g) in self.bias.iter_mut().zip(&grad.bias) {
            *b -= self.lr * g;
        }
        Ok(loss)
    }
}

impl AnnotationModel for LinearSoftmaxModel {
    fn kind(&self) -> PredictionKind {
        PredictionKind::Probabilistic
    }

    fn predict(&self, example: &Example) -> Result<Prediction> {
        self.predict_feature(example.feature()?)
    }

    fn predict_feature(&self, feature: &[f64]) -> Result<Prediction> {
        Ok(Prediction::from_probs(self.probs(feature)?))
    }

    fn update(&mut self, features: &[&[f64]], labels: &[usize]) -> Result<Option<f64>> {
        self.step(features, labels).map(Some)
    }

    fn checkpoint(&self) -> Option<ModelCheckpoint> {
        Some(ModelCheckpoint::Linear(self.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalModelConfig {
    pub endpoint: String,
    pub timeout_ms: u64,
    #[serde(default)]
    pub retries: u32,
}

#[derive(Serialize)]
struct ExternalRequest<'a> {
    id: &'a str,
    text: Option<&'a str>,
    classes: &'a [String],
}

#[derive(Deserialize)]
struct ExternalReply {
    label: String,
}

/// Discrete-label annotator reached over HTTP: POSTs `{id, text, classes}`
/// and expects `{"label": name}` back.
pub struct ExternalModel {
    config: ExternalModelConfig,
    classes: LabelSpace,
    agent: ureq::Agent,
}

impl ExternalModel {
    pub fn new(config: ExternalModelConfig, classes: LabelSpace) -> Result<Self> {
        if config.timeout_ms == 0 {
            return Err(Error::Config("external model timeout must be positive".into()));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(true)
            .build()
            .into();
        Ok(Self { config, classes, agent })
    }

    fn call(&self, body: &ExternalRequest<'_>) -> std::result::Result<String, ureq::Error> {
        let reply: ExternalReply = self.agent.post(&self.config.endpoint).send_json(body)?.body_mut().read_json()?;
        Ok(reply.label)
    }
}

impl AnnotationModel for ExternalModel {
    fn kind(&self) -> PredictionKind {
        PredictionKind::Discrete
    }

    fn predict(&self, example: &Example) -> Result<Prediction> {
        let body = ExternalRequest { id: &example.id, text: example.text.as_deref(), classes: self.classes.names() };
        let mut last_err = String::new();
        for _ in 0..=self.config.retries {
            match self.call(&body) {
                Ok(label) => {
                    let class_idx = self
                        .classes
                        .index_of(&label)
                        .ok_or_else(|| Error::Protocol(format!("unknown label {label:?}")))?;
                    return Ok(Prediction::Discrete { class_idx });
                }
                Err(ureq::Error::Json(e)) => return Err(Error::Protocol(e.to_string())),
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(Error::ModelUnavailable(format!(
            "{} after {} attempt(s): {last_err}",
            self.config.endpoint,
            self.config.retries + 1
        )))
    }

    fn checkpoint(&self) -> Option<ModelCheckpoint> {
        Some(ModelCheckpoint::External(self.config.clone()))
    }
}
