//! The interactive annotation loop.
//!
//! `suggest` blends the annotation model with the KNN prediction,
//! `feedback` records the human decision and grows the datastore, and every
//! `batch_size` feedbacks trigger a training round that updates, in order,
//! the annotation model, the KNN metric and the gating network.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Example, LabelSpace};
use crate::error::{Error, Result};
use crate::gating::{binarize, gating_input_from_neighbors, GatingInput, GatingNet};
use crate::knn::{self, Datastore, Eviction, MetricParams, MetricQuery, NeighborSet};
use crate::math::argmax;
use crate::model::{AnnotationModel, LinearSoftmaxModel, ModelCheckpoint, Prediction, PredictionKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// Blend the two distributions with weight lambda.
    Continuous,
    /// Route each example to one of the two predictors.
    Binary,
}

/// Which components take part in suggestions. Serialized as its label
/// (`full`, `no_knn`, `no_f`, `const_0.5`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Ablation {
    Full,
    /// Annotation model alone (lambda = 1).
    NoKnn,
    /// KNN alone (lambda = 0).
    NoF,
    /// Fixed lambda for every example.
    ConstLambda(f64),
}

impl Ablation {
    pub fn label(&self) -> String {
        match self {
            Ablation::Full => "full".into(),
            Ablation::NoKnn => "no_knn".into(),
            Ablation::NoF => "no_f".into(),
            Ablation::ConstLambda(c) => format!("const_{c}"),
        }
    }

    fn uses_knn(&self) -> bool {
        !matches!(self, Ablation::NoKnn)
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "no_knn" => Ok(Ablation::NoKnn),
            "no_f" => Ok(Ablation::NoF),
            other => other
                .strip_prefix("const_")
                .and_then(|v| v.parse::<f64>().ok())
                .map(Ablation::ConstLambda)
                .ok_or_else(|| Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

impl TryFrom<String> for Ablation {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Ablation> for String {
    fn from(a: Ablation) -> String {
        a.label()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderMode {
    Random,
    /// Highest-entropy examples first, re-ranked every batch.
    Active,
}

/// Source of the per-neighbor correctness flags in the gating signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagMode {
    /// Re-run the current annotation model on each neighbor.
    Recompute,
    /// Use the flag stored when the neighbor was annotated.
    Stored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub k: usize,
    pub capacity: usize,
    pub eviction: Eviction,
    pub batch_size: usize,
    pub lr_f: f64,
    pub lr_g: f64,
    pub lr_gate: f64,
    pub epochs: usize,
    pub lambda_mode: LambdaMode,
    pub ablation: Ablation,
    pub ordering: OrderMode,
    pub seed: u64,
    pub flag_mode: FlagMode,
    /// Train on every example seen so far instead of only the latest batch.
    pub replay_history: bool,
    pub tau: f64,
    pub gumbel_noise: bool,
    pub hidden1: usize,
    pub hidden2: usize,
    pub dropout: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            k: 20,
            capacity: 1000,
            eviction: Eviction::ClassSimilar,
            batch_size: 32,
            lr_f: 0.1,
            lr_g: 0.01,
            lr_gate: 0.01,
            epochs: 1,
            lambda_mode: LambdaMode::Continuous,
            ablation: Ablation::Full,
            ordering: OrderMode::Random,
            seed: 0,
            flag_mode: FlagMode::Recompute,
            replay_history: false,
            tau: 1.0,
            gumbel_noise: true,
            hidden1: 32,
            hidden2: 16,
            dropout: 0.1,
        }
    }
}

impl SessionConfig {
    /// Checks ranges and the model-kind constraints. Discrete models force
    /// binary routing and stored correctness flags; binary routing is only
    /// allowed for discrete models.
    pub fn validate(&self, kind: PredictionKind) -> Result<SessionConfig> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.k == 0 {
            return bad("k must be positive".into());
        }
        if self.capacity == 0 {
            return bad("capacity must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(1..=5).contains(&self.epochs) {
            return bad(format!("epochs must be in 1..=5, got {}", self.epochs));
        }
        for (name, v) in [("lr_f", self.lr_f), ("lr_g", self.lr_g), ("lr_gate", self.lr_gate), ("tau", self.tau)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0,1), got {}", self.dropout));
        }
        if let Ablation::ConstLambda(c) = self.ablation {
            if !(0.0..=1.0).contains(&c) {
                return bad(format!("constant lambda must be in [0,1], got {c}"));
            }
        }
        let mut eff = self.clone();
        match kind {
            PredictionKind::Discrete => {
                eff.lambda_mode = LambdaMode::Binary;
                eff.flag_mode = FlagMode::Stored;
                if eff.ordering == OrderMode::Active {
                    return bad("active ordering needs a probabilistic annotation model".into());
                }
            }
            PredictionKind::Probabilistic => {
                if self.lambda_mode == LambdaMode::Binary {
                    return bad("binary lambda mode requires a discrete-label annotation model".into());
                }
            }
        }
        Ok(eff)
    }
}

/// The suggestion shown to the human.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Final {
    Distribution(Vec<f64>),
    Class(usize),
}

impl Final {
    pub fn class_idx(&self) -> usize {
        match self {
            Final::Distribution(p) => argmax(p),
            Final::Class(c) => *c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborInfo {
    pub seq: u64,
    pub label: usize,
    pub distance: f64,
    pub origin: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    /// Id of the example; feedback refers to it.
    pub id: String,
    pub f_pred: Prediction,
    pub g_pred: Option<Vec<f64>>,
    pub lambda: f64,
    pub final_pred: Final,
    pub suggested_class: usize,
    /// True when lambda came from the gating network.
    pub gated: bool,
    pub neighbors: Vec<NeighborInfo>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub total: u64,
    pub correct: u64,
    pub corrected: u64,
}

/// Losses of the last epoch of a training round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u64,
    pub f_loss: Option<f64>,
    pub g_loss: Option<f64>,
    pub gate_loss: Option<f64>,
    /// Correctness of the updated annotation model on the round's examples.
    pub gate_targets: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackOutcome {
    pub accepted: bool,
    pub round: Option<RoundReport>,
}

impl FeedbackOutcome {
    pub fn round_complete(&self) -> bool {
        self.round.is_some()
    }
}

pub const LAMBDA_BINS: usize = 10;

pub fn lambda_bin(lambda: f64) -> usize {
    ((lambda * LAMBDA_BINS as f64) as usize).min(LAMBDA_BINS - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Labeled {
    feature: Vec<f64>,
    label: usize,
    seq: u64,
    /// Class the annotation model suggested at annotation time.
    f_class: usize,
}

#[derive(Debug, Clone)]
struct Pending {
    suggestion: Suggestion,
    feature: Vec<f64>,
}

pub struct Session {
    config: SessionConfig,
    labels: LabelSpace,
    dim: usize,
    model: Box<dyn AnnotationModel>,
    store: Datastore,
    metric: MetricParams,
    gate: GatingNet,
    rng: ChaCha8Rng,
    round: u64,
    counters: Counters,
    lambda_histogram: [u64; LAMBDA_BINS],
    buffer: Vec<Labeled>,
    history: Vec<Labeled>,
    pending: HashMap<String, Pending>,
}

impl Session {
    pub fn new(config: &SessionConfig, labels: LabelSpace, dim: usize, model: Box<dyn AnnotationModel>) -> Result<Self> {
        let config = config.validate(model.kind())?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let gate = GatingNet::new(config.k, config.hidden1, config.hidden2, config.lr_gate, config.dropout, &mut rng)?;
        let mut metric = MetricParams::new(dim, config.lr_g, config.tau)?;
        metric.gumbel_noise = config.gumbel_noise;
        let store = Datastore::new(config.capacity, labels.len(), config.eviction)?;
        Ok(Self {
            config,
            labels,
            dim,
            model,
            store,
            metric,
            gate,
            rng,
            round: 0,
            counters: Counters::default(),
            lambda_histogram: [0; LAMBDA_BINS],
            buffer: Vec::new(),
            history: Vec::new(),
            pending: HashMap::new(),
        })
    }

    /// Session backed by a fresh zero-initialized linear-softmax model.
    pub fn with_linear_model(config: &SessionConfig, labels: LabelSpace, dim: usize) -> Result<Self> {
        let model = LinearSoftmaxModel::new(labels.len(), dim, config.lr_f)?;
        Self::new(config, labels, dim, Box::new(model))
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn labels(&self) -> &LabelSpace {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn model(&self) -> &dyn AnnotationModel {
        self.model.as_ref()
    }

    pub fn datastore(&self) -> &Datastore {
        &self.store
    }

    pub fn metric(&self) -> &MetricParams {
        &self.metric
    }

    pub fn gate(&self) -> &GatingNet {
        &self.gate
    }

    pub fn gate_mut(&mut self) -> &mut GatingNet {
        &mut self.gate
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn lambda_histogram(&self) -> &[u64; LAMBDA_BINS] {
        &self.lambda_histogram
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    /// Machine cumulative accuracy: accepted suggestions over all suggestions.
    pub fn mca(&self) -> Result<f64> {
        if self.counters.total == 0 {
            return Err(Error::NoSuggestions);
        }
        Ok(self.counters.correct as f64 / self.counters.total as f64)
    }

    fn neighbor_flags(&self, neighbors: &NeighborSet) -> Result<Vec<bool>> {
        neighbors
            .iter()
            .map(|n| {
                let entry = &self.store.entries()[n.index];
                Ok(match self.config.flag_mode {
                    FlagMode::Stored => entry.suggest_correct,
                    FlagMode::Recompute => self.model.predict_feature(&entry.feature)?.class_idx() == entry.label,
                })
            })
            .collect()
    }

    fn gating_input(&self, neighbors: &NeighborSet) -> Result<GatingInput> {
        let flags = self.neighbor_flags(neighbors)?;
        gating_input_from_neighbors(neighbors, &flags, self.config.k)
    }

    /// Produces the blended suggestion for `example` and remembers it until
    /// feedback arrives.
    pub fn suggest(&mut self, example: &Example) -> Result<Suggestion> {
        let feature = example.feature()?;
        if feature.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: feature.len() });
        }
        let f_pred = self.model.predict(example)?;
        let use_knn = self.config.ablation.uses_knn() && !self.store.is_empty();

        let (g_pred, neighbors, lambda, gated) = if use_knn {
            let neighbors = knn::retrieve(&self.store, &self.metric, feature, self.config.k)?;
            let g = knn::blend_neighbors(&neighbors, self.labels.len());
            let (lambda, gated) = match self.config.ablation {
                Ablation::NoF => (0.0, false),
                Ablation::ConstLambda(c) => (c, false),
                Ablation::Full => (self.gate.forward(&self.gating_input(&neighbors)?)?, true),
                Ablation::NoKnn => unreachable!(),
            };
            (Some(g), neighbors, lambda, gated)
        } else {
            (None, Vec::new(), 1.0, false)
        };

        let final_pred = match &g_pred {
            None => f_final(&f_pred),
            Some(g) => match self.config.lambda_mode {
                LambdaMode::Binary => {
                    if binarize(lambda) == 1 {
                        f_final(&f_pred)
                    } else {
                        Final::Distribution(g.clone())
                    }
                }
                LambdaMode::Continuous => {
                    let f = f_pred
                        .probs()
                        .ok_or_else(|| Error::Unsupported("continuous blending needs a probabilistic model".into()))?;
                    Final::Distribution(blend(lambda, f, g))
                }
            },
        };
        let neighbors = neighbors
            .iter()
            .map(|n| NeighborInfo {
                seq: n.seq,
                label: n.label,
                distance: n.distance,
                origin: self.store.entries()[n.index].origin.clone(),
            })
            .collect();
        let suggestion = Suggestion {
            id: example.id.clone(),
            suggested_class: final_pred.class_idx(),
            f_pred,
            g_pred,
            lambda,
            final_pred,
            gated,
            neighbors,
        };
        self.pending
            .insert(example.id.clone(), Pending { suggestion: suggestion.clone(), feature: feature.to_vec() });
        Ok(suggestion)
    }

    /// Records the human label for a pending suggestion. Completing a batch
    /// runs a training round.
    pub fn feedback(&mut self, suggestion_id: &str, human_label: usize) -> Result<FeedbackOutcome> {
        self.labels.check(human_label)?;
        let Pending { suggestion, feature } =
            self.pending.remove(suggestion_id).ok_or_else(|| Error::UnknownSuggestion(suggestion_id.to_owned()))?;
        let accepted = suggestion.suggested_class == human_label;
        self.counters.total += 1;
        if accepted {
            self.counters.correct += 1;
        } else {
            self.counters.corrected += 1;
        }
        self.lambda_histogram[lambda_bin(suggestion.lambda)] += 1;

        let f_class = suggestion.f_pred.class_idx();
        let inserted = self.store.insert(feature.clone(), human_label, f_class == human_label, Some(suggestion.id))?;
        let item = Labeled { feature, label: human_label, seq: inserted.seq, f_class };
        if self.config.replay_history {
            self.history.push(item.clone());
        }
        self.buffer.push(item);

        let round = if self.buffer.len() >= self.config.batch_size { Some(self.train_round()?) } else { None };
        Ok(FeedbackOutcome { accepted, round })
    }

    /// Runs the buffered examples through the coordinate-descent updates:
    /// annotation model, then KNN metric, then gating network (whose targets
    /// use the already-updated annotation model).
    pub fn train_round(&mut self) -> Result<RoundReport> {
        if self.buffer.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let data = if self.config.replay_history { self.history.clone() } else { self.buffer.clone() };
        let features: Vec<&[f64]> = data.iter().map(|d| d.feature.as_slice()).collect();
        let labels: Vec<usize> = data.iter().map(|d| d.label).collect();
        let mut report = RoundReport { round: self.round, f_loss: None, g_loss: None, gate_loss: None, gate_targets: Vec::new() };

        for _ in 0..self.config.epochs {
            if self.model.kind() == PredictionKind::Probabilistic {
                report.f_loss = self.model.update(&features, &labels)?;
            }
            if self.config.ablation.uses_knn() && self.store.len() >= 2 {
                let queries: Vec<MetricQuery> = data
                    .iter()
                    .map(|d| MetricQuery { feature: &d.feature, label: d.label, exclude_seq: Some(d.seq) })
                    .collect();
                report.g_loss = Some(knn::update_metric(&mut self.metric, &self.store, &queries, &mut self.rng)?);
            }
            if self.config.ablation == Ablation::Full {
                let mut inputs = Vec::new();
                let mut targets = Vec::new();
                for d in &data {
                    let neighbors =
                        match knn::retrieve_excluding(&self.store, &self.metric, &d.feature, self.config.k, Some(d.seq)) {
                            Ok(n) => n,
                            Err(Error::EmptyStore) => continue,
                            Err(e) => return Err(e),
                        };
                    let f_class = match self.model.kind() {
                        PredictionKind::Probabilistic => self.model.predict_feature(&d.feature)?.class_idx(),
                        PredictionKind::Discrete => d.f_class,
                    };
                    inputs.push(self.gating_input(&neighbors)?);
                    targets.push(f_class == d.label);
                }
                if !inputs.is_empty() {
                    report.gate_loss = Some(self.gate.update(&inputs, &targets, &mut self.rng)?);
                }
                report.gate_targets = targets;
            }
        }
        self.buffer.clear();
        self.pending.clear();
        self.round += 1;
        Ok(report)
    }

    /// Trains on a partially filled buffer, if any.
    pub fn flush(&mut self) -> Result<Option<RoundReport>> {
        if self.buffer.is_empty() {
            Ok(None)
        } else {
            self.train_round().map(Some)
        }
    }

    pub fn checkpoint(&self, corpus: Option<String>) -> Result<Checkpoint> {
        let model = self
            .model
            .checkpoint()
            .ok_or_else(|| Error::Unsupported("annotation model cannot be checkpointed".into()))?;
        Ok(Checkpoint {
            corpus,
            config: self.config.clone(),
            labels: self.labels.clone(),
            dim: self.dim,
            model,
            datastore: self.store.clone(),
            metric: self.metric.clone(),
            gate: self.gate.clone(),
            round: self.round,
            counters: self.counters,
            lambda_histogram: self.lambda_histogram,
            buffer: self.buffer.clone(),
            history: self.history.clone(),
            rng: self.rng.clone(),
        })
    }

    pub fn restore(cp: Checkpoint) -> Result<Self> {
        let model = cp.model.restore(&cp.labels)?;
        let config = cp.config.validate(model.kind())?;
        Ok(Self {
            config,
            dim: cp.dim,
            model,
            store: cp.datastore.revalidate()?,
            metric: cp.metric,
            gate: cp.gate,
            rng: cp.rng,
            round: cp.round,
            counters: cp.counters,
            lambda_histogram: cp.lambda_histogram,
            buffer: cp.buffer,
            history: cp.history,
            pending: HashMap::new(),
            labels: cp.labels,
        })
    }
}

/// `lambda * f + (1 - lambda) * g`.
pub fn blend(lambda: f64, f: &[f64], g: &[f64]) -> Vec<f64> {
    f.iter().zip(g).map(|(fi, gi)| lambda * fi + (1.0 - lambda) * gi).collect()
}

fn f_final(f: &Prediction) -> Final {
    match f {
        Prediction::Probabilistic { probs, .. } => Final::Distribution(probs.clone()),
        Prediction::Discrete { class_idx } => Final::Class(*class_idx),
    }
}

/// Everything needed to resume a session.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Path or name of the corpus the session annotates.
    pub corpus: Option<String>,
    pub config: SessionConfig,
    pub labels: LabelSpace,
    pub dim: usize,
    pub model: ModelCheckpoint,
    pub datastore: Datastore,
    pub metric: MetricParams,
    pub gate: GatingNet,
    pub round: u64,
    pub counters: Counters,
    pub lambda_histogram: [u64; LAMBDA_BINS],
    buffer: Vec<Labeled>,
    history: Vec<Labeled>,
    rng: ChaCha8Rng,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        serde_json::to_writer(BufWriter::new(File::create(path)?), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::is_simplex;

    fn labels(c: usize) -> LabelSpace {
        LabelSpace::new((0..c).map(|i| format!("c{i}"))).unwrap()
    }

    fn ex(id: &str, f: &[f64]) -> Example {
        Example::with_feature(id, f.to_vec(), None)
    }

    /// Discrete model that always answers one class.
    struct Constant(usize);

    impl AnnotationModel for Constant {
        fn kind(&self) -> PredictionKind {
            PredictionKind::Discrete
        }
        fn predict(&self, _: &Example) -> Result<Prediction> {
            Ok(Prediction::Discrete { class_idx: self.0 })
        }
    }

    #[test]
    fn cold_start_returns_f_exactly() {
        let mut s = Session::with_linear_model(&SessionConfig::default(), labels(3), 2).unwrap();
        let sug = s.suggest(&ex("a", &[1.0, 2.0])).unwrap();
        assert_eq!(sug.lambda, 1.0);
        assert_eq!(sug.final_pred, Final::Distribution(sug.f_pred.probs().unwrap().to_vec()));
        assert!(sug.g_pred.is_none());
    }

    #[test]
    fn blend_example() {
        let fin = blend(0.3, &[0.9, 0.1], &[0.2, 0.8]);
        assert!((fin[0] - 0.41).abs() < 1e-12 && (fin[1] - 0.59).abs() < 1e-12);
        assert_eq!(argmax(&fin), 1);
    }

    #[test]
    fn const_lambda_session_blends() {
        let cfg = SessionConfig { ablation: Ablation::ConstLambda(0.3), k: 1, ..Default::default() };
        let logit = (0.9f64 / 0.1).ln();
        let model = LinearSoftmaxModel::from_parts(vec![0.0, 0.0], vec![logit, 0.0], 0.1).unwrap();
        let mut s = Session::new(&cfg, labels(2), 1, Box::new(model)).unwrap();
        s.store.insert(vec![0.0], 1, true, None).unwrap();
        let sug = s.suggest(&ex("q", &[1.0])).unwrap();
        assert!((sug.f_pred.probs().unwrap()[0] - 0.9).abs() < 1e-12);
        assert_eq!(sug.g_pred.as_deref(), Some(&[0.25, 0.75][..]));
        let Final::Distribution(fin) = &sug.final_pred else { panic!() };
        // 0.3 * 0.9 + 0.7 * 0.25
        assert!((fin[0] - 0.445).abs() < 1e-12);
        assert!(is_simplex(fin, 1e-9));
        assert_eq!(sug.suggested_class, 1);
    }

    #[test]
    fn binary_mode_routes_verbatim() {
        let cfg = SessionConfig { ablation: Ablation::ConstLambda(0.6), ..Default::default() };
        let mut s = Session::new(&cfg, labels(3), 1, Box::new(Constant(2))).unwrap();
        assert_eq!(s.config().lambda_mode, LambdaMode::Binary);
        s.store.insert(vec![0.0], 0, false, None).unwrap();
        let sug = s.suggest(&ex("q", &[0.1])).unwrap();
        assert_eq!(sug.final_pred, Final::Class(2));
        let cfg = SessionConfig { ablation: Ablation::ConstLambda(0.4), ..Default::default() };
        let mut s = Session::new(&cfg, labels(3), 1, Box::new(Constant(2))).unwrap();
        s.store.insert(vec![0.0], 0, false, None).unwrap();
        let sug = s.suggest(&ex("q", &[0.1])).unwrap();
        assert_eq!(sug.final_pred, Final::Distribution(sug.g_pred.clone().unwrap()));
        assert_eq!(sug.suggested_class, 0);
    }

    #[test]
    fn binary_mode_rejected_for_probabilistic_model() {
        let cfg = SessionConfig { lambda_mode: LambdaMode::Binary, ..Default::default() };
        assert!(matches!(Session::with_linear_model(&cfg, labels(2), 2), Err(Error::Config(_))));
    }

    #[test]
    fn replay_trains_on_all_history() {
        for (replay, want) in [(false, 2), (true, 4)] {
            let cfg = SessionConfig { batch_size: 2, replay_history: replay, ..Default::default() };
            let mut s = Session::with_linear_model(&cfg, labels(2), 1).unwrap();
            let mut last = None;
            for (i, x) in [0.0, 1.0, 2.0, 3.0].iter().enumerate() {
                let id = format!("e{i}");
                s.suggest(&ex(&id, &[*x])).unwrap();
                last = s.feedback(&id, i % 2).unwrap().round;
            }
            assert_eq!(last.unwrap().gate_targets.len(), want, "replay {replay}");
        }
    }

    #[test]
    fn feedback_accounting() {
        let cfg = SessionConfig { batch_size: 4, ..Default::default() };
        let mut s = Session::with_linear_model(&cfg, labels(3), 1).unwrap();
        let sug = s.suggest(&ex("a", &[0.0])).unwrap();
        assert_eq!(sug.suggested_class, 0);
        assert!(s.feedback("a", 0).unwrap().accepted);
        s.suggest(&ex("b", &[0.0])).unwrap();
        let out = s.feedback("b", 2).unwrap();
        assert!(!out.accepted && !out.round_complete());
        assert_eq!(s.datastore().entries().last().unwrap().label, 2);
        assert_eq!(s.counters(), Counters { total: 2, correct: 1, corrected: 1 });
        s.suggest(&ex("c", &[1.0])).unwrap();
        s.suggest(&ex("d", &[2.0])).unwrap();
        // out-of-order within the batch is fine
        assert!(!s.feedback("d", 1).unwrap().round_complete());
        assert!(s.feedback("c", 1).unwrap().round_complete());
        assert_eq!(s.round(), 1);
        assert!(matches!(s.feedback("zzz", 0), Err(Error::UnknownSuggestion(_))));
        assert!(s.feedback("a", 9).is_err());
    }

    #[test]
    fn mca_values() {
        let mut s = Session::with_linear_model(&SessionConfig::default(), labels(2), 1).unwrap();
        assert!(matches!(s.mca(), Err(Error::NoSuggestions)));
        for (i, label) in [0, 0, 0, 1].into_iter().enumerate() {
            let id = format!("e{i}");
            s.suggest(&ex(&id, &[0.0])).unwrap();
            s.feedback(&id, label).unwrap();
        }
        assert_eq!(s.mca().unwrap(), 0.75);
    }

    #[test]
    fn ablations_skip_components() {
        let mut cfg = SessionConfig { batch_size: 3, k: 2, ..Default::default() };
        let run = |cfg: &SessionConfig| {
            let mut s = Session::with_linear_model(cfg, labels(2), 2).unwrap();
            let mut last = None;
            for (i, (f, y)) in [([0.0, 1.0], 0), ([1.0, 0.0], 1), ([0.5, 0.5], 0)].iter().enumerate() {
                let id = i.to_string();
                s.suggest(&ex(&id, f)).unwrap();
                last = s.feedback(&id, *y).unwrap().round;
            }
            last.unwrap()
        };
        let full = run(&cfg);
        assert!(full.f_loss.is_some() && full.g_loss.is_some() && full.gate_loss.is_some());
        cfg.ablation = Ablation::NoKnn;
        let r = run(&cfg);
        assert!(r.f_loss.is_some() && r.g_loss.is_none() && r.gate_loss.is_none());
        cfg.ablation = Ablation::ConstLambda(0.5);
        let r = run(&cfg);
        assert!(r.g_loss.is_some() && r.gate_loss.is_none());
    }

    #[test]
    fn gate_targets_use_updated_model() {
        let cfg = SessionConfig { batch_size: 2, lr_f: 5.0, k: 2, ..Default::default() };
        let mut s = Session::with_linear_model(&cfg, labels(2), 1).unwrap();
        // initial zero model predicts class 0 everywhere
        s.suggest(&ex("a", &[1.0])).unwrap();
        s.feedback("a", 1).unwrap();
        s.suggest(&ex("b", &[2.0])).unwrap();
        assert_eq!(s.pending["b"].suggestion.f_pred.class_idx(), 0);
        let report = s.feedback("b", 1).unwrap().round.unwrap();
        assert!([report.f_loss, report.g_loss, report.gate_loss].iter().all(|l| l.unwrap().is_finite()));
        // pre-update f was wrong on both; the updated f is right
        assert_eq!(report.gate_targets, vec![true, true]);
    }

    #[test]
    fn checkpoint_round_trip_continues_identically() {
        let cfg = SessionConfig { batch_size: 2, k: 3, ..Default::default() };
        let mut a = Session::with_linear_model(&cfg, labels(2), 2).unwrap();
        let data: Vec<([f64; 2], usize)> = (0..9).map(|i| ([i as f64 * 0.3, 1.0 - i as f64 * 0.1], i % 2)).collect();
        for (i, (f, y)) in data[..5].iter().enumerate() {
            let id = i.to_string();
            a.suggest(&ex(&id, f)).unwrap();
            a.feedback(&id, *y).unwrap();
        }
        let json = serde_json::to_string(&a.checkpoint(Some("c.jsonl".into())).unwrap()).unwrap();
        let mut b = Session::restore(serde_json::from_str(&json).unwrap()).unwrap();
        for (i, (f, y)) in data[5..].iter().enumerate() {
            let id = format!("x{i}");
            let sa = a.suggest(&ex(&id, f)).unwrap();
            let sb = b.suggest(&ex(&id, f)).unwrap();
            assert_eq!(sa, sb);
            a.feedback(&id, *y).unwrap();
            b.feedback(&id, *y).unwrap();
        }
        assert_eq!(a.counters(), b.counters());
        assert_eq!(a.metric(), b.metric());
    }

    #[test]
    fn ablation_labels_parse_back() {
        for a in [Ablation::Full, Ablation::NoKnn, Ablation::NoF, Ablation::ConstLambda(0.25)] {
            assert_eq!(a.label().parse::<Ablation>().unwrap(), a);
        }
        assert!("nope".parse::<Ablation>().is_err());
    }
}
