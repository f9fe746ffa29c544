//! Capacity-bounded datastore of human-labeled examples and weighted KNN
//! inference under a learned diagonal metric.
//!
//! Inference always uses exact top-k retrieval. Metric training replaces the
//! hard selection by a Gumbel-softmax over every stored entry, with logits
//! `-d(x, a) / tau + g_a`, so the loss is differentiable in the metric weights.

use std::cmp::Ordering;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::LabelSpace;
use crate::error::{Error, Result};

/// Lower clamp on distances; an exact duplicate gets weight `1 / DIST_EPS`.
pub const DIST_EPS: f64 = 1e-8;
/// Lower clamp on metric weights after every step.
pub const MIN_METRIC_WEIGHT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eviction {
    /// Majority class, entry closest to its class prototype.
    ClassSimilar,
    /// Majority class, entry farthest from its class prototype.
    ClassDissimilar,
    /// Oldest entry overall.
    Fifo,
    /// Oldest entry of the majority class.
    ClassFifo,
}

impl Eviction {
    pub const ALL: [Eviction; 4] = [Eviction::ClassSimilar, Eviction::ClassDissimilar, Eviction::Fifo, Eviction::ClassFifo];

    pub fn as_str(self) -> &'static str {
        match self {
            Eviction::ClassSimilar => "class_similar",
            Eviction::ClassDissimilar => "class_dissimilar",
            Eviction::Fifo => "fifo",
            Eviction::ClassFifo => "class_fifo",
        }
    }
}

impl std::str::FromStr for Eviction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Eviction::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown eviction strategy {s:?}")))
    }
}

/// A human-labeled example held in the datastore.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub feature: Vec<f64>,
    pub label: usize,
    /// Whether the annotation model's own suggestion matched the human label.
    pub suggest_correct: bool,
    pub seq: u64,
    /// Id of the source example, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inserted {
    pub seq: u64,
    pub evicted: Option<Entry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Datastore {
    entries: Vec<Entry>,
    capacity: usize,
    classes: usize,
    eviction: Eviction,
    next_seq: u64,
    #[serde(skip)]
    class_counts: Vec<usize>,
}

impl Datastore {
    pub fn new(capacity: usize, classes: usize, eviction: Eviction) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("datastore capacity must be positive".into()));
        }
        Ok(Self { entries: Vec::new(), capacity, classes, eviction, next_seq: 0, class_counts: vec![0; classes] })
    }

    /// Rebuilds a store from entries (e.g. a snapshot), validating invariants.
    pub fn from_entries(entries: Vec<Entry>, capacity: usize, classes: usize, eviction: Eviction) -> Result<Self> {
        let mut store = Self::new(capacity, classes, eviction)?;
        if entries.len() > capacity {
            return Err(Error::Config(format!("{} entries exceed capacity {capacity}", entries.len())));
        }
        for pair in entries.windows(2) {
            if pair[1].seq <= pair[0].seq {
                return Err(Error::Config("entry seq values must be strictly increasing".into()));
            }
        }
        for e in &entries {
            if e.label >= classes {
                return Err(Error::ClassOutOfRange { index: e.label, classes });
            }
            if e.feature.len() != entries[0].feature.len() {
                return Err(Error::DimensionMismatch { expected: entries[0].feature.len(), got: e.feature.len() });
            }
            store.class_counts[e.label] += 1;
        }
        store.next_seq = entries.last().map_or(0, |e| e.seq + 1);
        store.entries = entries;
        Ok(store)
    }

    /// Recomputes derived counters after deserialization.
    pub fn revalidate(self) -> Result<Self> {
        let next_seq = self.next_seq;
        let mut store = Self::from_entries(self.entries, self.capacity, self.classes, self.eviction)?;
        store.next_seq = store.next_seq.max(next_seq);
        Ok(store)
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn eviction(&self) -> Eviction {
        self.eviction
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|e| e.feature.len())
    }

    /// Appends an entry, evicting one entry first with the configured
    /// strategy when the store is full.
    pub fn insert(
        &mut self,
        feature: Vec<f64>,
        label: usize,
        suggest_correct: bool,
        origin: Option<String>,
    ) -> Result<Inserted> {
        if label >= self.classes {
            return Err(Error::ClassOutOfRange { index: label, classes: self.classes });
        }
        if let Some(d) = self.dim() {
            if d != feature.len() {
                return Err(Error::DimensionMismatch { expected: d, got: feature.len() });
            }
        }
        let evicted = if self.entries.len() >= self.capacity { Some(self.evict(self.eviction)?) } else { None };
        let seq = self.next_seq;
        self.next_seq += 1;
        self.class_counts[label] += 1;
        self.entries.push(Entry { feature, label, suggest_correct, seq, origin });
        Ok(Inserted { seq, evicted })
    }

    /// Majority class; ties go to the lowest class index.
    pub fn majority_class(&self) -> Option<usize> {
        if self.entries.is_empty() {
            return None;
        }
        Some(crate::math::argmax(&self.class_counts.iter().map(|&c| c as f64).collect::<Vec<_>>()))
    }

    /// Mean feature of the entries labeled `class`.
    pub fn prototype(&self, class: usize) -> Option<Vec<f64>> {
        let members: Vec<&Entry> = self.entries.iter().filter(|e| e.label == class).collect();
        let first = members.first()?;
        let mut mean = vec![0.0; first.feature.len()];
        for e in &members {
            for (m, v) in mean.iter_mut().zip(&e.feature) {
                *m += v;
            }
        }
        let n = members.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Some(mean)
    }

    /// Removes and returns one entry chosen by `strategy`.
    pub fn evict(&mut self, strategy: Eviction) -> Result<Entry> {
        let idx = self.eviction_candidate(strategy).ok_or(Error::EmptyStore)?;
        let removed = self.entries.remove(idx);
        self.class_counts[removed.label] -= 1;
        Ok(removed)
    }

    /// Position of the entry `evict` would remove.
    pub fn eviction_candidate(&self, strategy: Eviction) -> Option<usize> {
        if strategy == Eviction::Fifo {
            // entries are kept in seq order
            return if self.entries.is_empty() { None } else { Some(0) };
        }
        let class = self.majority_class()?;
        let members = self.entries.iter().enumerate().filter(|(_, e)| e.label == class);
        match strategy {
            Eviction::ClassFifo => members.map(|(i, _)| i).next(),
            Eviction::ClassSimilar | Eviction::ClassDissimilar => {
                let proto = self.prototype(class)?;
                let scored = members.map(|(i, e)| (i, squared_euclidean(&e.feature, &proto)));
                let pick = if strategy == Eviction::ClassSimilar {
                    scored.min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                } else {
                    scored.max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                };
                pick.map(|(i, _)| i)
            }
            Eviction::Fifo => unreachable!(),
        }
    }

    /// Writes one JSON line per entry: feature, label name, suggest_correct, seq.
    pub fn export_jsonl<W: Write>(&self, mut out: W, labels: &LabelSpace) -> Result<()> {
        for e in &self.entries {
            let line = SnapshotLine {
                feature: e.feature.clone(),
                label: labels.name(e.label).ok_or(Error::ClassOutOfRange { index: e.label, classes: labels.len() })?.to_owned(),
                suggest_correct: e.suggest_correct,
                seq: e.seq,
                origin: e.origin.clone(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn import_jsonl<R: BufRead>(input: R, labels: &LabelSpace, capacity: usize, eviction: Eviction) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SnapshotLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: "<datastore snapshot>".into(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            let label = labels.index_of(&rec.label).ok_or(Error::UnknownLabel(rec.label))?;
            entries.push(Entry { feature: rec.feature, label, suggest_correct: rec.suggest_correct, seq: rec.seq, origin: rec.origin });
        }
        Self::from_entries(entries, capacity, labels.len(), eviction)
    }
}

#[derive(Serialize, Deserialize)]
struct SnapshotLine {
    feature: Vec<f64>,
    label: String,
    suggest_correct: bool,
    seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    origin: Option<String>,
}

fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Diagonal metric `d(x, a) = ||w (.) (x - a)||_2` plus its training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricParams {
    pub weights: Vec<f64>,
    pub lr: f64,
    /// Gumbel-softmax temperature used during training.
    pub tau: f64,
    /// Sample Gumbel noise during training; off gives a deterministic relaxation.
    pub gumbel_noise: bool,
}

impl MetricParams {
    pub fn new(dim: usize, lr: f64, tau: f64) -> Result<Self> {
        if tau.is_nan() || tau <= 0.0 || lr.is_nan() || lr <= 0.0 {
            return Err(Error::Config(format!("metric needs lr > 0 and tau > 0 (got {lr}, {tau})")));
        }
        Ok(Self { weights: vec![1.0; dim], lr, tau, gumbel_noise: true })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn distance(&self, x: &[f64], a: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        if a.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: a.len() });
        }
        Ok(self.dist(x, a))
    }

    fn dist(&self, x: &[f64], a: &[f64]) -> f64 {
        let sq: f64 = self.weights.iter().zip(x.iter().zip(a)).map(|(w, (xi, ai))| (w * (xi - ai)).powi(2)).sum();
        sq.sqrt().max(DIST_EPS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Position in `Datastore::entries` at retrieval time.
    pub index: usize,
    pub seq: u64,
    pub label: usize,
    pub distance: f64,
}

/// Neighbors in ascending distance (then seq) order.
pub type NeighborSet = Vec<Neighbor>;

/// Exact k nearest entries by full scan.
pub fn retrieve(store: &Datastore, metric: &MetricParams, x: &[f64], k: usize) -> Result<NeighborSet> {
    retrieve_excluding(store, metric, x, k, None)
}

/// Like [`retrieve`], skipping the entry with sequence number `exclude`.
pub fn retrieve_excluding(
    store: &Datastore,
    metric: &MetricParams,
    x: &[f64],
    k: usize,
    exclude: Option<u64>,
) -> Result<NeighborSet> {
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    if x.len() != metric.dim() {
        return Err(Error::DimensionMismatch { expected: metric.dim(), got: x.len() });
    }
    if let Some(d) = store.dim() {
        if d != metric.dim() {
            return Err(Error::DimensionMismatch { expected: metric.dim(), got: d });
        }
    }
    let mut all: Vec<Neighbor> = store
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| Some(e.seq) != exclude)
        .map(|(index, e)| Neighbor { index, seq: e.seq, label: e.label, distance: metric.dist(x, &e.feature) })
        .collect();
    if all.is_empty() {
        return Err(Error::EmptyStore);
    }
    let cmp = |a: &Neighbor, b: &Neighbor| a.distance.total_cmp(&b.distance).then(a.seq.cmp(&b.seq));
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, cmp);
        all.truncate(k);
    }
    all.sort_by(cmp);
    Ok(all)
}

/// One-hot label smoothed toward uniform with `alpha = 1 - 1/C`.
pub fn smooth_label(label: usize, classes: usize) -> Vec<f64> {
    let c = classes as f64;
    let alpha = 1.0 - 1.0 / c;
    let mut out = vec![alpha / c; classes];
    out[label] = (1.0 - alpha) + alpha / c;
    out
}

/// Inverse-distance weighted average of the neighbors' smoothed labels.
pub fn blend_neighbors(neighbors: &[Neighbor], classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; classes];
    let mut total = 0.0;
    for n in neighbors {
        let w = 1.0 / n.distance;
        total += w;
        for (o, y) in out.iter_mut().zip(smooth_label(n.label, classes)) {
            *o += w * y;
        }
    }
    out.iter_mut().for_each(|o| *o /= total);
    out
}

/// The KNN prediction `g(x)`.
pub fn knn_infer(store: &Datastore, metric: &MetricParams, x: &[f64], k: usize) -> Result<Vec<f64>> {
    let neighbors = retrieve(store, metric, x, k)?;
    Ok(blend_neighbors(&neighbors, store.classes))
}

/// A labeled training query for the metric.
#[derive(Debug, Clone, Copy)]
pub struct MetricQuery<'a> {
    pub feature: &'a [f64],
    pub label: usize,
    /// Seq of the query's own datastore entry, which must not be its own neighbor.
    pub exclude_seq: Option<u64>,
}

/// Relaxed selection weights `softmax(-d/tau + noise)` over all non-excluded
/// entries, as `(entry position, weight)` pairs.
pub fn relaxed_weights(
    store: &Datastore,
    metric: &MetricParams,
    x: &[f64],
    exclude: Option<u64>,
    noise: Option<&[f64]>,
) -> Vec<(usize, f64)> {
    let logits: Vec<(usize, f64)> = store
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| Some(e.seq) != exclude)
        .map(|(i, e)| (i, -metric.dist(x, &e.feature) / metric.tau + noise.map_or(0.0, |n| n[i])))
        .collect();
    let max = logits.iter().map(|l| l.1).fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<(usize, f64)> = logits.iter().map(|&(i, l)| (i, (l - max).exp())).collect();
    let sum: f64 = weights.iter().map(|w| w.1).sum();
    weights.iter_mut().for_each(|w| w.1 /= sum);
    weights
}

/// Relaxed KNN prediction used during training.
pub fn relaxed_infer(
    store: &Datastore,
    metric: &MetricParams,
    x: &[f64],
    exclude: Option<u64>,
    noise: Option<&[f64]>,
) -> Vec<f64> {
    let mut out = vec![0.0; store.classes];
    for (i, w) in relaxed_weights(store, metric, x, exclude, noise) {
        for (o, y) in out.iter_mut().zip(smooth_label(store.entries[i].label, store.classes)) {
            *o += w * y;
        }
    }
    out
}

/// Mean NLL of the relaxed KNN over `queries` and its gradient with respect
/// to the metric weights. `noise[q][i]` is the Gumbel sample for query `q`
/// and entry `i`. Queries with no eligible entry are skipped.
pub fn relaxed_loss_and_grad(
    metric: &MetricParams,
    store: &Datastore,
    queries: &[MetricQuery<'_>],
    noise: Option<&[Vec<f64>]>,
) -> Result<(f64, Vec<f64>)> {
    if queries.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let classes = store.classes;
    let mut grad = vec![0.0; metric.dim()];
    let mut loss = 0.0;
    let mut used = 0usize;
    for (q, query) in queries.iter().enumerate() {
        if query.feature.len() != metric.dim() {
            return Err(Error::DimensionMismatch { expected: metric.dim(), got: query.feature.len() });
        }
        if query.label >= classes {
            return Err(Error::ClassOutOfRange { index: query.label, classes });
        }
        let weights = relaxed_weights(store, metric, query.feature, query.exclude_seq, noise.map(|n| n[q].as_slice()));
        if weights.is_empty() {
            continue;
        }
        used += 1;
        let y = query.label;
        let c = classes as f64;
        let on = 2.0 / c - 1.0 / (c * c);
        let off = 1.0 / c - 1.0 / (c * c);
        let target_of = |i: usize| if store.entries[i].label == y { on } else { off };
        let g_y: f64 = weights.iter().map(|&(i, w)| w * target_of(i)).sum();
        loss -= g_y.ln();
        // dL/ds_b = -pi_b (t_b - g_y) / g_y ; s_b = -d_b / tau
        for &(i, w) in &weights {
            let dl_ds = -w * (target_of(i) - g_y) / g_y;
            let entry = &store.entries[i];
            let d = metric.dist(query.feature, &entry.feature);
            if d <= DIST_EPS {
                continue;
            }
            let scale = dl_ds * (-1.0 / metric.tau) / d;
            for (j, g) in grad.iter_mut().enumerate() {
                let diff = query.feature[j] - entry.feature[j];
                *g += scale * metric.weights[j] * diff * diff;
            }
        }
    }
    if used == 0 {
        return Err(Error::StoreTooSmall { have: store.len(), need: 2 });
    }
    let n = used as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

fn sample_gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}

/// One gradient step on the relaxed KNN loss. Returns the pre-step loss.
pub fn update_metric<R: Rng + ?Sized>(
    metric: &mut MetricParams,
    store: &Datastore,
    queries: &[MetricQuery<'_>],
    rng: &mut R,
) -> Result<f64> {
    if store.len() < 2 {
        return Err(Error::StoreTooSmall { have: store.len(), need: 2 });
    }
    let noise: Option<Vec<Vec<f64>>> = metric
        .gumbel_noise
        .then(|| queries.iter().map(|_| (0..store.len()).map(|_| sample_gumbel(rng)).collect()).collect());
    let (loss, grad) = relaxed_loss_and_grad(metric, store, queries, noise.as_deref())?;
    for (w, g) in metric.weights.iter_mut().zip(&grad) {
        *w = (*w - metric.lr * g).max(MIN_METRIC_WEIGHT);
    }
    Ok(loss)
}

/// Compare neighbors by distance then seq; exposed for oracle tests.
pub fn neighbor_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance.total_cmp(&b.distance).then(a.seq.cmp(&b.seq))
}
