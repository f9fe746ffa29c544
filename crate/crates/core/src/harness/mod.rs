//! Simulated-annotation experiments: a scripted oracle annotates a corpus
//! through a [`Session`] and the resulting accuracy is recorded per cell of
//! (variant, size, seed).

mod config;
mod oracle;
mod ordering;
mod report;
mod synthetic;

pub use config::{CorpusSource, ExperimentFile, SweepGrid};
pub use oracle::{Oracle, OracleSpec};
pub use ordering::{order_examples, select_active_batch, ExampleStream};
pub use report::{read_aggregate_csv, read_raw_csv, AggregateRow, RawRow};
pub use synthetic::{gaussian_clusters, SyntheticSpec};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::knn::Eviction;
use crate::session::{lambda_bin, Ablation, Counters, Session, SessionConfig, LAMBDA_BINS};

const POOL_STREAM: u64 = 1;
const ORDER_STREAM: u64 = 2;
const ORACLE_STREAM: u64 = 3;

/// Independent generator derived from a cell seed, so that adding draws in one
/// place (say the oracle) never shifts another (the pool or the session).
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A named modification of the base session configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub label: String,
    pub ablation: Ablation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eviction: Option<Eviction>,
}

impl Variant {
    pub fn ablation(ablation: Ablation) -> Self {
        Self { label: ablation.label(), ablation, capacity: None, k: None, eviction: None }
    }

    pub fn apply(&self, base: &SessionConfig) -> SessionConfig {
        SessionConfig {
            ablation: self.ablation,
            capacity: self.capacity.unwrap_or(base.capacity),
            k: self.k.unwrap_or(base.k),
            eviction: self.eviction.unwrap_or(base.eviction),
            ..base.clone()
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(Self::ablation(s.parse()?))
    }
}

/// Full-model variants over every (capacity, k, eviction) combination.
pub fn sweep_variants(grid: &SweepGrid) -> Vec<Variant> {
    let mut out = Vec::new();
    for &capacity in &grid.capacity {
        for &k in &grid.k {
            for &eviction in &grid.eviction {
                out.push(Variant {
                    label: format!("cap{capacity}_k{k}_{}", eviction.as_str()),
                    ablation: Ablation::Full,
                    capacity: Some(capacity),
                    k: Some(k),
                    eviction: Some(eviction),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub session: SessionConfig,
    pub oracle: OracleSpec,
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            session: SessionConfig::default(),
            oracle: OracleSpec::Perfect,
            sizes: vec![1000, 2000, 3000, 4000, 5000],
            seeds: vec![0, 1, 2, 3, 4],
            variants: ["full", "no_knn", "no_f"].iter().map(|v| v.parse().unwrap()).collect(),
        }
    }
}

/// Suggestion statistics for one side of the lambda = 0.5 split. `g_*`
/// counts only suggestions where the KNN produced an opinion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LambdaSplit {
    pub count: u64,
    pub f_correct: u64,
    pub g_count: u64,
    pub g_correct: u64,
    pub final_correct: u64,
}

impl LambdaSplit {
    pub fn f_accuracy(&self) -> Option<f64> {
        (self.count > 0).then(|| self.f_correct as f64 / self.count as f64)
    }

    pub fn g_accuracy(&self) -> Option<f64> {
        (self.g_count > 0).then(|| self.g_correct as f64 / self.g_count as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub annotated: u64,
    pub mca: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CellDiagnostics {
    pub lambda_histogram: [u64; LAMBDA_BINS],
    /// Suggestions with lambda > 0.5 (the annotation model dominates).
    pub high_lambda: LambdaSplit,
    pub low_lambda: LambdaSplit,
    /// Accuracy so far, sampled after every training round and at the end.
    pub mca_curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub variant: String,
    pub size: usize,
    pub seed: u64,
    pub mca: f64,
    pub counters: Counters,
    pub diagnostics: CellDiagnostics,
}

/// Annotates `pool` (positions into `corpus`) with a fresh session.
pub fn run_cell(
    corpus: &Corpus,
    pool: Vec<usize>,
    config: &SessionConfig,
    oracle: &OracleSpec,
    seed: u64,
) -> Result<(Counters, CellDiagnostics)> {
    let dim = corpus.require_features()?;
    let classes = corpus.label_space().len();
    let config = SessionConfig { seed, ..config.clone() };
    let mut session = Session::with_linear_model(&config, corpus.label_space().clone(), dim)?;
    let mut oracle = Oracle::from_spec(oracle, substream(seed, ORACLE_STREAM).next_u64())?;
    let mut stream = ExampleStream::new(pool, config.ordering, config.batch_size, &mut substream(seed, ORDER_STREAM))?;
    let examples = corpus.examples();
    let mut diag = CellDiagnostics::default();

    while let Some(i) = stream.next(examples, session.model())? {
        let example = &examples[i];
        let suggestion = session.suggest(example)?;
        let label = oracle.label(example, classes)?;

        let split = if suggestion.lambda > 0.5 { &mut diag.high_lambda } else { &mut diag.low_lambda };
        split.count += 1;
        split.f_correct += u64::from(suggestion.f_pred.class_idx() == label);
        split.final_correct += u64::from(suggestion.suggested_class == label);
        if let Some(g) = &suggestion.g_pred {
            split.g_count += 1;
            split.g_correct += u64::from(crate::math::argmax(g) == label);
        }
        diag.lambda_histogram[lambda_bin(suggestion.lambda)] += 1;

        if session.feedback(&suggestion.id, label)?.round_complete() {
            let c = session.counters();
            diag.mca_curve.push(CurvePoint { annotated: c.total, mca: session.mca()? });
        }
    }
    let c = session.counters();
    if diag.mca_curve.last().is_none_or(|p| p.annotated != c.total) {
        diag.mca_curve.push(CurvePoint { annotated: c.total, mca: session.mca()? });
    }
    Ok((c, diag))
}

/// First `size` positions of a seeded shuffle of the corpus. Pools for the
/// same seed are nested, and identical across variants.
pub fn sample_pool(corpus: &Corpus, size: usize, seed: u64) -> Result<Vec<usize>> {
    if size > corpus.len() {
        return Err(Error::SizeExceedsCorpus { size, available: corpus.len() });
    }
    let mut all: Vec<usize> = (0..corpus.len()).collect();
    all.shuffle(&mut substream(seed, POOL_STREAM));
    all.truncate(size);
    Ok(all)
}

pub fn run_experiment(corpus: &Corpus, config: &ExperimentConfig) -> Result<RunReport> {
    if config.sizes.is_empty() || config.seeds.is_empty() || config.variants.is_empty() {
        return Err(Error::Config("sizes, seeds and variants must be non-empty".into()));
    }
    if !corpus.has_gold_labels() {
        return Err(Error::MissingGold("simulation needs gold labels on every example".into()));
    }
    corpus.require_features()?;
    if let Some(&size) = config.sizes.iter().find(|&&s| s > corpus.len()) {
        return Err(Error::SizeExceedsCorpus { size, available: corpus.len() });
    }
    for v in &config.variants {
        v.apply(&config.session).validate(crate::model::PredictionKind::Probabilistic)?;
    }

    let mut cells = Vec::new();
    for v in &config.variants {
        for &size in &config.sizes {
            for &seed in &config.seeds {
                cells.push((v, size, seed));
            }
        }
    }
    let cells = cells
        .into_par_iter()
        .map(|(v, size, seed)| {
            let pool = sample_pool(corpus, size, seed)?;
            let (counters, diagnostics) = run_cell(corpus, pool, &v.apply(&config.session), &config.oracle, seed)?;
            let mca = if counters.total == 0 { 0.0 } else { counters.correct as f64 / counters.total as f64 };
            Ok(CellResult { variant: v.label.clone(), size, seed, mca, counters, diagnostics })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunReport { config: config.clone(), cells })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub cells: Vec<CellResult>,
}

impl RunReport {
    pub fn cells_for<'a>(&'a self, variant: &'a str, size: usize) -> impl Iterator<Item = &'a CellResult> + 'a {
        self.cells.iter().filter(move |c| c.variant == variant && c.size == size)
    }

    /// Mean and population standard deviation of MCA across seeds, one row
    /// per (variant, size) in configuration order.
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let mut rows = Vec::new();
        for v in &self.config.variants {
            for &size in &self.config.sizes {
                let mcas: Vec<f64> = self.cells_for(&v.label, size).map(|c| c.mca).collect();
                if mcas.is_empty() {
                    continue;
                }
                let n = mcas.len() as f64;
                let mean = mcas.iter().sum::<f64>() / n;
                let var = mcas.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n;
                rows.push(AggregateRow { variant: v.label.clone(), size, mca_mean: mean, mca_std: var.sqrt() });
            }
        }
        rows
    }

    pub fn raw_rows(&self) -> Vec<RawRow> {
        self.cells
            .iter()
            .map(|c| RawRow { variant: c.variant.clone(), size: c.size, seed: c.seed, mca: c.mca })
            .collect()
    }

    pub fn mean_mca(&self, variant: &str, size: usize) -> Option<f64> {
        self.aggregate().into_iter().find(|r| r.variant == variant && r.size == size).map(|r| r.mca_mean)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Corpus {
        gaussian_clusters(&SyntheticSpec { size: 120, classes: 3, dim: 4, ..Default::default() }).unwrap()
    }

    fn cfg() -> ExperimentConfig {
        ExperimentConfig {
            session: SessionConfig { batch_size: 8, k: 5, ..Default::default() },
            sizes: vec![60, 120],
            seeds: vec![0, 1],
            ..Default::default()
        }
    }

    #[test]
    fn one_cell_per_combination() {
        let r = run_experiment(&small(), &cfg()).unwrap();
        assert_eq!(r.cells.len(), 3 * 2 * 2);
        assert_eq!(r.aggregate().len(), 3 * 2);
        for c in &r.cells {
            assert_eq!(c.counters.total as usize, c.size);
            assert_eq!(c.diagnostics.lambda_histogram.iter().sum::<u64>() as usize, c.size);
            let split = c.diagnostics.high_lambda.count + c.diagnostics.low_lambda.count;
            assert_eq!(split as usize, c.size);
            assert_eq!(c.diagnostics.mca_curve.last().unwrap().mca, c.mca);
        }
    }

    #[test]
    fn deterministic() {
        let a = run_experiment(&small(), &cfg()).unwrap();
        let b = run_experiment(&small(), &cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ablation_routing_shows_in_histogram() {
        let r = run_experiment(&small(), &cfg()).unwrap();
        for c in r.cells.iter().filter(|c| c.variant == "no_knn") {
            assert_eq!(c.diagnostics.lambda_histogram[LAMBDA_BINS - 1] as usize, c.size);
            assert_eq!(c.diagnostics.high_lambda.g_count, 0);
        }
        for c in r.cells.iter().filter(|c| c.variant == "no_f") {
            // Only the cold-start suggestion uses the annotation model.
            assert_eq!(c.diagnostics.lambda_histogram[0] as usize, c.size - 1);
        }
    }

    #[test]
    fn oversize_is_rejected() {
        let c = ExperimentConfig { sizes: vec![500], ..cfg() };
        assert!(matches!(run_experiment(&small(), &c), Err(Error::SizeExceedsCorpus { size: 500, available: 120 })));
    }

    #[test]
    fn sweep_grid_labels() {
        let v = sweep_variants(&SweepGrid::default());
        assert_eq!(v.len(), 64);
        assert_eq!(v[0].label, "cap100_k5_class_similar");
        let applied = v[0].apply(&SessionConfig::default());
        assert_eq!((applied.capacity, applied.k), (100, 5));
    }

    #[test]
    fn pools_are_nested() {
        let c = small();
        let a = sample_pool(&c, 50, 3).unwrap();
        let b = sample_pool(&c, 100, 3).unwrap();
        assert_eq!(a[..], b[..50]);
    }
}
