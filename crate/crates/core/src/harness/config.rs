//! TOML experiment files: one flat list of keys. Session settings (`k`,
//! `capacity`, `lr_f`, ...) sit next to the experiment keys.
//!
//! ```toml
//! corpus = "data/train.jsonl"      # omit for a synthetic corpus (synthetic_* keys)
//! embeddings = "data/vectors.txt"  # optional, embeds `text` fields
//! embed_mode = "token_average"
//! sizes = [1000, 2000]
//! seeds = [0, 1, 2, 3, 4]
//! variants = ["full", "no_knn", "no_f", "const_0.5"]
//! oracle = "noisy_crowd"           # or "perfect"
//! annotators = 10
//! max_error = 0.3
//! k = 20
//! capacity = 1000
//! sweep_capacity = [100, 500, 1000, 2000]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{gaussian_clusters, ExperimentConfig, OracleSpec, SyntheticSpec, Variant};
use crate::corpus::{embed_corpus, Corpus, EmbedMode, EmbeddingTable, LabelSpace};
use crate::error::{Error, Result};
use crate::knn::Eviction;
use crate::session::SessionConfig;

/// Grid of datastore settings explored by a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub capacity: Vec<usize>,
    pub k: Vec<usize>,
    pub eviction: Vec<Eviction>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self { capacity: vec![100, 500, 1000, 2000], k: vec![5, 10, 20, 50], eviction: Eviction::ALL.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CorpusSource {
    Jsonl { path: PathBuf, classes: Option<Vec<String>>, embeddings: Option<PathBuf>, embed_mode: EmbedMode },
    Synthetic(SyntheticSpec),
}

impl CorpusSource {
    pub fn load(&self) -> Result<Corpus> {
        match self {
            CorpusSource::Synthetic(spec) => gaussian_clusters(spec),
            CorpusSource::Jsonl { path, classes, embeddings, embed_mode } => {
                let classes = classes.as_ref().map(|c| LabelSpace::new(c.iter().cloned())).transpose()?;
                let corpus = Corpus::load_jsonl(path, classes)?;
                match embeddings {
                    Some(table) => embed_corpus(&corpus, &EmbeddingTable::load(table)?, *embed_mode),
                    None => Ok(corpus),
                }
            }
        }
    }
}

#[derive(Debug, Deserialize)]
struct RawFile {
    corpus: Option<PathBuf>,
    classes: Option<Vec<String>>,
    embeddings: Option<PathBuf>,
    embed_mode: Option<EmbedMode>,
    synthetic_classes: Option<usize>,
    synthetic_dim: Option<usize>,
    synthetic_size: Option<usize>,
    synthetic_separation: Option<f64>,
    synthetic_sigma: Option<f64>,
    synthetic_seed: Option<u64>,
    sizes: Option<Vec<usize>>,
    seeds: Option<Vec<u64>>,
    variants: Option<Vec<String>>,
    oracle: Option<String>,
    annotators: Option<usize>,
    max_error: Option<f64>,
    error_probs: Option<Vec<f64>>,
    sweep_capacity: Option<Vec<usize>>,
    sweep_k: Option<Vec<usize>>,
    sweep_eviction: Option<Vec<Eviction>>,
    /// Everything else must be a session setting.
    #[serde(flatten)]
    session: toml::Table,
}

impl RawFile {
    fn synthetic(&self) -> Option<SyntheticSpec> {
        let keys = [
            self.synthetic_classes.is_some(),
            self.synthetic_dim.is_some(),
            self.synthetic_size.is_some(),
            self.synthetic_separation.is_some(),
            self.synthetic_sigma.is_some(),
            self.synthetic_seed.is_some(),
        ];
        if !keys.contains(&true) {
            return None;
        }
        let d = SyntheticSpec::default();
        Some(SyntheticSpec {
            classes: self.synthetic_classes.unwrap_or(d.classes),
            dim: self.synthetic_dim.unwrap_or(d.dim),
            size: self.synthetic_size.unwrap_or(d.size),
            separation: self.synthetic_separation.unwrap_or(d.separation),
            sigma: self.synthetic_sigma.unwrap_or(d.sigma),
            seed: self.synthetic_seed.unwrap_or(d.seed),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentFile {
    pub source: CorpusSource,
    pub experiment: ExperimentConfig,
    pub sweep: SweepGrid,
}

impl ExperimentFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses a TOML experiment description; relative paths are resolved
    /// against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base_dir.join(p) };
        let session: SessionConfig = toml::Value::Table(raw.session.clone())
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;

        let source = match (raw.corpus.clone(), raw.synthetic()) {
            (Some(path), None) => CorpusSource::Jsonl {
                path: resolve(path),
                classes: raw.classes,
                embeddings: raw.embeddings.map(resolve),
                embed_mode: raw.embed_mode.unwrap_or(EmbedMode::TokenAverage),
            },
            (None, spec) => {
                let spec = spec.unwrap_or_default();
                if raw.classes.is_some() || raw.embeddings.is_some() || raw.embed_mode.is_some() {
                    return Err(Error::Config("classes/embeddings only apply to a corpus file".into()));
                }
                CorpusSource::Synthetic(spec)
            }
            (Some(_), Some(_)) => return Err(Error::Config("synthetic_* keys conflict with `corpus`".into())),
        };

        let oracle = match raw.oracle.as_deref().unwrap_or("perfect") {
            "perfect" => {
                if raw.annotators.is_some() || raw.max_error.is_some() || raw.error_probs.is_some() {
                    return Err(Error::Config("crowd settings need oracle = \"noisy_crowd\"".into()));
                }
                OracleSpec::Perfect
            }
            "noisy_crowd" => match raw.error_probs {
                Some(error_probs) => OracleSpec::FixedCrowd { error_probs },
                None => OracleSpec::NoisyCrowd {
                    annotators: raw.annotators.unwrap_or(10),
                    max_error: raw.max_error.unwrap_or(0.3),
                },
            },
            other => return Err(Error::Config(format!("unknown oracle {other:?}"))),
        };

        let defaults = ExperimentConfig::default();
        let variants = match raw.variants {
            Some(v) => v.iter().map(|s| s.parse()).collect::<Result<Vec<Variant>>>()?,
            None => defaults.variants,
        };
        Ok(Self {
            source,
            experiment: ExperimentConfig {
                session,
                oracle,
                sizes: raw.sizes.unwrap_or(defaults.sizes),
                seeds: raw.seeds.unwrap_or(defaults.seeds),
                variants,
            },
            sweep: {
                let d = SweepGrid::default();
                SweepGrid {
                    capacity: raw.sweep_capacity.unwrap_or(d.capacity),
                    k: raw.sweep_k.unwrap_or(d.k),
                    eviction: raw.sweep_eviction.unwrap_or(d.eviction),
                }
            },
        })
    }
}
