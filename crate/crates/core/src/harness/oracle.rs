//! Simulated annotators that supply feedback in experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleSpec {
    /// Always returns the gold label.
    #[default]
    Perfect,
    /// `annotators` voters whose error rates are drawn once from `U(0, max_error)`.
    NoisyCrowd { annotators: usize, max_error: f64 },
    /// Voters with explicit error rates.
    FixedCrowd { error_probs: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct Oracle {
    error_probs: Option<Vec<f64>>,
    rng: ChaCha8Rng,
}

impl Oracle {
    pub fn perfect(seed: u64) -> Self {
        Self { error_probs: None, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn crowd(error_probs: Vec<f64>, seed: u64) -> Result<Self> {
        if error_probs.is_empty() {
            return Err(Error::Config("noisy crowd needs at least one annotator".into()));
        }
        if let Some(p) = error_probs.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return Err(Error::Config(format!("annotator error probability {p} not in [0,1)")));
        }
        Ok(Self { error_probs: Some(error_probs), rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    /// Builds the oracle described by `spec`. Crowd error rates are sampled
    /// from the oracle's own stream, so the session's randomness is untouched.
    pub fn from_spec(spec: &OracleSpec, seed: u64) -> Result<Self> {
        match spec {
            OracleSpec::Perfect => Ok(Self::perfect(seed)),
            OracleSpec::FixedCrowd { error_probs } => Self::crowd(error_probs.clone(), seed),
            OracleSpec::NoisyCrowd { annotators, max_error } => {
                if !(0.0..1.0).contains(max_error) {
                    return Err(Error::Config(format!("max_error {max_error} not in [0,1)")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let probs = (0..*annotators).map(|_| rng.random::<f64>() * max_error).collect();
                let mut oracle = Self::crowd(probs, 0)?;
                oracle.rng = rng;
                Ok(oracle)
            }
        }
    }

    pub fn error_probs(&self) -> Option<&[f64]> {
        self.error_probs.as_deref()
    }

    /// Label for `example`. Each crowd member independently answers a
    /// uniformly drawn wrong class when `u <= p_e` with `u ~ U(0, 1]`; the
    /// majority vote wins and vote ties go to the lowest class index.
    pub fn label(&mut self, example: &Example, classes: usize) -> Result<usize> {
        let gold = example.gold()?;
        let Some(probs) = &self.error_probs else { return Ok(gold) };
        let mut votes = vec![0usize; classes];
        for &p in probs {
            let u = 1.0 - self.rng.random::<f64>();
            let vote = if u <= p {
                let wrong = self.rng.random_range(0..classes - 1);
                if wrong >= gold {
                    wrong + 1
                } else {
                    wrong
                }
            } else {
                gold
            };
            votes[vote] += 1;
        }
        Ok(crate::math::argmax(&votes.iter().map(|&v| v as f64).collect::<Vec<_>>()))
    }
}
