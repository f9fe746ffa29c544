//! Gaussian-cluster corpora for experiments without external data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Example, LabelSpace};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub size: usize,
    /// Distance between any two class means, in units of `sigma`.
    pub separation: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { classes: 4, dim: 8, size: 2000, separation: 3.0, sigma: 1.0, seed: 0 }
    }
}

/// Class `c` has mean `(separation * sigma / sqrt 2) * e_c`, so every pair of
/// means is exactly `separation * sigma` apart. Classes are drawn uniformly.
pub fn gaussian_clusters(spec: &SyntheticSpec) -> Result<Corpus> {
    if spec.classes < 2 || spec.classes > spec.dim {
        return Err(Error::Config(format!("need 2 <= classes <= dim (got {} classes, dim {})", spec.classes, spec.dim)));
    }
    if spec.size == 0 {
        return Err(Error::NoExamples);
    }
    let noise = Normal::new(0.0, spec.sigma).map_err(|e| Error::Config(e.to_string()))?;
    let offset = spec.separation * spec.sigma / std::f64::consts::SQRT_2;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let examples = (0..spec.size)
        .map(|i| {
            let class = rng.random_range(0..spec.classes);
            let mut feature: Vec<f64> = (0..spec.dim).map(|_| noise.sample(&mut rng)).collect();
            feature[class] += offset;
            Example { id: format!("s{i:05}"), text: None, feature: Some(feature), gold_label: Some(class) }
        })
        .collect();
    let labels = LabelSpace::new((0..spec.classes).map(|c| format!("class_{c}")))?;
    Corpus::new(examples, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let spec = SyntheticSpec { size: 300, ..Default::default() };
        let a = gaussian_clusters(&spec).unwrap();
        assert_eq!(a.len(), 300);
        assert_eq!(a.require_features().unwrap(), 8);
        assert_eq!(a, gaussian_clusters(&spec).unwrap());
    }

    #[test]
    fn class_means_are_separated() {
        let spec = SyntheticSpec { size: 20_000, classes: 2, dim: 2, ..Default::default() };
        let c = gaussian_clusters(&spec).unwrap();
        let mut sums = [[0.0; 2]; 2];
        let mut counts = [0.0; 2];
        for e in c.examples() {
            let g = e.gold_label.unwrap();
            counts[g] += 1.0;
            for d in 0..2 {
                sums[g][d] += e.feature.as_ref().unwrap()[d];
            }
        }
        let m: Vec<Vec<f64>> = (0..2).map(|g| sums[g].iter().map(|s| s / counts[g]).collect()).collect();
        let dist = ((m[0][0] - m[1][0]).powi(2) + (m[0][1] - m[1][1]).powi(2)).sqrt();
        assert!((dist - 3.0).abs() < 0.1, "{dist}");
    }

    #[test]
    fn too_many_classes_rejected() {
        assert!(gaussian_clusters(&SyntheticSpec { classes: 9, ..Default::default() }).is_err());
    }
}
