//! Error-aware integration weight.
//!
//! A small feed-forward network reads the signed neighborhood signature
//! `D * E - D * (1 - E)` (distance to each retrieved neighbor, positive where
//! the annotation model was right on that neighbor) and predicts the
//! probability that the annotation model is right on the query.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn::Neighbor;
use crate::math::sigmoid;

/// Signed neighborhood signature of length `k`, zero-padded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatingInput(pub Vec<f64>);

impl GatingInput {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Entry `j` is `+d_j` when `flags[j]` holds and `-d_j` otherwise; positions
/// past the last neighbor are zero.
pub fn build_gating_input(distances: &[f64], flags: &[bool], k: usize) -> Result<GatingInput> {
    if distances.len() != flags.len() {
        return Err(Error::LengthMismatch { left: distances.len(), right: flags.len() });
    }
    if distances.len() > k {
        return Err(Error::LengthMismatch { left: distances.len(), right: k });
    }
    let mut sig = vec![0.0; k];
    for (s, (&d, &ok)) in sig.iter_mut().zip(distances.iter().zip(flags)) {
        *s = if ok { d } else { -d };
    }
    Ok(GatingInput(sig))
}

pub fn gating_input_from_neighbors(neighbors: &[Neighbor], flags: &[bool], k: usize) -> Result<GatingInput> {
    let distances: Vec<f64> = neighbors.iter().map(|n| n.distance).collect();
    build_gating_input(&distances, flags, k)
}

/// Routing decision for discrete-label models: 1 routes to the annotation model.
pub fn binarize(lambda: f64) -> u8 {
    u8::from(lambda > 0.5)
}

/// `k -> h1 -> h2 -> 1` network, ReLU after the hidden layers, dropout after
/// each hidden layer during training, sigmoid output.
///
/// Parameters live in one flat vector laid out as
/// `W1 (h1 x k), b1, W2 (h2 x h1), b2, W3 (1 x h2), b3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatingNet {
    shape: [usize; 4],
    params: Vec<f64>,
    lr: f64,
    dropout: f64,
}

/// Keep-masks (already scaled by `1 / (1 - p)`) for both hidden layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub hidden1: Vec<f64>,
    pub hidden2: Vec<f64>,
}

struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    end: usize,
}

fn offsets([k, h1, h2, _]: [usize; 4]) -> Offsets {
    let w1 = 0;
    let b1 = w1 + h1 * k;
    let w2 = b1 + h1;
    let b2 = w2 + h2 * h1;
    let w3 = b2 + h2;
    let b3 = w3 + h2;
    Offsets { w1, b1, w2, b2, w3, b3, end: b3 + 1 }
}

struct Trace {
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    out: f64,
}

impl GatingNet {
    /// Fan-in scaled uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(k: usize, h1: usize, h2: usize, lr: f64, dropout: f64, rng: &mut R) -> Result<Self> {
        if k == 0 || h1 == 0 || h2 == 0 {
            return Err(Error::Config("gating layer sizes must be positive".into()));
        }
        if lr.is_nan() || lr <= 0.0 || !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("gating needs lr > 0 and dropout in [0,1) (got {lr}, {dropout})")));
        }
        let shape = [k, h1, h2, 1];
        let o = offsets(shape);
        let mut params = vec![0.0; o.end];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = rng.random_range(-bound..bound);
            }
        };
        fill(o.w1..o.b1, k);
        fill(o.w2..o.b2, h1);
        fill(o.w3..o.b3, h2);
        Ok(Self { shape, params, lr, dropout })
    }

    /// Rebuilds a network from its flat parameter vector.
    pub fn from_params(shape: [usize; 4], params: Vec<f64>, lr: f64, dropout: f64) -> Result<Self> {
        if shape[3] != 1 || shape[..3].contains(&0) {
            return Err(Error::Config(format!("invalid gating shape {shape:?}")));
        }
        let expected = offsets(shape).end;
        if params.len() != expected {
            return Err(Error::LengthMismatch { left: params.len(), right: expected });
        }
        Ok(Self { shape, params, lr, dropout })
    }

    pub fn k(&self) -> usize {
        self.shape[0]
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    fn check_input(&self, input: &GatingInput) -> Result<()> {
        if input.0.len() == self.k() {
            Ok(())
        } else {
            Err(Error::LengthMismatch { left: input.0.len(), right: self.k() })
        }
    }

    fn run(&self, x: &[f64], mask: Option<&DropoutMask>) -> Trace {
        let [k, h1, h2, _] = self.shape;
        let o = offsets(self.shape);
        let p = &self.params;
        let layer = |w: usize, b: usize, rows: usize, cols: usize, input: &[f64]| -> Vec<f64> {
            (0..rows)
                .map(|r| p[b + r] + crate::math::dot(&p[w + r * cols..w + (r + 1) * cols], input))
                .collect()
        };
        let z1 = layer(o.w1, o.b1, h1, k, x);
        let mut a1: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();
        if let Some(m) = mask {
            a1.iter_mut().zip(&m.hidden1).for_each(|(a, s)| *a *= s);
        }
        let z2 = layer(o.w2, o.b2, h2, h1, &a1);
        let mut a2: Vec<f64> = z2.iter().map(|&z| z.max(0.0)).collect();
        if let Some(m) = mask {
            a2.iter_mut().zip(&m.hidden2).for_each(|(a, s)| *a *= s);
        }
        let z3 = p[o.b3] + crate::math::dot(&p[o.w3..o.b3], &a2);
        Trace { z1, a1, z2, a2, out: sigmoid(z3) }
    }

    /// Inference-time weight in (0, 1); dropout is off.
    pub fn forward(&self, input: &GatingInput) -> Result<f64> {
        self.check_input(input)?;
        Ok(self.run(&input.0, None).out)
    }

    pub fn sample_mask<R: Rng + ?Sized>(&self, rng: &mut R) -> DropoutMask {
        let keep = 1.0 - self.dropout;
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| if self.dropout == 0.0 || rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect()
        };
        let hidden1 = draw(self.shape[1]);
        let hidden2 = draw(self.shape[2]);
        DropoutMask { hidden1, hidden2 }
    }

    /// Mean squared error between outputs and `{0,1}` targets, and its
    /// gradient over the flat parameter vector. `masks`, when given, applies
    /// one dropout mask per input.
    pub fn loss_and_grad(
        &self,
        inputs: &[GatingInput],
        targets: &[bool],
        masks: Option<&[DropoutMask]>,
    ) -> Result<(f64, Vec<f64>)> {
        if inputs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if inputs.len() != targets.len() {
            return Err(Error::LengthMismatch { left: inputs.len(), right: targets.len() });
        }
        let [k, h1, h2, _] = self.shape;
        let o = offsets(self.shape);
        let p = &self.params;
        let n = inputs.len() as f64;
        let mut grad = vec![0.0; p.len()];
        let mut loss = 0.0;
        for (idx, (input, &target)) in inputs.iter().zip(targets).enumerate() {
            self.check_input(input)?;
            let mask = masks.map(|m| &m[idx]);
            let x = &input.0;
            let t = self.run(x, mask);
            let target = if target { 1.0 } else { 0.0 };
            loss += (t.out - target).powi(2);
            let dz3 = 2.0 * (t.out - target) / n * t.out * (1.0 - t.out);
            grad[o.b3] += dz3;
            let mut dz2 = vec![0.0; h2];
            for j in 0..h2 {
                grad[o.w3 + j] += dz3 * t.a2[j];
                let gate = if t.z2[j] > 0.0 { mask.map_or(1.0, |m| m.hidden2[j]) } else { 0.0 };
                dz2[j] = dz3 * p[o.w3 + j] * gate;
            }
            let mut da1 = vec![0.0; h1];
            for (j, &d) in dz2.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grad[o.b2 + j] += d;
                let row = o.w2 + j * h1;
                for i in 0..h1 {
                    grad[row + i] += d * t.a1[i];
                    da1[i] += d * p[row + i];
                }
            }
            for i in 0..h1 {
                let gate = if t.z1[i] > 0.0 { mask.map_or(1.0, |m| m.hidden1[i]) } else { 0.0 };
                let d = da1[i] * gate;
                if d == 0.0 {
                    continue;
                }
                grad[o.b1 + i] += d;
                let row = o.w1 + i * k;
                for (g, xv) in grad[row..row + k].iter_mut().zip(x) {
                    *g += d * xv;
                }
            }
        }
        Ok((loss / n, grad))
    }

    /// One SGD step on the MSE loss with dropout active. Returns the pre-step
    /// (dropout) loss.
    pub fn update<R: Rng + ?Sized>(&mut self, inputs: &[GatingInput], targets: &[bool], rng: &mut R) -> Result<f64> {
        let masks: Option<Vec<DropoutMask>> =
            (self.dropout > 0.0).then(|| inputs.iter().map(|_| self.sample_mask(rng)).collect());
        let (loss, grad) = self.loss_and_grad(inputs, targets, masks.as_deref())?;
        for (p, g) in self.params.iter_mut().zip(&grad) {
            *p -= self.lr * g;
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(seed: u64, k: usize) -> GatingNet {
        GatingNet::new(k, 8, 4, 0.01, 0.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn signature_examples() {
        let sig = build_gating_input(&[0.5, 1.0, 2.0], &[true, false, true], 3).unwrap();
        assert_eq!(sig.0, vec![0.5, -1.0, 2.0]);
        let sig = build_gating_input(&[0.5, 1.0], &[true, true], 4).unwrap();
        assert_eq!(sig.0, vec![0.5, 1.0, 0.0, 0.0]);
        assert!(build_gating_input(&[0.5, 1.0], &[true], 4).is_err());
        assert!(build_gating_input(&[0.5, 1.0], &[true, true], 1).is_err());
    }

    #[test]
    fn zero_network_outputs_half() {
        let n = GatingNet::from_params([3, 4, 2, 1], vec![0.0; offsets([3, 4, 2, 1]).end], 0.01, 0.1).unwrap();
        assert_eq!(n.forward(&GatingInput(vec![1.0, -2.0, 3.0])).unwrap(), 0.5);
    }

    #[test]
    fn output_bias_saturates() {
        let shape = [3, 4, 2, 1];
        let mut params = vec![0.0; offsets(shape).end];
        *params.last_mut().unwrap() = 10.0;
        let n = GatingNet::from_params(shape, params, 0.01, 0.1).unwrap();
        let lam = n.forward(&GatingInput(vec![0.3, 0.3, 0.3])).unwrap();
        assert!(lam > 0.9999 && lam < 1.0);
    }

    #[test]
    fn inference_is_deterministic() {
        let n = GatingNet::new(5, 32, 16, 0.01, 0.5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let x = GatingInput(vec![0.1, -0.4, 2.0, 0.0, 1.5]);
        assert_eq!(n.forward(&x).unwrap(), n.forward(&x).unwrap());
        assert!(n.forward(&GatingInput(vec![1.0])).is_err());
    }

    #[test]
    fn binarize_is_strict() {
        assert_eq!(binarize(0.7), 1);
        assert_eq!(binarize(0.5), 0);
        assert_eq!(binarize(0.2), 0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let h = 1e-5;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut n = net(seed, 5);
            // nonzero biases keep hidden units off the ReLU kink
            for p in n.params_mut() {
                *p += rng.random_range(-0.3..0.3);
            }
            let inputs: Vec<GatingInput> =
                (0..6).map(|_| GatingInput((0..5).map(|_| rng.random_range(-3.0..3.0)).collect())).collect();
            let targets: Vec<bool> = (0..6).map(|_| rng.random()).collect();
            let (_, grad) = n.loss_and_grad(&inputs, &targets, None).unwrap();
            let mut diff2 = 0.0;
            let mut norm2 = 0.0;
            for i in 0..n.params().len() {
                let (mut np, mut nm) = (n.clone(), n.clone());
                np.params_mut()[i] += h;
                nm.params_mut()[i] -= h;
                let lp = np.loss_and_grad(&inputs, &targets, None).unwrap().0;
                let lm = nm.loss_and_grad(&inputs, &targets, None).unwrap().0;
                let numeric = (lp - lm) / (2.0 * h);
                diff2 += (numeric - grad[i]).powi(2);
                norm2 += grad[i].powi(2);
            }
            assert!(diff2.sqrt() / norm2.sqrt().max(1e-12) < 1e-4, "seed {seed}: {} {}", diff2.sqrt(), norm2.sqrt());
        }
    }

    #[test]
    fn training_reduces_mse_on_separable_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut n = GatingNet::new(4, 32, 16, 0.01, 0.1, &mut rng).unwrap();
        let inputs: Vec<GatingInput> = (0..16)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                GatingInput((0..4).map(|_| s * rng.random_range(0.5..2.0)).collect())
            })
            .collect();
        let targets: Vec<bool> = (0..16).map(|i| i % 2 == 0).collect();
        let initial = n.loss_and_grad(&inputs, &targets, None).unwrap().0;
        for _ in 0..200 {
            n.update(&inputs, &targets, &mut rng).unwrap();
        }
        let after = n.loss_and_grad(&inputs, &targets, None).unwrap().0;
        assert!(after < initial, "{after} !< {initial}");
        assert!(matches!(n.update(&[], &[], &mut rng), Err(Error::EmptyBatch)));
    }

    #[test]
    fn all_positive_targets_push_lambda_high() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut n = GatingNet::new(20, 32, 16, 0.01, 0.1, &mut rng).unwrap();
        let inputs: Vec<GatingInput> =
            (0..32).map(|_| GatingInput((0..20).map(|_| rng.random_range(-3.0..3.0)).collect())).collect();
        let targets = vec![true; 32];
        for _ in 0..2000 {
            n.update(&inputs, &targets, &mut rng).unwrap();
        }
        let mean: f64 = inputs.iter().map(|x| n.forward(x).unwrap()).sum::<f64>() / 32.0;
        assert!(mean > 0.9, "mean lambda {mean}");
    }

    #[test]
    fn serde_keeps_flat_params_with_shape() {
        let n = net(1, 3);
        let v = serde_json::to_value(&n).unwrap();
        assert_eq!(v["shape"], serde_json::json!([3, 8, 4, 1]));
        assert_eq!(v["params"].as_array().unwrap().len(), n.params().len());
        let back: GatingNet = serde_json::from_value(v).unwrap();
        assert_eq!(back, n);
    }
}
