//! Example ordering: seeded shuffles and entropy-based active selection.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::error::{Error, Result};
use crate::model::{uncertainty, AnnotationModel, PredictionKind};
use crate::session::OrderMode;

/// Picks the `batch_size` entries of `remaining` with the highest entropy
/// under `model` (ties by position) and removes them from `remaining`.
pub fn select_active_batch(
    examples: &[Example],
    remaining: &mut Vec<usize>,
    model: &dyn AnnotationModel,
    batch_size: usize,
) -> Result<Vec<usize>> {
    if model.kind() != PredictionKind::Probabilistic {
        return Err(Error::Unsupported("active ordering needs prediction uncertainty".into()));
    }
    let mut scored = remaining
        .iter()
        .map(|&i| Ok((i, uncertainty(&model.predict(&examples[i])?)?)))
        .collect::<Result<Vec<(usize, f64)>>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let batch: Vec<usize> = scored.iter().take(batch_size).map(|s| s.0).collect();
    remaining.retain(|i| !batch.contains(i));
    Ok(batch)
}

/// Full ordering of `pool` (positions into `examples`) under a fixed model.
pub fn order_examples<R: Rng + ?Sized>(
    examples: &[Example],
    pool: &[usize],
    model: &dyn AnnotationModel,
    mode: OrderMode,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if batch_size == 0 {
        return Err(Error::Batch("batch_size must be positive".into()));
    }
    match mode {
        OrderMode::Random => {
            let mut order = pool.to_vec();
            order.shuffle(rng);
            Ok(order)
        }
        OrderMode::Active => {
            let mut remaining = pool.to_vec();
            remaining.sort_unstable();
            let mut order = Vec::with_capacity(pool.len());
            while !remaining.is_empty() {
                order.extend(select_active_batch(examples, &mut remaining, model, batch_size)?);
            }
            Ok(order)
        }
    }
}

/// Lazily yields examples in the configured order. Active mode re-ranks the
/// remaining pool with the current model each time a batch is used up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleStream {
    mode: OrderMode,
    batch_size: usize,
    queue: VecDeque<usize>,
    remaining: Vec<usize>,
}

impl ExampleStream {
    pub fn new<R: Rng + ?Sized>(pool: Vec<usize>, mode: OrderMode, batch_size: usize, rng: &mut R) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Batch("batch_size must be positive".into()));
        }
        Ok(match mode {
            OrderMode::Random => {
                let mut order = pool;
                order.shuffle(rng);
                Self { mode, batch_size, queue: order.into(), remaining: Vec::new() }
            }
            OrderMode::Active => {
                let mut remaining = pool;
                remaining.sort_unstable();
                Self { mode, batch_size, queue: VecDeque::new(), remaining }
            }
        })
    }

    pub fn remaining(&self) -> usize {
        self.queue.len() + self.remaining.len()
    }

    /// Next example position without consuming it.
    pub fn peek(&mut self, examples: &[Example], model: &dyn AnnotationModel) -> Result<Option<usize>> {
        if self.queue.is_empty() && self.mode == OrderMode::Active && !self.remaining.is_empty() {
            self.queue = select_active_batch(examples, &mut self.remaining, model, self.batch_size)?.into();
        }
        Ok(self.queue.front().copied())
    }

    pub fn next(&mut self, examples: &[Example], model: &dyn AnnotationModel) -> Result<Option<usize>> {
        let next = self.peek(examples, model)?;
        self.queue.pop_front();
        Ok(next)
    }

    /// Puts a handed-out example back at the front, e.g. one that was shown
    /// but never answered before a checkpoint.
    pub fn requeue(&mut self, index: usize) {
        self.queue.push_front(index);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearSoftmaxModel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn examples(n: usize) -> Vec<Example> {
        (0..n).map(|i| Example::with_feature(format!("e{i}"), vec![i as f64, 1.0], Some(0))).collect()
    }

    #[test]
    fn random_order_is_reproducible() {
        let ex = examples(30);
        let m = LinearSoftmaxModel::new(2, 2, 0.1).unwrap();
        let pool: Vec<usize> = (0..30).collect();
        let a = order_examples(&ex, &pool, &m, OrderMode::Random, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = order_examples(&ex, &pool, &m, OrderMode::Random, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, pool);
    }

    #[test]
    fn uniform_model_gives_index_order() {
        let ex = examples(10);
        let m = LinearSoftmaxModel::new(3, 2, 0.1).unwrap();
        let pool: Vec<usize> = (0..10).rev().collect();
        let order = order_examples(&ex, &pool, &m, OrderMode::Active, 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(order, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn confident_example_comes_after_uncertain_one() {
        // W row 1 reacts to the first coordinate: example 0 is near one-hot, example 1 uniform.
        let m = LinearSoftmaxModel::from_parts(vec![0.0, 0.0, 20.0, 0.0], vec![0.0, 0.0], 0.1).unwrap();
        let ex = vec![
            Example::with_feature("confident", vec![1.0, 0.0], None),
            Example::with_feature("uniform", vec![0.0, 0.0], None),
        ];
        let order = order_examples(&ex, &[0, 1], &m, OrderMode::Active, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(order, vec![1, 0]);
    }

    struct Discrete;
    impl AnnotationModel for Discrete {
        fn kind(&self) -> PredictionKind {
            PredictionKind::Discrete
        }
        fn predict(&self, _: &Example) -> Result<crate::model::Prediction> {
            Ok(crate::model::Prediction::Discrete { class_idx: 0 })
        }
    }

    #[test]
    fn active_with_discrete_model_is_unsupported() {
        let ex = examples(3);
        let r = order_examples(&ex, &[0, 1, 2], &Discrete, OrderMode::Active, 1, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(Error::Unsupported(_))));
    }

    #[test]
    fn stream_visits_every_example_once() {
        let ex = examples(11);
        let m = LinearSoftmaxModel::new(2, 2, 0.1).unwrap();
        for mode in [OrderMode::Random, OrderMode::Active] {
            let mut s = ExampleStream::new((0..11).collect(), mode, 4, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
            let mut seen = Vec::new();
            while let Some(i) = s.next(&ex, &m).unwrap() {
                seen.push(i);
            }
            seen.sort();
            assert_eq!(seen, (0..11).collect::<Vec<_>>());
        }
    }
}
