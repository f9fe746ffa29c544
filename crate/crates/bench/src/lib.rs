//! Fixtures shared by the benchmarks.

use araida_core::harness::{gaussian_clusters, SyntheticSpec};
use araida_core::{Corpus, Datastore, Eviction, MetricParams};

pub fn clusters(size: usize, dim: usize, seed: u64) -> Corpus {
    gaussian_clusters(&SyntheticSpec { size, dim, seed, ..Default::default() }).expect("valid synthetic spec")
}

/// A full datastore over the first `size` examples of a synthetic corpus.
pub fn filled_store(size: usize, dim: usize) -> (Datastore, MetricParams, Corpus) {
    let corpus = clusters(size + 100, dim, 7);
    let mut store = Datastore::new(size, corpus.label_space().len(), Eviction::ClassSimilar).expect("store");
    for ex in &corpus.examples()[..size] {
        let feature = ex.feature.clone().expect("synthetic examples have features");
        store.insert(feature, ex.gold_label.expect("gold"), true, None).expect("insert");
    }
    let metric = MetricParams::new(dim, 0.01, 1.0).expect("metric");
    (store, metric, corpus)
}
