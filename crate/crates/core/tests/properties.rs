use araida_core::gating::build_gating_input;
use araida_core::knn::{knn_infer, retrieve, smooth_label};
use araida_core::math::is_simplex;
use araida_core::{Datastore, Eviction, MetricParams};
use proptest::prelude::*;

fn point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, dim)
}

/// Labeled entries, a query and metric weights.
type Instance = (Vec<(Vec<f64>, usize)>, Vec<f64>, Vec<f64>);

fn store_and_query(dim: usize) -> impl Strategy<Value = Instance> {
    (
        prop::collection::vec((point(dim), 0..3usize), 1..60),
        point(dim),
        prop::collection::vec(0.05..4.0f64, dim),
    )
}

fn build(entries: &[(Vec<f64>, usize)], capacity: usize, eviction: Eviction) -> Datastore {
    let mut s = Datastore::new(capacity, 3, eviction).unwrap();
    for (f, l) in entries {
        s.insert(f.clone(), *l, false, None).unwrap();
    }
    s
}

proptest! {
    #[test]
    fn smoothed_labels_are_simplices(classes in 2..20usize, label in 0..20usize) {
        prop_assume!(label < classes);
        let y = smooth_label(label, classes);
        prop_assert!(is_simplex(&y, 1e-12));
        prop_assert_eq!(araida_core::math::argmax(&y), label);
    }

    #[test]
    fn knn_is_invariant_to_metric_scale((entries, x, w) in store_and_query(4), k in 1..20usize, c in 0.01..100.0f64) {
        let store = build(&entries, 100, Eviction::Fifo);
        let mut metric = MetricParams::new(4, 0.01, 1.0).unwrap();
        metric.weights = w.clone();
        let g = knn_infer(&store, &metric, &x, k).unwrap();
        metric.weights = w.iter().map(|v| v * c).collect();
        let gs = knn_infer(&store, &metric, &x, k).unwrap();
        prop_assert!(is_simplex(&g, 1e-9));
        for (a, b) in g.iter().zip(&gs) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn retrieve_matches_sorting((entries, x, w) in store_and_query(3), k in 1..80usize) {
        let store = build(&entries, 100, Eviction::Fifo);
        let mut metric = MetricParams::new(3, 0.01, 1.0).unwrap();
        metric.weights = w;
        let got: Vec<u64> = retrieve(&store, &metric, &x, k).unwrap().iter().map(|n| n.seq).collect();
        let mut all: Vec<(f64, u64)> = store.entries().iter().map(|e| (metric.distance(&x, &e.feature).unwrap(), e.seq)).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let want: Vec<u64> = all.into_iter().take(k).map(|p| p.1).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn capacity_is_never_exceeded(
        entries in prop::collection::vec((point(2), 0..3usize), 1..80),
        capacity in 1..20usize,
        strategy in 0..4usize,
    ) {
        let eviction = Eviction::ALL[strategy];
        let mut store = Datastore::new(capacity, 3, eviction).unwrap();
        for (f, l) in entries {
            let majority = store.majority_class();
            let full = store.len() == capacity;
            let out = store.insert(f, l, false, None).unwrap();
            prop_assert!(store.len() <= capacity);
            prop_assert_eq!(out.evicted.is_some(), full);
            if let (Some(e), Eviction::ClassSimilar | Eviction::ClassDissimilar) = (&out.evicted, eviction) {
                prop_assert_eq!(Some(e.label), majority);
            }
        }
        prop_assert_eq!(store.class_counts().iter().sum::<usize>(), store.len());
    }

    #[test]
    fn gating_signature_signs_follow_flags(
        pairs in prop::collection::vec((0.0..10.0f64, any::<bool>()), 0..12),
        extra in 0..5usize,
    ) {
        let (d, e): (Vec<f64>, Vec<bool>) = pairs.iter().cloned().unzip();
        let k = d.len() + extra;
        let x = build_gating_input(&d, &e, k).unwrap();
        prop_assert_eq!(x.0.len(), k);
        for i in 0..k {
            let want = if i < d.len() { if e[i] { d[i] } else { -d[i] } } else { 0.0 };
            prop_assert_eq!(x.0[i], want);
        }
    }
}
