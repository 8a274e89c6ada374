mod common;

use prescribe_core::dataset::{Dtype, Value};
use prescribe_core::eval::{perturb_queries, ConfusionMatrix, MetricsReport};
use prescribe_core::nlu::{gate, ExtractorSpec, IntentLabel};
use prescribe_core::policy::{allocate, LeafOption};
use proptest::prelude::*;

fn label() -> impl Strategy<Value = IntentLabel> {
    prop::sample::select(IntentLabel::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn chat_memory_stays_bounded(picks in prop::collection::vec(0usize..11, 50)) {
        let outcome = common::flow::check_memory_stream(&picks);
        prop_assert!(outcome.is_ok(), "{:?}", outcome);
    }
}

proptest! {
    #[test]
    fn confusion_identities(pairs in prop::collection::vec((label(), label()), 1..300)) {
        let gold: Vec<IntentLabel> = pairs.iter().map(|p| p.0).collect();
        let pred: Vec<IntentLabel> = pairs.iter().map(|p| p.1).collect();
        let m = ConfusionMatrix::from_pairs(&gold, &pred);
        prop_assert_eq!(m.total(), gold.len());
        let correct = gold.iter().zip(&pred).filter(|(g, p)| g == p).count();
        prop_assert_eq!(m.trace(), correct);
        for (i, l) in m.labels.iter().enumerate() {
            prop_assert_eq!(m.support(i), gold.iter().filter(|g| *g == l).count());
            prop_assert_eq!(m.predicted(i), pred.iter().filter(|p| *p == l).count());
        }
        let r = MetricsReport::from_predictions("p", &gold, &pred, &[]);
        prop_assert_eq!(r.accuracy, correct as f64 / gold.len() as f64);
        for x in [r.f1_macro, r.precision_macro, r.recall_macro] {
            prop_assert!((0.0..=1.0).contains(&x));
        }
        if correct == gold.len() {
            prop_assert_eq!(r.f1_macro, 1.0);
        }
    }

    #[test]
    fn gate_never_admits_wrong_dtype(raw in "\\PC{0,12}") {
        let numeric = ExtractorSpec::new("euribor3m", Dtype::Numeric, "rate");
        let mut cat = ExtractorSpec::new("job", Dtype::Categorical, "job");
        cat.values = vec!["admin.".into(), "student".into()];
        let boolean = ExtractorSpec::new("show_error", Dtype::Boolean, "error bars");
        if let Some(s) = gate(&raw, &numeric) {
            prop_assert!(s.value().is_none_or(|v| matches!(v, Value::Number(_))));
        }
        if let Some(s) = gate(&raw, &cat) {
            prop_assert!(s.value().is_some_and(|v| cat.values.contains(&v.canonical())));
        }
        if let Some(s) = gate(&raw, &boolean) {
            prop_assert!(s.value().is_some_and(|v| matches!(v, Value::Bool(_))));
        }
    }

    #[test]
    fn allocation_is_feasible_and_optimal(
        leaves in prop::collection::vec((1usize..20, prop::collection::vec(prop::option::weighted(0.85, -5.0f64..5.0), 3)), 1..4),
        budget in 0.0f64..3.0,
    ) {
        let costs = [0.0, 1.0, 2.0];
        let opts: Vec<LeafOption> = leaves.iter().map(|(rows, q)| LeafOption { rows: *rows, q: q.clone() }).collect();
        let n: usize = opts.iter().map(|l| l.rows).sum();
        let got = allocate(&opts, &costs, n, budget);
        let mut best: Option<f64> = None;
        let combos = 3usize.pow(opts.len() as u32);
        for code in 0..combos {
            let mut c = code;
            let (mut value, mut cost, mut ok) = (0.0, 0.0, true);
            for leaf in &opts {
                let a = c % 3;
                c /= 3;
                match leaf.q[a] {
                    Some(q) => {
                        value += leaf.rows as f64 / n as f64 * q;
                        cost += leaf.rows as f64 * costs[a];
                    }
                    None => ok = false,
                }
            }
            if ok && cost / n as f64 <= budget && best.is_none_or(|b| value > b) {
                best = Some(value);
            }
        }
        match (got, best) {
            (Some(a), Some(b)) => {
                prop_assert!(a.cost_sum / n as f64 <= budget);
                prop_assert!((a.value - b).abs() < 1e-9);
            }
            (None, None) => {}
            (g, b) => prop_assert!(false, "{:?} vs {:?}", g, b),
        }
    }

    #[test]
    fn perturbation_preserves_labels(seed in any::<u64>(), n in 1usize..300) {
        let (_, bundle) = common::bank_bundle();
        let db = &bundle.prompt_db;
        let out = perturb_queries(db, seed, n, &[]);
        prop_assert_eq!(out.len(), n);
        let changed = out.iter().enumerate().filter(|(i, s)| s.query != db[i % db.len()].query).count();
        for (i, s) in out.iter().enumerate() {
            prop_assert_eq!(&s.labels, &db[i % db.len()].labels);
        }
        prop_assert!(changed * 5 >= n * 4);
    }
}
