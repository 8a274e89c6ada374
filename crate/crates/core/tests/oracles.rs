mod common;

use common::oracle::{self, policy_instance, policy_optimum, rows_of};
use prescribe_core::causal::{effect_curve, EffectOptions};
use prescribe_core::fixtures;
use prescribe_core::policy::{learn_policy, PolicyError, MIN_LEAF_ROWS};

#[test]
fn noiseless_linear_effect_is_recovered_exactly() {
    let (meta, table) = fixtures::linear_scm(2000, 7);
    let est = effect_curve(&table, &meta, &["X1".into()], &EffectOptions::default()).unwrap();
    let slope = est.contrast_per_unit().unwrap();
    assert!((slope - 2.0).abs() < 1e-9, "{slope}");
}

#[test]
fn confounded_effect_matches_brute_force_standardization() {
    let (meta, table) = fixtures::confounded_scm(5000, 11);
    let features = vec!["X".to_string()];
    let rows = rows_of(&table, &meta, &features);
    let all: Vec<&oracle::Row> = rows.iter().collect();

    let adjusted = effect_curve(&table, &meta, &features, &EffectOptions::default()).unwrap();
    let raw = effect_curve(&table, &meta, &[], &EffectOptions::default()).unwrap();
    let oracle_adj = oracle::standardized_mean(&all, &features, 1.0).unwrap()
        - oracle::standardized_mean(&all, &features, 0.0).unwrap();
    let oracle_raw = oracle::raw_mean(&all, 1.0).unwrap() - oracle::raw_mean(&all, 0.0).unwrap();

    let adj = adjusted.contrast("1", "0").unwrap();
    let unadj = raw.contrast("1", "0").unwrap();
    assert!((adj - oracle_adj).abs() < 1e-12, "{adj} vs {oracle_adj}");
    assert!((unadj - oracle_raw).abs() < 1e-12, "{unadj} vs {oracle_raw}");
    assert!((-0.05..=0.05).contains(&adj), "{adj}");
    assert!(unadj >= 0.2, "{unadj}");
}

#[test]
fn policy_objective_matches_exhaustive_search() {
    let (mut feasible, mut split) = (0, 0);
    for seed in 0..50 {
        let inst = policy_instance(seed);
        let rows = rows_of(&inst.table, &inst.meta, &inst.features);
        let expected = policy_optimum(&rows, &inst.features, &inst.adjust, inst.num_rules, inst.budget, MIN_LEAF_ROWS);
        match (learn_policy(&inst.table, &inst.meta, &inst.adjust, inst.num_rules, inst.budget), expected) {
            (Ok(res), Some(best)) => {
                feasible += 1;
                assert!((res.projected_kpi - best).abs() < 1e-12, "seed {seed}: {} vs {best}", res.projected_kpi);
                assert!(res.budget_used <= inst.budget + 1e-9, "seed {seed}");
                assert!(res.tree.root.leaf_count() <= inst.num_rules);
                split += usize::from(res.tree.root.leaf_count() == 2);
            }
            (Err(PolicyError::InfeasibleBudget { .. }), None) => {}
            (got, want) => panic!("seed {seed}: {got:?} vs oracle {want:?}"),
        }
    }
    assert!(feasible >= 35 && split >= 5, "{feasible} feasible, {split} split");
}

#[test]
fn projected_kpi_is_monotone_in_budget_on_bank_fixture() {
    let (meta, table) = fixtures::bank(0);
    let features = vec!["job".to_string(), "euribor3m".to_string()];
    let mut last = f64::NEG_INFINITY;
    for budget in [0.5, 1.0, 2.0, 3.0, 5.0] {
        let res = learn_policy(&table, &meta, &features, 4, budget).unwrap();
        assert!(res.budget_used <= budget + 1e-9);
        assert!(res.projected_kpi >= last - 1e-12, "{budget}: {} < {last}", res.projected_kpi);
        last = res.projected_kpi;
    }
}
