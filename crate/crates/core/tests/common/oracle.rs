//! Brute-force reference computations that do not use the library's
//! estimator or optimizer code paths.

use std::collections::BTreeMap;

use prescribe_core::dataset::{ColumnData, ColumnSpec, DataTable, DatasetMetadata, Dtype};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One row as plain numbers: action, covariates (by name), outcome.
#[derive(Debug, Clone)]
pub struct Row {
    pub a: f64,
    pub x: BTreeMap<String, f64>,
    pub y: f64,
}

pub fn rows_of(table: &DataTable, meta: &DatasetMetadata, covariates: &[String]) -> Vec<Row> {
    let num = |name: &str, r: usize| table.column(name).unwrap().get_f64(r).unwrap();
    (0..table.row_count())
        .map(|r| Row {
            a: num(&meta.action_column, r),
            x: covariates.iter().map(|c| (c.clone(), num(c, r))).collect(),
            y: num(&meta.outcome_column, r),
        })
        .collect()
}

fn key(row: &Row, features: &[String]) -> Vec<u64> {
    features.iter().map(|f| row.x[f].to_bits()).collect()
}

/// Standardized mean outcome of action `a` over `rows`: group by the exact
/// feature tuple, weight each group by its share of rows, and renormalize
/// over groups where `a` occurs. `None` when `a` never occurs.
pub fn standardized_mean(rows: &[&Row], features: &[String], a: f64) -> Option<f64> {
    let mut groups: BTreeMap<Vec<u64>, (usize, f64, usize)> = BTreeMap::new();
    for r in rows {
        let g = groups.entry(key(r, features)).or_default();
        g.0 += 1;
        if r.a == a {
            g.1 += r.y;
            g.2 += 1;
        }
    }
    let den: usize = groups.values().filter(|g| g.2 > 0).map(|g| g.0).sum();
    if den == 0 {
        return None;
    }
    Some(
        groups
            .values()
            .filter(|g| g.2 > 0)
            .map(|g| g.0 as f64 / den as f64 * (g.1 / g.2 as f64))
            .sum(),
    )
}

pub fn raw_mean(rows: &[&Row], a: f64) -> Option<f64> {
    let ys: Vec<f64> = rows.iter().filter(|r| r.a == a).map(|r| r.y).collect();
    (!ys.is_empty()).then(|| ys.iter().sum::<f64>() / ys.len() as f64)
}

pub fn levels(rows: &[Row]) -> Vec<f64> {
    let mut v: Vec<f64> = rows.iter().map(|r| r.a).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Exhaustive optimum over every tree with at most `num_rules ≤ 2` leaves
/// (no split, or one `x ≤ 0.5` split per binary feature with both sides of
/// at least `min_leaf` rows) and every per-leaf action with mean cost within
/// budget. A leaf without data for an action inherits the root estimate.
pub fn policy_optimum(
    rows: &[Row],
    split_features: &[String],
    adjust: &[String],
    num_rules: usize,
    budget: f64,
    min_leaf: usize,
) -> Option<f64> {
    let lv = levels(rows);
    let n = rows.len() as f64;
    let all: Vec<&Row> = rows.iter().collect();
    let root_q: Vec<Option<f64>> = lv.iter().map(|&a| standardized_mean(&all, adjust, a)).collect();
    let mut best: Option<f64> = None;
    let mut consider = |v: f64| {
        if best.is_none_or(|b| v > b) {
            best = Some(v);
        }
    };
    for (i, &a) in lv.iter().enumerate() {
        if let Some(q) = root_q[i] {
            if a <= budget {
                consider(q);
            }
        }
    }
    if num_rules >= 2 {
        for f in split_features {
            let (yes, no): (Vec<&Row>, Vec<&Row>) = rows.iter().partition(|r| r.x[f] <= 0.5);
            if yes.len() < min_leaf || no.len() < min_leaf {
                continue;
            }
            let q_of = |seg: &[&Row]| -> Vec<Option<f64>> {
                lv.iter()
                    .enumerate()
                    .map(|(i, &a)| standardized_mean(seg, adjust, a).or(root_q[i]))
                    .collect()
            };
            let (qy, qn) = (q_of(&yes), q_of(&no));
            let (ny, nn) = (yes.len() as f64, no.len() as f64);
            for (i, &a1) in lv.iter().enumerate() {
                for (j, &a2) in lv.iter().enumerate() {
                    let (Some(q1), Some(q2)) = (qy[i], qn[j]) else { continue };
                    if (ny * a1 + nn * a2) / n <= budget {
                        consider(ny / n * q1 + nn / n * q2);
                    }
                }
            }
        }
    }
    best
}

/// A small policy instance: binary features, actions drawn from a few
/// levels, outcome depending on features and action.
pub struct PolicyInstance {
    pub meta: DatasetMetadata,
    pub table: DataTable,
    pub features: Vec<String>,
    pub adjust: Vec<String>,
    pub num_rules: usize,
    pub budget: f64,
}

pub fn policy_instance(seed: u64) -> PolicyInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(16..=32);
    let n_feat = rng.random_range(1..=3);
    let n_act = rng.random_range(2..=3);
    let offset = if rng.random::<f64>() < 0.2 { 1.0 } else { 0.0 };
    let features: Vec<String> = (1..=n_feat).map(|i| format!("X{i}")).collect();
    let mut cols: Vec<(String, ColumnData)> = Vec::new();
    let xs: Vec<Vec<f64>> = (0..n_feat)
        .map(|_| (0..n).map(|_| if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 }).collect())
        .collect();
    let gains: Vec<f64> = (0..n_feat).map(|_| rng.random_range(-1.0..1.0)).collect();
    let a: Vec<f64> = (0..n).map(|_| rng.random_range(0..n_act) as f64 + offset).collect();
    let y: Vec<f64> = (0..n)
        .map(|r| {
            let seg: f64 = (0..n_feat).map(|f| gains[f] * xs[f][r]).sum();
            let v = seg * a[r] + rng.random_range(-0.5..0.5);
            (v * 8.0).round() / 8.0
        })
        .collect();
    cols.push(("A".into(), ColumnData::Numeric(a.into_iter().map(Some).collect())));
    for (f, name) in features.iter().enumerate() {
        cols.push((name.clone(), ColumnData::Numeric(xs[f].iter().copied().map(Some).collect())));
    }
    cols.push(("Y".into(), ColumnData::Numeric(y.into_iter().map(Some).collect())));
    let spec = |name: &str| ColumnSpec {
        name: name.into(),
        dtype: Dtype::Numeric,
        description: String::new(),
        supported: true,
    };
    let mut specs = vec![spec("A")];
    specs.extend(features.iter().map(|f| spec(f)));
    specs.push(spec("Y"));
    let meta = DatasetMetadata {
        title: format!("Policy instance {seed}"),
        path: "instance.csv".into(),
        action_column: "A".into(),
        outcome_column: "Y".into(),
        columns: specs,
        action_costs: None,
    };
    let adjust = if rng.random::<bool>() { features.clone() } else { Vec::new() };
    let num_rules = rng.random_range(1..=2);
    let budget = [0.0, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0][rng.random_range(0..7)];
    PolicyInstance {
        table: DataTable::from_columns(cols).expect("consistent columns"),
        meta,
        features,
        adjust,
        num_rules,
        budget,
    }
}
