//! Synthetic datasets with known structure: a bank-marketing-style table
//! for the end-to-end demo and two small structural models with analytic
//! effects.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::dataset::{ColumnData, ColumnSpec, DataTable, DatasetMetadata, Dtype};

pub const BANK_ROWS: usize = 4000;
pub const EURIBOR_LEVELS: [f64; 4] = [0.634, 1.313, 4.857, 4.964];
pub const JOBS: [&str; 6] = ["admin.", "blue-collar", "technician", "services", "retired", "student"];

fn col(name: &str, dtype: Dtype, description: &str) -> ColumnSpec {
    ColumnSpec {
        name: name.into(),
        dtype,
        description: description.into(),
        supported: true,
    }
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T], weights: &[f64]) -> &'a T {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (item, w) in items.iter().zip(weights) {
        if u < *w {
            return item;
        }
        u -= w;
    }
    items.last().expect("non-empty")
}

pub fn bank_metadata() -> DatasetMetadata {
    DatasetMetadata {
        title: "Bank Marketing".into(),
        path: "bank_marketing.csv".into(),
        action_column: "CAMPAIGN".into(),
        outcome_column: "CONVERSION".into(),
        columns: vec![
            col("age", Dtype::Numeric, "Age of the client in years."),
            col("job", Dtype::Categorical, "Type of job of the client."),
            col("marital", Dtype::Categorical, "Marital status of the client."),
            col("euribor3m", Dtype::Numeric, "Euribor 3 month rate at the time of contact."),
            col("CAMPAIGN", Dtype::Numeric, "Number of calls made to the client during the campaign."),
            col("CONVERSION", Dtype::Boolean, "Whether the client subscribed a term deposit."),
        ],
        action_costs: None,
    }
}

/// Conversion probability of the bank structural model.
///
/// Low rates convert better; retired clients and students respond to
/// calls up to three, other clients respond to up to two calls when rates
/// are low and tire of repeated calls when rates are high.
pub fn bank_conversion_probability(euribor3m: f64, job: &str, calls: u32) -> f64 {
    let high = euribor3m > 4.0;
    let responsive = matches!(job, "retired" | "student");
    let mut p = if high { 0.04 } else { 0.20 };
    if responsive {
        p += 0.15 + 0.07 * calls.min(3) as f64;
    } else if !high {
        p += 0.03 * calls.min(2) as f64;
    } else {
        p += 0.01 * calls.min(1) as f64 - 0.01 * calls.saturating_sub(2) as f64;
    }
    p.clamp(0.005, 0.95)
}

/// Bank-marketing-style table with confounded call counts.
pub fn bank_table(n: usize, seed: u64) -> DataTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut age, mut job, mut marital, mut rate, mut calls, mut conv) =
        (vec![], vec![], vec![], vec![], vec![], vec![]);
    for _ in 0..n {
        let e = *pick(&mut rng, &EURIBOR_LEVELS, &[0.15, 0.2, 0.25, 0.4]);
        let j = *pick(&mut rng, &JOBS, &[0.25, 0.25, 0.2, 0.1, 0.1, 0.1]);
        let a = match j {
            "student" => rng.random_range(18..=28),
            "retired" => rng.random_range(58..=80),
            _ => rng.random_range(25..=60),
        };
        let m = *pick(&mut rng, &["single", "married", "divorced"], &[0.3, 0.55, 0.15]);
        let lambda = 1.0 + if e > 4.0 { 1.2 } else { 0.0 } + if j == "blue-collar" { 0.5 } else { 0.0 };
        let c = (Poisson::new(lambda).expect("positive rate").sample(&mut rng) as u32).min(5);
        let y = rng.random::<f64>() < bank_conversion_probability(e, j, c);
        age.push(Some(a as f64));
        job.push(Some(j.to_string()));
        marital.push(Some(m.to_string()));
        rate.push(Some(e));
        calls.push(Some(c as f64));
        conv.push(Some(y));
    }
    DataTable::from_columns(vec![
        ("age".into(), ColumnData::Numeric(age)),
        ("job".into(), ColumnData::Categorical(job)),
        ("marital".into(), ColumnData::Categorical(marital)),
        ("euribor3m".into(), ColumnData::Numeric(rate)),
        ("CAMPAIGN".into(), ColumnData::Numeric(calls)),
        ("CONVERSION".into(), ColumnData::Boolean(conv)),
    ])
    .expect("consistent columns")
}

pub fn bank(seed: u64) -> (DatasetMetadata, DataTable) {
    (bank_metadata(), bank_table(BANK_ROWS, seed))
}

fn scm_metadata(title: &str, covariate: &str) -> DatasetMetadata {
    DatasetMetadata {
        title: title.into(),
        path: format!("{}.csv", title.to_lowercase().replace(' ', "_")),
        action_column: "A".into(),
        outcome_column: "Y".into(),
        columns: vec![
            col("A", Dtype::Numeric, "Action level."),
            col(covariate, Dtype::Numeric, "Confounding covariate."),
            col("Y", Dtype::Numeric, "Outcome."),
        ],
        action_costs: None,
    }
}

/// Y = 2A + 3·X1 without noise; A ∈ {0..3} leans towards X1.
pub fn linear_scm(n: usize, seed: u64) -> (DatasetMetadata, DataTable) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut a, mut x, mut y) = (vec![], vec![], vec![]);
    for _ in 0..n {
        let x1 = rng.random_range(0..4u32) as f64;
        let act = if rng.random::<f64>() < 0.5 {
            x1
        } else {
            rng.random_range(0..4u32) as f64
        };
        a.push(Some(act));
        x.push(Some(x1));
        y.push(Some(2.0 * act + 3.0 * x1));
    }
    let table = DataTable::from_columns(vec![
        ("A".into(), ColumnData::Numeric(a)),
        ("X1".into(), ColumnData::Numeric(x)),
        ("Y".into(), ColumnData::Numeric(y)),
    ])
    .expect("consistent columns");
    (scm_metadata("Linear SCM", "X1"), table)
}

/// Binary X drives both A and Y; A has no effect on Y.
pub fn confounded_scm(n: usize, seed: u64) -> (DatasetMetadata, DataTable) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.25).expect("valid sd");
    let (mut a, mut x, mut y) = (vec![], vec![], vec![]);
    for _ in 0..n {
        let xv = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
        let act = if rng.random::<f64>() < 0.2 + 0.6 * xv { 1.0 } else { 0.0 };
        a.push(Some(act));
        x.push(Some(xv));
        y.push(Some(xv + noise.sample(&mut rng)));
    }
    let table = DataTable::from_columns(vec![
        ("A".into(), ColumnData::Numeric(a)),
        ("X".into(), ColumnData::Numeric(x)),
        ("Y".into(), ColumnData::Numeric(y)),
    ])
    .expect("consistent columns");
    (scm_metadata("Confounded SCM", "X"), table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bank_fixture_is_deterministic_and_plausible() {
        let (meta, t) = bank(0);
        meta.validate().unwrap();
        assert_eq!(t.row_count(), BANK_ROWS);
        assert_eq!(t.digest(), bank(0).1.digest());
        assert_ne!(t.digest(), bank(1).1.digest());
        let conv = match t.column("CONVERSION").unwrap() {
            ColumnData::Boolean(v) => v.iter().flatten().filter(|b| **b).count() as f64 / v.len() as f64,
            _ => unreachable!(),
        };
        assert!((0.05..0.3).contains(&conv), "{conv}");
    }

    #[test]
    fn scm_fixtures_have_expected_shape() {
        let (m, t) = linear_scm(200, 1);
        m.validate().unwrap();
        assert_eq!(t.row_count(), 200);
        let (m, t) = confounded_scm(100, 1);
        m.validate().unwrap();
        assert_eq!(t.column_names().len(), 3);
    }
}
