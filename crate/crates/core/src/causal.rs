//! Causal analysis backends: covariate selection, average and conditional
//! effect curves, and the historical policy snapshot.
//!
//! All estimators are piecewise constant over binned covariates: numeric
//! columns are cut at their quartiles (or kept as levels when they have at
//! most four distinct values), categorical and boolean columns use their
//! levels. Effects are estimated by standardization: within each covariate
//! stratum the outcome mean per action level is computed, and strata are
//! weighted by their frequency, skipping strata with no support for a level.

use std::collections::{BTreeMap, HashMap};

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chart::{AxisValue, ChartSpec, Series};
use crate::dataset::{ColumnData, DataTable, DatasetError, DatasetMetadata, Dtype, Value};
use crate::par::*;

pub const COVARIATE_QUANTILE_BINS: usize = 4;
pub const ACTION_RAW_LEVEL_LIMIT: usize = 10;
pub const ACTION_QUANTILE_BINS: usize = 5;
pub const BOOTSTRAP_RESAMPLES: usize = 200;
pub const MIN_SUPPORT_ERROR: usize = 5;
pub const MIN_SUPPORT_WARN: usize = 30;

/// Sentinel stratum code for a missing covariate cell.
const MISSING_CODE: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum CausalError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("table has no rows")]
    EmptyTable,
    #[error("need at least {needed} rows, table has {rows}")]
    TooFewRows { rows: usize, needed: usize },
    #[error("folds must be at least 2, got {0}")]
    InvalidFolds(usize),
    #[error("no supported covariates to select from")]
    NoCovariates,
    #[error("`{0}` is not a supported covariate")]
    UnsupportedFeature(String),
    #[error("outcome column `{0}` must be numeric or boolean")]
    UnsupportedOutcome(String),
    #[error("only {matched} rows match the conditions (need at least {MIN_SUPPORT_ERROR})")]
    NoMatchingRows { matched: usize },
    #[error("value `{value}` does not fit column `{column}`")]
    BadConditionValue { column: String, value: String },
}

/// One action level (a raw value or a quantile bin).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionLevel {
    pub label: String,
    /// Representative numeric value: the raw value, the mean of a quantile
    /// bin, or the metadata cost for non-numeric actions.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum ActionKind {
    Raw(Vec<f64>),
    Quantile(Vec<f64>),
    Labels(Vec<String>),
    Boolean,
}

/// Maps action cells to level indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionBinning {
    kind: ActionKind,
    levels: Vec<ActionLevel>,
}

impl ActionBinning {
    pub fn fit(table: &DataTable, meta: &DatasetMetadata) -> Result<Self, CausalError> {
        let col = table.column(&meta.action_column)?;
        let costs = meta.action_costs.as_ref();
        let cost_of = |label: &str, fallback: f64| -> f64 {
            costs.and_then(|m| m.get(label).copied()).unwrap_or(fallback)
        };
        let binning = match col {
            ColumnData::Numeric(v) => {
                let mut present: Vec<f64> = v.iter().flatten().copied().collect();
                if present.is_empty() {
                    return Err(CausalError::EmptyTable);
                }
                present.sort_by(f64::total_cmp);
                let mut distinct = present.clone();
                distinct.dedup();
                if distinct.len() <= ACTION_RAW_LEVEL_LIMIT {
                    let levels = distinct
                        .iter()
                        .map(|&x| {
                            let label = Value::Number(x).to_string();
                            let value = cost_of(&label, x);
                            ActionLevel { label, value }
                        })
                        .collect();
                    ActionBinning {
                        kind: ActionKind::Raw(distinct),
                        levels,
                    }
                } else {
                    let cuts = quantile_cuts(&present, ACTION_QUANTILE_BINS);
                    let mut sums = vec![(0.0, 0usize); cuts.len() + 1];
                    let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); cuts.len() + 1];
                    for &x in &present {
                        let b = cut_code(&cuts, x) as usize;
                        sums[b].0 += x;
                        sums[b].1 += 1;
                        bounds[b].0 = bounds[b].0.min(x);
                        bounds[b].1 = bounds[b].1.max(x);
                    }
                    let levels = sums
                        .iter()
                        .zip(&bounds)
                        .map(|(&(s, n), &(lo, hi))| {
                            let label = format!("{}-{}", Value::Number(lo), Value::Number(hi));
                            let mean = s / n as f64;
                            ActionLevel {
                                value: cost_of(&label, mean),
                                label,
                            }
                        })
                        .collect();
                    ActionBinning {
                        kind: ActionKind::Quantile(cuts),
                        levels,
                    }
                }
            }
            ColumnData::Boolean(_) => ActionBinning {
                kind: ActionKind::Boolean,
                levels: vec![
                    ActionLevel {
                        label: "false".into(),
                        value: cost_of("false", 0.0),
                    },
                    ActionLevel {
                        label: "true".into(),
                        value: cost_of("true", 1.0),
                    },
                ],
            },
            ColumnData::Categorical(v) => {
                let mut labels: Vec<String> = v.iter().flatten().cloned().collect();
                labels.sort();
                labels.dedup();
                let levels = labels
                    .iter()
                    .enumerate()
                    .map(|(i, l)| ActionLevel {
                        label: l.clone(),
                        value: cost_of(l, i as f64),
                    })
                    .collect();
                ActionBinning {
                    kind: ActionKind::Labels(labels),
                    levels,
                }
            }
        };
        Ok(binning)
    }

    pub fn levels(&self) -> &[ActionLevel] {
        &self.levels
    }

    /// Whether level values are genuine costs (numeric action or explicit
    /// cost map), as opposed to positional indices.
    pub fn has_costs(&self, meta: &DatasetMetadata) -> bool {
        match self.kind {
            ActionKind::Raw(_) | ActionKind::Quantile(_) | ActionKind::Boolean => true,
            ActionKind::Labels(ref labels) => meta
                .action_costs
                .as_ref()
                .is_some_and(|m| labels.iter().all(|l| m.contains_key(l))),
        }
    }

    pub fn code(&self, col: &ColumnData, row: usize) -> Option<usize> {
        match (&self.kind, col) {
            (ActionKind::Raw(values), ColumnData::Numeric(v)) => {
                let x = v[row]?;
                values.binary_search_by(|p| p.total_cmp(&x)).ok()
            }
            (ActionKind::Quantile(cuts), ColumnData::Numeric(v)) => {
                v[row].map(|x| cut_code(cuts, x) as usize)
            }
            (ActionKind::Boolean, ColumnData::Boolean(v)) => v[row].map(|b| b as usize),
            (ActionKind::Labels(labels), ColumnData::Categorical(v)) => {
                let s = v[row].as_ref()?;
                labels.binary_search(s).ok()
            }
            _ => None,
        }
    }

    pub fn codes(&self, table: &DataTable, meta: &DatasetMetadata) -> Result<Vec<Option<usize>>, CausalError> {
        let col = table.column(&meta.action_column)?;
        Ok((0..table.row_count()).map(|r| self.code(col, r)).collect())
    }
}

/// Quantile cut points (linear interpolation) splitting `sorted` into `bins`
/// groups; duplicate cuts are removed.
pub fn quantile_cuts(sorted: &[f64], bins: usize) -> Vec<f64> {
    let mut cuts: Vec<f64> = (1..bins)
        .map(|k| quantile(sorted, k as f64 / bins as f64))
        .collect();
    cuts.dedup();
    cuts
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Bin index: number of cuts strictly below `x`.
fn cut_code(cuts: &[f64], x: f64) -> u32 {
    cuts.iter().filter(|&&c| x > c).count() as u32
}

#[derive(Debug, Clone, PartialEq)]
enum BinKind {
    /// Numeric column with few distinct values: one bin per value.
    NumericLevels(Vec<f64>),
    Quantile { cuts: Vec<f64>, min: f64, max: f64 },
    Labels(HashMap<String, u32>),
    Boolean,
}

/// Discretization of a covariate column into strata codes.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateBins {
    column: String,
    kind: BinKind,
}

impl CovariateBins {
    pub fn fit(table: &DataTable, column: &str) -> Result<Self, CausalError> {
        let kind = match table.column(column)? {
            ColumnData::Numeric(v) => {
                let mut present: Vec<f64> = v.iter().flatten().copied().collect();
                present.sort_by(f64::total_cmp);
                let mut distinct = present.clone();
                distinct.dedup();
                if distinct.len() <= COVARIATE_QUANTILE_BINS {
                    BinKind::NumericLevels(distinct)
                } else {
                    BinKind::Quantile {
                        cuts: quantile_cuts(&present, COVARIATE_QUANTILE_BINS),
                        min: present[0],
                        max: present[present.len() - 1],
                    }
                }
            }
            ColumnData::Categorical(v) => {
                let mut map = HashMap::new();
                for s in v.iter().flatten() {
                    let next = map.len() as u32;
                    map.entry(s.clone()).or_insert(next);
                }
                BinKind::Labels(map)
            }
            ColumnData::Boolean(_) => BinKind::Boolean,
        };
        Ok(CovariateBins {
            column: column.to_string(),
            kind,
        })
    }

    pub fn column(&self) -> &str {
        &self.column
    }

    pub fn code(&self, col: &ColumnData, row: usize) -> u32 {
        match (&self.kind, col) {
            (BinKind::NumericLevels(values), ColumnData::Numeric(v)) => v[row]
                .and_then(|x| values.binary_search_by(|p| p.total_cmp(&x)).ok())
                .map(|i| i as u32)
                .unwrap_or(MISSING_CODE),
            (BinKind::Quantile { cuts, .. }, ColumnData::Numeric(v)) => {
                v[row].map(|x| cut_code(cuts, x)).unwrap_or(MISSING_CODE)
            }
            (BinKind::Labels(map), ColumnData::Categorical(v)) => v[row]
                .as_ref()
                .and_then(|s| map.get(s).copied())
                .unwrap_or(MISSING_CODE),
            (BinKind::Boolean, ColumnData::Boolean(v)) => {
                v[row].map(|b| b as u32).unwrap_or(MISSING_CODE)
            }
            _ => MISSING_CODE,
        }
    }

    pub fn codes(&self, table: &DataTable) -> Result<Vec<u32>, CausalError> {
        let col = table.column(&self.column)?;
        Ok((0..table.row_count()).map(|r| self.code(col, r)).collect())
    }

    /// Matching tolerance for a numeric condition value: half the width of
    /// the quantile bin containing it. `None` when the value lies outside the
    /// observed range.
    pub fn match_tolerance(&self, x: f64) -> Option<f64> {
        match &self.kind {
            BinKind::NumericLevels(values) => {
                let (lo, hi) = (*values.first()?, *values.last()?);
                (x >= lo && x <= hi).then_some(0.0)
            }
            BinKind::Quantile { cuts, min, max } => {
                if x < *min || x > *max {
                    return None;
                }
                let mut edges = Vec::with_capacity(cuts.len() + 2);
                edges.push(*min);
                edges.extend_from_slice(cuts);
                edges.push(*max);
                let b = cut_code(cuts, x) as usize;
                Some((edges[b + 1] - edges[b]) / 2.0)
            }
            _ => None,
        }
    }

    /// Threshold candidates separating adjacent bins.
    pub fn split_thresholds(&self) -> Vec<f64> {
        match &self.kind {
            BinKind::NumericLevels(values) => {
                values.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect()
            }
            BinKind::Quantile { cuts, max, .. } => {
                cuts.iter().copied().filter(|c| c < max).collect()
            }
            _ => Vec::new(),
        }
    }
}

/// Assign dense stratum ids to the joint codes of `features`, in row order.
pub fn strata_ids(table: &DataTable, features: &[CovariateBins]) -> Result<Vec<u32>, CausalError> {
    let mut ids = vec![0u32; table.row_count()];
    for f in features {
        let codes = f.codes(table)?;
        ids = refine_strata(&ids, &codes);
    }
    Ok(ids)
}

/// Dense ids for the pairs (`keys[i]`, `codes[i]`), numbered by first occurrence.
pub fn refine_strata(keys: &[u32], codes: &[u32]) -> Vec<u32> {
    let mut map: HashMap<(u32, u32), u32> = HashMap::new();
    keys.iter()
        .zip(codes)
        .map(|(&k, &c)| {
            let next = map.len() as u32;
            *map.entry((k, c)).or_insert(next)
        })
        .collect()
}

/// Standardized mean outcome per action level over `rows`.
///
/// For level `a`: Σ_s w_s · mean(y | a, s) where w_s is the frequency of
/// stratum `s` among `rows`, renormalized over strata that contain `a`.
/// Levels without any support are `None`.
pub fn standardized_means(
    rows: &[usize],
    action: &[Option<usize>],
    n_levels: usize,
    strata: &[u32],
    y: &[f64],
) -> Vec<Option<f64>> {
    // stratum -> (row count, per-level (sum, count))
    let mut acc: BTreeMap<u32, (usize, Vec<(f64, usize)>)> = BTreeMap::new();
    for &r in rows {
        let entry = acc
            .entry(strata[r])
            .or_insert_with(|| (0, vec![(0.0, 0); n_levels]));
        entry.0 += 1;
        if let Some(a) = action[r] {
            entry.1[a].0 += y[r];
            entry.1[a].1 += 1;
        }
    }
    (0..n_levels)
        .map(|a| {
            let den: usize = acc
                .values()
                .filter(|(_, lv)| lv[a].1 > 0)
                .map(|(n, _)| *n)
                .sum();
            if den == 0 {
                return None;
            }
            let est = acc
                .values()
                .filter(|(_, lv)| lv[a].1 > 0)
                .map(|(n, lv)| (*n as f64 / den as f64) * (lv[a].0 / lv[a].1 as f64))
                .sum();
            Some(est)
        })
        .collect()
}

/// Outcome column as f64 (booleans as 0/1).
pub fn outcome_values(table: &DataTable, meta: &DatasetMetadata) -> Result<Vec<Option<f64>>, CausalError> {
    let col = table.column(&meta.outcome_column)?;
    if col.dtype() == Dtype::Categorical {
        return Err(CausalError::UnsupportedOutcome(meta.outcome_column.clone()));
    }
    Ok((0..table.row_count()).map(|r| col.get_f64(r)).collect())
}

/// Rows, action codes and outcomes ready for estimation.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub binning: ActionBinning,
    pub action: Vec<Option<usize>>,
    pub y: Vec<f64>,
    /// Rows with both an action level and an outcome.
    pub rows: Vec<usize>,
}

impl Prepared {
    pub fn new(table: &DataTable, meta: &DatasetMetadata) -> Result<Self, CausalError> {
        if table.row_count() == 0 {
            return Err(CausalError::EmptyTable);
        }
        let binning = ActionBinning::fit(table, meta)?;
        let action = binning.codes(table, meta)?;
        let yo = outcome_values(table, meta)?;
        let rows: Vec<usize> = (0..table.row_count())
            .filter(|&r| action[r].is_some() && yo[r].is_some())
            .collect();
        if rows.is_empty() {
            return Err(CausalError::EmptyTable);
        }
        let y = yo.into_iter().map(|v| v.unwrap_or(0.0)).collect();
        Ok(Prepared {
            binning,
            action,
            y,
            rows,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.binning.levels().len()
    }

    pub fn level_counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.n_levels()];
        for &r in rows {
            if let Some(a) = self.action[r] {
                counts[a] += 1;
            }
        }
        counts
    }

    pub fn mean_outcome(&self, rows: &[usize]) -> f64 {
        rows.iter().map(|&r| self.y[r]).sum::<f64>() / rows.len() as f64
    }
}

pub fn covariate_bins(
    table: &DataTable,
    meta: &DatasetMetadata,
    features: &[String],
) -> Result<Vec<CovariateBins>, CausalError> {
    features
        .iter()
        .map(|f| {
            if !meta.is_covariate(f) {
                return Err(CausalError::UnsupportedFeature(f.clone()));
            }
            CovariateBins::fit(table, f)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimateWarning {
    /// Only one action level is present; the curve is a single point.
    SingleActionLevel,
    /// Fewer rows than the recommended minimum matched the conditions.
    LowSupport { rows: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCurve {
    pub estimates: Vec<f64>,
    pub baseline: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub action_levels: Vec<ActionLevel>,
    /// Expected outcome per action level, in outcome units.
    pub estimates: Vec<f64>,
    /// Mean outcome over the analysed rows.
    pub baseline: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standard_errors: Option<Vec<f64>>,
    pub conditions: BTreeMap<String, Value>,
    pub n_per_level: Vec<usize>,
    pub features: Vec<String>,
    /// Unconditional curve at the same levels, for conditional estimates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceCurve>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<EstimateWarning>,
}

impl EffectEstimate {
    pub fn level_index(&self, label: &str) -> Option<usize> {
        self.action_levels.iter().position(|l| l.label == label)
    }

    /// estimates[a1] - estimates[a2], by level label.
    pub fn contrast(&self, a1: &str, a2: &str) -> Option<f64> {
        Some(self.estimates[self.level_index(a1)?] - self.estimates[self.level_index(a2)?])
    }

    /// Slope between the lowest and highest action level, per unit of the
    /// level value.
    pub fn contrast_per_unit(&self) -> Option<f64> {
        let (first, last) = (self.action_levels.first()?, self.action_levels.last()?);
        let dx = last.value - first.value;
        (self.estimates.len() >= 2 && dx != 0.0)
            .then(|| (self.estimates[self.estimates.len() - 1] - self.estimates[0]) / dx)
    }

    /// The level with the highest expected outcome.
    pub fn best_level(&self) -> Option<&ActionLevel> {
        self.estimates
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| &self.action_levels[i])
    }

    pub fn to_chart(&self, meta: &DatasetMetadata) -> ChartSpec {
        let x: Vec<AxisValue> = self
            .action_levels
            .iter()
            .map(|l| AxisValue::Text(l.label.clone()))
            .collect();
        let mut series = Vec::new();
        let title;
        if let Some(reference) = &self.reference {
            series.push(Series {
                label: "average".into(),
                x: x.clone(),
                y: reference.estimates.clone(),
                y_error: None,
            });
            let cond = self
                .conditions
                .iter()
                .map(|(k, v)| format!("{k} = {v}"))
                .collect::<Vec<_>>()
                .join(", ");
            series.push(Series {
                label: format!("conditioned ({cond})"),
                x,
                y: self.estimates.clone(),
                y_error: self.standard_errors.clone(),
            });
            title = format!(
                "{} by {} given {cond}",
                meta.outcome_column, meta.action_column
            );
        } else {
            series.push(Series {
                label: "average".into(),
                x,
                y: self.estimates.clone(),
                y_error: self.standard_errors.clone(),
            });
            title = format!("{} by {}", meta.outcome_column, meta.action_column);
        }
        ChartSpec::Line {
            title,
            x_label: meta.action_column.clone(),
            y_label: meta.outcome_column.clone(),
            series,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectOptions {
    pub show_error: bool,
    pub seed: u64,
    pub resamples: usize,
}

impl Default for EffectOptions {
    fn default() -> Self {
        EffectOptions {
            show_error: false,
            seed: 0,
            resamples: BOOTSTRAP_RESAMPLES,
        }
    }
}

impl EffectOptions {
    pub fn with_error(seed: u64) -> Self {
        EffectOptions {
            show_error: true,
            seed,
            ..Self::default()
        }
    }
}

/// Average effect of the action on the outcome, adjusted for `features`.
pub fn effect_curve(
    table: &DataTable,
    meta: &DatasetMetadata,
    features: &[String],
    opts: &EffectOptions,
) -> Result<EffectEstimate, CausalError> {
    let prep = Prepared::new(table, meta)?;
    let bins = covariate_bins(table, meta, features)?;
    let strata = strata_ids(table, &bins)?;
    Ok(estimate_on_rows(
        &prep,
        &strata,
        &prep.rows,
        features,
        opts,
        BTreeMap::new(),
    ))
}

fn estimate_on_rows(
    prep: &Prepared,
    strata: &[u32],
    rows: &[usize],
    features: &[String],
    opts: &EffectOptions,
    conditions: BTreeMap<String, Value>,
) -> EffectEstimate {
    let n_levels = prep.n_levels();
    let means = standardized_means(rows, &prep.action, n_levels, strata, &prep.y);
    let counts = prep.level_counts(rows);
    let kept: Vec<usize> = (0..n_levels).filter(|&a| counts[a] > 0).collect();

    let standard_errors = opts.show_error.then(|| {
        let draws = bootstrap_draws(prep, strata, rows, opts);
        kept.iter()
            .map(|&a| {
                let xs: Vec<f64> = draws.iter().filter_map(|d| d[a]).collect();
                sample_std(&xs)
            })
            .collect()
    });

    let mut warnings = Vec::new();
    if kept.len() == 1 {
        warnings.push(EstimateWarning::SingleActionLevel);
    }
    EffectEstimate {
        action_levels: kept.iter().map(|&a| prep.binning.levels()[a].clone()).collect(),
        estimates: kept.iter().map(|&a| means[a].expect("supported level")).collect(),
        baseline: prep.mean_outcome(rows),
        standard_errors,
        conditions,
        n_per_level: kept.iter().map(|&a| counts[a]).collect(),
        features: features.to_vec(),
        reference: None,
        warnings,
    }
}

/// Seeded bootstrap resamples of the standardized means; resample `b`
/// draws from its own ChaCha stream so results do not depend on scheduling.
fn bootstrap_draws(
    prep: &Prepared,
    strata: &[u32],
    rows: &[usize],
    opts: &EffectOptions,
) -> Vec<Vec<Option<f64>>> {
    let n_levels = prep.n_levels();
    (0..opts.resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(b as u64 + 1);
            let sample: Vec<usize> = (0..rows.len())
                .map(|_| rows[rng.random_range(0..rows.len())])
                .collect();
            standardized_means(&sample, &prep.action, n_levels, strata, &prep.y)
        })
        .collect()
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    var.sqrt()
}

/// Rows satisfying every condition. Numeric conditions match cells within
/// half the width of the quantile bin holding the requested value.
pub fn matching_rows(
    table: &DataTable,
    meta: &DatasetMetadata,
    conditions: &BTreeMap<String, Value>,
) -> Result<Vec<usize>, CausalError> {
    let mut mask = vec![true; table.row_count()];
    for (column, wanted) in conditions {
        let spec = meta
            .column(column)
            .ok_or_else(|| DatasetError::UnknownColumn(column.clone()))?;
        let col = table.column(column)?;
        let bad = || CausalError::BadConditionValue {
            column: column.clone(),
            value: wanted.to_string(),
        };
        match spec.dtype {
            Dtype::Numeric => {
                let x = wanted.as_f64().ok_or_else(bad)?;
                let bins = CovariateBins::fit(table, column)?;
                match bins.match_tolerance(x) {
                    None => mask.iter_mut().for_each(|m| *m = false),
                    Some(tol) => {
                        let tol = tol + 1e-9 * x.abs().max(1.0);
                        for (r, m) in mask.iter_mut().enumerate() {
                            *m &= col.get_f64(r).is_some_and(|c| (c - x).abs() <= tol);
                        }
                    }
                }
            }
            Dtype::Categorical => {
                let w = wanted.to_string();
                let w = w.trim();
                for (r, m) in mask.iter_mut().enumerate() {
                    *m &= matches!(col.get(r), Some(Value::Text(s)) if s.trim().eq_ignore_ascii_case(w));
                }
            }
            Dtype::Boolean => {
                let b = match wanted {
                    Value::Bool(b) => *b,
                    other => crate::dataset::parse_bool(&other.to_string()).ok_or_else(bad)?,
                };
                for (r, m) in mask.iter_mut().enumerate() {
                    *m &= col.get(r) == Some(Value::Bool(b));
                }
            }
        }
    }
    Ok((0..table.row_count()).filter(|&r| mask[r]).collect())
}

/// Effect curve restricted to rows satisfying `conditions`, carrying the
/// unconditional curve at the same levels as a reference.
pub fn conditional_effect(
    table: &DataTable,
    meta: &DatasetMetadata,
    conditions: &BTreeMap<String, Value>,
    features: &[String],
    opts: &EffectOptions,
) -> Result<EffectEstimate, CausalError> {
    if conditions.is_empty() {
        return effect_curve(table, meta, features, opts);
    }
    let prep = Prepared::new(table, meta)?;
    let matched = matching_rows(table, meta, conditions)?;
    let in_subset: Vec<bool> = {
        let mut m = vec![false; table.row_count()];
        for &r in &matched {
            m[r] = true;
        }
        m
    };
    let rows: Vec<usize> = prep.rows.iter().copied().filter(|&r| in_subset[r]).collect();
    if rows.len() < MIN_SUPPORT_ERROR {
        return Err(CausalError::NoMatchingRows {
            matched: rows.len(),
        });
    }
    let bins = covariate_bins(table, meta, features)?;
    let strata = strata_ids(table, &bins)?;
    let mut est = estimate_on_rows(&prep, &strata, &rows, features, opts, conditions.clone());
    if rows.len() < MIN_SUPPORT_WARN {
        est.warnings.push(EstimateWarning::LowSupport { rows: rows.len() });
    }
    let full = standardized_means(&prep.rows, &prep.action, prep.n_levels(), &strata, &prep.y);
    let reference = est
        .action_levels
        .iter()
        .map(|lvl| {
            let a = prep
                .binning
                .levels()
                .iter()
                .position(|l| l.label == lvl.label)
                .expect("level from same binning");
            full[a].expect("level supported in full table")
        })
        .collect();
    est.reference = Some(ReferenceCurve {
        estimates: reference,
        baseline: prep.mean_outcome(&prep.rows),
    });
    Ok(est)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    /// Fraction of rows per action level, in level order.
    pub action_distribution: IndexMap<String, f64>,
    /// Mean outcome.
    pub kpi: f64,
    pub n: usize,
}

impl PolicySnapshot {
    pub fn to_chart(&self, meta: &DatasetMetadata) -> ChartSpec {
        ChartSpec::Bar {
            title: format!("Current {} policy", meta.action_column),
            x_label: meta.action_column.clone(),
            y_label: "fraction of rows".into(),
            series: vec![Series {
                label: "current".into(),
                x: self
                    .action_distribution
                    .keys()
                    .map(|k| AxisValue::Text(k.clone()))
                    .collect(),
                y: self.action_distribution.values().copied().collect(),
                y_error: None,
            }],
        }
    }
}

/// Histogram of the historical action plus the mean outcome.
pub fn current_policy(table: &DataTable, meta: &DatasetMetadata) -> Result<PolicySnapshot, CausalError> {
    let prep = Prepared::new(table, meta)?;
    let counts = prep.level_counts(&prep.rows);
    let n = prep.rows.len();
    let action_distribution = prep
        .binning
        .levels()
        .iter()
        .zip(&counts)
        .filter(|(_, &c)| c > 0)
        .map(|(l, &c)| (l.label.clone(), c as f64 / n as f64))
        .collect();
    Ok(PolicySnapshot {
        action_distribution,
        kpi: prep.mean_outcome(&prep.rows),
        n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub name: String,
    /// Reduction in cross-validated loss when the feature was added.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub feature_count: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureReport {
    pub ranked_features: Vec<RankedFeature>,
    pub selected: Vec<String>,
    pub cv_curve: Vec<CvPoint>,
    /// Loss of the action-only model.
    pub base_loss: f64,
}

impl FeatureReport {
    pub fn to_chart(&self) -> ChartSpec {
        ChartSpec::Line {
            title: "Cross-validated loss by number of features".into(),
            x_label: "features".into(),
            y_label: "loss".into(),
            series: vec![Series {
                label: "cv loss".into(),
                x: self
                    .cv_curve
                    .iter()
                    .map(|p| AxisValue::Number(p.feature_count as f64))
                    .collect(),
                y: self.cv_curve.iter().map(|p| p.loss).collect(),
                y_error: None,
            }],
        }
    }
}

/// K-fold cross-validated mean squared error (Brier score for a boolean
/// outcome) of the cell-mean model over (action level, strata).
pub fn cv_loss(prep: &Prepared, strata: &[u32], folds: &[usize], k: usize) -> f64 {
    let n_levels = prep.n_levels();
    let mut total = 0.0;
    for fold in 0..k {
        let mut cell: HashMap<(u32, usize), (f64, usize)> = HashMap::new();
        let mut by_level = vec![(0.0, 0usize); n_levels];
        let mut all = (0.0, 0usize);
        for (i, &r) in prep.rows.iter().enumerate() {
            if folds[i] == fold {
                continue;
            }
            let a = prep.action[r].expect("prepared row");
            let e = cell.entry((strata[r], a)).or_insert((0.0, 0));
            e.0 += prep.y[r];
            e.1 += 1;
            by_level[a].0 += prep.y[r];
            by_level[a].1 += 1;
            all.0 += prep.y[r];
            all.1 += 1;
        }
        for (i, &r) in prep.rows.iter().enumerate() {
            if folds[i] != fold {
                continue;
            }
            let a = prep.action[r].expect("prepared row");
            let pred = match cell.get(&(strata[r], a)) {
                Some(&(s, n)) => s / n as f64,
                None if by_level[a].1 > 0 => by_level[a].0 / by_level[a].1 as f64,
                None => all.0 / all.1.max(1) as f64,
            };
            total += (prep.y[r] - pred).powi(2);
        }
    }
    total / prep.rows.len() as f64
}

/// Seeded fold assignment, one entry per prepared row.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut folds = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        folds[i] = pos % k;
    }
    folds
}

/// Greedy forward covariate selection by K-fold cross-validated loss.
///
/// Every supported covariate is ranked; `selected` is the ranked prefix at
/// which the CV curve (including the action-only model) is minimal, ties
/// going to the shorter prefix. Equal losses tie-break on column name.
pub fn select_features(
    table: &DataTable,
    meta: &DatasetMetadata,
    folds: usize,
    seed: u64,
) -> Result<FeatureReport, CausalError> {
    if folds < 2 {
        return Err(CausalError::InvalidFolds(folds));
    }
    let mut candidates: Vec<String> = meta
        .covariate_names()
        .into_iter()
        .filter(|c| table.has_column(c))
        .collect();
    if candidates.is_empty() {
        return Err(CausalError::NoCovariates);
    }
    candidates.sort();
    let prep = Prepared::new(table, meta)?;
    if prep.rows.len() < 2 * folds {
        return Err(CausalError::TooFewRows {
            rows: prep.rows.len(),
            needed: 2 * folds,
        });
    }
    let fold_of = fold_assignment(prep.rows.len(), folds, seed);
    let codes: Vec<Vec<u32>> = candidates
        .iter()
        .map(|c| CovariateBins::fit(table, c)?.codes(table))
        .collect::<Result<_, _>>()?;

    let mut current = vec![0u32; table.row_count()];
    let base_loss = cv_loss(&prep, &current, &fold_of, folds);
    let mut prev = base_loss;
    let mut remaining: Vec<usize> = (0..candidates.len()).collect();
    let mut ranked = Vec::new();
    let mut curve = Vec::new();
    while !remaining.is_empty() {
        let scored: Vec<(usize, f64, Vec<u32>)> = remaining
            .par_iter()
            .map(|&c| {
                let refined = refine_strata(&current, &codes[c]);
                let loss = cv_loss(&prep, &refined, &fold_of, folds);
                (c, loss, refined)
            })
            .collect();
        let (best_pos, _) = scored
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                a.1.total_cmp(&b.1)
                    .then_with(|| candidates[a.0].cmp(&candidates[b.0]))
            })
            .expect("non-empty");
        let (c, loss, refined) = scored.into_iter().nth(best_pos).expect("in range");
        ranked.push(RankedFeature {
            name: candidates[c].clone(),
            score: prev - loss,
        });
        curve.push(CvPoint {
            feature_count: ranked.len(),
            loss,
        });
        remaining.retain(|&r| r != c);
        current = refined;
        prev = loss;
    }

    let min_loss = curve.iter().map(|p| p.loss).fold(base_loss, f64::min);
    let tol = 1e-12 * min_loss.abs().max(1.0);
    let keep = if base_loss <= min_loss + tol {
        0
    } else {
        curve
            .iter()
            .find(|p| p.loss <= min_loss + tol)
            .map(|p| p.feature_count)
            .unwrap_or(0)
    };
    let selected = ranked[..keep].iter().map(|f| f.name.clone()).collect();
    Ok(FeatureReport {
        ranked_features: ranked,
        selected,
        cv_curve: curve,
        base_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ColumnSpec;

    fn meta(covs: &[(&str, Dtype)]) -> DatasetMetadata {
        let mut columns = vec![
            ColumnSpec {
                name: "A".into(),
                dtype: Dtype::Numeric,
                description: "action".into(),
                supported: true,
            },
            ColumnSpec {
                name: "Y".into(),
                dtype: Dtype::Numeric,
                description: "outcome".into(),
                supported: true,
            },
        ];
        for (n, d) in covs {
            columns.push(ColumnSpec {
                name: n.to_string(),
                dtype: *d,
                description: "covariate".into(),
                supported: true,
            });
        }
        DatasetMetadata {
            title: "t".into(),
            path: "t.csv".into(),
            action_column: "A".into(),
            outcome_column: "Y".into(),
            columns,
            action_costs: None,
        }
    }

    fn num(v: &[f64]) -> ColumnData {
        ColumnData::Numeric(v.iter().map(|&x| Some(x)).collect())
    }

    #[test]
    fn noiseless_linear_action_no_covariates() {
        let a: Vec<f64> = (0..30).map(|i| (i % 3) as f64).collect();
        let y: Vec<f64> = a.iter().map(|x| 2.0 * x).collect();
        let t = DataTable::from_columns(vec![("A".into(), num(&a)), ("Y".into(), num(&y))]).unwrap();
        let est = effect_curve(&t, &meta(&[]), &[], &EffectOptions::default()).unwrap();
        assert_eq!(est.estimates, vec![0.0, 2.0, 4.0]);
        assert_eq!(est.contrast("2", "0"), Some(4.0));
        assert_eq!(est.n_per_level, vec![10, 10, 10]);
        assert!(est.standard_errors.is_none());
    }

    #[test]
    fn raw_means_without_features() {
        let a = [0.0, 0.0, 1.0, 1.0, 1.0, 2.0];
        let y = [1.0, 3.0, 0.5, 0.25, 0.75, 9.0];
        let t = DataTable::from_columns(vec![("A".into(), num(&a)), ("Y".into(), num(&y))]).unwrap();
        let est = effect_curve(&t, &meta(&[]), &[], &EffectOptions::default()).unwrap();
        assert_eq!(est.estimates, vec![2.0, 0.5, 9.0]);
    }

    #[test]
    fn single_level_is_flagged() {
        let t = DataTable::from_columns(vec![
            ("A".into(), num(&[1.0; 6])),
            ("Y".into(), num(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0])),
        ])
        .unwrap();
        let est = effect_curve(&t, &meta(&[]), &[], &EffectOptions::default()).unwrap();
        assert_eq!(est.estimates.len(), 1);
        assert_eq!(est.warnings, vec![EstimateWarning::SingleActionLevel]);
    }

    #[test]
    fn many_action_values_use_five_bins() {
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let t = DataTable::from_columns(vec![("A".into(), num(&a)), ("Y".into(), num(&a))]).unwrap();
        let est = effect_curve(&t, &meta(&[]), &[], &EffectOptions::default()).unwrap();
        assert_eq!(est.action_levels.len(), 5);
        assert_eq!(est.n_per_level.iter().sum::<usize>(), 100);
    }

    #[test]
    fn quantile_cut_codes() {
        let sorted: Vec<f64> = (1..=8).map(|i| i as f64).collect();
        let cuts = quantile_cuts(&sorted, 4);
        assert_eq!(cuts, vec![2.75, 4.5, 6.25]);
        assert_eq!(cut_code(&cuts, 2.75), 0);
        assert_eq!(cut_code(&cuts, 2.76), 1);
        assert_eq!(cut_code(&cuts, 8.0), 3);
    }

    #[test]
    fn conditions_empty_equals_effect_curve() {
        let a: Vec<f64> = (0..40).map(|i| (i % 2) as f64).collect();
        let x: Vec<f64> = (0..40).map(|i| (i % 5) as f64).collect();
        let y: Vec<f64> = a.iter().zip(&x).map(|(a, x)| a + x).collect();
        let t = DataTable::from_columns(vec![
            ("A".into(), num(&a)),
            ("Y".into(), num(&y)),
            ("X".into(), num(&x)),
        ])
        .unwrap();
        let m = meta(&[("X", Dtype::Numeric)]);
        let f = vec!["X".to_string()];
        let o = EffectOptions::default();
        assert_eq!(
            conditional_effect(&t, &m, &BTreeMap::new(), &f, &o).unwrap(),
            effect_curve(&t, &m, &f, &o).unwrap()
        );
        let out_of_range = BTreeMap::from([("X".to_string(), Value::Number(99.0))]);
        assert!(matches!(
            conditional_effect(&t, &m, &out_of_range, &f, &o),
            Err(CausalError::NoMatchingRows { matched: 0 })
        ));
        let unknown = BTreeMap::from([("Z".to_string(), Value::Number(1.0))]);
        assert!(matches!(
            conditional_effect(&t, &m, &unknown, &f, &o),
            Err(CausalError::Dataset(DatasetError::UnknownColumn(_)))
        ));
    }

    #[test]
    fn current_policy_snapshot() {
        let a: Vec<f64> = vec![0.0; 100];
        let y: Vec<f64> = (0..100).map(|i| if i < 8 { 1.0 } else { 0.0 }).collect();
        let t = DataTable::from_columns(vec![("A".into(), num(&a)), ("Y".into(), num(&y))]).unwrap();
        let snap = current_policy(&t, &meta(&[])).unwrap();
        assert_eq!(snap.kpi, 0.08);
        assert_eq!(snap.action_distribution.get("0"), Some(&1.0));
        assert_eq!(snap.n, 100);
        let ones = DataTable::from_columns(vec![("A".into(), num(&a)), ("Y".into(), num(&[1.0; 100]))]).unwrap();
        assert_eq!(current_policy(&ones, &meta(&[])).unwrap().kpi, 1.0);
    }

    #[test]
    fn selection_errors() {
        let t = DataTable::from_columns(vec![
            ("A".into(), num(&[0.0, 1.0, 0.0])),
            ("Y".into(), num(&[0.0, 1.0, 0.0])),
            ("X".into(), num(&[0.0, 1.0, 2.0])),
        ])
        .unwrap();
        assert!(matches!(
            select_features(&t, &meta(&[]), 2, 0),
            Err(CausalError::NoCovariates)
        ));
        assert!(matches!(
            select_features(&t, &meta(&[("X", Dtype::Numeric)]), 2, 0),
            Err(CausalError::TooFewRows { .. })
        ));
        assert!(matches!(
            select_features(&t, &meta(&[("X", Dtype::Numeric)]), 1, 0),
            Err(CausalError::InvalidFolds(1))
        ));
    }

    #[test]
    fn constant_outcome_selects_nothing() {
        let a: Vec<f64> = (0..40).map(|i| (i % 2) as f64).collect();
        let x: Vec<f64> = (0..40).map(|i| (i % 7) as f64).collect();
        let t = DataTable::from_columns(vec![
            ("A".into(), num(&a)),
            ("Y".into(), num(&[3.0; 40])),
            ("X".into(), num(&x)),
            ("W".into(), num(&x)),
        ])
        .unwrap();
        let r = select_features(&t, &meta(&[("X", Dtype::Numeric), ("W", Dtype::Numeric)]), 4, 1).unwrap();
        assert!(r.ranked_features.iter().all(|f| f.score == 0.0));
        assert!(r.selected.is_empty());
        // lexicographic tie-break
        assert_eq!(r.ranked_features[0].name, "W");
    }

    #[test]
    fn single_informative_covariate_is_selected() {
        let a: Vec<f64> = (0..60).map(|i| (i % 2) as f64).collect();
        let x: Vec<f64> = (0..60).map(|i| ((i / 2) % 3) as f64).collect();
        let y: Vec<f64> = a.iter().zip(&x).map(|(a, x)| a + 5.0 * x).collect();
        let t = DataTable::from_columns(vec![
            ("A".into(), num(&a)),
            ("Y".into(), num(&y)),
            ("X".into(), num(&x)),
        ])
        .unwrap();
        let r = select_features(&t, &meta(&[("X", Dtype::Numeric)]), 5, 3).unwrap();
        assert_eq!(r.ranked_features.len(), 1);
        assert_eq!(r.selected, vec!["X".to_string()]);
        assert_eq!(r.cv_curve.len(), 1);
    }

    #[test]
    fn refine_is_dense_first_occurrence() {
        assert_eq!(refine_strata(&[0, 0, 1, 1], &[5, 6, 5, 5]), vec![0, 1, 2, 2]);
    }
}
