//! The five prescriptive tools: names, aliases, parameters, and dispatch
//! into the causal and policy engines.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::causal::{
    conditional_effect, current_policy, effect_curve, matching_rows, select_features,
    CausalError, EffectEstimate, EffectOptions,
};
use crate::chart::{format_significant, ChartSpec};
use crate::dataset::{DataTable, DatasetMetadata, Dtype, Value};
use crate::policy::{learn_policy, render_tree, PolicyError};

pub const SHOW_CURRENT_POLICY: &str = "show_current_policy";
pub const SELECT_FEATURES: &str = "select_features";
pub const SHOW_CAUSAL_EFFECT: &str = "show_causal_effect";
pub const COUNTERFACTUAL: &str = "counterfactual";
pub const RUN_OPTIMIZE: &str = "run_optimize";

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    Integer,
    Number,
    Boolean,
    /// Column → value map taken from parameter memory.
    Conditions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub dtype: ParamType,
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnKind {
    Scalar,
    List,
    Chart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub aliases: Vec<String>,
    pub params: Vec<ParamSpec>,
    pub description: String,
    pub returns: Vec<ReturnKind>,
}

impl ToolSpec {
    pub fn required_params(&self) -> impl Iterator<Item = &ParamSpec> {
        self.params.iter().filter(|p| p.required)
    }

    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }
}

fn param(name: &str, dtype: ParamType, required: bool, default: Option<serde_json::Value>) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        dtype,
        required,
        default,
    }
}

pub fn registry() -> Vec<ToolSpec> {
    use ReturnKind::*;
    vec![
        ToolSpec {
            name: SHOW_CURRENT_POLICY.into(),
            aliases: vec!["show_base_policy".into()],
            params: vec![],
            description: "Shows what the current policy is and any relevant KPIs.".into(),
            returns: vec![Scalar, Chart],
        },
        ToolSpec {
            name: SELECT_FEATURES.into(),
            aliases: vec![],
            params: vec![],
            description: "Covariate selection tool that selects most the important features that affect the outcome.".into(),
            returns: vec![List, Chart],
        },
        ToolSpec {
            name: SHOW_CAUSAL_EFFECT.into(),
            aliases: vec![],
            params: vec![param(
                "show_error",
                ParamType::Boolean,
                false,
                Some(serde_json::Value::Bool(false)),
            )],
            description: "Plots how the action affects the outcome in the average case.".into(),
            returns: vec![Chart],
        },
        ToolSpec {
            name: COUNTERFACTUAL.into(),
            aliases: vec![],
            params: vec![param("conditions", ParamType::Conditions, true, None)],
            description: "Plots how the action affects the outcome under the provided conditions.".into(),
            returns: vec![Chart],
        },
        ToolSpec {
            name: RUN_OPTIMIZE.into(),
            aliases: vec!["run_opt".into()],
            params: vec![
                param("num_rules", ParamType::Integer, true, None),
                param("average_budget", ParamType::Number, true, None),
            ],
            description: "Produces the optimized KPI and policy through a prescriptive tree constrained by an average budget per row.".into(),
            returns: vec![Scalar, Chart],
        },
    ]
}

/// Resolve a canonical name or alias.
pub fn lookup(name: &str) -> Option<ToolSpec> {
    let name = name.trim();
    registry()
        .into_iter()
        .find(|t| t.name == name || t.aliases.iter().any(|a| a == name))
}

/// Tool-parameter names that are not dataset columns.
pub fn system_params() -> Vec<ParamSpec> {
    registry()
        .into_iter()
        .flat_map(|t| t.params)
        .filter(|p| p.dtype != ParamType::Conditions)
        .collect()
}

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("missing parameters: [{}]", .0.join(", "))]
    MissingParam(Vec<String>),
    #[error("parameter `{name}` must be {expected}")]
    BadParamType { name: String, expected: &'static str },
    #[error("{tool}: {source}")]
    Causal {
        tool: String,
        #[source]
        source: CausalError,
    },
    #[error("{tool}: {source}")]
    Policy {
        tool: String,
        #[source]
        source: PolicyError,
    },
    #[error("job aborted: {0}")]
    Aborted(String),
}

/// Arguments for one execution: scalar parameters plus the condition set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub params: BTreeMap<String, serde_json::Value>,
    pub conditions: BTreeMap<String, Value>,
}

/// Required parameters absent from `call`, in declaration order.
pub fn missing_params(spec: &ToolSpec, call: &ToolCall) -> Vec<String> {
    spec.required_params()
        .filter(|p| match p.dtype {
            ParamType::Conditions => call.conditions.is_empty(),
            _ => !call.params.contains_key(&p.name),
        })
        .map(|p| p.name.clone())
        .collect()
}

/// Checks that `value` fits the declared parameter type.
pub fn check_param(spec: &ParamSpec, value: &serde_json::Value) -> Result<(), ToolError> {
    let ok = match spec.dtype {
        ParamType::Integer => value
            .as_f64()
            .is_some_and(|x| x.fract() == 0.0 && x >= 1.0 && x.is_finite()),
        ParamType::Number => value.as_f64().is_some_and(|x| x.is_finite() && x >= 0.0),
        ParamType::Boolean => value.is_boolean(),
        ParamType::Conditions => value.is_object(),
    };
    if ok {
        Ok(())
    } else {
        Err(ToolError::BadParamType {
            name: spec.name.clone(),
            expected: match spec.dtype {
                ParamType::Integer => "a positive integer",
                ParamType::Number => "a non-negative number",
                ParamType::Boolean => "true or false",
                ParamType::Conditions => "a column/value map",
            },
        })
    }
}

/// Dataset and engine settings a tool runs against.
#[derive(Debug, Clone, Copy)]
pub struct ToolContext<'a> {
    pub table: &'a DataTable,
    pub meta: &'a DatasetMetadata,
    /// Covariates used for adjustment (the setup's selected features).
    pub features: &'a [String],
    pub seed: u64,
    pub folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub tool: String,
    pub params_used: BTreeMap<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub conditions_used: BTreeMap<String, Value>,
    pub scalars: IndexMap<String, f64>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub lists: IndexMap<String, Vec<String>>,
    /// Human-readable facts; the only text the reply may draw numbers from.
    pub text_summary: String,
    pub charts: Vec<ChartSpec>,
}

/// Outcome rendering: percentages with two decimals for a 0/1 outcome,
/// otherwise four significant digits.
pub fn format_outcome(x: f64, meta: &DatasetMetadata) -> String {
    if meta.outcome_spec().dtype == Dtype::Boolean {
        format!("{:.2}%", x * 100.0)
    } else {
        format_significant(x, 4)
    }
}

fn join_words(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

fn render_conditions(conditions: &BTreeMap<String, Value>) -> String {
    conditions
        .iter()
        .map(|(k, v)| format!("{k} = {v}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn effect_range(est: &EffectEstimate, meta: &DatasetMetadata) -> String {
    let (lo, hi) = est.estimates.iter().enumerate().fold((0, 0), |(lo, hi), (i, &x)| {
        (
            if x < est.estimates[lo] { i } else { lo },
            if x > est.estimates[hi] { i } else { hi },
        )
    });
    let a = &meta.action_column;
    if est.estimates.len() == 1 {
        return format!(
            "expected {} is {} at {a} = {} (the only observed level)",
            meta.outcome_column,
            format_outcome(est.estimates[0], meta),
            est.action_levels[0].label
        );
    }
    format!(
        "expected {} is highest at {a} = {} ({}) and lowest at {a} = {} ({})",
        meta.outcome_column,
        est.action_levels[hi].label,
        format_outcome(est.estimates[hi], meta),
        est.action_levels[lo].label,
        format_outcome(est.estimates[lo], meta),
    )
}

fn effect_scalars(est: &EffectEstimate) -> IndexMap<String, f64> {
    let mut scalars = IndexMap::new();
    if let Some(best) = est.best_level() {
        let i = est.level_index(&best.label).expect("level of estimate");
        scalars.insert("best_action".into(), best.value);
        scalars.insert("best_estimate".into(), est.estimates[i]);
    }
    scalars.insert("baseline".into(), est.baseline);
    scalars
}

fn param_f64(call: &ToolCall, spec: &ToolSpec, name: &str) -> Result<f64, ToolError> {
    let p = spec.param(name).expect("declared parameter");
    let v = call
        .params
        .get(name)
        .or(p.default.as_ref())
        .ok_or_else(|| ToolError::MissingParam(vec![name.to_string()]))?;
    check_param(p, v)?;
    Ok(v.as_f64().expect("checked number"))
}

/// Run `tool` (canonical name or alias) against the dataset.
pub fn execute(tool: &str, call: &ToolCall, ctx: &ToolContext) -> Result<ToolResult, ToolError> {
    let spec = lookup(tool).ok_or_else(|| ToolError::UnknownTool(tool.to_string()))?;
    let missing = missing_params(&spec, call);
    if !missing.is_empty() {
        return Err(ToolError::MissingParam(missing));
    }
    for (name, value) in &call.params {
        if let Some(p) = spec.param(name) {
            check_param(p, value)?;
        }
    }
    let name = spec.name.clone();
    let causal = |source| ToolError::Causal {
        tool: name.clone(),
        source,
    };
    let meta = ctx.meta;
    let mut params_used = BTreeMap::new();
    let mut conditions_used = BTreeMap::new();
    let mut scalars = IndexMap::new();
    let mut lists = IndexMap::new();
    let (text_summary, charts) = match spec.name.as_str() {
        SHOW_CURRENT_POLICY => {
            let snap = current_policy(ctx.table, meta).map_err(causal)?;
            scalars.insert("kpi".into(), snap.kpi);
            let (common, share) = snap
                .action_distribution
                .iter()
                .fold(("", 0.0), |acc, (k, &v)| if v > acc.1 { (k.as_str(), v) } else { acc });
            let text = format!(
                "the current {} is {} and the most common {} is {} ({:.2}% of rows)",
                meta.outcome_column,
                format_outcome(snap.kpi, meta),
                meta.action_column,
                common,
                share * 100.0
            );
            (text, vec![snap.to_chart(meta)])
        }
        SELECT_FEATURES => {
            let folds = if ctx.folds >= 2 { ctx.folds } else { DEFAULT_FOLDS };
            let report = select_features(ctx.table, meta, folds, ctx.seed).map_err(causal)?;
            let ranked: Vec<String> = report.ranked_features.iter().map(|f| f.name.clone()).collect();
            let text = if report.selected.is_empty() {
                format!(
                    "no covariate improves the cross-validated fit of {}; the highest ranked is {}",
                    meta.outcome_column,
                    ranked.first().cloned().unwrap_or_default()
                )
            } else {
                format!(
                    "the most important features are {}",
                    join_words(&report.selected)
                )
            };
            lists.insert("selected".into(), report.selected.clone());
            lists.insert("ranked".into(), ranked);
            (text, vec![report.to_chart()])
        }
        SHOW_CAUSAL_EFFECT => {
            let show_error = call
                .params
                .get("show_error")
                .and_then(|v| v.as_bool())
                .unwrap_or(false);
            params_used.insert("show_error".into(), serde_json::Value::Bool(show_error));
            let opts = EffectOptions {
                show_error,
                seed: ctx.seed,
                ..EffectOptions::default()
            };
            let est = effect_curve(ctx.table, meta, ctx.features, &opts).map_err(causal)?;
            scalars = effect_scalars(&est);
            (effect_range(&est, meta), vec![est.to_chart(meta)])
        }
        COUNTERFACTUAL => {
            conditions_used = call.conditions.clone();
            let opts = EffectOptions {
                seed: ctx.seed,
                ..EffectOptions::default()
            };
            let est = conditional_effect(ctx.table, meta, &call.conditions, ctx.features, &opts)
                .map_err(causal)?;
            scalars = effect_scalars(&est);
            if let Some(r) = &est.reference {
                scalars.insert("reference_baseline".into(), r.baseline);
            }
            let text = format!(
                "given {}, {}",
                render_conditions(&call.conditions),
                effect_range(&est, meta)
            );
            (text, vec![est.to_chart(meta)])
        }
        RUN_OPTIMIZE => {
            let num_rules = param_f64(call, &spec, "num_rules")? as usize;
            let budget = param_f64(call, &spec, "average_budget")?;
            params_used.insert("num_rules".into(), serde_json::json!(num_rules));
            params_used.insert("average_budget".into(), serde_json::json!(budget));
            let subset;
            let table = if call.conditions.is_empty() {
                ctx.table
            } else {
                conditions_used = call.conditions.clone();
                let rows = matching_rows(ctx.table, meta, &call.conditions).map_err(causal)?;
                subset = ctx.table.select_rows(&rows);
                &subset
            };
            let result = learn_policy(table, meta, ctx.features, num_rules, budget).map_err(|source| {
                ToolError::Policy {
                    tool: name.clone(),
                    source,
                }
            })?;
            scalars.insert("projected_kpi".into(), result.projected_kpi);
            scalars.insert("baseline_kpi".into(), result.baseline_kpi);
            scalars.insert("budget_used".into(), result.budget_used);
            let scope = if conditions_used.is_empty() {
                String::new()
            } else {
                format!(" for rows with {}", render_conditions(&conditions_used))
            };
            let text = format!(
                "the optimized policy{scope} projects {} of {} versus {} currently, using {} {} per row on average within a budget of {} across {} rules",
                meta.outcome_column,
                format_outcome(result.projected_kpi, meta),
                format_outcome(result.baseline_kpi, meta),
                format_significant(result.budget_used, 4),
                meta.action_column,
                format_significant(budget, 4),
                result.tree.num_rules,
            );
            (text, vec![result.distribution_chart(), render_tree(&result.tree)])
        }
        _ => unreachable!("registry names are exhaustive"),
    };
    Ok(ToolResult {
        tool: spec.name,
        params_used,
        conditions_used,
        scalars,
        lists,
        text_summary,
        charts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exactly_five_tools_with_aliases() {
        let r = registry();
        assert_eq!(r.len(), 5);
        assert_eq!(lookup("run_opt").unwrap().name, RUN_OPTIMIZE);
        assert_eq!(lookup("show_base_policy").unwrap().name, SHOW_CURRENT_POLICY);
        assert!(lookup("fly_to_moon").is_none());
        for t in &r {
            assert_eq!(lookup(&t.name).unwrap().name, t.name);
            for p in &t.params {
                assert!(!(p.required && p.default.is_some()));
            }
        }
    }

    #[test]
    fn missing_lists_follow_declaration_order() {
        let spec = lookup(RUN_OPTIMIZE).unwrap();
        assert_eq!(
            missing_params(&spec, &ToolCall::default()),
            vec!["num_rules", "average_budget"]
        );
        let mut call = ToolCall::default();
        call.params.insert("average_budget".into(), serde_json::json!(3.5));
        assert_eq!(missing_params(&spec, &call), vec!["num_rules"]);
        let cf = lookup(COUNTERFACTUAL).unwrap();
        assert_eq!(missing_params(&cf, &ToolCall::default()), vec!["conditions"]);
    }

    #[test]
    fn param_type_checks() {
        let spec = lookup(RUN_OPTIMIZE).unwrap();
        let rules = spec.param("num_rules").unwrap();
        assert!(check_param(rules, &serde_json::json!(4)).is_ok());
        assert!(check_param(rules, &serde_json::json!(4.5)).is_err());
        assert!(check_param(rules, &serde_json::json!("four")).is_err());
        let budget = spec.param("average_budget").unwrap();
        assert!(check_param(budget, &serde_json::json!(3.5)).is_ok());
    }

    #[test]
    fn word_joining() {
        assert_eq!(join_words(&["a".into()]), "a");
        assert_eq!(join_words(&["a".into(), "b".into(), "c".into()]), "a, b and c");
    }
}
