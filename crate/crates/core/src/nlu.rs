//! Intent classification and parameter extraction.
//!
//! Strategies produce raw strings as a model would; every raw output passes
//! through a gate here: intents are mapped into the closed label set and
//! parameter values must parse under the extractor's dtype or become absent.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{parse_bool, parse_number, ColumnSpec, DatasetMetadata, Dtype, Value};
use crate::llm::{ChatMessage, ChatProvider, ChatRole, LlmError, Sampling};
use crate::par::*;

pub const DEFAULT_THRESHOLD: f64 = 0.35;
pub const DEFAULT_K_EXAMPLES: usize = 16;

pub const NUM_RULES: &str = "num_rules";
pub const AVERAGE_BUDGET: &str = "average_budget";
pub const SHOW_ERROR: &str = "show_error";

pub const INTENT_INSTRUCTION: &str = "Classify command as one of following API calls.
If none can be matched, just output unknown.
'select_features' cross validation plot of the causally relevant features
'show_causal_effect' shows the causal effect conditioned on given features.
'run_opt' produces the optimized pricing policy for given conditions.
'show_current_policy' shows the historical policy for given conditions.
'counterfactual' predicts the counterfactual outcome when columns are fixed.

If the intent is unclear, output `unknown'";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentLabel {
    SelectFeatures,
    ShowCausalEffect,
    RunOptimize,
    ShowCurrentPolicy,
    Counterfactual,
    Unknown,
}

impl IntentLabel {
    pub const ALL: [IntentLabel; 6] = [
        IntentLabel::SelectFeatures,
        IntentLabel::ShowCausalEffect,
        IntentLabel::RunOptimize,
        IntentLabel::ShowCurrentPolicy,
        IntentLabel::Counterfactual,
        IntentLabel::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IntentLabel::SelectFeatures => "select_features",
            IntentLabel::ShowCausalEffect => "show_causal_effect",
            IntentLabel::RunOptimize => "run_optimize",
            IntentLabel::ShowCurrentPolicy => "show_current_policy",
            IntentLabel::Counterfactual => "counterfactual",
            IntentLabel::Unknown => "unknown",
        }
    }

    /// The tool this intent dispatches to.
    pub fn tool(self) -> Option<&'static str> {
        (self != IntentLabel::Unknown).then(|| self.as_str())
    }

    /// Closed-set gate: anything that is not a label or tool alias is
    /// `Unknown`. Only the first line of the raw text is considered.
    pub fn parse(raw: &str) -> IntentLabel {
        let first = raw.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
        let cleaned = first
            .trim()
            .trim_matches(|c: char| !c.is_ascii_alphanumeric() && c != '_')
            .to_ascii_lowercase();
        let cleaned = cleaned.strip_prefix("intent:").map(str::trim).unwrap_or(&cleaned);
        match crate::tools::lookup(cleaned) {
            Some(spec) => IntentLabel::ALL
                .into_iter()
                .find(|l| l.as_str() == spec.name)
                .unwrap_or(IntentLabel::Unknown),
            None => IntentLabel::Unknown,
        }
    }
}

impl std::fmt::Display for IntentLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Prompt-facing sentinel for "no value".
pub fn null_default(dtype: Dtype) -> &'static str {
    match dtype {
        Dtype::Numeric => "-1",
        Dtype::Categorical | Dtype::Boolean => "Unknown",
    }
}

/// Instruction text for a column or system-parameter extractor.
pub fn render_instruction(param: &str, dtype: Dtype, description: &str) -> String {
    format!(
        "From each command given, extract out the value of \"{param}\" if specified.\n\
         Only output values corresponding to the datatype {}.\n\
         If none is given or you are not sure, output {}.\n\
         \n\
         {param} description:\n\
         {description}",
        dtype.as_str(),
        null_default(dtype)
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorSpec {
    pub param: String,
    pub dtype: Dtype,
    pub description: String,
    pub null_default: String,
    pub init_text: String,
    /// Admissible categorical values; empty means unrestricted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<String>,
    /// Numeric "lower-upper" pair output.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub range: bool,
}

impl ExtractorSpec {
    pub fn new(param: &str, dtype: Dtype, description: &str) -> Self {
        ExtractorSpec {
            param: param.to_string(),
            dtype,
            description: description.to_string(),
            null_default: null_default(dtype).to_string(),
            init_text: render_instruction(param, dtype, description),
            values: Vec::new(),
            range: false,
        }
    }

    pub fn for_column(col: &ColumnSpec, values: Vec<String>) -> Self {
        let mut spec = Self::new(&col.name, col.dtype, &col.description);
        if col.dtype == Dtype::Categorical {
            spec.values = values;
        }
        spec
    }

    pub fn is_system(&self) -> bool {
        matches!(self.param.as_str(), NUM_RULES | AVERAGE_BUDGET | SHOW_ERROR)
    }
}

pub fn system_param_specs() -> Vec<ExtractorSpec> {
    vec![
        ExtractorSpec::new(
            NUM_RULES,
            Dtype::Numeric,
            "Number of rules (leaf segments) in the optimized policy tree.",
        ),
        ExtractorSpec::new(
            AVERAGE_BUDGET,
            Dtype::Numeric,
            "Average budget per row: the mean action cost the optimized policy may spend per row.",
        ),
        ExtractorSpec::new(
            SHOW_ERROR,
            Dtype::Boolean,
            "Whether to draw error bars on the causal effect plot.",
        ),
    ]
}

/// Column extractors for `columns` (in order) followed by the system
/// parameters. Categorical columns are restricted to `values[column]`.
pub fn extractor_specs(
    meta: &DatasetMetadata,
    columns: &[String],
    values: &BTreeMap<String, Vec<String>>,
) -> Vec<ExtractorSpec> {
    let mut specs: Vec<ExtractorSpec> = columns
        .iter()
        .filter_map(|c| meta.column(c))
        .map(|c| ExtractorSpec::for_column(c, values.get(&c.name).cloned().unwrap_or_default()))
        .collect();
    specs.extend(system_param_specs());
    specs
}

/// An extracted parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Slot {
    Range {
        lower: Option<f64>,
        upper: Option<f64>,
    },
    Value(Value),
}

impl Slot {
    pub fn value(&self) -> Option<&Value> {
        match self {
            Slot::Value(v) => Some(v),
            Slot::Range { .. } => None,
        }
    }

    /// Canonical literal used for exact-match scoring.
    pub fn canonical(&self) -> String {
        match self {
            Slot::Value(v) => v.canonical(),
            Slot::Range { lower, upper } => {
                let side = |x: &Option<f64>| x.map(|v| Value::Number(v).canonical()).unwrap_or_else(|| "Unknown".into());
                format!("{}-{}", side(lower), side(upper))
            }
        }
    }
}

fn is_absent_literal(s: &str, spec: &ExtractorSpec) -> bool {
    let l = s.to_ascii_lowercase();
    s.is_empty()
        || s == spec.null_default
        || matches!(l.as_str(), "unknown" | "none" | "null" | "n/a" | "na")
}

fn gate_number(s: &str) -> Option<f64> {
    parse_number(s.trim().trim_start_matches('$')).filter(|x| x.is_finite())
}

/// Dtype gate applied to every raw strategy output.
pub fn gate(raw: &str, spec: &ExtractorSpec) -> Option<Slot> {
    let first = raw.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let s = first.trim().trim_matches(|c| c == '"' || c == '\'' || c == '`').trim();
    if is_absent_literal(s, spec) {
        return None;
    }
    match spec.dtype {
        Dtype::Numeric if spec.range => {
            let (lo, hi) = s.rsplit_once('-').filter(|(lo, _)| !lo.is_empty())?;
            let side = |t: &str| -> Result<Option<f64>, ()> {
                if is_absent_literal(t.trim(), spec) {
                    Ok(None)
                } else {
                    gate_number(t).map(Some).ok_or(())
                }
            };
            let (lower, upper) = (side(lo).ok()?, side(hi).ok()?);
            (lower.is_some() || upper.is_some()).then_some(Slot::Range { lower, upper })
        }
        Dtype::Numeric => gate_number(s).map(|x| Slot::Value(Value::Number(x))),
        Dtype::Boolean => parse_bool(s).map(|b| Slot::Value(Value::Bool(b))),
        Dtype::Categorical => {
            if spec.values.is_empty() {
                Some(Slot::Value(Value::Text(s.to_string())))
            } else {
                spec.values
                    .iter()
                    .find(|v| v.eq_ignore_ascii_case(s))
                    .map(|v| Slot::Value(Value::Text(v.clone())))
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum NluError {
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(#[from] LlmError),
}

/// A source of raw intent and parameter strings.
pub trait NluStrategy: Send + Sync {
    fn label(&self) -> String;
    fn raw_intent(&self, query: &str) -> Result<String, NluError>;
    fn raw_param(&self, query: &str, spec: &ExtractorSpec) -> Result<String, NluError>;
}

pub fn classify_intent(query: &str, strategy: &dyn NluStrategy) -> Result<IntentLabel, NluError> {
    if query.trim().is_empty() {
        return Ok(IntentLabel::Unknown);
    }
    Ok(IntentLabel::parse(&strategy.raw_intent(query)?))
}

pub fn extract_param(
    query: &str,
    spec: &ExtractorSpec,
    strategy: &dyn NluStrategy,
) -> Result<Option<Slot>, NluError> {
    if query.trim().is_empty() {
        return Ok(None);
    }
    Ok(gate(&strategy.raw_param(query, spec)?, spec))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub values: BTreeMap<String, Option<Slot>>,
    /// Wall-clock seconds per extractor.
    pub latencies: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub errors: BTreeMap<String, String>,
}

impl Extraction {
    pub fn present(&self) -> impl Iterator<Item = (&String, &Slot)> {
        self.values.iter().filter_map(|(k, v)| v.as_ref().map(|v| (k, v)))
    }

    pub fn get(&self, param: &str) -> Option<&Slot> {
        self.values.get(param).and_then(Option::as_ref)
    }
}

/// Runs every extractor independently; provider failures leave the entry
/// absent and are reported in `errors`.
pub fn extract_all(query: &str, specs: &[ExtractorSpec], strategy: &dyn NluStrategy) -> Extraction {
    let results: Vec<(String, Result<Option<Slot>, NluError>, f64)> = specs
        .par_iter()
        .map(|spec| {
            let start = Instant::now();
            let r = extract_param(query, spec, strategy);
            (spec.param.clone(), r, start.elapsed().as_secs_f64())
        })
        .collect();
    let mut out = Extraction::default();
    for (param, r, secs) in results {
        out.latencies.insert(param.clone(), secs);
        match r {
            Ok(v) => {
                out.values.insert(param, v);
            }
            Err(e) => {
                out.values.insert(param.clone(), None);
                out.errors.insert(param, e.to_string());
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptLabels {
    pub intent: IntentLabel,
    pub params: BTreeMap<String, Option<Value>>,
}

/// One (query, multilabel) entry of the prompt database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSample {
    pub query: String,
    pub labels: PromptLabels,
}

pub fn read_prompt_db(text: &str) -> Result<Vec<PromptSample>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

pub fn write_prompt_db(db: &[PromptSample]) -> String {
    db.iter()
        .map(|s| serde_json::to_string(s).expect("serializable sample") + "\n")
        .collect()
}

/// Synonym lexicon: canonical word and the alternatives folded into it.
pub const SYNONYMS: &[(&str, &[&str])] = &[
    ("show", &["display", "visualize"]),
    ("best", &["optimal", "top"]),
    ("important", &["relevant", "significant", "influential"]),
    ("feature", &["variable", "covariate", "factor"]),
    ("affect", &["impact", "influence"]),
    ("affected", &["impacted", "influenced"]),
    ("policy", &["strategy", "plan"]),
    ("optimize", &["optimise", "improve"]),
    ("current", &["existing"]),
    ("customer", &["client"]),
    ("what", &["which"]),
];

/// Words carrying no intent signal (politeness, articles, pronouns).
pub const STOPWORDS: &[&str] = &[
    "a", "an", "the", "please", "pls", "plz", "kindly", "could", "can", "would", "will", "you",
    "me", "my", "i", "we", "our", "us", "thanks", "thank", "just", "quickly", "now",
];

fn stem(word: &str) -> String {
    let w = word.trim_end_matches("'s");
    if w.len() > 4 && w.ends_with("ies") {
        return format!("{}y", &w[..w.len() - 3]);
    }
    if w.len() > 5 && w.ends_with("ing") {
        return w[..w.len() - 3].to_string();
    }
    if w.len() > 3 && w.ends_with('s') && !w.ends_with("ss") {
        return w[..w.len() - 1].to_string();
    }
    w.to_string()
}

/// Token normalizer shared by the matcher: masks column names, numbers and
/// category values, drops stopwords and folds synonyms.
#[derive(Debug, Clone)]
pub struct Normalizer {
    action: String,
    outcome: String,
    columns: BTreeSet<String>,
    values: BTreeSet<String>,
    phrases: Vec<(String, String)>,
    synonyms: HashMap<String, String>,
    token: Regex,
}

impl Normalizer {
    pub fn new(meta: &DatasetMetadata, categorical_values: &[String]) -> Self {
        let columns: BTreeSet<String> = meta.columns.iter().map(|c| c.name.to_lowercase()).collect();
        let values: BTreeSet<String> = categorical_values.iter().map(|v| v.to_lowercase()).collect();
        let mut phrases: Vec<(String, String)> = columns
            .iter()
            .chain(values.iter())
            .filter(|s| s.contains(' '))
            .map(|s| (s.clone(), s.replace(' ', "_")))
            .collect();
        phrases.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
        let mut synonyms = HashMap::new();
        for (canon, alts) in SYNONYMS {
            for a in *alts {
                synonyms.insert(a.to_string(), canon.to_string());
            }
        }
        Normalizer {
            action: meta.action_column.to_lowercase(),
            outcome: meta.outcome_column.to_lowercase(),
            columns,
            values,
            phrases,
            synonyms,
            token: Regex::new(r"[\p{L}\p{N}_.\-']+").expect("token regex"),
        }
    }

    fn known(&self, t: &str) -> Option<String> {
        let t_us = t.replace('_', " ");
        if t == self.action || t_us == self.action {
            Some("<action>".into())
        } else if t == self.outcome || t_us == self.outcome {
            Some("<outcome>".into())
        } else if self.columns.contains(t) || self.columns.contains(&t_us) {
            Some("<col>".into())
        } else if self.values.contains(t) || self.values.contains(&t_us) {
            Some("<val>".into())
        } else {
            None
        }
    }

    pub fn tokens(&self, query: &str) -> BTreeSet<String> {
        let mut q = query.to_lowercase();
        for (phrase, joined) in &self.phrases {
            q = q.replace(phrase.as_str(), joined);
        }
        let mut out = BTreeSet::new();
        for m in self.token.find_iter(&q) {
            let raw = m.as_str();
            let tok = self.known(raw).or_else(|| {
                let t = raw.trim_matches(|c| c == '.' || c == '-' || c == '\'');
                if t.is_empty() {
                    return Some(String::new());
                }
                if let Some(k) = self.known(t) {
                    return Some(k);
                }
                if parse_number(t).is_some() {
                    return Some("<num>".into());
                }
                if STOPWORDS.contains(&t) {
                    return Some(String::new());
                }
                let canon = self.synonyms.get(t).cloned().unwrap_or_else(|| t.to_string());
                Some(stem(&canon))
            });
            if let Some(t) = tok.filter(|t| !t.is_empty()) {
                out.insert(t);
            }
        }
        out
    }
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> (f64, usize) {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        (0.0, 0)
    } else {
        (inter as f64 / union as f64, inter)
    }
}

const COMMON_WORDS: &[&str] = &[
    "yes", "no", "unknown", "other", "none", "true", "false", "nonexistent", "success", "failure",
];

/// Offline matcher: nearest prompt-database entry by token overlap for the
/// intent, pattern rules for parameters.
pub struct DeterministicStrategy {
    normalizer: Normalizer,
    entries: Vec<(BTreeSet<String>, IntentLabel)>,
    threshold: f64,
    column_patterns: HashMap<String, Regex>,
    bare_values: HashMap<String, Vec<(Regex, String)>>,
    num_rules: Vec<Regex>,
    budget: Vec<Regex>,
    error_on: Regex,
    error_off: Regex,
}

impl DeterministicStrategy {
    pub fn new(db: &[PromptSample], meta: &DatasetMetadata, specs: &[ExtractorSpec]) -> Self {
        Self::with_threshold(db, meta, specs, DEFAULT_THRESHOLD)
    }

    pub fn with_threshold(
        db: &[PromptSample],
        meta: &DatasetMetadata,
        specs: &[ExtractorSpec],
        threshold: f64,
    ) -> Self {
        let all_values: Vec<String> = specs.iter().flat_map(|s| s.values.iter().cloned()).collect();
        let normalizer = Normalizer::new(meta, &all_values);
        let entries = db
            .iter()
            .map(|s| (normalizer.tokens(&s.query), s.labels.intent))
            .collect();

        let fillers = r"(?:(?:is|are|equals?|equal\s+to|being|was|be|set\s+to|to|of|at|as)\s+)*";
        let mut column_patterns = HashMap::new();
        for spec in specs.iter().filter(|s| !s.is_system()) {
            let lit = match spec.dtype {
                Dtype::Numeric => r"-?\d+(?:\.\d+)?".to_string(),
                Dtype::Boolean => "true|false|yes|no".to_string(),
                Dtype::Categorical if !spec.values.is_empty() => {
                    let mut vals: Vec<&String> = spec.values.iter().collect();
                    vals.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
                    vals.iter().map(|v| regex::escape(v)).collect::<Vec<_>>().join("|")
                }
                Dtype::Categorical => r"[\p{L}\p{N}_.\-]+".to_string(),
            };
            let pattern = format!(
                r"(?i)(?:^|[^\p{{L}}\p{{N}}_.]){}(?:\s*[=:]\s*|\s+){fillers}(?P<lit>{lit})(?:$|[^\p{{L}}\p{{N}}_])",
                regex::escape(&spec.param)
            );
            column_patterns.insert(spec.param.clone(), Regex::new(&pattern).expect("column regex"));
        }

        let mut owners: HashMap<String, Vec<&str>> = HashMap::new();
        for spec in specs.iter().filter(|s| s.dtype == Dtype::Categorical) {
            for v in &spec.values {
                owners.entry(v.to_lowercase()).or_default().push(&spec.param);
            }
        }
        let mut bare_values: HashMap<String, Vec<(Regex, String)>> = HashMap::new();
        for spec in specs.iter().filter(|s| s.dtype == Dtype::Categorical) {
            for v in &spec.values {
                let l = v.to_lowercase();
                let trimmed = l.trim_matches(|c: char| !c.is_alphanumeric());
                if trimmed.len() < 3 || COMMON_WORDS.contains(&trimmed) || owners[&l].len() != 1 {
                    continue;
                }
                let re = Regex::new(&format!(
                    r"(?i)(?:^|[^\p{{L}}\p{{N}}_]){}(?:$|[^\p{{L}}\p{{N}}_])",
                    regex::escape(v)
                ))
                .expect("value regex");
                bare_values.entry(spec.param.clone()).or_default().push((re, v.clone()));
            }
        }

        DeterministicStrategy {
            normalizer,
            entries,
            threshold,
            column_patterns,
            bare_values,
            num_rules: vec![
                Regex::new(r"(?i)\b(\d+)\s*(?:rules?|leaves|leaf\s+nodes|segments)\b").expect("re"),
                Regex::new(r"(?i)\b(?:num(?:ber)?[\s_]*(?:of[\s_]+)?)?rules\s*(?:(?:is|=|:|of|to|at|be)\s*)+(\d+)\b")
                    .expect("re"),
            ],
            budget: vec![
                Regex::new(r"(?i)budget\s*(?:(?:is|=|:|of|to|at|be)\s*)*\$?(-?\d+(?:\.\d+)?)").expect("re"),
                Regex::new(r"(?i)(\d+(?:\.\d+)?)\s+(?:[a-z]+\s+){0,2}per\s+(?:customer|client|row|person|user|contact)")
                    .expect("re"),
            ],
            error_off: Regex::new(r"(?i)\b(?:without|no|hide)\s+(?:the\s+|any\s+)?(?:error|confidence|uncertainty)")
                .expect("re"),
            error_on: Regex::new(
                r"(?i)\b(?:error\s*bars?|with\s+errors?|standard\s+errors?|confidence\s+intervals?|uncertainty)\b",
            )
            .expect("re"),
        }
    }

    /// Best-matching database entry: (index, similarity).
    pub fn nearest(&self, query: &str) -> Option<(usize, f64)> {
        let q = self.normalizer.tokens(query);
        if q.is_empty() {
            return None;
        }
        let mut best: Option<(usize, f64, usize)> = None;
        for (i, (tokens, _)) in self.entries.iter().enumerate() {
            let (score, overlap) = jaccard(&q, tokens);
            let better = match best {
                None => true,
                Some((_, s, o)) => score > s || (score == s && overlap > o),
            };
            if better {
                best = Some((i, score, overlap));
            }
        }
        best.map(|(i, s, _)| (i, s))
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    fn first_capture(res: &[Regex], query: &str) -> Option<String> {
        res.iter()
            .filter_map(|re| re.captures(query).map(|c| (c.get(0).map_or(0, |m| m.start()), c[1].to_string())))
            .min_by_key(|(pos, _)| *pos)
            .map(|(_, v)| v)
    }
}

impl NluStrategy for DeterministicStrategy {
    fn label(&self) -> String {
        "deterministic".into()
    }

    fn raw_intent(&self, query: &str) -> Result<String, NluError> {
        Ok(match self.nearest(query) {
            Some((i, score)) if score >= self.threshold => self.entries[i].1.as_str().to_string(),
            _ => IntentLabel::Unknown.as_str().to_string(),
        })
    }

    fn raw_param(&self, query: &str, spec: &ExtractorSpec) -> Result<String, NluError> {
        let found = match spec.param.as_str() {
            NUM_RULES => Self::first_capture(&self.num_rules, query),
            AVERAGE_BUDGET => Self::first_capture(&self.budget, query),
            SHOW_ERROR => {
                if self.error_off.is_match(query) {
                    Some("false".into())
                } else if self.error_on.is_match(query) {
                    Some("true".into())
                } else {
                    None
                }
            }
            _ => self
                .column_patterns
                .get(&spec.param)
                .and_then(|re| re.captures(query))
                .map(|c| c["lit"].to_string())
                .or_else(|| {
                    self.bare_values.get(&spec.param).and_then(|vals| {
                        vals.iter()
                            .filter_map(|(re, v)| re.find(query).map(|m| (m.start(), v)))
                            .min_by_key(|(pos, _)| *pos)
                            .map(|(_, v)| v.clone())
                    })
                }),
        };
        Ok(found.unwrap_or_else(|| spec.null_default.clone()))
    }
}

/// Few-shot prompting through a chat provider, with examples drawn from
/// the shared prompt database.
pub struct FewShotStrategy {
    provider: Arc<dyn ChatProvider>,
    examples: Vec<PromptSample>,
    malformed: AtomicUsize,
}

/// `k` example indices, stratified by intent and seeded; returned sorted.
pub fn sample_examples(db: &[PromptSample], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: Vec<Vec<usize>> = IntentLabel::ALL
        .iter()
        .map(|l| (0..db.len()).filter(|&i| db[i].labels.intent == *l).collect())
        .collect();
    for g in &mut groups {
        g.shuffle(&mut rng);
    }
    let mut picked = Vec::new();
    let mut round = 0;
    while picked.len() < k.min(db.len()) {
        for g in &groups {
            if picked.len() >= k {
                break;
            }
            if let Some(&i) = g.get(round) {
                picked.push(i);
            }
        }
        round += 1;
    }
    picked.sort_unstable();
    picked
}

impl FewShotStrategy {
    pub fn new(provider: Arc<dyn ChatProvider>, db: &[PromptSample], k: usize, seed: u64) -> Self {
        let examples = sample_examples(db, k, seed).into_iter().map(|i| db[i].clone()).collect();
        FewShotStrategy {
            provider,
            examples,
            malformed: AtomicUsize::new(0),
        }
    }

    pub fn examples(&self) -> &[PromptSample] {
        &self.examples
    }

    /// Completions that did not survive the gate.
    pub fn malformed_count(&self) -> usize {
        self.malformed.load(Ordering::Relaxed)
    }

    pub fn prompt(&self, instruction: &str, query: &str, output: impl Fn(&PromptSample) -> String) -> String {
        let mut p = format!("{instruction}\n\n<examples>\n");
        for ex in &self.examples {
            p.push_str(&format!("command: {}\n{}\n\n", ex.query, output(ex)));
        }
        p.push_str(&format!("command: {query}\n"));
        p
    }

    fn ask(&self, prompt: String, query: &str) -> Result<String, NluError> {
        let messages = [
            ChatMessage::new(ChatRole::System, prompt),
            ChatMessage::new(ChatRole::User, format!("command: {query}")),
        ];
        Ok(self.provider.complete(&messages, &Sampling::nlu())?)
    }
}

/// Training/few-shot output for `spec` on a sample: the value or sentinel.
pub fn sample_output(sample: &PromptSample, spec: &ExtractorSpec) -> String {
    match sample.labels.params.get(&spec.param) {
        Some(Some(v)) => v.canonical(),
        _ => spec.null_default.clone(),
    }
}

impl NluStrategy for FewShotStrategy {
    fn label(&self) -> String {
        format!("fewshot({})", self.provider.name())
    }

    fn raw_intent(&self, query: &str) -> Result<String, NluError> {
        let prompt = self.prompt(INTENT_INSTRUCTION, query, |s| s.labels.intent.as_str().to_string());
        let raw = self.ask(prompt, query)?;
        if IntentLabel::parse(&raw) == IntentLabel::Unknown && !raw.trim().eq_ignore_ascii_case("unknown") {
            self.malformed.fetch_add(1, Ordering::Relaxed);
        }
        Ok(raw)
    }

    fn raw_param(&self, query: &str, spec: &ExtractorSpec) -> Result<String, NluError> {
        let prompt = self.prompt(&spec.init_text, query, |s| sample_output(s, spec));
        let raw = self.ask(prompt, query)?;
        if gate(&raw, spec).is_none() && raw.trim() != spec.null_default {
            self.malformed.fetch_add(1, Ordering::Relaxed);
        }
        Ok(raw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ScriptRule, ScriptedProvider};

    fn meta() -> DatasetMetadata {
        DatasetMetadata::from_json_str(
            r#"{"title": "Bank Marketing", "path": "bank.csv", "action": "CAMPAIGN", "outcome": "CONVERSION",
                "columns": [
                  {"name": "CAMPAIGN", "dtype": "numeric", "description": "calls"},
                  {"name": "CONVERSION", "dtype": "boolean", "description": "converted"},
                  {"name": "euribor3m", "dtype": "numeric", "description": "rate"},
                  {"name": "job", "dtype": "categorical", "description": "job type"}
                ]}"#,
        )
        .unwrap()
    }

    fn specs() -> Vec<ExtractorSpec> {
        let values = BTreeMap::from([(
            "job".to_string(),
            vec!["admin.".to_string(), "technician".to_string(), "blue-collar".to_string()],
        )]);
        extractor_specs(&meta(), &["euribor3m".into(), "job".into()], &values)
    }

    fn sample(q: &str, intent: IntentLabel) -> PromptSample {
        PromptSample {
            query: q.into(),
            labels: PromptLabels {
                intent,
                params: BTreeMap::new(),
            },
        }
    }

    fn db() -> Vec<PromptSample> {
        vec![
            sample("What are the most important features?", IntentLabel::SelectFeatures),
            sample("Show the causal effect", IntentLabel::ShowCausalEffect),
            sample("How does CAMPAIGN affect CONVERSION?", IntentLabel::ShowCausalEffect),
            sample("What if euribor3m is 4.964?", IntentLabel::Counterfactual),
            sample("What is my current policy?", IntentLabel::ShowCurrentPolicy),
            sample("Can you optimize my strategy?", IntentLabel::RunOptimize),
            sample("Hello how are you?", IntentLabel::Unknown),
        ]
    }

    #[test]
    fn closed_set_gate() {
        assert_eq!(IntentLabel::parse("counterfactual"), IntentLabel::Counterfactual);
        assert_eq!(IntentLabel::parse(" 'run_opt'\nmore"), IntentLabel::RunOptimize);
        assert_eq!(IntentLabel::parse("show_base_policy"), IntentLabel::ShowCurrentPolicy);
        assert_eq!(IntentLabel::parse("banana"), IntentLabel::Unknown);
        assert_eq!(IntentLabel::parse(""), IntentLabel::Unknown);
    }

    #[test]
    fn dtype_gates() {
        let num = ExtractorSpec::new("price_range", Dtype::Numeric, "d");
        assert_eq!(gate("4.964", &num), Some(Slot::Value(Value::Number(4.964))));
        assert_eq!(gate("-1", &num), None);
        assert_eq!(gate("BOS-ATL", &num), None);
        assert_eq!(gate("Unknown", &num), None);
        let mut pair = num.clone();
        pair.range = true;
        assert_eq!(
            gate("Unknown-800", &pair),
            Some(Slot::Range {
                lower: None,
                upper: Some(800.0)
            })
        );
        assert_eq!(gate("Unknown-Unknown", &pair), None);
        let b = ExtractorSpec::new("flag", Dtype::Boolean, "d");
        assert_eq!(gate("yes", &b), Some(Slot::Value(Value::Bool(true))));
        assert_eq!(gate("Unknown", &b), None);
    }

    #[test]
    fn instruction_template_rendering() {
        let s = ExtractorSpec::new("euribor3m", Dtype::Numeric, "rate");
        assert!(s.init_text.contains("extract out the value of \"euribor3m\""));
        assert!(s.init_text.contains("output -1."));
        assert!(s.init_text.ends_with("euribor3m description:\nrate"));
    }

    #[test]
    fn deterministic_intents() {
        let d = db();
        let s = DeterministicStrategy::new(&d, &meta(), &specs());
        for sample in &d {
            assert_eq!(classify_intent(&sample.query, &s).unwrap(), sample.labels.intent);
        }
        assert_eq!(
            classify_intent("pls show causal effects!!", &s).unwrap(),
            IntentLabel::ShowCausalEffect
        );
        assert_eq!(classify_intent("xqz vvv blorp", &s).unwrap(), IntentLabel::Unknown);
        assert_eq!(classify_intent("", &s).unwrap(), IntentLabel::Unknown);
        assert_eq!(
            classify_intent("could you display the causal effect?", &s).unwrap(),
            IntentLabel::ShowCausalEffect
        );
    }

    #[test]
    fn deterministic_params() {
        let sp = specs();
        let s = DeterministicStrategy::new(&db(), &meta(), &sp);
        let e = extract_all("What if euribor3m is 4.964?", &sp, &s);
        assert_eq!(e.values.len(), sp.len());
        assert_eq!(e.get("euribor3m"), Some(&Slot::Value(Value::Number(4.964))));
        assert_eq!(e.get("job"), None);
        let e = extract_all("How is conversion impacted if euribor3m = 1.3 for technician clients", &sp, &s);
        assert_eq!(e.get("euribor3m"), Some(&Slot::Value(Value::Number(1.3))));
        assert_eq!(e.get("job"), Some(&Slot::Value(Value::Text("technician".into()))));
        let e = extract_all("Use 4 rules", &sp, &s);
        assert_eq!(e.get(NUM_RULES), Some(&Slot::Value(Value::Number(4.0))));
        let e = extract_all("An average budget of 3.5 calls per customer", &sp, &s);
        assert_eq!(e.get(AVERAGE_BUDGET), Some(&Slot::Value(Value::Number(3.5))));
        assert_eq!(e.get(NUM_RULES), None);
        let e = extract_all("show the effect with error bars", &sp, &s);
        assert_eq!(e.get(SHOW_ERROR), Some(&Slot::Value(Value::Bool(true))));
        let e = extract_all("hello", &sp, &s);
        assert!(e.present().next().is_none());
        let e = extract_all("what if job is admin.?", &sp, &s);
        assert_eq!(e.get("job"), Some(&Slot::Value(Value::Text("admin.".into()))));
    }

    #[test]
    fn fewshot_passes_through_gates() {
        let provider = Arc::new(ScriptedProvider::new(vec![ScriptRule {
            pattern: "".into(),
            respond: "counterfactual".into(),
        }]));
        let s = FewShotStrategy::new(provider, &db(), 4, 0);
        assert_eq!(s.examples().len(), 4);
        assert_eq!(classify_intent("what if", &s).unwrap(), IntentLabel::Counterfactual);
        let banana = Arc::new(ScriptedProvider::new(vec![ScriptRule {
            pattern: "".into(),
            respond: "banana".into(),
        }]));
        let s = FewShotStrategy::new(banana, &db(), 4, 0);
        assert_eq!(classify_intent("what if", &s).unwrap(), IntentLabel::Unknown);
        let spec = ExtractorSpec::new("euribor3m", Dtype::Numeric, "rate");
        assert_eq!(extract_param("what if", &spec, &s).unwrap(), None);
        assert_eq!(s.malformed_count(), 2);
    }

    #[test]
    fn stratified_examples_cover_intents() {
        let d = db();
        let picked = sample_examples(&d, 6, 9);
        let intents: BTreeSet<IntentLabel> = picked.iter().map(|&i| d[i].labels.intent).collect();
        assert_eq!(intents.len(), 6);
        assert_eq!(sample_examples(&d, 6, 9), picked);
    }
}
