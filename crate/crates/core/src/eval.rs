//! Evaluation of intent classification and parameter extraction: seeded
//! label-preserving perturbation, metrics, and report emission.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Value;
use crate::nlu::{classify_intent, extract_all, ExtractorSpec, IntentLabel, NluStrategy, PromptSample, SYNONYMS};
use crate::par::*;

/// A test query with its gold multilabel.
pub type LabeledQuery = PromptSample;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("unsupported report format `{0}` (expected json, markdown or csv)")]
    UnsupportedFormat(String),
    #[error("empty test set")]
    EmptyTestSet,
}

const IMPERATIVES: &[&str] = &[
    "show", "plot", "run", "optimize", "find", "select", "use", "give", "build", "generate", "predict", "estimate",
    "tell", "write",
];
const POLITE_PREFIXES: &[&str] = &["could you ", "can you ", "please ", "would you ", "kindly "];
const POLITE_SUFFIXES: &[&str] = &[" please", ", thanks", " thank you", " pls"];
/// Lexicon words the perturber never rewrites.
const FIXED: &[&str] = &["what"];

fn match_case(template: &str, word: &str) -> String {
    if template.chars().next().is_some_and(char::is_uppercase) {
        let mut c = word.chars();
        c.next()
            .map(|f| f.to_uppercase().collect::<String>() + c.as_str())
            .unwrap_or_default()
    } else {
        word.to_string()
    }
}

/// Lowercases the first letter unless the first word is an acronym-like
/// name such as `CAMPAIGN`.
fn lower_first(s: &str) -> String {
    let first = s.split_whitespace().next().unwrap_or("");
    if first.chars().filter(|c| c.is_uppercase()).count() > 1 {
        return s.to_string();
    }
    let mut ch = s.chars();
    match ch.next() {
        Some(f) => f.to_lowercase().collect::<String>() + ch.as_str(),
        None => String::new(),
    }
}

struct Perturber {
    clause: Regex,
    protected: Vec<String>,
}

impl Perturber {
    fn new(protected: &[String]) -> Self {
        Perturber {
            clause: Regex::new(r"^(?P<main>.+?)\s+(?P<conn>if|when|assuming|with)\s+(?P<rest>.+?)(?P<punct>[?.!]*)$")
                .expect("clause regex"),
            protected: protected.iter().map(|p| p.to_lowercase()).collect(),
        }
    }

    fn synonyms(&self, query: &str, protected: &[String], rng: &mut ChaCha8Rng) -> String {
        let mut out = Vec::new();
        for word in query.split(' ') {
            let core = word.trim_matches(|c: char| !c.is_alphanumeric());
            let lower = core.to_lowercase();
            let mut replaced = None;
            if !core.is_empty() && !protected.contains(&lower) && !FIXED.contains(&lower.as_str()) {
                for (canon, alts) in SYNONYMS {
                    let plural = format!("{canon}s");
                    let suffix = if lower == *canon {
                        Some("")
                    } else if lower == plural {
                        Some("s")
                    } else {
                        None
                    };
                    if let Some(sfx) = suffix {
                        if rng.random::<f64>() < 0.6 {
                            let alt = alts.choose(rng).expect("alternatives");
                            let new = match_case(core, &format!("{alt}{sfx}"));
                            replaced = Some(word.replacen(core, &new, 1));
                        }
                        break;
                    }
                }
            }
            out.push(replaced.unwrap_or_else(|| word.to_string()));
        }
        out.join(" ")
    }

    fn reorder(&self, query: &str, protected: &[String]) -> Option<String> {
        let c = self.clause.captures(query)?;
        let main = &c["main"];
        if main.split_whitespace().count() < 3 {
            return None;
        }
        let rest = &c["rest"];
        if protected.iter().any(|p| main.to_lowercase().ends_with(p.as_str())) {
            return None;
        }
        Some(format!(
            "{} {}, {}{}",
            match_case("X", &c["conn"]),
            rest,
            lower_first(main),
            &c["punct"]
        ))
    }

    fn perturb(&self, sample: &PromptSample, rng: &mut ChaCha8Rng) -> String {
        let mut protected = self.protected.clone();
        for v in sample.labels.params.values().flatten() {
            protected.push(v.canonical().to_lowercase());
        }
        let body_of = |q: &str| -> String {
            let trimmed = q.trim_end_matches(['?', '!']);
            let lower = trimmed.to_lowercase();
            if protected.iter().any(|p| p.ends_with('.') && lower.ends_with(p.as_str())) {
                trimmed.to_string()
            } else {
                q.trim_end_matches(['?', '!', '.']).to_string()
            }
        };
        let mut q = sample.query.clone();
        if rng.random::<f64>() < 0.5 {
            if let Some(r) = self.reorder(&q, &protected) {
                q = r;
            }
        }
        q = self.synonyms(&q, &protected, rng);
        let first = q
            .split_whitespace()
            .next()
            .map(|w| w.to_lowercase())
            .unwrap_or_default();
        if rng.random::<f64>() < 0.5 {
            if IMPERATIVES.contains(&first.as_str()) {
                let p = POLITE_PREFIXES.choose(rng).expect("prefixes");
                q = format!("{p}{}", lower_first(&q));
            } else {
                let s = POLITE_SUFFIXES.choose(rng).expect("suffixes");
                let body = body_of(&q);
                let punct = &q[body.len()..];
                q = format!("{body}{s}{punct}");
            }
        }
        if rng.random::<f64>() < 0.4 {
            q = q.to_lowercase();
        }
        let body = body_of(&q);
        q = match rng.random_range(0..4) {
            0 => body,
            1 => format!("{body}?"),
            2 => format!("{body}!"),
            _ => q,
        };
        if q == sample.query {
            q = if q.ends_with('?') {
                q.trim_end_matches('?').to_string()
            } else {
                format!("{q}?")
            };
        }
        q
    }
}

/// `n_target` perturbed copies cycling through `db`; gold labels are the
/// source sample's. Words in `protected` (column names) are never rewritten.
pub fn perturb_queries(db: &[PromptSample], seed: u64, n_target: usize, protected: &[String]) -> Vec<LabeledQuery> {
    if db.is_empty() {
        return Vec::new();
    }
    let perturber = Perturber::new(protected);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_target)
        .map(|i| {
            let src = &db[i % db.len()];
            PromptSample {
                query: perturber.perturb(src, &mut rng),
                labels: src.labels.clone(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<IntentLabel>,
    /// counts[gold][predicted]
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn from_pairs(gold: &[IntentLabel], pred: &[IntentLabel]) -> Self {
        let labels = IntentLabel::ALL.to_vec();
        let idx = |l: IntentLabel| labels.iter().position(|x| *x == l).expect("closed label set");
        let mut counts = vec![vec![0; labels.len()]; labels.len()];
        for (g, p) in gold.iter().zip(pred) {
            counts[idx(*g)][idx(*p)] += 1;
        }
        ConfusionMatrix { labels, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn support(&self, i: usize) -> usize {
        self.counts[i].iter().sum()
    }

    pub fn predicted(&self, j: usize) -> usize {
        self.counts.iter().map(|r| r[j]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub strategy: String,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub f1_macro: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub averaging: String,
    pub confusion: ConfusionMatrix,
    /// Mean wall-clock seconds per query.
    pub mean_latency: f64,
    /// Per-extractor exact-match rate (absent counts as a value).
    #[serde(default)]
    pub extractor_exact: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extractor_mean: Option<f64>,
    /// Share of queries whose intent and every parameter match.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_match: Option<f64>,
}

impl MetricsReport {
    /// Intent metrics from gold/predicted pairs. Macro averages run over
    /// every label that occurs in gold or predictions.
    pub fn from_predictions(strategy: &str, gold: &[IntentLabel], pred: &[IntentLabel], latencies: &[f64]) -> Self {
        let confusion = ConfusionMatrix::from_pairs(gold, pred);
        let n = gold.len();
        let correct = confusion.trace();
        let classes: Vec<usize> = (0..confusion.labels.len())
            .filter(|&i| confusion.support(i) > 0 || confusion.predicted(i) > 0)
            .collect();
        let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
        for &i in &classes {
            let tp = confusion.counts[i][i] as f64;
            let predicted = confusion.predicted(i) as f64;
            let support = confusion.support(i) as f64;
            let p = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let r = if support > 0.0 { tp / support } else { 0.0 };
            let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            p_sum += p;
            r_sum += r;
            f_sum += f;
        }
        let k = classes.len().max(1) as f64;
        MetricsReport {
            strategy: strategy.to_string(),
            n,
            correct,
            accuracy: if n > 0 { correct as f64 / n as f64 } else { 0.0 },
            f1_macro: f_sum / k,
            precision_macro: p_sum / k,
            recall_macro: r_sum / k,
            averaging: "macro".into(),
            confusion,
            mean_latency: if latencies.is_empty() {
                0.0
            } else {
                latencies.iter().sum::<f64>() / latencies.len() as f64
            },
            extractor_exact: BTreeMap::new(),
            extractor_mean: None,
            exact_match: None,
        }
    }

    /// "0.95 (226/238)"
    pub fn accuracy_display(&self) -> String {
        format!("{:.2} ({}/{})", self.accuracy, self.correct, self.n)
    }
}

fn canonical(v: Option<&Value>) -> Option<String> {
    v.map(Value::canonical)
}

pub fn evaluate_intent(strategy: &dyn NluStrategy, testset: &[LabeledQuery]) -> Result<MetricsReport, EvalError> {
    if testset.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let runs: Vec<(IntentLabel, f64)> = testset
        .par_iter()
        .map(|s| {
            let start = Instant::now();
            let p = classify_intent(&s.query, strategy).unwrap_or(IntentLabel::Unknown);
            (p, start.elapsed().as_secs_f64())
        })
        .collect();
    let gold: Vec<IntentLabel> = testset.iter().map(|s| s.labels.intent).collect();
    let pred: Vec<IntentLabel> = runs.iter().map(|r| r.0).collect();
    let lat: Vec<f64> = runs.iter().map(|r| r.1).collect();
    Ok(MetricsReport::from_predictions(&strategy.label(), &gold, &pred, &lat))
}

/// Intent metrics plus per-extractor exact-match rates and the share of
/// fully correct multilabels.
pub fn evaluate(
    strategy: &dyn NluStrategy,
    specs: &[ExtractorSpec],
    testset: &[LabeledQuery],
) -> Result<MetricsReport, EvalError> {
    if testset.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let runs: Vec<(IntentLabel, BTreeMap<String, bool>, f64)> = testset
        .par_iter()
        .map(|s| {
            let start = Instant::now();
            let p = classify_intent(&s.query, strategy).unwrap_or(IntentLabel::Unknown);
            let e = extract_all(&s.query, specs, strategy);
            let elapsed = start.elapsed().as_secs_f64();
            let matches = specs
                .iter()
                .map(|spec| {
                    let gold = canonical(s.labels.params.get(&spec.param).and_then(Option::as_ref));
                    let got = e.get(&spec.param).map(|slot| slot.canonical());
                    (spec.param.clone(), gold == got)
                })
                .collect();
            (p, matches, elapsed)
        })
        .collect();
    let gold: Vec<IntentLabel> = testset.iter().map(|s| s.labels.intent).collect();
    let pred: Vec<IntentLabel> = runs.iter().map(|r| r.0).collect();
    let lat: Vec<f64> = runs.iter().map(|r| r.2).collect();
    let mut report = MetricsReport::from_predictions(&strategy.label(), &gold, &pred, &lat);
    let n = testset.len() as f64;
    for spec in specs {
        let hits = runs.iter().filter(|r| r.1[&spec.param]).count();
        report.extractor_exact.insert(spec.param.clone(), hits as f64 / n);
    }
    if !specs.is_empty() {
        report.extractor_mean = Some(report.extractor_exact.values().sum::<f64>() / specs.len() as f64);
    }
    let full = runs
        .iter()
        .zip(&gold)
        .filter(|(r, g)| r.0 == **g && r.1.values().all(|m| *m))
        .count();
    report.exact_match = Some(full as f64 / n);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(EvalError::UnsupportedFormat(other.to_string())),
        }
    }
}

pub const CSV_HEADER: [&str; 9] = [
    "strategy",
    "n",
    "accuracy",
    "f1_macro",
    "precision_macro",
    "recall_macro",
    "mean_latency",
    "extractor_mean",
    "exact_match",
];

fn opt2(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into())
}

pub fn emit_report(reports: &[MetricsReport], format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(reports).expect("serializable report") + "\n",
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_HEADER).expect("in-memory write");
            for r in reports {
                w.write_record([
                    r.strategy.clone(),
                    r.n.to_string(),
                    r.accuracy.to_string(),
                    r.f1_macro.to_string(),
                    r.precision_macro.to_string(),
                    r.recall_macro.to_string(),
                    r.mean_latency.to_string(),
                    r.extractor_mean.map(|v| v.to_string()).unwrap_or_default(),
                    r.exact_match.map(|v| v.to_string()).unwrap_or_default(),
                ])
                .expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("flushed")).expect("utf-8 csv")
        }
        ReportFormat::Markdown => {
            let mut out = String::from(
                "| Strategy | Accuracy | F1 Score | Precision | Recall | Inference Time | Extractors | Exact match |\n\
                 |---|---|---|---|---|---|---|---|\n",
            );
            for r in reports {
                out.push_str(&format!(
                    "| {} | {} | {:.2} | {:.2} | {:.2} | {:.2}s | {} | {} |\n",
                    r.strategy,
                    r.accuracy_display(),
                    r.f1_macro,
                    r.precision_macro,
                    r.recall_macro,
                    r.mean_latency,
                    opt2(r.extractor_mean),
                    opt2(r.exact_match)
                ));
            }
            for r in reports {
                out.push_str(&format!("\nConfusion matrix for {} (rows: gold, columns: predicted)\n\n", r.strategy));
                out.push_str("| |");
                for l in &r.confusion.labels {
                    out.push_str(&format!(" {l} |"));
                }
                out.push_str("\n|---|");
                out.push_str(&"---|".repeat(r.confusion.labels.len()));
                out.push('\n');
                for (l, row) in r.confusion.labels.iter().zip(&r.confusion.counts) {
                    out.push_str(&format!("| {l} |"));
                    for c in row {
                        out.push_str(&format!(" {c} |"));
                    }
                    out.push('\n');
                }
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlu::PromptLabels;

    fn sample(q: &str, intent: IntentLabel, params: &[(&str, Option<Value>)]) -> PromptSample {
        PromptSample {
            query: q.into(),
            labels: PromptLabels {
                intent,
                params: params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            },
        }
    }

    #[test]
    fn display_matches_table_style() {
        let mut gold = vec![IntentLabel::SelectFeatures; 238];
        let mut pred = gold.clone();
        for p in pred.iter_mut().take(12) {
            *p = IntentLabel::Unknown;
        }
        gold[237] = IntentLabel::Counterfactual;
        pred[237] = IntentLabel::Counterfactual;
        let r = MetricsReport::from_predictions("x", &gold, &pred, &[]);
        assert_eq!(r.accuracy_display(), "0.95 (226/238)");
    }

    #[test]
    fn degenerate_predictions() {
        let gold = vec![IntentLabel::RunOptimize, IntentLabel::SelectFeatures];
        let r = MetricsReport::from_predictions("x", &gold, &gold, &[0.1, 0.3]);
        assert_eq!((r.accuracy, r.f1_macro), (1.0, 1.0));
        assert!((r.mean_latency - 0.2).abs() < 1e-12);
        let r = MetricsReport::from_predictions("x", &gold, &[IntentLabel::Unknown; 2], &[]);
        assert_eq!((r.accuracy, r.recall_macro), (0.0, 0.0));
    }

    #[test]
    fn perturbation_example_and_label_preservation() {
        let db = vec![
            sample("Show the causal effect", IntentLabel::ShowCausalEffect, &[("euribor3m", None)]),
            sample(
                "What if euribor3m is 4.964?",
                IntentLabel::Counterfactual,
                &[("euribor3m", Some(Value::Number(4.964)))],
            ),
        ];
        let out = perturb_queries(&db, 0, 40, &["euribor3m".into()]);
        assert_eq!(out.len(), 40);
        for (i, s) in out.iter().enumerate() {
            assert_eq!(s.labels, db[i % 2].labels);
            assert_ne!(s.query, db[i % 2].query);
            if i % 2 == 1 {
                assert!(s.query.contains("4.964") && s.query.to_lowercase().contains("euribor3m"), "{}", s.query);
            }
        }
        assert!(out.iter().any(|s| s.query.to_lowercase().contains("display")));
        assert_eq!(perturb_queries(&db, 0, 40, &["euribor3m".into()]), out);
    }

    #[test]
    fn formats() {
        let gold = vec![IntentLabel::RunOptimize, IntentLabel::Unknown];
        let r = MetricsReport::from_predictions("deterministic", &gold, &gold, &[]);
        let json = emit_report(std::slice::from_ref(&r), ReportFormat::Json);
        let back: Vec<MetricsReport> = serde_json::from_str(&json).unwrap();
        assert_eq!(emit_report(&back, ReportFormat::Json), json);
        let md = emit_report(&[r.clone(), MetricsReport { strategy: "fewshot".into(), ..r.clone() }], ReportFormat::Markdown);
        assert_eq!(md.lines().filter(|l| l.starts_with("| deterministic |")).count(), 1);
        assert_eq!(md.lines().filter(|l| l.starts_with("| fewshot |")).count(), 1);
        let csv = emit_report(&[r], ReportFormat::Csv);
        assert_eq!(csv.lines().next().unwrap(), CSV_HEADER.join(","));
        assert_eq!("yaml".parse::<ReportFormat>(), Err(EvalError::UnsupportedFormat("yaml".into())));
    }
}
