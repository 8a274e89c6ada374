//! Domain adaptation: from metadata and a table, produce the prompt
//! database, per-extractor training files, model configurations and the
//! rendered system prompt.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::causal::{self, CausalError, FeatureReport};
use crate::dataset::{distinct_values, DataTable, DatasetError, DatasetMetadata, Dtype, Value};
use crate::nlu::{
    extractor_specs, sample_output, ExtractorSpec, IntentLabel, Normalizer, PromptLabels, PromptSample,
    AVERAGE_BUDGET, INTENT_INSTRUCTION, NUM_RULES, SHOW_ERROR,
};
use crate::tools::DEFAULT_FOLDS;

pub const DEFAULT_TARGET: usize = 100;
pub const DEFAULT_BASE_MODEL: &str = "google/flan-t5-xl";
pub const INTENT_PARAM: &str = "intent";
const VALUE_POOL: usize = 25;

pub const SYSTEM_PROMPT_TEMPLATE: &str = "You are a friendly and cheery AI agent named PrecAIse, pronounced `Precise'.
Your job is to assist analysts to determine the optimal policy.
You were built with a goal to help business users make better decisions by
leveraging the power of AI.

You are working with prescriptive policy models using a {TITLE} dataset.
Action variable is {ACTION}.
Outcome is {OUTCOME}.

Based on every user's query, you identify their intent from the following:
- select_features
- show_causal_effect
- run_opt
- show_base_policy
- counterfactual

The key functionalities that you currently support include
- selecting the important features for treatment effect estimation
- quantifying the treatment effect
- quantifying the treatment effect conditioned on covariate values
- generating a set of optimized policies
- evaluating the KPIs
- and predicting counterfactual scenarios.

When a user query can be mapped to one of the existing functionalities
with necessary parameters, reply with enthusiasm that you are happy to
assist the user and you are working on the query.

You are harmless and refrain from generating content involving any form
of bias, violence, discrimination or inappropriate content.
Do not say anything outside the field of the dataset and
prescriptive analysis and do not start a conversation off topic to causal
inference.

If prompted off topic or given a silly request, kindly redirect user
back to the task at hand.
If the user is asking for a tool to be used, tell them you're happy to
help with that. Always keep responses as short (under 50 words) and
concise as possible and only expand when prompted.
Do not make up information.
";

#[derive(Debug, Error)]
pub enum GenError {
    #[error("no supported columns to build extractors for")]
    NoSupportedColumns,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Causal(#[from] CausalError),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed bundle file {path}: {message}")]
    MalformedBundle { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GenError + '_ {
    move |source| GenError::Io {
        path: path.to_path_buf(),
        source,
    }
}

struct Template {
    text: &'static str,
    intent: IntentLabel,
    show_error: Option<bool>,
}

const fn t(text: &'static str, intent: IntentLabel) -> Template {
    Template {
        text,
        intent,
        show_error: None,
    }
}

const fn te(text: &'static str, intent: IntentLabel, on: bool) -> Template {
    Template {
        text,
        intent,
        show_error: Some(on),
    }
}

use IntentLabel::{Counterfactual as Cf, RunOptimize as Opt, SelectFeatures as Sel, ShowCausalEffect as Eff,
    ShowCurrentPolicy as Cur, Unknown as Unk};

const AGNOSTIC: &[Template] = &[
    t("What are the most important features?", Sel),
    t("Which features matter the most?", Sel),
    t("Select the relevant features", Sel),
    t("Run feature selection", Sel),
    t("Show the cross validation plot of the features", Sel),
    t("What columns should I focus on?", Sel),
    t("Which variables drive the results?", Sel),
    t("Find the key covariates", Sel),
    t("What is the best action?", Eff),
    t("Show the causal effect", Eff),
    t("Plot the treatment effect", Eff),
    t("How does the action change the result?", Eff),
    t("What is the average treatment effect?", Eff),
    t("Show me the effect of each action", Eff),
    te("Show the causal effect with error bars", Eff, true),
    te("Plot the effect curve without error bars", Eff, false),
    t("Can you optimize my strategy?", Opt),
    t("Optimize the policy", Opt),
    t("Find the optimal policy", Opt),
    t("Generate an optimized policy", Opt),
    t("Run the optimization", Opt),
    t("Give me a better targeting plan", Opt),
    t("Build a prescriptive tree", Opt),
    t("What policy maximizes the results?", Opt),
    t("What is my current policy?", Cur),
    t("Show the current policy", Cur),
    t("What is the historical policy?", Cur),
    t("How are actions assigned today?", Cur),
    t("Show the baseline KPIs", Cur),
    t("What does the existing policy look like?", Cur),
    t("Show the base policy", Cur),
    t("What is the current KPI?", Cur),
    t("What would happen if we changed the action?", Cf),
    t("Predict the counterfactual result", Cf),
    t("Run a what-if scenario", Cf),
    t("What would the result be under a different action?", Cf),
    t("Show a counterfactual prediction", Cf),
    t("Hello!", Unk),
    t("What can you do?", Unk),
    t("Who are you?", Unk),
    t("Tell me a joke", Unk),
    t("What is the weather like today?", Unk),
    t("Thanks for your help", Unk),
    t("Good morning", Unk),
    t("Write me a poem about cats", Unk),
];

const DOMAIN: &[Template] = &[
    t("How does [ACTION] affect [OUTCOME]?", Eff),
    t("What if [COLUMN] is [VALUE]?", Cf),
    t("Is [COLUMN] an important variable?", Sel),
    t("What is the current policy when [COLUMN] is [VALUE]?", Cur),
    t("Optimize [ACTION] with [NUM_RULES] rules", Opt),
    t("What happens to [OUTCOME] if [COLUMN] is [VALUE]?", Cf),
    t("Show the effect of [ACTION] on [OUTCOME]", Eff),
    t("Does [COLUMN] affect [OUTCOME]?", Sel),
    t("Show the current [ACTION] distribution", Cur),
    t("Use [NUM_RULES] rules", Opt),
    t("How is [OUTCOME] affected by [ACTION] if [COLUMN] is [VALUE]?", Cf),
    t("Plot how [OUTCOME] changes with [ACTION]", Eff),
    t("Which features besides [COLUMN] matter for [OUTCOME]?", Sel),
    t("How is [ACTION] assigned today?", Cur),
    t("An average budget of [BUDGET] per customer", Opt),
    t("Predict [OUTCOME] when [COLUMN] = [VALUE]", Cf),
    te("Show the effect of [ACTION] on [OUTCOME] with error bars", Eff, true),
    t("What is the current [OUTCOME] rate?", Cur),
    t("Optimize the policy with [NUM_RULES] rules and a budget of [BUDGET]", Opt),
    t("Show the effect of [ACTION] when [COLUMN] is [VALUE]", Cf),
    t("What is the impact of [ACTION] on [OUTCOME]?", Eff),
    t("Show the historical policy for [COLUMN] = [VALUE]", Cur),
    t("Optimize [OUTCOME] for [COLUMN] = [VALUE]", Opt),
    t("Find the optimal [ACTION] policy with an average budget of [BUDGET]", Opt),
    t("Estimate [OUTCOME] assuming [COLUMN] is [VALUE]", Cf),
];

const BUDGETS: &[f64] = &[1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0];

/// The parameter names every multilabel carries, in extractor order.
pub fn param_names(columns: &[String]) -> Vec<String> {
    let mut names = columns.to_vec();
    names.extend([NUM_RULES, AVERAGE_BUDGET, SHOW_ERROR].map(String::from));
    names
}

/// Distinct values per column, capped, as offered to templates and
/// categorical gates.
pub fn value_pools(
    table: &DataTable,
    columns: &[String],
    limit: usize,
) -> Result<BTreeMap<String, Vec<Value>>, DatasetError> {
    columns
        .iter()
        .map(|c| Ok((c.clone(), distinct_values(table, c, limit)?)))
        .collect()
}

/// All category labels of the categorical columns, for the extraction gate.
pub fn categorical_values(
    table: &DataTable,
    meta: &DatasetMetadata,
    columns: &[String],
) -> Result<BTreeMap<String, Vec<String>>, DatasetError> {
    let mut out = BTreeMap::new();
    for c in columns {
        if meta.column(c).map(|s| s.dtype) == Some(Dtype::Categorical) {
            let vals = distinct_values(table, c, usize::MAX)?;
            out.insert(c.clone(), vals.iter().map(Value::canonical).collect());
        }
    }
    Ok(out)
}

/// Builds ≈`target` (query, multilabel) samples: every domain-agnostic
/// sample, then domain templates in round-robin with columns cycled and
/// values drawn from each column's distinct values.
pub fn generate_prompt_database(
    meta: &DatasetMetadata,
    table: &DataTable,
    columns: &[String],
    seed: u64,
    target: usize,
) -> Result<Vec<PromptSample>, GenError> {
    if columns.is_empty() {
        return Err(GenError::NoSupportedColumns);
    }
    let pools = value_pools(table, columns, VALUE_POOL)?;
    let usable: Vec<&String> = columns.iter().filter(|c| !pools[*c].is_empty()).collect();
    if usable.is_empty() {
        return Err(GenError::NoSupportedColumns);
    }
    let names = param_names(columns);
    let all_values: Vec<String> = categorical_values(table, meta, columns)?.into_values().flatten().collect();
    let normalizer = Normalizer::new(meta, &all_values);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut db: Vec<PromptSample> = Vec::new();
    let mut seen_queries: HashSet<String> = HashSet::new();
    let mut seen_tokens: BTreeMap<BTreeSet<String>, IntentLabel> = BTreeMap::new();
    let mut push = |db: &mut Vec<PromptSample>, query: String, intent: IntentLabel, params: BTreeMap<String, Option<Value>>| {
        if !seen_queries.insert(query.clone()) {
            return;
        }
        let tokens = normalizer.tokens(&query);
        match seen_tokens.get(&tokens) {
            Some(existing) if *existing != intent => return,
            _ => {
                seen_tokens.insert(tokens, intent);
            }
        }
        db.push(PromptSample {
            query,
            labels: PromptLabels { intent, params },
        });
    };
    let empty_params = || names.iter().map(|n| (n.clone(), None)).collect::<BTreeMap<_, _>>();

    for tpl in AGNOSTIC {
        let mut params = empty_params();
        if let Some(on) = tpl.show_error {
            params.insert(SHOW_ERROR.into(), Some(Value::Bool(on)));
        }
        push(&mut db, tpl.text.to_string(), tpl.intent, params);
    }

    let upper = target + target / 10;
    let mut column_cursor = 0usize;
    let max_attempts = target.max(1) * 50;
    let mut attempt = 0usize;
    while db.len() < target.min(upper) && attempt < max_attempts {
        let tpl = &DOMAIN[attempt % DOMAIN.len()];
        attempt += 1;
        let mut params = empty_params();
        if let Some(on) = tpl.show_error {
            params.insert(SHOW_ERROR.into(), Some(Value::Bool(on)));
        }
        let mut q = tpl
            .text
            .replace("[ACTION]", &meta.action_column)
            .replace("[OUTCOME]", &meta.outcome_column);
        if q.contains("[COLUMN]") {
            let col = usable[column_cursor % usable.len()];
            column_cursor += 1;
            q = q.replace("[COLUMN]", col);
            if q.contains("[VALUE]") {
                let v = pools[col].choose(&mut rng).expect("non-empty pool").clone();
                let literal = match &v {
                    Value::Bool(b) => if *b { "yes" } else { "no" }.to_string(),
                    other => other.canonical(),
                };
                q = q.replace("[VALUE]", &literal);
                params.insert(col.clone(), Some(v));
            }
        }
        if q.contains("[NUM_RULES]") {
            let n = rng.random_range(2..=8u32);
            q = q.replace("[NUM_RULES]", &n.to_string());
            params.insert(NUM_RULES.into(), Some(Value::Number(n as f64)));
        }
        if q.contains("[BUDGET]") {
            let b = *BUDGETS.choose(&mut rng).expect("budgets");
            q = q.replace("[BUDGET]", &Value::Number(b).canonical());
            params.insert(AVERAGE_BUDGET.into(), Some(Value::Number(b)));
        }
        push(&mut db, q, tpl.intent, params);
    }
    db.truncate(upper);
    Ok(db)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLine {
    pub input: String,
    pub output: String,
}

/// One training file per extractor plus the intent file; line i of every
/// file corresponds to `db[i]`.
pub fn split_training_files(
    db: &[PromptSample],
    specs: &[ExtractorSpec],
) -> IndexMap<String, Vec<TrainingLine>> {
    let mut files = IndexMap::new();
    files.insert(
        INTENT_PARAM.to_string(),
        db.iter()
            .map(|s| TrainingLine {
                input: s.query.clone(),
                output: s.labels.intent.as_str().to_string(),
            })
            .collect(),
    );
    for spec in specs {
        files.insert(
            spec.param.clone(),
            db.iter()
                .map(|s| TrainingLine {
                    input: s.query.clone(),
                    output: sample_output(s, spec),
                })
                .collect(),
        );
    }
    files
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub gradient_accumulation_steps: u32,
    pub learning_rate: f64,
    pub num_virtual_tokens: u32,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            gradient_accumulation_steps: 16,
            learning_rate: 0.3,
            num_virtual_tokens: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub param: String,
    pub dtype: Dtype,
    pub base_model: String,
    pub init_method: String,
    pub init_text: String,
    pub hyperparams: Hyperparams,
}

/// Intent config first, then one per extractor.
pub fn generate_model_configs(specs: &[ExtractorSpec], base_model: &str) -> Vec<ModelConfig> {
    let mut out = vec![ModelConfig {
        param: INTENT_PARAM.into(),
        dtype: Dtype::Categorical,
        base_model: base_model.into(),
        init_method: "text".into(),
        init_text: INTENT_INSTRUCTION.into(),
        hyperparams: Hyperparams::default(),
    }];
    out.extend(specs.iter().map(|s| ModelConfig {
        param: s.param.clone(),
        dtype: s.dtype,
        base_model: base_model.into(),
        init_method: "text".into(),
        init_text: s.init_text.clone(),
        hyperparams: Hyperparams::default(),
    }));
    out
}

pub fn render_system_prompt(meta: &DatasetMetadata) -> String {
    SYSTEM_PROMPT_TEMPLATE
        .replace("{TITLE}", &meta.title)
        .replace("{ACTION}", &meta.action_column)
        .replace("{OUTCOME}", &meta.outcome_column)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetupOptions {
    pub seed: u64,
    pub target: usize,
    pub folds: usize,
    pub skip_feature_selection: bool,
    pub base_model: String,
}

impl Default for SetupOptions {
    fn default() -> Self {
        SetupOptions {
            seed: 0,
            target: DEFAULT_TARGET,
            folds: DEFAULT_FOLDS,
            skip_feature_selection: false,
            base_model: DEFAULT_BASE_MODEL.into(),
        }
    }
}

/// Columns the NLU layer will support: the selected covariates that the
/// metadata leaves enabled, or every enabled covariate when selection is
/// skipped.
pub fn supported_columns(
    table: &DataTable,
    meta: &DatasetMetadata,
    opts: &SetupOptions,
) -> Result<(Vec<String>, Option<FeatureReport>), GenError> {
    let enabled: Vec<String> = meta
        .covariates()
        .into_iter()
        .filter(|c| c.supported)
        .map(|c| c.name.clone())
        .collect();
    if opts.skip_feature_selection {
        return if enabled.is_empty() {
            Err(GenError::NoSupportedColumns)
        } else {
            Ok((enabled, None))
        };
    }
    let report = causal::select_features(table, meta, opts.folds, opts.seed)?;
    let cols: Vec<String> = report
        .selected
        .iter()
        .filter(|c| enabled.contains(c))
        .cloned()
        .collect();
    if cols.is_empty() {
        return Err(GenError::NoSupportedColumns);
    }
    Ok((cols, Some(report)))
}

/// Manifest written as `bundle.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub meta: DatasetMetadata,
    pub seed: u64,
    pub columns: Vec<String>,
    pub extractors: Vec<ExtractorSpec>,
    pub sample_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_report: Option<FeatureReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetupBundle {
    pub root: PathBuf,
    pub files: Vec<PathBuf>,
    pub digest: String,
    pub manifest: BundleManifest,
}

pub const PROMPT_DB_FILE: &str = "prompt_db.jsonl";
pub const SYSTEM_PROMPT_FILE: &str = "system_prompt.txt";
pub const MANIFEST_FILE: &str = "bundle.json";

fn write_file(root: &Path, rel: &str, contents: &str, files: &mut Vec<PathBuf>) -> Result<(), GenError> {
    let path = root.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(&path, contents).map_err(io_err(&path))?;
    files.push(PathBuf::from(rel));
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

/// Runs the whole pipeline and writes the bundle under `out`.
pub fn run_setup(
    meta: &DatasetMetadata,
    table: &DataTable,
    opts: &SetupOptions,
    out: &Path,
) -> Result<SetupBundle, GenError> {
    let (columns, report) = supported_columns(table, meta, opts)?;
    let db = generate_prompt_database(meta, table, &columns, opts.seed, opts.target)?;
    let cat = categorical_values(table, meta, &columns)?;
    let specs = extractor_specs(meta, &columns, &cat);
    let training = split_training_files(&db, &specs);
    let configs = generate_model_configs(&specs, &opts.base_model);

    for stale in ["train", "configs"] {
        let dir = out.join(stale);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
    }
    let mut files = Vec::new();
    write_file(out, PROMPT_DB_FILE, &crate::nlu::write_prompt_db(&db), &mut files)?;
    for (param, lines) in &training {
        let body: String = lines
            .iter()
            .map(|l| serde_json::to_string(l).expect("serializable") + "\n")
            .collect();
        write_file(out, &format!("train/{param}.jsonl"), &body, &mut files)?;
    }
    for c in &configs {
        write_file(out, &format!("configs/{}.json", c.param), &to_json(c), &mut files)?;
    }
    write_file(out, SYSTEM_PROMPT_FILE, &render_system_prompt(meta), &mut files)?;
    let manifest = BundleManifest {
        meta: meta.clone(),
        seed: opts.seed,
        columns,
        extractors: specs,
        sample_count: db.len(),
        feature_report: report,
    };
    write_file(out, MANIFEST_FILE, &to_json(&manifest), &mut files)?;
    let digest = bundle_digest(out)?;
    Ok(SetupBundle {
        root: out.to_path_buf(),
        files,
        digest,
        manifest,
    })
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), GenError> {
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

/// SHA-256 over the sorted relative paths and contents of every file.
pub fn bundle_digest(root: &Path) -> Result<String, GenError> {
    let mut files = Vec::new();
    collect_files(root, root, &mut files)?;
    files.sort();
    let mut hasher = Sha256::new();
    for rel in files {
        let path = root.join(&rel);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        hasher.update(rel.to_string_lossy().replace('\\', "/").as_bytes());
        hasher.update([0u8]);
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// A bundle read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedBundle {
    pub root: PathBuf,
    pub manifest: BundleManifest,
    pub prompt_db: Vec<PromptSample>,
    pub system_prompt: String,
}

pub fn load_bundle(root: &Path) -> Result<LoadedBundle, GenError> {
    let read = |rel: &str| -> Result<String, GenError> {
        let p = root.join(rel);
        fs::read_to_string(&p).map_err(io_err(&p))
    };
    let malformed = |rel: &str, e: serde_json::Error| GenError::MalformedBundle {
        path: root.join(rel),
        message: e.to_string(),
    };
    let manifest: BundleManifest =
        serde_json::from_str(&read(MANIFEST_FILE)?).map_err(|e| malformed(MANIFEST_FILE, e))?;
    manifest.meta.validate()?;
    let prompt_db = crate::nlu::read_prompt_db(&read(PROMPT_DB_FILE)?).map_err(|e| malformed(PROMPT_DB_FILE, e))?;
    let system_prompt = read(SYSTEM_PROMPT_FILE)?;
    Ok(LoadedBundle {
        root: root.to_path_buf(),
        manifest,
        prompt_db,
        system_prompt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::parse_table;
    use crate::nlu::{classify_intent, extract_all, DeterministicStrategy};

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

    fn table() -> DataTable {
        let mut csv = String::from("CAMPAIGN,CONVERSION,euribor3m,job\n");
        let jobs = ["admin.", "technician", "blue-collar", "retired"];
        let rates = [4.964, 1.313, 4.857, 0.634, 1.405];
        for i in 0..60 {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                1 + i % 4,
                i % 3 == 0,
                rates[i % rates.len()],
                jobs[i % jobs.len()]
            ));
        }
        parse_table(&meta(), csv.as_bytes()).unwrap()
    }

    fn cols() -> Vec<String> {
        vec!["euribor3m".into(), "job".into()]
    }

    #[test]
    fn database_shape() {
        let db = generate_prompt_database(&meta(), &table(), &cols(), 0, 100).unwrap();
        assert!((90..=110).contains(&db.len()), "{}", db.len());
        let keys: BTreeSet<_> = param_names(&cols()).into_iter().collect();
        for s in &db {
            assert_eq!(s.labels.params.keys().cloned().collect::<BTreeSet<_>>(), keys);
        }
        for l in IntentLabel::ALL {
            assert!(db.iter().any(|s| s.labels.intent == l), "{l}");
        }
        let effect = db.iter().find(|s| s.query == "How does CAMPAIGN affect CONVERSION?").unwrap();
        assert_eq!(effect.labels.intent, IntentLabel::ShowCausalEffect);
        assert!(effect.labels.params.values().all(Option::is_none));
        let cf = db.iter().find(|s| s.query.starts_with("What if euribor3m is ")).unwrap();
        assert_eq!(cf.labels.intent, IntentLabel::Counterfactual);
        assert!(cf.labels.params["euribor3m"].is_some());
        assert_eq!(generate_prompt_database(&meta(), &table(), &cols(), 0, 100).unwrap(), db);
        assert!(matches!(
            generate_prompt_database(&meta(), &table(), &[], 0, 100),
            Err(GenError::NoSupportedColumns)
        ));
    }

    #[test]
    fn deterministic_round_trip() {
        let (m, tb) = (meta(), table());
        let db = generate_prompt_database(&m, &tb, &cols(), 3, 100).unwrap();
        let specs = extractor_specs(&m, &cols(), &categorical_values(&tb, &m, &cols()).unwrap());
        let s = DeterministicStrategy::new(&db, &m, &specs);
        for sample in &db {
            assert_eq!(classify_intent(&sample.query, &s).unwrap(), sample.labels.intent, "{}", sample.query);
            let e = extract_all(&sample.query, &specs, &s);
            for spec in &specs {
                assert_eq!(
                    e.get(&spec.param).map(|v| v.canonical()),
                    sample.labels.params[&spec.param].as_ref().map(Value::canonical),
                    "{} / {}",
                    sample.query,
                    spec.param
                );
            }
        }
    }

    #[test]
    fn training_files_align() {
        let (m, tb) = (meta(), table());
        let db = generate_prompt_database(&m, &tb, &cols(), 0, 100).unwrap();
        let specs = extractor_specs(&m, &cols(), &BTreeMap::new());
        let files = split_training_files(&db, &specs);
        assert_eq!(files.len(), specs.len() + 1);
        for lines in files.values() {
            assert_eq!(lines.len(), db.len());
            for (l, s) in lines.iter().zip(&db) {
                assert_eq!(l.input, s.query);
            }
        }
        let i = db.iter().position(|s| s.query == "Show the causal effect").unwrap();
        assert_eq!(files["intent"][i].output, "show_causal_effect");
        assert_eq!(files["euribor3m"][i].output, "-1");
    }

    #[test]
    fn configs_and_system_prompt() {
        let specs = extractor_specs(&meta(), &cols(), &BTreeMap::new());
        let configs = generate_model_configs(&specs, DEFAULT_BASE_MODEL);
        assert_eq!(configs.len(), specs.len() + 1);
        assert!(configs[0].init_text.contains("Classify command as one of following API calls."));
        let e = configs.iter().find(|c| c.param == "euribor3m").unwrap();
        assert!(e.init_text.contains("extract out the value of \"euribor3m\""));
        assert!(e.init_text.contains("output -1"));
        for c in &configs {
            assert_eq!(c.hyperparams, Hyperparams::default());
            assert_eq!(c.init_method, "text");
        }
        let p = render_system_prompt(&meta());
        assert!(p.contains("Action variable is CAMPAIGN."));
        assert!(p.contains("using a Bank Marketing dataset"));
        assert!(p.contains("counterfactual"));
        assert!(!p.contains('{') && !p.contains('}'));
    }

    #[test]
    fn setup_is_reproducible() {
        let (m, tb) = (meta(), table());
        let opts = SetupOptions {
            skip_feature_selection: true,
            ..SetupOptions::default()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ba = run_setup(&m, &tb, &opts, a.path()).unwrap();
        let bb = run_setup(&m, &tb, &opts, b.path()).unwrap();
        assert_eq!(ba.digest, bb.digest);
        assert_eq!(run_setup(&m, &tb, &opts, a.path()).unwrap().digest, ba.digest);
        let c = tempfile::tempdir().unwrap();
        let bc = run_setup(&m, &tb, &SetupOptions { seed: 7, ..opts.clone() }, c.path()).unwrap();
        assert_ne!(bc.digest, ba.digest);
        assert_eq!(
            fs::read(a.path().join(SYSTEM_PROMPT_FILE)).unwrap(),
            fs::read(c.path().join(SYSTEM_PROMPT_FILE)).unwrap()
        );
        assert!(ba.files.iter().filter(|f| f.starts_with("configs")).count() >= 5);
        let loaded = load_bundle(a.path()).unwrap();
        assert_eq!(loaded.prompt_db.len(), ba.manifest.sample_count);
        assert_eq!(loaded.manifest, ba.manifest);
    }
}
