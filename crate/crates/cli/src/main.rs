use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use prescribe_core::agent::{run_job, AgentContext, AgentTurnResult, JobCompletion, Session, StrategyChoice};
use prescribe_core::dataset::{load_metadata, load_table_at, DataTable, DatasetMetadata};
use prescribe_core::demo::run_demo;
use prescribe_core::eval::{emit_report, evaluate, perturb_queries, MetricsReport, ReportFormat};
use prescribe_core::genpipeline::{load_bundle, run_setup, LoadedBundle, SetupOptions, DEFAULT_TARGET};
use prescribe_core::llm::{ChatProvider, ProviderConfig, ProviderKind};
use prescribe_core::nlu::{DeterministicStrategy, FewShotStrategy, IntentLabel, NluStrategy, DEFAULT_K_EXAMPLES};
use prescribe_core::transcript::{render_html, render_json};
use prescribe_server::{AppState, ServerOptions, DEFAULT_UI_ORIGIN, DEFAULT_WORKERS};
use serde::{Deserialize, Serialize};

/// Exit code 2: the invocation itself is wrong (missing inputs, bad flags).
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn existing(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(usage(format!("{what} not found: {}", path.display())));
    }
    Ok(())
}

#[derive(Parser)]
#[command(name = "prescribe", version, about = "Conversational prescriptive analytics agent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the prompt database, training files, configs and system prompt.
    Setup(SetupArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Evaluate intent classification and parameter extraction.
    Eval(EvalArgs),
    /// Run one headless conversational turn.
    Ask(AskArgs),
    /// Play the scripted walkthrough on the synthetic bank fixture.
    Demo(DemoArgs),
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum OutFormat {
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalFormat {
    Markdown,
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyName {
    Deterministic,
    Fewshot,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderName {
    Scripted,
    Http,
    Echo,
}

#[derive(Args, Clone)]
struct ProviderArgs {
    /// Chat provider; http reads PRESCRIBE_LLM_ENDPOINT, PRESCRIBE_LLM_API_KEY and PRESCRIBE_LLM_MODEL.
    #[arg(long, value_enum, default_value = "scripted")]
    provider: ProviderName,
    /// JSONL rules for the scripted provider.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long, default_value_t = 30.0)]
    timeout: f64,
}

impl ProviderArgs {
    fn build(&self) -> Result<Arc<dyn ChatProvider>> {
        let kind = match self.provider {
            ProviderName::Scripted => ProviderKind::Scripted,
            ProviderName::Http => ProviderKind::Http,
            ProviderName::Echo => ProviderKind::Echo,
        };
        if let Some(s) = &self.script {
            existing(s, "script")?;
        }
        let mut cfg = ProviderConfig::new(kind);
        cfg.script = self.script.clone();
        cfg.timeout_secs = self.timeout;
        Ok(Arc::from(cfg.build().context("building chat provider")?))
    }
}

#[derive(Args)]
struct SetupArgs {
    #[arg(long)]
    meta: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_TARGET)]
    target_count: usize,
    #[arg(long)]
    skip_feature_selection: bool,
    #[arg(long, value_enum, default_value = "text")]
    format: OutFormat,
}

#[derive(Args)]
struct BundleArgs {
    /// Bundle directory written by `setup`.
    #[arg(long)]
    bundle: PathBuf,
    /// Data CSV; defaults to the path recorded in the bundle metadata.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Metadata overriding the bundle's (e.g. columns switched off).
    #[arg(long)]
    meta: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "deterministic")]
    strategy: StrategyName,
    #[arg(long, default_value_t = DEFAULT_K_EXAMPLES)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ServeArgs {
    /// Without a bundle the server starts but answers 503.
    #[arg(long)]
    bundle: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    meta: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "deterministic")]
    strategy: StrategyName,
    #[arg(long, default_value_t = DEFAULT_K_EXAMPLES)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    provider: ProviderArgs,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value_t = DEFAULT_WORKERS)]
    workers: usize,
    /// Built UI assets served from `/`.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
    #[arg(long = "cors-origin", default_values_t = vec![DEFAULT_UI_ORIGIN.to_string()])]
    cors_origins: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, required_unless_present = "predictions")]
    bundle: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "deterministic")]
    strategy: StrategyName,
    #[command(flatten)]
    provider: ProviderArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Size of the perturbed test set; 0 evaluates the prompt database itself.
    #[arg(long, default_value_t = 238)]
    n: usize,
    #[arg(long, default_value_t = DEFAULT_K_EXAMPLES)]
    k: usize,
    /// Score an existing JSONL file of {"gold", "predicted"} intents instead.
    #[arg(long, conflicts_with = "bundle")]
    predictions: Option<PathBuf>,
    /// Also write the perturbed test set as JSONL.
    #[arg(long)]
    write_testset: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "markdown")]
    format: EvalFormat,
}

#[derive(Args)]
struct AskArgs {
    #[command(flatten)]
    bundle: BundleArgs,
    #[command(flatten)]
    provider: ProviderArgs,
    /// Earlier turns played before the query, in order.
    #[arg(long = "history")]
    history: Vec<String>,
    query: String,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "text")]
    format: OutFormat,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::Setup(a) => setup(a),
        Command::Serve(a) => serve(a),
        Command::Eval(a) => eval(a),
        Command::Ask(a) => ask(a),
        Command::Demo(a) => demo(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.downcast_ref::<UsageError>().is_some() { 2 } else { 1 })
        }
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

#[derive(Serialize)]
struct SetupReport<'a> {
    out: &'a Path,
    digest: &'a str,
    columns: &'a [String],
    sample_count: usize,
    files: &'a [PathBuf],
}

fn setup(a: SetupArgs) -> Result<()> {
    existing(&a.meta, "metadata")?;
    existing(&a.data, "data")?;
    let meta = load_metadata(&a.meta)?;
    let table = load_table_at(&meta, &a.data)?;
    let opts = SetupOptions {
        seed: a.seed,
        target: a.target_count,
        skip_feature_selection: a.skip_feature_selection,
        ..SetupOptions::default()
    };
    let bundle = run_setup(&meta, &table, &opts, &a.out)?;
    let report = SetupReport {
        out: &a.out,
        digest: &bundle.digest,
        columns: &bundle.manifest.columns,
        sample_count: bundle.manifest.sample_count,
        files: &bundle.files,
    };
    if a.format == OutFormat::Json {
        return print_json(&report);
    }
    println!("selected columns: {}", report.columns.join(", "));
    println!("prompt samples: {}", report.sample_count);
    println!("bundle digest: {}", report.digest);
    println!("files:");
    for f in report.files {
        println!("  {}", f.display());
    }
    Ok(())
}

struct Loaded {
    bundle: LoadedBundle,
    meta: DatasetMetadata,
    table: DataTable,
}

fn load_inputs(bundle: &Path, data: Option<&Path>, meta: Option<&Path>) -> Result<Loaded> {
    existing(bundle, "bundle")?;
    let loaded = load_bundle(bundle)?;
    let meta = match meta {
        Some(p) => {
            existing(p, "metadata")?;
            load_metadata(p)?
        }
        None => loaded.manifest.meta.clone(),
    };
    let data = data.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&meta.path));
    existing(&data, "data")?;
    let table = load_table_at(&meta, &data)?;
    Ok(Loaded {
        bundle: loaded,
        meta,
        table,
    })
}

fn strategy_choice(s: StrategyName, k: usize, seed: u64) -> StrategyChoice {
    match s {
        StrategyName::Deterministic => StrategyChoice::Deterministic,
        StrategyName::Fewshot => StrategyChoice::FewShot { k, seed },
    }
}

fn context(l: Loaded, provider: Arc<dyn ChatProvider>, choice: StrategyChoice) -> AgentContext {
    let override_meta = l.meta != l.bundle.manifest.meta;
    let ctx = AgentContext::new(l.bundle, Arc::new(l.table), provider, choice);
    if override_meta {
        ctx.with_meta(l.meta)
    } else {
        ctx
    }
}

fn serve(a: ServeArgs) -> Result<()> {
    let provider = a.provider.build()?;
    let ctx = match &a.bundle {
        Some(b) => {
            let l = load_inputs(b, a.data.as_deref(), a.meta.as_deref())?;
            Some(context(l, provider, strategy_choice(a.strategy, a.k, a.seed)))
        }
        None => None,
    };
    let opts = ServerOptions {
        workers: a.workers,
        cors_origins: a.cors_origins,
        ui_dir: a.ui_dir,
    };
    let state = AppState::new(ctx, opts.workers);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .with_context(|| format!("binding {}:{}", a.host, a.port))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        prescribe_server::serve(listener, state, opts).await?;
        Ok(())
    })
}

#[derive(Deserialize)]
struct PredictionLine {
    gold: String,
    predicted: String,
}

fn parse_intent(raw: &str, line: usize) -> Result<IntentLabel> {
    IntentLabel::ALL
        .into_iter()
        .find(|l| l.as_str() == raw.trim())
        .with_context(|| format!("line {line}: unknown intent `{raw}`"))
}

fn score_predictions(path: &Path) -> Result<MetricsReport> {
    existing(path, "predictions")?;
    let text = fs::read_to_string(path)?;
    let (mut gold, mut pred) = (Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let p: PredictionLine = serde_json::from_str(line).with_context(|| format!("line {}", i + 1))?;
        gold.push(parse_intent(&p.gold, i + 1)?);
        pred.push(parse_intent(&p.predicted, i + 1)?);
    }
    if gold.is_empty() {
        bail!("no predictions in {}", path.display());
    }
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(MetricsReport::from_predictions(&name, &gold, &pred, &[]))
}

fn eval(a: EvalArgs) -> Result<()> {
    let report = match (&a.predictions, &a.bundle) {
        (Some(p), _) => score_predictions(p)?,
        (None, Some(b)) => {
            existing(b, "bundle")?;
            let bundle = load_bundle(b)?;
            let meta = &bundle.manifest.meta;
            let specs = &bundle.manifest.extractors;
            let db = &bundle.prompt_db;
            let testset = if a.n == 0 {
                db.clone()
            } else {
                let protected: Vec<String> = meta.columns.iter().map(|c| c.name.clone()).collect();
                perturb_queries(db, a.seed, a.n, &protected)
            };
            if let Some(path) = &a.write_testset {
                fs::write(path, prescribe_core::nlu::write_prompt_db(&testset))
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            let strategy: Box<dyn NluStrategy> = match a.strategy {
                StrategyName::Deterministic => Box::new(DeterministicStrategy::new(db, meta, specs)),
                StrategyName::Fewshot => Box::new(FewShotStrategy::new(a.provider.build()?, db, a.k, a.seed)),
            };
            evaluate(strategy.as_ref(), specs, &testset)?
        }
        (None, None) => return Err(usage("either --bundle or --predictions is required")),
    };
    let format = match a.format {
        EvalFormat::Markdown => ReportFormat::Markdown,
        EvalFormat::Json => ReportFormat::Json,
        EvalFormat::Csv => ReportFormat::Csv,
    };
    print!("{}", emit_report(&[report], format));
    Ok(())
}

#[derive(Serialize)]
struct AskOutput {
    #[serde(flatten)]
    turn: AgentTurnResult,
    completion: Option<JobCompletion>,
}

fn ask(a: AskArgs) -> Result<()> {
    if a.query.trim().is_empty() {
        return Err(usage("query must not be empty"));
    }
    let b = &a.bundle;
    let l = load_inputs(&b.bundle, b.data.as_deref(), b.meta.as_deref())?;
    let ctx = Arc::new(context(l, a.provider.build()?, strategy_choice(b.strategy, b.k, b.seed)));
    let mut session = Session::new("cli", ctx.clone());
    for h in &a.history {
        session.ask(h);
    }
    let (turn, job) = session.handle_query(&a.query);
    let completion = job.map(|j| {
        let outcome = run_job(&ctx, &j);
        session.complete_job(&j, outcome)
    });
    print_json(&AskOutput { turn, completion })
}

#[derive(Serialize)]
struct DemoStepSummary<'a> {
    query: &'a str,
    intent: &'a str,
    missing: &'a [String],
    reply: &'a str,
    tool: Option<&'a str>,
    charts: Vec<&'static str>,
}

#[derive(Serialize)]
struct DemoReport<'a> {
    out: &'a Path,
    bundle_digest: &'a str,
    transcript_html: PathBuf,
    transcript_json: PathBuf,
    events: PathBuf,
    steps: Vec<DemoStepSummary<'a>>,
    conditions: BTreeMap<String, prescribe_core::dataset::Value>,
}

fn demo(a: DemoArgs) -> Result<()> {
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let run = run_demo(&a.out, a.seed)?;
    let html = a.out.join("transcript.html");
    let json = a.out.join("transcript.json");
    let events = a.out.join("events.jsonl");
    fs::write(&html, render_html("Bank Marketing conversation", &run.session.transcript))?;
    fs::write(&json, render_json(&run.session.transcript))?;
    let log: String = run
        .session
        .events
        .all()
        .iter()
        .map(|e| serde_json::to_string(e).expect("serializable event") + "\n")
        .collect();
    fs::write(&events, log)?;
    let report = DemoReport {
        out: &a.out,
        bundle_digest: &run.bundle.digest,
        transcript_html: html,
        transcript_json: json,
        events,
        steps: run
            .steps
            .iter()
            .map(|s| DemoStepSummary {
                query: &s.query,
                intent: s.turn.intent.as_str(),
                missing: &s.turn.missing,
                reply: s.completion.as_ref().map_or(&s.turn.reply, |c| &c.reply),
                tool: s.completion.as_ref().map(|c| c.tool.as_str()),
                charts: s
                    .completion
                    .as_ref()
                    .map(|c| c.charts.iter().map(|ch| ch.kind()).collect())
                    .unwrap_or_default(),
            })
            .collect(),
        conditions: run.session.params.snapshot(),
    };
    if a.format == OutFormat::Json {
        return print_json(&report);
    }
    for s in &report.steps {
        println!("USER:  {}", s.query);
        println!("AGENT: {}", s.reply);
        if !s.charts.is_empty() {
            println!("       [{} chart(s): {}]", s.charts.len(), s.charts.join(", "));
        }
    }
    println!("transcript: {}", report.transcript_html.display());
    Ok(())
}
