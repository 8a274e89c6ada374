//! Per-session orchestration: intent and parameter extraction, memory merge,
//! follow-ups, tool dispatch and grounded replies.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chart::{format_significant, ChartSpec};
use crate::dataset::{distinct_values, ColumnData, DataTable, DatasetMetadata, Value};
use crate::events::{EventLog, EventType};
use crate::genpipeline::LoadedBundle;
use crate::llm::{ChatMessage, ChatProvider, ChatRole, Sampling};
use crate::nlu::{
    classify_intent, extract_all, extract_param, DeterministicStrategy, Extraction, ExtractorSpec, FewShotStrategy,
    IntentLabel, NluStrategy, AVERAGE_BUDGET, NUM_RULES, SHOW_ERROR,
};
use crate::par;
use crate::tools::{
    self, check_param, lookup, missing_params, ParamSpec, ToolCall, ToolContext, ToolError, ToolResult, ToolSpec,
    COUNTERFACTUAL, RUN_OPTIMIZE, SELECT_FEATURES, SHOW_CAUSAL_EFFECT, SHOW_CURRENT_POLICY,
};

pub const DEFAULT_CHAT_K: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionKind {
    FollowUp,
    PresentResult,
    ToolInsight,
}

/// A system instruction placed right before the completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub kind: InjectionKind,
    pub content: String,
}

impl Injection {
    pub fn follow_up(missing: &[String]) -> Self {
        Injection {
            kind: InjectionKind::FollowUp,
            content: format!(
                "Respond to the users query but ask to provide the following missing parameters: [{}]",
                missing.join(", ")
            ),
        }
    }

    pub fn present_result(result: &ToolResult) -> Self {
        Injection {
            kind: InjectionKind::PresentResult,
            content: format!(
                "Simply respond to the user that the result is {}. Say nothing else and do not make up anything.",
                result.text_summary
            ),
        }
    }

    pub fn tool_insight(spec: &ToolSpec) -> Self {
        Injection {
            kind: InjectionKind::ToolInsight,
            content: format!("Inform the user you are running a tool that does {}", spec.description),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub user: String,
    pub agent: String,
}

/// The last `k` (user, agent) exchanges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMemory {
    pub k: usize,
    turns: VecDeque<Exchange>,
}

impl ChatMemory {
    pub fn new(k: usize) -> Self {
        ChatMemory {
            k,
            turns: VecDeque::new(),
        }
    }

    pub fn push(&mut self, user: &str, agent: &str) {
        self.turns.push_back(Exchange {
            user: user.to_string(),
            agent: agent.to_string(),
        });
        while self.turns.len() > self.k {
            self.turns.pop_front();
        }
    }

    /// Appends to the agent side of the newest exchange if it answers
    /// `user`; otherwise records a new exchange.
    pub fn amend_last(&mut self, user: &str, agent: &str) {
        match self.turns.back_mut() {
            Some(last) if last.user == user => {
                last.agent.push('\n');
                last.agent.push_str(agent);
            }
            _ => self.push(user, agent),
        }
    }

    pub fn turns(&self) -> impl Iterator<Item = &Exchange> {
        self.turns.iter()
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }
}

/// Extracted conditions and tool parameters, kept until removed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterMemory {
    pub conditions: BTreeMap<String, Value>,
    pub tool_params: BTreeMap<String, Value>,
    /// Query index that last set each key.
    pub provenance: BTreeMap<String, usize>,
}

impl ParameterMemory {
    pub fn snapshot(&self) -> BTreeMap<String, Value> {
        self.conditions
            .iter()
            .chain(self.tool_params.iter())
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.conditions.get(key).or_else(|| self.tool_params.get(key))
    }

    fn store(&mut self, key: &str, value: Value, query_index: usize) -> bool {
        let slot = if is_system_param(key) {
            &mut self.tool_params
        } else {
            &mut self.conditions
        };
        let changed = slot.get(key) != Some(&value);
        slot.insert(key.to_string(), value);
        self.provenance.insert(key.to_string(), query_index);
        changed
    }

    fn remove(&mut self, key: &str) -> bool {
        self.provenance.remove(key);
        self.conditions.remove(key).is_some() | self.tool_params.remove(key).is_some()
    }
}

pub fn is_system_param(name: &str) -> bool {
    matches!(name, NUM_RULES | AVERAGE_BUDGET | SHOW_ERROR)
}

fn system_param_spec(name: &str) -> Option<ParamSpec> {
    tools::registry()
        .into_iter()
        .flat_map(|t| t.params)
        .find(|p| p.name == name)
}

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("value for `{name}` must be {expected}")]
    BadParamType { name: String, expected: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyChoice {
    Deterministic,
    FewShot { k: usize, seed: u64 },
}

/// Everything a session needs that is shared across sessions.
pub struct AgentContext {
    pub meta: DatasetMetadata,
    pub table: Arc<DataTable>,
    /// Columns with extractors, also used as adjustment covariates.
    pub columns: Vec<String>,
    pub specs: Vec<ExtractorSpec>,
    pub system_prompt: String,
    pub strategy: Arc<dyn NluStrategy>,
    pub fallback: Arc<DeterministicStrategy>,
    pub provider: Arc<dyn ChatProvider>,
    pub seed: u64,
    pub folds: usize,
    pub k: usize,
    bundle: LoadedBundle,
    choice: StrategyChoice,
}

impl AgentContext {
    pub fn new(
        bundle: LoadedBundle,
        table: Arc<DataTable>,
        provider: Arc<dyn ChatProvider>,
        choice: StrategyChoice,
    ) -> Self {
        let meta = bundle.manifest.meta.clone();
        Self::build(bundle, meta, table, provider, choice)
    }

    fn build(
        bundle: LoadedBundle,
        meta: DatasetMetadata,
        table: Arc<DataTable>,
        provider: Arc<dyn ChatProvider>,
        choice: StrategyChoice,
    ) -> Self {
        let enabled: Vec<String> = meta.covariate_names();
        let columns: Vec<String> = bundle
            .manifest
            .columns
            .iter()
            .filter(|c| enabled.contains(c))
            .cloned()
            .collect();
        let specs: Vec<ExtractorSpec> = bundle
            .manifest
            .extractors
            .iter()
            .filter(|s| s.is_system() || columns.contains(&s.param))
            .cloned()
            .collect();
        let fallback = Arc::new(DeterministicStrategy::new(&bundle.prompt_db, &meta, &specs));
        let strategy: Arc<dyn NluStrategy> = match choice {
            StrategyChoice::Deterministic => fallback.clone(),
            StrategyChoice::FewShot { k, seed } => {
                Arc::new(FewShotStrategy::new(provider.clone(), &bundle.prompt_db, k, seed))
            }
        };
        AgentContext {
            system_prompt: bundle.system_prompt.clone(),
            seed: bundle.manifest.seed,
            folds: tools::DEFAULT_FOLDS,
            k: DEFAULT_CHAT_K,
            meta,
            table,
            columns,
            specs,
            strategy,
            fallback,
            provider,
            bundle,
            choice,
        }
    }

    /// A context over updated metadata (e.g. a column switched off).
    pub fn with_meta(&self, meta: DatasetMetadata) -> Self {
        let mut ctx = Self::build(
            self.bundle.clone(),
            meta,
            self.table.clone(),
            self.provider.clone(),
            self.choice,
        );
        ctx.folds = self.folds;
        ctx.k = self.k;
        ctx
    }

    pub fn with_chat_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn tool_context(&self) -> ToolContext<'_> {
        ToolContext {
            table: &self.table,
            meta: &self.meta,
            features: &self.columns,
            seed: self.seed,
            folds: self.folds,
        }
    }

    fn spec(&self, param: &str) -> Option<&ExtractorSpec> {
        self.specs.iter().find(|s| s.param == param)
    }
}

/// A tool run dispatched by a turn; executed off the session lock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingJob {
    pub id: String,
    pub tool: String,
    pub call: ToolCall,
    pub query: String,
}

pub fn run_job(ctx: &AgentContext, job: &PendingJob) -> Result<ToolResult, ToolError> {
    tools::execute(&job.tool, &job.call, &ctx.tool_context())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTurnResult {
    pub reply: String,
    pub charts: Vec<ChartSpec>,
    pub intent: IntentLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<String>,
    pub missing: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job: Option<String>,
    pub conditions_snapshot: BTreeMap<String, Value>,
    pub extracted: BTreeMap<String, Value>,
    /// Whether the reply came from the deterministic template.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobCompletion {
    pub job_id: String,
    pub tool: String,
    pub reply: String,
    pub charts: Vec<ChartSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<ToolResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    User,
    Agent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub charts: Vec<ChartSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<IntentLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job: Option<String>,
}

#[derive(Debug, Clone)]
struct FollowUpState {
    intent: IntentLabel,
    missing: Vec<String>,
}

/// Numeric tokens of a text: words that read as numbers once surrounding
/// punctuation is removed ("8.39%" counts, "euribor3m" does not).
pub fn numeric_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|w| {
            let t = w.trim_matches(|c: char| !c.is_alphanumeric() && c != '%' && c != '-' && c != '$');
            let t = t.trim_end_matches(['.', '-']);
            let core = t.trim_start_matches(['$', '+']).trim_end_matches('%');
            let body = core.strip_prefix('-').unwrap_or(core);
            let valid = !body.is_empty()
                && body.chars().next().is_some_and(|c| c.is_ascii_digit())
                && body.chars().all(|c| c.is_ascii_digit() || c == '.' || c == ',');
            valid.then(|| core.replace(',', ""))
        })
        .collect()
}

/// Every numeric token of `reply` must occur among the numeric tokens of
/// `sources`.
pub fn audit_numbers(reply: &str, sources: &[&str]) -> bool {
    let allowed: Vec<String> = sources.iter().flat_map(|s| numeric_tokens(s)).collect();
    numeric_tokens(reply).iter().all(|tok| {
        allowed.iter().any(|a| {
            a == tok
                || match (a.parse::<f64>(), tok.parse::<f64>()) {
                    (Ok(x), Ok(y)) => x == y,
                    _ => false,
                }
        })
    })
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

fn join_names(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        _ => format!("{} and {}", items[..items.len() - 1].join(", "), items[items.len() - 1]),
    }
}

fn slot_to_json(v: &Value) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable value")
}

pub struct Session {
    pub id: String,
    ctx: Arc<AgentContext>,
    pub params: ParameterMemory,
    pub chat: ChatMemory,
    pub events: EventLog,
    pub transcript: Vec<TranscriptEntry>,
    query_count: usize,
    job_count: usize,
    follow_up: Option<FollowUpState>,
    last_tool: Option<String>,
    last_result: Option<ToolResult>,
    /// Replies replaced by the deterministic template.
    pub fallback_count: usize,
}

impl Session {
    pub fn new(id: impl Into<String>, ctx: Arc<AgentContext>) -> Self {
        let k = ctx.k;
        Session {
            id: id.into(),
            ctx,
            params: ParameterMemory::default(),
            chat: ChatMemory::new(k),
            events: EventLog::new(),
            transcript: Vec::new(),
            query_count: 0,
            job_count: 0,
            follow_up: None,
            last_tool: None,
            last_result: None,
            fallback_count: 0,
        }
    }

    pub fn context(&self) -> &Arc<AgentContext> {
        &self.ctx
    }

    /// Switches to a new shared context; stored values for columns the new
    /// context no longer supports are dropped.
    pub fn set_context(&mut self, ctx: Arc<AgentContext>) {
        let stale: Vec<String> = self
            .params
            .conditions
            .keys()
            .filter(|c| !ctx.columns.contains(c))
            .cloned()
            .collect();
        self.ctx = ctx;
        if !stale.is_empty() {
            for c in &stale {
                self.params.remove(c);
            }
            self.emit_conditions();
        }
    }

    pub fn last_tool(&self) -> Option<&str> {
        self.last_tool.as_deref()
    }

    fn emit_conditions(&mut self) {
        let snap = self.params.snapshot();
        self.events.push(
            EventType::ConditionsChanged,
            serde_json::json!({ "conditions": snap, "provenance": self.params.provenance }),
        );
    }

    /// The chat prompt: system prompt, the retained exchanges, the current
    /// user turn and the optional injection.
    pub fn build_prompt(&self, query: &str, injection: Option<&Injection>, skip_last: bool) -> Vec<ChatMessage> {
        let mut msgs = vec![ChatMessage::new(ChatRole::System, self.ctx.system_prompt.clone())];
        let turns: Vec<&Exchange> = self.chat.turns().collect();
        let turns = if skip_last && turns.last().is_some_and(|t| t.user == query) {
            &turns[..turns.len() - 1]
        } else {
            &turns[..]
        };
        for t in turns {
            msgs.push(ChatMessage::new(ChatRole::User, t.user.clone()));
            msgs.push(ChatMessage::new(ChatRole::Agent, t.agent.clone()));
        }
        msgs.push(ChatMessage::new(ChatRole::User, query.to_string()));
        if let Some(inj) = injection {
            msgs.push(ChatMessage::new(ChatRole::InjectedSystem, inj.content.clone()));
        }
        msgs
    }

    /// Completion with the numeric audit; returns (reply, used_fallback).
    fn chat_reply(
        &mut self,
        query: &str,
        injection: Option<&Injection>,
        grounding: &[&str],
        fallback: String,
        skip_last: bool,
    ) -> (String, bool) {
        let prompt = self.build_prompt(query, injection, skip_last);
        let mut sources: Vec<&str> = vec![query];
        if let Some(inj) = injection {
            sources.push(&inj.content);
        }
        sources.extend_from_slice(grounding);
        match self.ctx.provider.complete(&prompt, &Sampling::chat()) {
            Ok(text) if !text.trim().is_empty() && audit_numbers(&text, &sources) => (text.trim().to_string(), false),
            _ => {
                self.fallback_count += 1;
                (fallback, true)
            }
        }
    }

    fn capabilities_reply(&self) -> String {
        let m = &self.ctx.meta;
        format!(
            "I can help you with the {} dataset: finding the most important features, showing how {} affects {}, \
             showing your current policy, running what-if scenarios and optimizing your policy. What would you like to do?",
            m.title, m.action_column, m.outcome_column
        )
    }

    fn understand(&self, query: &str) -> (IntentLabel, Extraction) {
        let ctx = &self.ctx;
        let (intent, mut extraction) = par::join(
            || classify_intent(query, ctx.strategy.as_ref()),
            || extract_all(query, &ctx.specs, ctx.strategy.as_ref()),
        );
        let intent = intent.unwrap_or_else(|_| {
            classify_intent(query, ctx.fallback.as_ref()).unwrap_or(IntentLabel::Unknown)
        });
        let failed: Vec<String> = extraction.errors.keys().cloned().collect();
        for param in failed {
            if let Some(spec) = ctx.spec(&param) {
                let v = extract_param(query, spec, ctx.fallback.as_ref()).unwrap_or(None);
                extraction.values.insert(param, v);
            }
        }
        (intent, extraction)
    }

    fn admissible(&self, param: &str, value: &Value) -> bool {
        if is_system_param(param) {
            system_param_spec(param).is_some_and(|p| check_param(&p, &slot_to_json(value)).is_ok())
        } else {
            self.ctx
                .meta
                .column(param)
                .is_some_and(|c| value.fits(c.dtype))
        }
    }

    fn build_call(&self, tool: &str) -> ToolCall {
        let mut call = ToolCall::default();
        let take = |name: &str, call: &mut ToolCall| {
            if let Some(v) = self.params.tool_params.get(name) {
                call.params.insert(name.to_string(), slot_to_json(v));
            }
        };
        match tool {
            SHOW_CAUSAL_EFFECT => take(SHOW_ERROR, &mut call),
            COUNTERFACTUAL => call.conditions = self.params.conditions.clone(),
            RUN_OPTIMIZE => {
                take(NUM_RULES, &mut call);
                take(AVERAGE_BUDGET, &mut call);
                call.conditions = self.params.conditions.clone();
            }
            _ => {}
        }
        call
    }

    /// Runs the query flow up to dispatch. A returned job must be executed
    /// with [`run_job`] and handed back to [`Session::complete_job`].
    pub fn handle_query(&mut self, query: &str) -> (AgentTurnResult, Option<PendingJob>) {
        let query_index = self.query_count;
        self.query_count += 1;
        let (mut intent, extraction) = self.understand(query);

        let mut extracted = BTreeMap::new();
        let mut changed = false;
        let mut condition_in_query = false;
        for (param, slot) in extraction.present() {
            let Some(value) = slot.value() else { continue };
            if !self.admissible(param, value) {
                continue;
            }
            if !is_system_param(param) {
                condition_in_query = true;
            }
            extracted.insert(param.clone(), value.clone());
            changed |= self.params.store(param, value.clone(), query_index);
        }
        if changed {
            self.emit_conditions();
        }

        if let Some(pending) = &self.follow_up {
            let answers_follow_up = pending
                .missing
                .iter()
                .any(|m| extracted.contains_key(m) || (m == "conditions" && condition_in_query));
            if intent == IntentLabel::Unknown && answers_follow_up {
                intent = pending.intent;
            }
        }
        if intent == IntentLabel::ShowCausalEffect && condition_in_query {
            intent = IntentLabel::Counterfactual;
        }

        self.transcript.push(TranscriptEntry {
            speaker: Speaker::User,
            text: query.to_string(),
            charts: Vec::new(),
            intent: Some(intent),
            job: None,
        });

        let mut missing = Vec::new();
        let mut job = None;
        let tool_name = intent.tool().map(str::to_string);
        let (reply, fallback) = match intent.tool().and_then(lookup) {
            None => {
                self.follow_up = None;
                let fb = self.capabilities_reply();
                self.chat_reply(query, None, &[], fb, false)
            }
            Some(spec) => {
                let call = self.build_call(&spec.name);
                missing = missing_params(&spec, &call);
                if !missing.is_empty() {
                    self.follow_up = Some(FollowUpState {
                        intent,
                        missing: missing.clone(),
                    });
                    let inj = Injection::follow_up(&missing);
                    let fb = format!(
                        "Happy to help with that! Could you please provide the following: {}?",
                        join_names(&missing)
                    );
                    self.chat_reply(query, Some(&inj), &[], fb, false)
                } else {
                    self.follow_up = None;
                    self.job_count += 1;
                    let id = format!("job-{}", self.job_count);
                    let inj = Injection::tool_insight(&spec);
                    let fb = format!("Sure! I'm running a tool for you. {}", spec.description);
                    let reply = self.chat_reply(query, Some(&inj), &[], fb, false);
                    job = Some(PendingJob {
                        id,
                        tool: spec.name.clone(),
                        call,
                        query: query.to_string(),
                    });
                    reply
                }
            }
        };

        self.events.push(
            EventType::AgentMessage,
            serde_json::json!({
                "text": reply,
                "in_reply_to": query,
                "intent": intent,
                "missing": missing,
                "job_id": job.as_ref().map(|j| j.id.clone()),
            }),
        );
        if let Some(j) = &job {
            self.events.push(
                EventType::ToolStarted,
                serde_json::json!({
                    "job_id": j.id,
                    "tool": j.tool,
                    "params": j.call.params,
                    "conditions": j.call.conditions,
                }),
            );
        }
        self.chat.push(query, &reply);
        self.transcript.push(TranscriptEntry {
            speaker: Speaker::Agent,
            text: reply.clone(),
            charts: Vec::new(),
            intent: Some(intent),
            job: job.as_ref().map(|j| j.id.clone()),
        });

        let result = AgentTurnResult {
            reply,
            charts: Vec::new(),
            intent,
            tool: tool_name,
            missing,
            job: job.as_ref().map(|j| j.id.clone()),
            conditions_snapshot: self.params.snapshot(),
            extracted,
            fallback,
        };
        (result, job)
    }

    /// Posts a finished job back into the session: tool_result event and
    /// the grounded presentation reply.
    pub fn complete_job(&mut self, job: &PendingJob, outcome: Result<ToolResult, ToolError>) -> JobCompletion {
        match outcome {
            Ok(result) => {
                self.events.push(
                    EventType::ToolResult,
                    serde_json::json!({ "job_id": job.id, "tool": job.tool, "result": result }),
                );
                let inj = Injection::present_result(&result);
                let fb = format!("{}.", capitalize(&result.text_summary));
                let (reply, fallback) =
                    self.chat_reply(&job.query, Some(&inj), &[result.text_summary.as_str()], fb, true);
                self.events.push(
                    EventType::AgentMessage,
                    serde_json::json!({ "text": reply, "job_id": job.id, "charts": result.charts }),
                );
                self.chat.amend_last(&job.query, &reply);
                self.transcript.push(TranscriptEntry {
                    speaker: Speaker::Agent,
                    text: reply.clone(),
                    charts: result.charts.clone(),
                    intent: None,
                    job: Some(job.id.clone()),
                });
                self.last_tool = Some(job.tool.clone());
                let charts = result.charts.clone();
                self.last_result = Some(result.clone());
                JobCompletion {
                    job_id: job.id.clone(),
                    tool: job.tool.clone(),
                    reply,
                    charts,
                    result: Some(result),
                    error: None,
                    fallback,
                }
            }
            Err(e) => {
                let message = e.to_string();
                self.events.push(
                    EventType::Error,
                    serde_json::json!({ "job_id": job.id, "tool": job.tool, "message": message }),
                );
                let reply = format!("Sorry, I could not complete that request: {message}");
                self.events.push(
                    EventType::AgentMessage,
                    serde_json::json!({ "text": reply, "job_id": job.id }),
                );
                self.chat.amend_last(&job.query, &reply);
                self.transcript.push(TranscriptEntry {
                    speaker: Speaker::Agent,
                    text: reply.clone(),
                    charts: Vec::new(),
                    intent: None,
                    job: Some(job.id.clone()),
                });
                JobCompletion {
                    job_id: job.id.clone(),
                    tool: job.tool.clone(),
                    reply,
                    charts: Vec::new(),
                    result: None,
                    error: Some(message),
                    fallback: true,
                }
            }
        }
    }

    /// Handles a query and runs any dispatched job inline.
    pub fn ask(&mut self, query: &str) -> (AgentTurnResult, Option<JobCompletion>) {
        let (turn, job) = self.handle_query(query);
        let completion = job.map(|j| {
            let outcome = run_job(&self.ctx, &j);
            self.complete_job(&j, outcome)
        });
        (turn, completion)
    }

    pub fn set_condition(&mut self, column: &str, value: Value) -> Result<BTreeMap<String, Value>, AgentError> {
        let value = if is_system_param(column) {
            let spec = system_param_spec(column).ok_or_else(|| AgentError::UnknownColumn(column.into()))?;
            check_param(&spec, &slot_to_json(&value)).map_err(|_| AgentError::BadParamType {
                name: column.into(),
                expected: format!("{:?}", spec.dtype).to_lowercase(),
            })?;
            value
        } else {
            if !self.ctx.columns.iter().any(|c| c == column) {
                return Err(AgentError::UnknownColumn(column.into()));
            }
            let dtype = self.ctx.meta.column(column).expect("supported column").dtype;
            let bad = || AgentError::BadParamType {
                name: column.into(),
                expected: dtype.as_str().into(),
            };
            let value = match &value {
                Value::Text(s) => Value::parse_as(s, dtype).ok_or_else(bad)?,
                other => other.clone(),
            };
            if !value.fits(dtype) {
                return Err(bad());
            }
            match (&value, self.ctx.spec(column)) {
                (Value::Text(s), Some(spec)) if !spec.values.is_empty() => spec
                    .values
                    .iter()
                    .find(|v| v.eq_ignore_ascii_case(s))
                    .map(|v| Value::Text(v.clone()))
                    .ok_or_else(bad)?,
                _ => value,
            }
        };
        let index = self.query_count;
        self.params.store(column, value, index);
        self.emit_conditions();
        Ok(self.params.snapshot())
    }

    pub fn remove_condition(&mut self, column: &str) -> Result<BTreeMap<String, Value>, AgentError> {
        if !is_system_param(column) && !self.ctx.columns.iter().any(|c| c == column) {
            return Err(AgentError::UnknownColumn(column.into()));
        }
        if self.params.remove(column) {
            self.emit_conditions();
        }
        Ok(self.params.snapshot())
    }

    pub fn clear_conditions(&mut self) -> BTreeMap<String, Value> {
        if !self.params.snapshot().is_empty() {
            self.params = ParameterMemory::default();
            self.emit_conditions();
        }
        BTreeMap::new()
    }

    fn suggested_budget(&self) -> String {
        let table: &DataTable = &self.ctx.table;
        let mean = match table.column(&self.ctx.meta.action_column) {
            Ok(ColumnData::Numeric(v)) => {
                let xs: Vec<f64> = v.iter().flatten().copied().collect();
                (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
            }
            _ => None,
        };
        mean.map(|m| format_significant(m, 2)).unwrap_or_else(|| "1".into())
    }

    /// Two or three follow-on questions keyed by the last executed tool.
    pub fn sample_questions(&self) -> Vec<String> {
        let m = &self.ctx.meta;
        let effect = format!("How does {} affect {}?", m.action_column, m.outcome_column);
        match self.last_tool.as_deref() {
            None => vec![
                "What can you do?".into(),
                "What is my current policy?".into(),
                "What are the most important features?".into(),
            ],
            Some(SHOW_CURRENT_POLICY) => vec![
                effect,
                format!(
                    "Optimize {} with 4 rules and an average budget of {} per customer",
                    m.action_column,
                    self.suggested_budget()
                ),
            ],
            Some(SELECT_FEATURES) => {
                let top = self
                    .last_result
                    .as_ref()
                    .and_then(|r| r.lists.get("selected").filter(|l| !l.is_empty()).or(r.lists.get("ranked")))
                    .and_then(|l| l.iter().find(|c| self.ctx.columns.contains(c)).cloned());
                let mut out = Vec::new();
                if let Some(col) = top {
                    if let Some(v) = distinct_values(&self.ctx.table, &col, 1).ok().and_then(|v| v.into_iter().next()) {
                        out.push(format!("What if {col} is {v}?"));
                    }
                }
                out.push(effect);
                out.push("What is my current policy?".into());
                out.truncate(3);
                out
            }
            Some(RUN_OPTIMIZE) => {
                let budget = self
                    .params
                    .tool_params
                    .get(AVERAGE_BUDGET)
                    .and_then(Value::as_f64)
                    .map(|b| format_significant(b + 1.0, 4))
                    .unwrap_or_else(|| self.suggested_budget());
                vec![
                    format!("What if the average budget is {budget} per customer?"),
                    "Use 2 rules".into(),
                    "What is my current policy?".into(),
                ]
            }
            Some(_) => vec!["What is my current policy?".into(), "Can you optimize my strategy?".into()],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn injections_are_verbatim() {
        let f = Injection::follow_up(&["num_rules".into(), "average_budget".into()]);
        assert!(f.content.ends_with("[num_rules, average_budget]"));
        assert!(f
            .content
            .starts_with("Respond to the users query but ask to provide the following missing parameters"));
        let spec = lookup(SELECT_FEATURES).unwrap();
        assert!(Injection::tool_insight(&spec)
            .content
            .contains("Covariate selection tool that selects"));
    }

    #[test]
    fn numeric_audit() {
        assert_eq!(numeric_tokens("rate is 8.39%, up from 4.964. euribor3m"), vec!["8.39", "4.964"]);
        assert!(audit_numbers("It is 8.39%!", &["the kpi is 8.39%"]));
        assert!(!audit_numbers("It is 42%!", &["the kpi is 8.39%"]));
        assert!(audit_numbers("No numbers here", &[]));
        assert!(audit_numbers("use 4 rules", &["4.0"]));
        assert!(!audit_numbers("-3 calls", &["3"]));
    }

    #[test]
    fn chat_memory_is_bounded() {
        let mut c = ChatMemory::new(2);
        for i in 0..5 {
            c.push(&format!("u{i}"), "a");
        }
        assert_eq!(c.len(), 2);
        assert_eq!(c.turns().next().unwrap().user, "u3");
        c.amend_last("u4", "more");
        assert_eq!(c.len(), 2);
        assert_eq!(c.turns().last().unwrap().agent, "a\nmore");
    }
}
