//! Chat-completion providers: a scripted mock, an echo backend, and an
//! OpenAI-style HTTP client. Credentials come from the environment only.

use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHAT_TEMPERATURE: f64 = 0.2;
pub const NLU_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_IN_FLIGHT: usize = 4;

pub const ENV_ENDPOINT: &str = "PRESCRIBE_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "PRESCRIBE_LLM_API_KEY";
pub const ENV_MODEL: &str = "PRESCRIBE_LLM_MODEL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    System,
    User,
    Agent,
    InjectedSystem,
}

impl ChatRole {
    /// Transcript tag ("USER", "AGENT", "SYSTEM").
    pub fn tag(self) -> &'static str {
        match self {
            ChatRole::System | ChatRole::InjectedSystem => "SYSTEM",
            ChatRole::User => "USER",
            ChatRole::Agent => "AGENT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: ChatRole, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Sampling {
    pub fn chat() -> Self {
        Sampling {
            temperature: CHAT_TEMPERATURE,
            max_tokens: 256,
        }
    }

    pub fn nlu() -> Self {
        Sampling {
            temperature: NLU_TEMPERATURE,
            max_tokens: 32,
        }
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("no messages to complete")]
    EmptyMessages,
    #[error("first message must have the system role")]
    FirstNotSystem,
    #[error("provider timed out")]
    Timeout,
    #[error("provider returned HTTP {0}")]
    Http(u16),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unexpected provider response: {0}")]
    InvalidResponse(String),
    #[error("no script rule matches the conversation")]
    ScriptExhausted,
    #[error("script line {line}: {message}")]
    MalformedScript { line: usize, message: String },
    #[error("environment variable {0} is not set")]
    MissingEnv(&'static str),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub trait ChatProvider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, messages: &[ChatMessage], sampling: &Sampling) -> Result<String, LlmError>;
}

fn check_messages(messages: &[ChatMessage]) -> Result<(), LlmError> {
    match messages.first() {
        None => Err(LlmError::EmptyMessages),
        Some(m) if m.role != ChatRole::System => Err(LlmError::FirstNotSystem),
        Some(_) => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(rename = "match")]
    pub pattern: String,
    pub respond: String,
}

/// Replies from an ordered rule list: the first rule whose pattern is a
/// case-insensitive substring of the latest user or injected-system message
/// wins. An empty pattern matches everything.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScriptedProvider {
    rules: Vec<ScriptRule>,
}

impl ScriptedProvider {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        ScriptedProvider { rules }
    }

    pub fn from_jsonl(text: &str) -> Result<Self, LlmError> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rule: ScriptRule = serde_json::from_str(line).map_err(|e| LlmError::MalformedScript {
                line: i + 1,
                message: e.to_string(),
            })?;
            rules.push(rule);
        }
        Ok(ScriptedProvider { rules })
    }

    pub fn from_path(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|source| LlmError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_jsonl(&text)
    }

    pub fn rules(&self) -> &[ScriptRule] {
        &self.rules
    }
}

impl ChatProvider for ScriptedProvider {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, messages: &[ChatMessage], _: &Sampling) -> Result<String, LlmError> {
        check_messages(messages)?;
        let target = messages
            .iter()
            .rev()
            .find(|m| matches!(m.role, ChatRole::User | ChatRole::InjectedSystem))
            .map(|m| m.content.to_lowercase())
            .unwrap_or_default();
        self.rules
            .iter()
            .find(|r| target.contains(&r.pattern.to_lowercase()))
            .map(|r| r.respond.clone())
            .ok_or(LlmError::ScriptExhausted)
    }
}

/// Returns the final message content verbatim.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoProvider;

impl ChatProvider for EchoProvider {
    fn name(&self) -> &str {
        "echo"
    }

    fn complete(&self, messages: &[ChatMessage], _: &Sampling) -> Result<String, LlmError> {
        check_messages(messages)?;
        Ok(messages.last().map(|m| m.content.clone()).unwrap_or_default())
    }
}

/// OpenAI-style chat endpoint. The API key is never serialized or printed.
pub struct HttpProvider {
    endpoint: String,
    api_key: Option<String>,
    model: Option<String>,
    timeout: Duration,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpProvider")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpProvider {
    pub fn new(
        endpoint: impl Into<String>,
        api_key: Option<String>,
        model: Option<String>,
        timeout: Duration,
    ) -> Result<Self, LlmError> {
        if timeout.is_zero() {
            return Err(LlmError::Transport("timeout must be positive".into()));
        }
        Ok(HttpProvider {
            endpoint: endpoint.into(),
            api_key,
            model,
            timeout,
        })
    }

    pub fn from_env(timeout: Duration) -> Result<Self, LlmError> {
        let endpoint = std::env::var(ENV_ENDPOINT).map_err(|_| LlmError::MissingEnv(ENV_ENDPOINT))?;
        Self::new(
            endpoint,
            std::env::var(ENV_API_KEY).ok(),
            std::env::var(ENV_MODEL).ok(),
            timeout,
        )
    }

    pub fn request_body(&self, messages: &[ChatMessage], sampling: &Sampling) -> serde_json::Value {
        let wire: Vec<serde_json::Value> = messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    ChatRole::System | ChatRole::InjectedSystem => "system",
                    ChatRole::User => "user",
                    ChatRole::Agent => "assistant",
                };
                serde_json::json!({"role": role, "content": m.content})
            })
            .collect();
        let mut body = serde_json::json!({
            "messages": wire,
            "max_tokens": sampling.max_tokens,
            "temperature": sampling.temperature,
        });
        if let Some(model) = &self.model {
            body["model"] = serde_json::Value::String(model.clone());
        }
        body
    }
}

/// Pulls the completion text out of an OpenAI-style response.
pub fn parse_completion(body: &serde_json::Value) -> Result<String, LlmError> {
    let choice = &body["choices"][0];
    choice["message"]["content"]
        .as_str()
        .or_else(|| choice["text"].as_str())
        .map(str::to_string)
        .ok_or_else(|| LlmError::InvalidResponse("missing choices[0] content".into()))
}

impl ChatProvider for HttpProvider {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&self, messages: &[ChatMessage], sampling: &Sampling) -> Result<String, LlmError> {
        check_messages(messages)?;
        // Built per call: the blocking client owns a runtime that must not be
        // dropped on an async executor thread.
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| LlmError::Transport(e.without_url().to_string()))?;
        let mut req = client
            .post(&self.endpoint)
            .json(&self.request_body(messages, sampling));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                LlmError::Timeout
            } else {
                LlmError::Transport(e.without_url().to_string())
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(LlmError::Http(status.as_u16()));
        }
        let body: serde_json::Value = resp
            .json()
            .map_err(|e| LlmError::InvalidResponse(e.to_string()))?;
        parse_completion(&body)
    }
}

/// Caps concurrent calls into the wrapped provider.
pub struct Limited<P> {
    inner: P,
    cap: usize,
    busy: Mutex<usize>,
    freed: Condvar,
}

impl<P> Limited<P> {
    pub fn new(inner: P, cap: usize) -> Self {
        Limited {
            inner,
            cap: cap.max(1),
            busy: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn in_flight(&self) -> usize {
        *self.busy.lock().expect("limiter lock")
    }
}

impl<P: ChatProvider> ChatProvider for Limited<P> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, messages: &[ChatMessage], sampling: &Sampling) -> Result<String, LlmError> {
        {
            let mut busy = self.busy.lock().expect("limiter lock");
            while *busy >= self.cap {
                busy = self.freed.wait(busy).expect("limiter lock");
            }
            *busy += 1;
        }
        let out = self.inner.complete(messages, sampling);
        *self.busy.lock().expect("limiter lock") -= 1;
        self.freed.notify_one();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Scripted,
    Http,
    Echo,
}

impl std::str::FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scripted" => Ok(ProviderKind::Scripted),
            "http" => Ok(ProviderKind::Http),
            "echo" => Ok(ProviderKind::Echo),
            other => Err(format!("unknown provider `{other}` (expected scripted, http or echo)")),
        }
    }
}

/// Provider settings. Endpoint and credentials are read from the
/// environment when the provider is built, never from this struct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    pub timeout_secs: f64,
    pub in_flight: usize,
}

impl ProviderConfig {
    pub fn new(kind: ProviderKind) -> Self {
        ProviderConfig {
            kind,
            script: None,
            timeout_secs: 30.0,
            in_flight: DEFAULT_IN_FLIGHT,
        }
    }

    pub fn build(&self) -> Result<Box<dyn ChatProvider>, LlmError> {
        let cap = self.in_flight;
        Ok(match self.kind {
            ProviderKind::Echo => Box::new(Limited::new(EchoProvider, cap)),
            ProviderKind::Scripted => {
                let provider = match &self.script {
                    Some(path) => ScriptedProvider::from_path(path)?,
                    None => ScriptedProvider::default(),
                };
                Box::new(Limited::new(provider, cap))
            }
            ProviderKind::Http => {
                if self.timeout_secs <= 0.0 || !self.timeout_secs.is_finite() {
                    return Err(LlmError::Transport("timeout must be positive".into()));
                }
                let p = HttpProvider::from_env(Duration::from_secs_f64(self.timeout_secs))?;
                Box::new(Limited::new(p, cap))
            }
        })
    }
}
