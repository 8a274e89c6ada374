//! Scripted end-to-end walkthrough on the synthetic bank fixture.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::agent::{AgentContext, AgentTurnResult, JobCompletion, Session, StrategyChoice};
use crate::fixtures;
use crate::genpipeline::{load_bundle, run_setup, GenError, SetupBundle, SetupOptions};
use crate::llm::{ScriptRule, ScriptedProvider};

pub const DEMO_QUERIES: [&str; 7] = [
    "What can you do?",
    "What are the most important features?",
    "How is conversion impacted by the campaign if euribor3m is 4.964?",
    "What is my current policy?",
    "Can you optimize my strategy?",
    "Use 4 rules",
    "An average budget of 3.5 calls per customer",
];

fn rule(pattern: &str, respond: &str) -> ScriptRule {
    ScriptRule {
        pattern: pattern.into(),
        respond: respond.into(),
    }
}

/// Provider rules for the walkthrough; injection rules precede query rules.
pub fn demo_script() -> Vec<ScriptRule> {
    vec![
        rule(
            "missing parameters: [num_rules, average_budget]",
            "Happy to help optimize your strategy! How many rules should the policy have, and what average budget per customer should it respect?",
        ),
        rule(
            "missing parameters: [average_budget]",
            "Great! What average budget per customer should the optimized policy respect?",
        ),
        rule(
            "missing parameters: [num_rules]",
            "Sure! How many rules should the optimized policy have?",
        ),
        rule(
            "missing parameters",
            "Happy to help! Could you tell me which conditions to use?",
        ),
        rule(
            "inform the user you are running a tool",
            "On it! I'm running that analysis for you now.",
        ),
        rule(
            "simply respond to the user that the result is",
            "Here you go! The results are shown below.",
        ),
        rule(
            "what can you do",
            "I can find the most important features, show how the campaign affects conversion, show your current policy, run what-if scenarios and optimize your strategy!",
        ),
        rule(
            "",
            "I'm here to help with your campaign analysis. What would you like to explore?",
        ),
    ]
}

pub fn demo_script_jsonl() -> String {
    demo_script()
        .iter()
        .map(|r| serde_json::to_string(r).expect("serializable rule") + "\n")
        .collect()
}

#[derive(Debug, Error)]
pub enum DemoError {
    #[error(transparent)]
    Setup(#[from] GenError),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct DemoStep {
    pub query: String,
    pub turn: AgentTurnResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub completion: Option<JobCompletion>,
}

pub struct DemoRun {
    pub bundle: SetupBundle,
    pub steps: Vec<DemoStep>,
    pub session: Session,
}

/// Writes the fixture and bundle under `workdir` and plays the
/// walkthrough against the scripted provider.
pub fn run_demo(workdir: &Path, seed: u64) -> Result<DemoRun, DemoError> {
    let (meta, table) = fixtures::bank(seed);
    let data_dir = workdir.join("data");
    fs::create_dir_all(&data_dir).map_err(|source| DemoError::Io {
        path: data_dir.clone(),
        source,
    })?;
    for (name, body) in [
        ("bank_marketing.csv", table.to_csv()),
        ("bank_marketing.json", meta.to_json_pretty()),
        ("demo_script.jsonl", demo_script_jsonl()),
    ] {
        let path = data_dir.join(name);
        fs::write(&path, body).map_err(|source| DemoError::Io { path, source })?;
    }
    let opts = SetupOptions {
        seed,
        ..SetupOptions::default()
    };
    let bundle_dir = workdir.join("bundle");
    let bundle = run_setup(&meta, &table, &opts, &bundle_dir)?;
    let loaded = load_bundle(&bundle_dir)?;
    let provider = Arc::new(ScriptedProvider::new(demo_script()));
    let ctx = Arc::new(AgentContext::new(
        loaded,
        Arc::new(table),
        provider,
        StrategyChoice::Deterministic,
    ));
    let mut session = Session::new("demo", ctx);
    let steps = DEMO_QUERIES
        .iter()
        .map(|q| {
            let (turn, completion) = session.ask(q);
            DemoStep {
                query: q.to_string(),
                turn,
                completion,
            }
        })
        .collect();
    Ok(DemoRun {
        bundle,
        steps,
        session,
    })
}
