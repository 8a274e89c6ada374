//! Conformance checks for the scripted walkthrough and the numeric audit.

use std::sync::Arc;

use prescribe_core::agent::{audit_numbers, Speaker};
use prescribe_core::dataset::Value;
use prescribe_core::demo::{DemoRun, DEMO_QUERIES};
use prescribe_core::events::EventType;
use prescribe_core::llm::{ScriptRule, ScriptedProvider};
use prescribe_core::nlu::IntentLabel;
use prescribe_core::tools;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

use EventType::*;

/// Event types expected for each walkthrough step.
pub fn expected_events() -> Vec<Vec<EventType>> {
    let job = || vec![AgentMessage, ToolStarted, ToolResult, AgentMessage];
    let mut cf = vec![ConditionsChanged];
    cf.extend(job());
    let mut exec = vec![ConditionsChanged];
    exec.extend(job());
    vec![
        vec![AgentMessage],
        job(),
        cf,
        job(),
        vec![AgentMessage],
        vec![ConditionsChanged, AgentMessage],
        exec,
    ]
}

pub fn check_demo_flow(run: &DemoRun) -> Result<(), String> {
    let steps = &run.steps;
    ensure(steps.len() == DEMO_QUERIES.len(), || format!("{} steps", steps.len()))?;

    let expected_tools = [
        None,
        Some(tools::SELECT_FEATURES),
        Some(tools::COUNTERFACTUAL),
        Some(tools::SHOW_CURRENT_POLICY),
        None,
        None,
        Some(tools::RUN_OPTIMIZE),
    ];
    for (i, (step, tool)) in steps.iter().zip(expected_tools).enumerate() {
        ensure(step.turn.job.is_some() == tool.is_some(), || format!("step {i}: job {:?}", step.turn.job))?;
        let done = step.completion.as_ref().map(|c| c.tool.as_str());
        ensure(done == tool, || format!("step {i}: completed {done:?}, expected {tool:?}"))?;
        if let Some(c) = &step.completion {
            ensure(c.error.is_none(), || format!("step {i}: {:?}", c.error))?;
            ensure(!c.charts.is_empty(), || format!("step {i}: no chart"))?;
        }
    }
    ensure(steps[0].turn.intent == IntentLabel::Unknown, || "capabilities turn misrouted".into())?;
    ensure(!steps[0].turn.reply.is_empty(), || "empty capabilities reply".into())?;

    let cf = &steps[2].turn.conditions_snapshot;
    ensure(cf.get("euribor3m") == Some(&Value::Number(4.964)), || format!("conditions {cf:?}"))?;
    let cf_call = steps[2].completion.as_ref().and_then(|c| c.result.as_ref()).map(|r| &r.conditions_used);
    ensure(cf_call.is_some_and(|c| c.get("euribor3m") == Some(&Value::Number(4.964))), || {
        format!("counterfactual conditions {cf_call:?}")
    })?;

    for (i, missing) in [(4, vec!["num_rules", "average_budget"]), (5, vec!["average_budget"])] {
        ensure(steps[i].turn.intent == IntentLabel::RunOptimize, || format!("step {i}: {}", steps[i].turn.intent))?;
        ensure(steps[i].turn.missing == missing, || format!("step {i}: missing {:?}", steps[i].turn.missing))?;
    }
    let exec = steps[6].completion.as_ref().ok_or("optimization did not run")?;
    let used = &exec.result.as_ref().ok_or("no optimization result")?.params_used;
    ensure(
        used.get("average_budget") == Some(&serde_json::json!(3.5)) && used.get("num_rules") == Some(&serde_json::json!(4)),
        || format!("params used {used:?}"),
    )?;
    ensure(exec.charts.iter().any(|c| c.kind() == "tree"), || "no tree chart".into())?;

    let got: Vec<EventType> = run.session.events.all().iter().map(|e| e.kind).collect();
    let want: Vec<EventType> = expected_events().concat();
    ensure(got == want, || format!("events {got:?}"))?;
    let seqs: Vec<u64> = run.session.events.all().iter().map(|e| e.seq).collect();
    ensure(seqs.iter().enumerate().all(|(i, s)| *s == i as u64 + 1), || format!("seq {seqs:?}"))
}

pub const FABRICATED: [&str; 3] = ["87.31", "12,345", "4242"];

pub fn adversarial_provider() -> ScriptedProvider {
    ScriptedProvider::new(vec![ScriptRule {
        pattern: String::new(),
        respond: "Great news: conversion jumped to 87.31% across 12,345 customers, about 4242 more sales!".into(),
    }])
}

/// Plays the walkthrough against a provider that invents numbers; returns
/// the number of audited result replies.
pub fn check_groundedness() -> Result<usize, String> {
    let mut session = super::bank_session(Arc::new(adversarial_provider()));
    let mut audited = 0;
    for q in DEMO_QUERIES {
        let (turn, completion) = session.ask(q);
        ensure(turn.fallback, || format!("{q}: unaudited reply {:?}", turn.reply))?;
        if let Some(c) = completion {
            let summary = c.result.as_ref().map(|r| r.text_summary.clone()).unwrap_or_default();
            ensure(c.fallback, || format!("{q}: fallback not engaged"))?;
            ensure(audit_numbers(&c.reply, &[&summary]), || format!("{q}: {:?} fails audit", c.reply))?;
            audited += 1;
        }
    }
    for entry in session.transcript.iter().filter(|e| e.speaker == Speaker::Agent) {
        for f in FABRICATED {
            ensure(!entry.text.contains(f), || format!("fabricated {f} in {:?}", entry.text))?;
        }
    }
    ensure(audited > 0, || "no result replies".into())?;
    Ok(audited)
}

pub const EXTRA_QUERIES: [&str; 4] = ["Hello!", "Thanks", "Show the causal effect", "What if job is student?"];

pub fn query_pool() -> Vec<&'static str> {
    DEMO_QUERIES.iter().chain(EXTRA_QUERIES.iter()).copied().collect()
}

/// Plays `picks` (indices into [`query_pool`]) and checks after every turn
/// that at most two exchanges are retained, that the prompt carries exactly
/// the last min(2, turns) exchanges, and that stored parameters persist.
pub fn check_memory_stream(picks: &[usize]) -> Result<(), String> {
    use prescribe_core::demo::demo_script;
    use prescribe_core::llm::ChatRole;

    let mut session = super::bank_session(Arc::new(ScriptedProvider::new(demo_script())));
    let pool = query_pool();
    let mut history: Vec<&str> = Vec::new();
    let mut keys_before: Vec<String> = Vec::new();
    for (t, &i) in picks.iter().enumerate() {
        let q = pool[i % pool.len()];
        session.ask(q);
        history.push(q);
        let expected = (t + 1).min(2);
        ensure(session.chat.len() == expected, || format!("turn {t}: {} exchanges retained", session.chat.len()))?;
        let prompt = session.build_prompt("next question", None, false);
        let users: Vec<&str> = prompt
            .iter()
            .filter(|m| m.role == ChatRole::User)
            .map(|m| m.content.as_str())
            .collect();
        let prior = &users[..users.len() - 1];
        ensure(prior == &history[history.len() - expected..], || format!("turn {t}: prompt history {prior:?}"))?;
        let agents = prompt.iter().filter(|m| m.role == ChatRole::Agent).count();
        ensure(agents == expected, || format!("turn {t}: {agents} agent turns in prompt"))?;
        let keys: Vec<String> = session.params.snapshot().into_keys().collect();
        if let Some(k) = keys_before.iter().find(|k| !keys.contains(k)) {
            return Err(format!("turn {t}: `{k}` dropped after {q:?}"));
        }
        keys_before = keys;
    }
    Ok(())
}
