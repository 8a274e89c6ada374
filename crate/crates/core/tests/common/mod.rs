//! Independent brute-force oracles shared by integration and acceptance tests.
#![allow(dead_code)]

pub mod flow;
pub mod oracle;

use std::sync::{Arc, OnceLock};

use prescribe_core::agent::{AgentContext, Session, StrategyChoice};
use prescribe_core::fixtures;
use prescribe_core::genpipeline::{load_bundle, run_setup, LoadedBundle, SetupOptions};
use prescribe_core::llm::ChatProvider;

/// A bank-fixture bundle built once per test binary.
pub fn bank_bundle() -> &'static (tempfile::TempDir, LoadedBundle) {
    static BUNDLE: OnceLock<(tempfile::TempDir, LoadedBundle)> = OnceLock::new();
    BUNDLE.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let (meta, table) = fixtures::bank(0);
        run_setup(&meta, &table, &SetupOptions::default(), dir.path()).expect("setup");
        let bundle = load_bundle(dir.path()).expect("load bundle");
        (dir, bundle)
    })
}

pub fn bank_session(provider: Arc<dyn ChatProvider>) -> Session {
    let (_, bundle) = bank_bundle();
    let table = Arc::new(fixtures::bank(0).1);
    let ctx = AgentContext::new(bundle.clone(), table, provider, StrategyChoice::Deterministic);
    Session::new("test", Arc::new(ctx))
}
