pub mod agent;
pub mod causal;
pub mod chart;
pub mod dataset;
pub mod demo;
pub mod eval;
pub mod events;
pub mod fixtures;
pub mod genpipeline;
pub mod llm;
pub mod nlu;
pub mod par;
pub mod policy;
pub mod tools;
pub mod transcript;
