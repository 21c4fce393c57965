//! Experiment orchestration: scoring, synthetic data, configuration,
//! end-to-end pipelines and the labeled-data budget study.

pub mod budget;
pub mod config;
pub mod eval;
pub mod pipeline;
pub mod synthetic;

pub use budget::{emit_cost_curves, results_csv, run_budget_experiment, BudgetResult, Variant};
pub use config::{RunConfig, CODE_VERSION};
pub use eval::{entity_f1, f1_score, EvalResult};
pub use synthetic::{generate_synthetic, SyntheticCorpus, SyntheticSpec};
