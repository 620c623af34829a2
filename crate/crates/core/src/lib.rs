//! Engine for adapting a frozen tool pipeline to a new dataset with
//! LLM-written preprocessing/postprocessing function pairs.
//!
//! An experiment runs several independent runs per setting. Each run drives a
//! coding conversation per iteration, executes the candidate pairs in a
//! stateless worker, stores every trial in a per-run function bank and, when
//! enabled, periodically parameterizes the best entries and tunes them with a
//! budgeted trial search. After all runs, a cross-run selection picks the top
//! entries by validation score and reports their best sealed test score, and
//! an analysis pass characterizes the solution space.

pub mod analysis;
pub mod automl;
pub mod bank;
pub mod bridge;
pub mod config;
pub mod engine;
pub mod ledger;
pub mod llm;
pub mod presets;
pub mod prompt;
pub mod runner;
pub mod seed;
pub mod stub;

pub use config::{load_experiment_config, ExperimentConfig};
pub use runner::{run_experiment, ExperimentReport};
