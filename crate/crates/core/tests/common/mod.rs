#![allow(dead_code)]

pub mod oracles;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use tooladapt_core::bank::FunctionBank;
use tooladapt_core::bridge::spawn_worker;
use tooladapt_core::config::{ExperimentConfig, LlmBackendConfig};
use tooladapt_core::engine::RunContext;
use tooladapt_core::ledger::BudgetLedger;
use tooladapt_core::llm::LlmGateway;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Quadratic-bowl experiment on the in-process stub worker.
pub fn bowl_config(output_dir: &Path, script: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::minimal("quadratic-bowl", "builtin:stub");
    cfg.llm = LlmBackendConfig::scripted(fixture(script));
    cfg.output_dir = output_dir.to_path_buf();
    cfg
}

pub fn context(cfg: &ExperimentConfig, run_id: &str) -> RunContext {
    let ledger = Arc::new(BudgetLedger::default());
    let llm = LlmGateway::from_config(&cfg.llm, ledger).unwrap();
    let bank_path = cfg.output_dir.join("banks").join(format!("{run_id}.jsonl"));
    let bank = FunctionBank::create(&bank_path, run_id, cfg.task.metric_spec.clone()).unwrap();
    let worker = spawn_worker(&cfg.worker_command, &cfg.task.task_id).unwrap();
    RunContext::new(run_id, 7, cfg.clone(), bank, worker, llm, cfg.output_dir.clone())
}
