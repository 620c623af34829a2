//! Experiment matrix execution, report assembly, tables and replay.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! experiment.json                 run index (config, settings, per-run status)
//! banks/<setting>/<run_id>.jsonl  function banks
//! transcripts/<run_id>/*.jsonl    conversations
//! automl/<run_id>.jsonl           search trial logs
//! report/report.json              derived report
//! report/*.csv, report/*.md       derived tables
//! ```
//!
//! Banks and transcripts are the ground truth; everything under `report/`
//! can be regenerated from them with [`build_report`].

mod replay;
mod report;
mod tables;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::automl::{self, InvocationSummary};
use crate::bank::FunctionBank;
use crate::bridge::spawn_worker;
use crate::config::{ConfigError, ExperimentConfig};
use crate::engine::{run_iteration, RunContext, TerminatedBy};
use crate::ledger::{BudgetLedger, LedgerSnapshot};
use crate::llm::LlmGateway;
use crate::seed::derive_run_seed;

pub use replay::{replay, ReplaySummary};
pub use report::{build_report, report_json, select, write_report, ExperimentReport, RunRow, SettingReport};
pub use tables::{emit_tables, TableFormat};

pub const INDEX_FILE: &str = "experiment.json";

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown setting `{0}`")]
    UnknownSetting(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("thread pool: {0}")]
    Pool(String),
}

impl RunnerError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        RunnerError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub fn run_id(setting: &str, run_index: usize) -> String {
    format!("{setting}-r{run_index:02}")
}

pub fn bank_path(output_dir: &Path, setting: &str, run_id: &str) -> PathBuf {
    output_dir.join("banks").join(setting).join(format!("{run_id}.jsonl"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub setting: String,
    pub run_id: String,
    pub run_index: usize,
    pub seed: u64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub iterations_completed: usize,
    /// Iterations that ended on a dead worker rather than the sentinel or cap.
    pub worker_deaths: usize,
    pub model_id: String,
    pub ledger: LedgerSnapshot,
    pub automl: Vec<InvocationSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingEntry {
    pub name: String,
    pub config: ExperimentConfig,
}

/// What `run` leaves behind besides banks and transcripts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentIndex {
    pub config: ExperimentConfig,
    pub settings: Vec<SettingEntry>,
    pub runs: Vec<RunSummary>,
}

impl ExperimentIndex {
    pub fn load(output_dir: &Path) -> Result<Self, RunnerError> {
        let path = output_dir.join(INDEX_FILE);
        let text = fs::read_to_string(&path).map_err(|e| RunnerError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| RunnerError::Corrupt {
            path,
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `parallel_runs`.
    pub parallel: Option<usize>,
    /// Restricts the matrix to these settings.
    pub settings: Vec<String>,
}

/// Runs every setting × run, writes the index and the report.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<ExperimentReport, RunnerError> {
    config.validate()?;
    let mut settings = config.resolve_settings()?;
    for wanted in &options.settings {
        if !settings.iter().any(|(name, _)| name == wanted) {
            return Err(RunnerError::UnknownSetting(wanted.clone()));
        }
    }
    if !options.settings.is_empty() {
        settings.retain(|(name, _)| options.settings.contains(name));
    }
    let output_dir = config.output_dir.clone();
    fs::create_dir_all(&output_dir).map_err(|e| RunnerError::io(&output_dir, e))?;

    let jobs: Vec<(&str, &ExperimentConfig, usize)> = settings
        .iter()
        .flat_map(|(name, cfg)| (0..cfg.runs).map(move |i| (name.as_str(), cfg, i)))
        .collect();
    let parallel = options.parallel.unwrap_or(config.parallel_runs).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .map_err(|e| RunnerError::Pool(e.to_string()))?;
    let runs: Vec<RunSummary> = pool.install(|| {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|(setting, cfg, index)| execute_run(cfg, setting, *index, &output_dir))
            .collect()
    });

    let index = ExperimentIndex {
        config: config.clone(),
        settings: settings
            .into_iter()
            .map(|(name, config)| SettingEntry { name, config })
            .collect(),
        runs,
    };
    let text = serde_json::to_string_pretty(&index).expect("index serializes") + "\n";
    write_atomic(&output_dir.join(INDEX_FILE), text.as_bytes())?;

    let report = build_report(&output_dir, None)?;
    write_report(&output_dir, &report)?;
    Ok(report)
}

/// One run, start to finish. Never panics the pool: every failure is
/// folded into the returned summary.
pub fn execute_run(cfg: &ExperimentConfig, setting: &str, run_index: usize, output_dir: &Path) -> RunSummary {
    let run_id = run_id(setting, run_index);
    let seed = derive_run_seed(cfg.master_seed, run_index);
    let ledger = Arc::new(BudgetLedger::default());
    let mut summary = RunSummary {
        setting: setting.to_owned(),
        run_id: run_id.clone(),
        run_index,
        seed,
        status: RunStatus::Completed,
        error: None,
        iterations_completed: 0,
        worker_deaths: 0,
        model_id: cfg.llm.model_id.clone(),
        ledger: LedgerSnapshot::default(),
        automl: Vec::new(),
    };
    let span = tracing::info_span!("run", run_id = %run_id);
    let _guard = span.enter();

    if let Err(message) = drive_run(cfg, setting, &run_id, seed, output_dir, &ledger, &mut summary) {
        tracing::warn!(%message, "run failed");
        summary.status = RunStatus::Failed;
        summary.error = Some(message);
    }
    summary.ledger = ledger.snapshot();
    summary
}

fn drive_run(
    cfg: &ExperimentConfig,
    setting: &str,
    run_id: &str,
    seed: u64,
    output_dir: &Path,
    ledger: &Arc<BudgetLedger>,
    summary: &mut RunSummary,
) -> Result<(), String> {
    // Leftovers of an earlier run with the same id would corrupt the
    // append-only transcripts.
    let stale = [
        output_dir.join("transcripts").join(run_id),
        automl::trial_log_path(output_dir, run_id),
    ];
    for path in &stale {
        let removed = if path.is_dir() { fs::remove_dir_all(path) } else { fs::remove_file(path) };
        match removed {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(format!("{}: {e}", path.display())),
            _ => {}
        }
    }

    let llm = LlmGateway::from_config(&cfg.llm, Arc::clone(ledger)).map_err(|e| e.to_string())?;
    summary.model_id = llm.model_id().to_owned();
    let bank = FunctionBank::create(&bank_path(output_dir, setting, run_id), run_id, cfg.task.metric_spec.clone())
        .map_err(|e| e.to_string())?;
    let worker = spawn_worker(&cfg.worker_command, &cfg.task.task_id).map_err(|e| format!("worker spawn: {e}"))?;
    let mut ctx = RunContext::new(run_id, seed, cfg.clone(), bank, worker, llm, output_dir.to_path_buf());

    let mut outcome = Ok(());
    for iteration in 1..=cfg.iterations_per_run {
        match run_iteration(&mut ctx, iteration) {
            Ok(result) => {
                if result.terminated_by == TerminatedBy::WorkerDead {
                    summary.worker_deaths += 1;
                }
            }
            Err(e) => {
                outcome = Err(format!("iteration {iteration}: {e}"));
                break;
            }
        }
        if automl::should_invoke(iteration, &cfg.agent.automl) {
            match automl::invoke(&mut ctx, iteration) {
                Ok(invocation) => summary.automl.push(invocation),
                Err(e) => {
                    outcome = Err(format!("automl at iteration {iteration}: {e}"));
                    break;
                }
            }
        }
        summary.iterations_completed = iteration;
    }
    ctx.worker.shutdown();
    outcome
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunnerError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| RunnerError::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut file = fs::File::create(&tmp).map_err(|e| RunnerError::io(&tmp, e))?;
    file.write_all(bytes)
        .and_then(|_| file.sync_all())
        .map_err(|e| RunnerError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| RunnerError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_ids_are_padded() {
        assert_eq!(run_id("base", 3), "base-r03");
        assert_eq!(
            bank_path(Path::new("out"), "base", "base-r03"),
            Path::new("out/banks/base/base-r03.jsonl")
        );
    }
}
