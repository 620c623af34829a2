//! The experiment report: a pure function of `experiment.json` and the banks.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{bank_path, write_atomic, ExperimentIndex, RunStatus, RunnerError, TableFormat};
use crate::analysis::{analyze, api_usage, usage_difference, AnalysisOptions, AnalysisReport, UsageDifference};
use crate::bank::{final_selection, load_records, BankError, SelectionReport, TrialRecord};
use crate::config::{AutoMlAblation, ExperimentConfig};
use crate::engine::Origin;
use crate::ledger::LedgerSnapshot;
use crate::prompt::template_hashes;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the canonical experiment config.
    pub config_hash: String,
    pub template_hashes: BTreeMap<String, String>,
    pub model_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run_id: String,
    pub seed: u64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub iterations_completed: usize,
    pub worker_deaths: usize,
    pub records: usize,
    pub ok_records: usize,
    pub automl_records: usize,
    pub best_val: Option<f64>,
    pub ledger: LedgerSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoMlRow {
    pub enabled: bool,
    pub cadence_iterations: usize,
    pub trials_per_entry: usize,
    pub ablations: Vec<AutoMlAblation>,
    pub invocation_iterations: BTreeSet<usize>,
    pub searches: usize,
    pub trials_total: usize,
    pub records_written: usize,
    /// Best validation objective among written-back variants, with its
    /// sealed test objective.
    pub best_val: Option<f64>,
    pub test_at_best_val: Option<f64>,
}

/// Validation and sealed test objectives side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValTest {
    pub best_val: Option<f64>,
    pub test_at_best_val: Option<f64>,
    pub selected_best_test: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingReport {
    pub task_id: String,
    pub runs: Vec<RunRow>,
    pub failed_runs: Vec<String>,
    pub selection: SelectionReport,
    pub analysis: AnalysisReport,
    pub ledger: LedgerSnapshot,
    pub automl: AutoMlRow,
    pub val_test: ValTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub provenance: Provenance,
    pub settings: BTreeMap<String, SettingReport>,
    /// Top-ranked solutions pooled over every setting.
    pub pooled_analysis: AnalysisReport,
    /// API usage of each setting against the first one.
    pub usage_vs_first: BTreeMap<String, Vec<UsageDifference>>,
}

/// Hash of the canonical config with placement fields (`output_dir`,
/// `parallel_runs`) blanked, since they cannot change results.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let mut config = config.clone();
    config.output_dir = Default::default();
    config.parallel_runs = 1;
    hex::encode(Sha256::digest(config.to_canonical_json().as_bytes()))
}

fn load_bank(output_dir: &Path, setting: &str, run_id: &str, config: &ExperimentConfig) -> Result<Vec<TrialRecord>, RunnerError> {
    let path = bank_path(output_dir, setting, run_id);
    match load_records(&path, &config.task.metric_spec) {
        Ok(records) => Ok(records),
        Err(BankError::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(RunnerError::Corrupt {
            path,
            message: e.to_string(),
        }),
    }
}

/// Loads every bank of the index, grouped by setting in index order.
fn load_banks(output_dir: &Path, index: &ExperimentIndex) -> Result<Vec<(String, Vec<TrialRecord>)>, RunnerError> {
    index
        .settings
        .iter()
        .map(|entry| {
            let mut records = Vec::new();
            for run in index.runs.iter().filter(|r| r.setting == entry.name) {
                records.extend(load_bank(output_dir, &entry.name, &run.run_id, &entry.config)?);
            }
            Ok((entry.name.clone(), records))
        })
        .collect()
}

fn argmax_val<'a>(records: impl IntoIterator<Item = &'a TrialRecord>) -> Option<&'a TrialRecord> {
    records
        .into_iter()
        .filter(|r| r.is_ok() && r.objective_val.is_some())
        .fold(None, |best: Option<&TrialRecord>, r| match best {
            Some(b) if b.objective_val >= r.objective_val => Some(b),
            _ => Some(r),
        })
}

/// Recomputes the report from disk. `k` overrides each setting's
/// `selection_top_k`.
pub fn build_report(output_dir: &Path, k: Option<usize>) -> Result<ExperimentReport, RunnerError> {
    let index = ExperimentIndex::load(output_dir)?;
    let banks = load_banks(output_dir, &index)?;
    let options = AnalysisOptions::default();
    let mut model_ids = BTreeSet::new();
    let mut settings = BTreeMap::new();

    for (entry, (name, records)) in index.settings.iter().zip(&banks) {
        let cfg = &entry.config;
        let api_list: BTreeSet<String> = if cfg.agent.api_list_enabled {
            cfg.task.api_list.iter().map(|e| e.name.clone()).collect()
        } else {
            BTreeSet::new()
        };
        let mut runs = Vec::new();
        let mut ledger = LedgerSnapshot::default();
        let mut automl = AutoMlRow {
            enabled: cfg.agent.automl.enabled,
            cadence_iterations: cfg.agent.automl.cadence_iterations,
            trials_per_entry: cfg.agent.automl.trials_per_entry,
            ablations: cfg.agent.automl.ablations(),
            invocation_iterations: BTreeSet::new(),
            searches: 0,
            trials_total: 0,
            records_written: 0,
            best_val: None,
            test_at_best_val: None,
        };
        for run in index.runs.iter().filter(|r| &r.setting == name) {
            model_ids.insert(run.model_id.clone());
            let own: Vec<&TrialRecord> = records.iter().filter(|r| r.run_id == run.run_id).collect();
            ledger += run.ledger;
            for invocation in &run.automl {
                automl.invocation_iterations.insert(invocation.iteration);
                automl.searches += invocation.entries.len();
                automl.trials_total += invocation.entries.iter().map(|e| e.trials_used).sum::<usize>();
            }
            runs.push(RunRow {
                run_id: run.run_id.clone(),
                seed: run.seed,
                status: run.status,
                error: run.error.clone(),
                iterations_completed: run.iterations_completed,
                worker_deaths: run.worker_deaths,
                records: own.len(),
                ok_records: own.iter().filter(|r| r.is_ok()).count(),
                automl_records: own.iter().filter(|r| r.origin == Origin::Automl).count(),
                best_val: argmax_val(own.iter().copied()).and_then(|r| r.objective_val),
                ledger: run.ledger,
            });
        }
        let tuned: Vec<&TrialRecord> = records.iter().filter(|r| r.origin == Origin::Automl).collect();
        automl.records_written = tuned.len();
        if let Some(best) = argmax_val(tuned.iter().copied()) {
            automl.best_val = best.objective_val;
            automl.test_at_best_val = best.objective_test;
        }

        let selection = final_selection(records, k.unwrap_or(cfg.agent.selection_top_k));
        let best = argmax_val(records);
        let val_test = ValTest {
            best_val: best.and_then(|r| r.objective_val),
            test_at_best_val: best.and_then(|r| r.objective_test),
            selected_best_test: selection.best_test,
        };
        settings.insert(
            name.clone(),
            SettingReport {
                task_id: cfg.task.task_id.clone(),
                failed_runs: runs
                    .iter()
                    .filter(|r| r.status == RunStatus::Failed)
                    .map(|r| r.run_id.clone())
                    .collect(),
                runs,
                selection,
                analysis: analyze(records, &api_list, &options),
                ledger,
                automl,
                val_test,
            },
        );
    }

    let all: Vec<TrialRecord> = banks.iter().flat_map(|(_, r)| r.iter().cloned()).collect();
    let pooled_api_list: BTreeSet<String> = index.config.task.api_list.iter().map(|e| e.name.clone()).collect();
    let mut usage_vs_first = BTreeMap::new();
    if let Some((first, first_records)) = banks.first() {
        let base = api_usage(first_records);
        for (name, records) in &banks[1..] {
            usage_vs_first.insert(format!("{name} vs {first}"), usage_difference(&base, &api_usage(records)));
        }
    }
    Ok(ExperimentReport {
        provenance: Provenance {
            config_hash: config_hash(&index.config),
            template_hashes: template_hashes(),
            model_ids,
        },
        settings,
        pooled_analysis: analyze(&all, &pooled_api_list, &options),
        usage_vs_first,
    })
}

/// Reruns final selection on the stored banks with a different `k`.
pub fn select(output_dir: &Path, k: usize) -> Result<BTreeMap<String, SelectionReport>, RunnerError> {
    let index = ExperimentIndex::load(output_dir)?;
    Ok(load_banks(output_dir, &index)?
        .into_iter()
        .map(|(name, records)| (name, final_selection(&records, k)))
        .collect())
}

pub fn report_json(report: &ExperimentReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes") + "\n"
}

/// Writes `report/report.json` plus both table formats.
pub fn write_report(output_dir: &Path, report: &ExperimentReport) -> Result<(), RunnerError> {
    let dir = output_dir.join("report");
    write_atomic(&dir.join("report.json"), report_json(report).as_bytes())?;
    for format in [TableFormat::Csv, TableFormat::Markdown] {
        super::emit_tables(report, format, &dir)?;
    }
    Ok(())
}
