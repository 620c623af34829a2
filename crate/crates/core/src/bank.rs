//! Per-run append-only trial store, prompt sampling and cross-run selection.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::bridge::{ExecStatus, ExecutionResult, ParamValue};
use crate::config::MetricSpec;
use crate::engine::{CandidatePair, Origin};

#[derive(Debug, Error)]
pub enum BankError {
    #[error("bank i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("record belongs to run `{found}`, bank is `{expected}`")]
    RunIdMismatch { expected: String, found: String },
    #[error("{path} line {line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
}

/// One executed trial. Test-split fields are sealed: only selection and
/// analysis read them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialRecord {
    pub trial_id: String,
    pub run_id: String,
    pub iteration: usize,
    pub pair_index: usize,
    pub origin: Origin,
    pub lineage: Option<String>,
    pub candidate: CandidatePair,
    pub status: ExecStatus,
    pub metrics_val: BTreeMap<String, f64>,
    pub metrics_test: BTreeMap<String, f64>,
    pub objective_val: Option<f64>,
    pub objective_test: Option<f64>,
    pub feedback: String,
    pub api_calls_pre: Vec<String>,
    pub api_calls_post: Vec<String>,
    pub param_values: Vec<ParamValue>,
    /// Concrete parameter assignment of a tuned variant; empty for coder trials.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, Value>,
    pub duration_s: f64,
    pub model_id: String,
    pub created_seq: u64,
}

impl TrialRecord {
    /// Builds an unnumbered record; the bank assigns `trial_id` and
    /// `created_seq` on append. A result whose metrics do not cover the
    /// metric spec is stored as an error.
    pub fn from_result(
        run_id: &str,
        iteration: usize,
        candidate: CandidatePair,
        result: ExecutionResult,
        spec: &MetricSpec,
        model_id: &str,
    ) -> Self {
        let mut status = result.status;
        let mut feedback = result.feedback;
        let mut objective_val = None;
        let mut objective_test = None;
        let (mut metrics_val, mut metrics_test) = (result.metrics_val, result.metrics_test);
        if status == ExecStatus::Ok {
            objective_val = spec.objective(&metrics_val);
            objective_test = spec.objective(&metrics_test);
            if objective_val.is_none() {
                status = ExecStatus::Error;
                feedback = format!(
                    "result is missing metrics; expected {}",
                    spec.metric_names.join(", ")
                );
            }
        }
        if status != ExecStatus::Ok {
            metrics_val.clear();
            metrics_test.clear();
            objective_test = None;
        }
        Self {
            trial_id: String::new(),
            run_id: run_id.to_owned(),
            iteration,
            pair_index: candidate.index,
            origin: candidate.origin,
            lineage: candidate.lineage.clone(),
            candidate,
            status,
            metrics_val,
            metrics_test,
            objective_val,
            objective_test,
            feedback,
            api_calls_pre: result.api_calls_pre,
            api_calls_post: result.api_calls_post,
            param_values: result.param_values,
            params: BTreeMap::new(),
            duration_s: result.duration_s,
            model_id: model_id.to_owned(),
            created_seq: 0,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }

    fn check(&self, spec: &MetricSpec) -> Result<(), String> {
        if self.is_ok() {
            let recomputed = spec.objective(&self.metrics_val);
            if recomputed != self.objective_val {
                return Err(format!(
                    "objective_val {:?} does not match recomputed {:?}",
                    self.objective_val, recomputed
                ));
            }
            let recomputed_test = spec.objective(&self.metrics_test);
            if recomputed_test != self.objective_test {
                return Err("objective_test does not match metrics_test".into());
            }
        } else if self.objective_val.is_some() || self.objective_test.is_some() {
            return Err("failed record carries an objective".into());
        }
        Ok(())
    }
}

/// Ranking key shared by sampling and selection: higher objective first,
/// earlier creation first among ties.
fn rank(a: &TrialRecord, b: &TrialRecord) -> Ordering {
    let (x, y) = (a.objective_val.unwrap_or(f64::NEG_INFINITY), b.objective_val.unwrap_or(f64::NEG_INFINITY));
    y.total_cmp(&x).then(a.created_seq.cmp(&b.created_seq))
}

pub struct FunctionBank {
    run_id: String,
    path: PathBuf,
    spec: MetricSpec,
    records: Vec<TrialRecord>,
    file: File,
}

impl FunctionBank {
    /// Starts an empty bank at `path`, replacing any previous file.
    pub fn create(path: &Path, run_id: &str, spec: MetricSpec) -> Result<Self, BankError> {
        let io_err = |source| BankError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(io_err)?;
        Ok(Self {
            run_id: run_id.to_owned(),
            path: path.to_path_buf(),
            spec,
            records: Vec::new(),
            file,
        })
    }

    /// Reopens an existing bank for appending, verifying every record.
    pub fn open(path: &Path, run_id: &str, spec: MetricSpec) -> Result<Self, BankError> {
        let records = load_records(path, &spec)?;
        if let Some(r) = records.iter().find(|r| r.run_id != run_id) {
            return Err(BankError::RunIdMismatch {
                expected: run_id.to_owned(),
                found: r.run_id.clone(),
            });
        }
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|source| BankError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(Self {
            run_id: run_id.to_owned(),
            path: path.to_path_buf(),
            spec,
            records,
            file,
        })
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn spec(&self) -> &MetricSpec {
        &self.spec
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, trial_id: &str) -> Option<&TrialRecord> {
        self.records.iter().find(|r| r.trial_id == trial_id)
    }

    /// Numbers the record, writes it as one line and syncs the file before
    /// returning.
    pub fn append(&mut self, mut record: TrialRecord) -> Result<&TrialRecord, BankError> {
        if record.run_id != self.run_id {
            return Err(BankError::RunIdMismatch {
                expected: self.run_id.clone(),
                found: record.run_id,
            });
        }
        let seq = self.records.last().map_or(0, |r| r.created_seq + 1);
        record.created_seq = seq;
        record.trial_id = format!("{}-t{seq:04}", self.run_id);
        if let Err(reason) = record.check(&self.spec) {
            return Err(BankError::Corrupt {
                path: self.path.clone(),
                line: self.records.len() + 1,
                reason,
            });
        }
        let mut line = serde_json::to_string(&record).expect("records serialize");
        line.push('\n');
        let io_err = |source| BankError::Io {
            path: self.path.clone(),
            source,
        };
        self.file.write_all(line.as_bytes()).map_err(io_err)?;
        self.file.flush().map_err(io_err)?;
        self.file.sync_data().map_err(io_err)?;
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }

    /// Best `k_top` and worst `k_bottom` ok records, disjoint. The top group
    /// is best first; the bottom group is worst first. When there are fewer
    /// than `k_top + k_bottom` ok records the top group fills first.
    pub fn sample_for_prompt(&self, k_top: usize, k_bottom: usize) -> (Vec<&TrialRecord>, Vec<&TrialRecord>) {
        sample_records(&self.records, k_top, k_bottom)
    }
}

pub fn sample_records(records: &[TrialRecord], k_top: usize, k_bottom: usize) -> (Vec<&TrialRecord>, Vec<&TrialRecord>) {
    let mut ok: Vec<&TrialRecord> = records.iter().filter(|r| r.is_ok()).collect();
    ok.sort_by(|a, b| rank(a, b));
    let top_n = k_top.min(ok.len());
    let bottom_n = k_bottom.min(ok.len() - top_n);
    let bottom = ok[ok.len() - bottom_n..].iter().rev().copied().collect();
    ok.truncate(top_n);
    (ok, bottom)
}

/// Reads and verifies a bank file: every line parses, objectives match
/// their metrics and `created_seq` strictly increases.
pub fn load_records(path: &Path, spec: &MetricSpec) -> Result<Vec<TrialRecord>, BankError> {
    let text = fs::read_to_string(path).map_err(|source| BankError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let corrupt = |line: usize, reason: String| BankError::Corrupt {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut records: Vec<TrialRecord> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: TrialRecord = serde_json::from_str(line).map_err(|err| corrupt(i + 1, err.to_string()))?;
        record.check(spec).map_err(|reason| corrupt(i + 1, reason))?;
        if let Some(prev) = records.last() {
            if record.created_seq <= prev.created_seq {
                return Err(corrupt(i + 1, "created_seq is not strictly increasing".into()));
            }
        }
        records.push(record);
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedEntry {
    pub trial_id: String,
    pub run_id: String,
    pub origin: Origin,
    pub objective_val: f64,
    pub objective_test: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub k: usize,
    pub selected: Vec<SelectedEntry>,
    /// Maximum sealed test objective over `selected`.
    pub best_test: Option<f64>,
    /// Ok records available across all runs.
    pub available: usize,
    /// Set when fewer than `k` ok records existed; all of them were selected.
    pub insufficient_records: bool,
}

/// Global top-`k` ok records by validation objective across runs; ties go
/// to the lower run id, then the earlier record.
pub fn final_selection<'a>(records: impl IntoIterator<Item = &'a TrialRecord>, k: usize) -> SelectionReport {
    let mut ok: Vec<&TrialRecord> = records.into_iter().filter(|r| r.is_ok()).collect();
    ok.sort_by(|a, b| {
        let (x, y) = (a.objective_val.unwrap_or(f64::NEG_INFINITY), b.objective_val.unwrap_or(f64::NEG_INFINITY));
        y.total_cmp(&x)
            .then_with(|| a.run_id.cmp(&b.run_id))
            .then(a.created_seq.cmp(&b.created_seq))
    });
    let available = ok.len();
    ok.truncate(k);
    let selected: Vec<SelectedEntry> = ok
        .iter()
        .map(|r| SelectedEntry {
            trial_id: r.trial_id.clone(),
            run_id: r.run_id.clone(),
            origin: r.origin,
            objective_val: r.objective_val.unwrap_or(f64::NEG_INFINITY),
            objective_test: r.objective_test,
        })
        .collect();
    let best_test = selected
        .iter()
        .filter_map(|s| s.objective_test)
        .max_by(f64::total_cmp);
    SelectionReport {
        k,
        selected,
        best_test,
        available,
        insufficient_records: available < k,
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn candidate(index: usize) -> CandidatePair {
        CandidatePair {
            index,
            pre_source: format!("def preprocess_images_{index}(x):\n    return x\n"),
            post_source: format!("def preprocess_images_{index}(x):\n    return x\n"),
            pre_name: format!("preprocess_images_{index}"),
            post_name: format!("postprocess_preds_{index}"),
            origin: Origin::Coder,
            lineage: None,
        }
    }

    pub(crate) fn ok_record(run_id: &str, objective: f64, test: f64) -> TrialRecord {
        let spec = MetricSpec::new(["objective"]);
        let mut result = ExecutionResult::failed("x", ExecStatus::Ok, "");
        result.metrics_val.insert("objective".into(), objective);
        result.metrics_test.insert("objective".into(), test);
        TrialRecord::from_result(run_id, 1, candidate(1), result, &spec, "scripted")
    }

    fn spec() -> MetricSpec {
        MetricSpec::new(["objective"])
    }

    #[test]
    fn append_reload_equality() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let mut bank = FunctionBank::create(&path, "base-r00", spec()).unwrap();
        for i in 0..60 {
            bank.append(ok_record("base-r00", i as f64 / 60.0, 0.5)).unwrap();
        }
        bank.append(TrialRecord::from_result(
            "base-r00",
            2,
            candidate(2),
            ExecutionResult::failed("y", ExecStatus::Error, "ZeroDivisionError"),
            &spec(),
            "scripted",
        ))
        .unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 61);
        let reloaded = FunctionBank::open(&path, "base-r00", spec()).unwrap();
        assert_eq!(reloaded.records(), bank.records());
        assert_eq!(bank.records()[3].trial_id, "base-r00-t0003");
    }

    #[test]
    fn durable_before_return() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let mut bank = FunctionBank::create(&path, "a", spec()).unwrap();
        bank.append(ok_record("a", 0.4, 0.3)).unwrap();
        // Simulate a crash: never drop or close the live bank.
        let leaked = Box::leak(Box::new(bank));
        let records = load_records(&path, &spec()).unwrap();
        assert_eq!(records.as_slice(), leaked.records());
    }

    #[test]
    fn mismatched_run_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut bank = FunctionBank::create(&dir.path().join("r.jsonl"), "a", spec()).unwrap();
        assert!(matches!(
            bank.append(ok_record("b", 0.1, 0.1)),
            Err(BankError::RunIdMismatch { .. })
        ));
    }

    #[test]
    fn tampered_objective_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let mut bank = FunctionBank::create(&path, "a", spec()).unwrap();
        bank.append(ok_record("a", 0.25, 0.3)).unwrap();
        let text = fs::read_to_string(&path).unwrap().replace("\"objective_val\":0.25", "\"objective_val\":0.5");
        fs::write(&path, text).unwrap();
        assert!(matches!(load_records(&path, &spec()), Err(BankError::Corrupt { .. })));
    }

    #[test]
    fn sampling_examples() {
        let dir = tempfile::tempdir().unwrap();
        let mut bank = FunctionBank::create(&dir.path().join("r.jsonl"), "a", spec()).unwrap();
        for i in 1..=10 {
            bank.append(ok_record("a", i as f64 / 10.0, 0.0)).unwrap();
        }
        let (top, bottom) = bank.sample_for_prompt(3, 3);
        let obj = |v: Vec<&TrialRecord>| v.iter().map(|r| r.objective_val.unwrap()).collect::<Vec<_>>();
        assert_eq!(obj(top), vec![1.0, 0.9, 0.8]);
        assert_eq!(obj(bottom), vec![0.1, 0.2, 0.3]);

        let mut small = FunctionBank::create(&dir.path().join("s.jsonl"), "a", spec()).unwrap();
        for i in 1..=4 {
            small.append(ok_record("a", i as f64, 0.0)).unwrap();
        }
        let (top, bottom) = small.sample_for_prompt(3, 3);
        assert_eq!((top.len(), bottom.len()), (3, 1));
        assert_eq!(bottom[0].objective_val, Some(1.0));
    }

    #[test]
    fn failed_records_never_sampled() {
        let records: Vec<TrialRecord> = (0..5)
            .map(|i| {
                TrialRecord::from_result(
                    "a",
                    1,
                    candidate(1),
                    ExecutionResult::failed(format!("{i}"), ExecStatus::Timeout, "t"),
                    &spec(),
                    "m",
                )
            })
            .collect();
        let (top, bottom) = sample_records(&records, 3, 3);
        assert!(top.is_empty() && bottom.is_empty());
    }

    #[test]
    fn selection_k1_and_insufficient() {
        let records = vec![ok_record("a", 0.9, 0.4), ok_record("b", 0.8, 0.95)];
        let one = final_selection(&records, 1);
        assert_eq!(one.best_test, Some(0.4));
        let many = final_selection(&records, 15);
        assert!(many.insufficient_records);
        assert_eq!(many.selected.len(), 2);
        assert_eq!(many.best_test, Some(0.95));
    }

    #[test]
    fn missing_metric_becomes_error() {
        let spec = MetricSpec::new(["f1_score"]);
        let mut result = ExecutionResult::failed("x", ExecStatus::Ok, "");
        result.metrics_val.insert("other".into(), 1.0);
        let r = TrialRecord::from_result("a", 1, candidate(1), result, &spec, "m");
        assert_eq!(r.status, ExecStatus::Error);
        assert!(r.objective_val.is_none() && r.metrics_val.is_empty());
    }
}
