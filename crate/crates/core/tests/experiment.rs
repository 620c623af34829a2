mod common;

use std::fs;

use common::bowl_config;
use tooladapt_core::runner::{build_report, emit_tables, replay, run_experiment, select, RunOptions, RunStatus, TableFormat};
use tooladapt_core::runner::report_json;

fn smoke(dir: &std::path::Path) -> tooladapt_core::ExperimentConfig {
    let mut cfg = bowl_config(dir, "bowl_smoke.json");
    cfg.runs = 2;
    cfg.iterations_per_run = 2;
    cfg.pairs_per_iteration = 2;
    cfg
}

#[test]
fn smoke_matrix_writes_banks_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke(dir.path());
    let report = run_experiment(&cfg, &RunOptions::default()).unwrap();
    let base = &report.settings["base"];
    assert_eq!(base.runs.iter().map(|r| r.records).sum::<usize>(), 8);
    assert!(base.runs.iter().all(|r| r.status == RunStatus::Completed));
    assert_eq!(base.ledger.coder_trials_used, 8);
    for name in ["report.json", "scores.csv", "scores.md", "automl.csv", "ablation.md"] {
        assert!(dir.path().join("report").join(name).is_file(), "{name}");
    }
    assert!(dir.path().join("banks/base/base-r01.jsonl").is_file());
    assert!(dir.path().join("transcripts/base-r00/it02-coder.jsonl").is_file());
}

#[test]
fn analyze_is_pure() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&smoke(dir.path()), &RunOptions::default()).unwrap();
    let on_disk = fs::read_to_string(dir.path().join("report/report.json")).unwrap();
    let first = report_json(&build_report(dir.path(), None).unwrap());
    let second = report_json(&build_report(dir.path(), None).unwrap());
    assert_eq!(first, second);
    assert_eq!(first, on_disk);
}

#[test]
fn parallel_runs_match_sequential() {
    let reports: Vec<String> = [1, 4, 4]
        .iter()
        .map(|&p| {
            let dir = tempfile::tempdir().unwrap();
            let mut cfg = smoke(dir.path());
            cfg.runs = 4;
            run_experiment(&cfg, &RunOptions { parallel: Some(p), ..Default::default() }).unwrap();
            fs::read_to_string(dir.path().join("report/report.json")).unwrap()
        })
        .collect();
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[1], reports[2]);
}

#[test]
fn larger_k_never_lowers_best_test() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&smoke(dir.path()), &RunOptions::default()).unwrap();
    let one = &select(dir.path(), 1).unwrap()["base"];
    let many = &select(dir.path(), 15).unwrap()["base"];
    assert_eq!(one.selected.len(), 1);
    assert!(many.best_test >= one.best_test);
    assert!(many.insufficient_records);
}

#[test]
fn dying_worker_isolated_to_its_setting() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = smoke(dir.path());
    let dying = common::fixture("rollout_worker_exit.json");
    cfg.settings.insert("base".into(), Default::default());
    cfg.settings.insert(
        "dying".into(),
        serde_json::from_value(serde_json::json!({"llm": {"script_path": dying}})).unwrap(),
    );
    let report = run_experiment(&cfg, &RunOptions::default()).unwrap();
    let dying = &report.settings["dying"];
    assert_eq!(dying.runs.iter().map(|r| r.ok_records).sum::<usize>(), 0);
    assert!(dying.runs.iter().all(|r| r.worker_deaths == 2));
    assert!(dying.selection.insufficient_records);
    assert_eq!(dying.selection.best_test, None);
    let base = &report.settings["base"];
    assert_eq!(base.runs.iter().map(|r| r.ok_records).sum::<usize>(), 8);
    let md = fs::read_to_string(dir.path().join("report/scores.md")).unwrap();
    assert!(md.contains("| dying | — |"), "{md}");
}

#[test]
fn failed_run_does_not_stop_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = smoke(dir.path());
    cfg.settings.insert("base".into(), Default::default());
    cfg.settings.insert(
        "missing-script".into(),
        serde_json::from_value(serde_json::json!({"llm": {"script_path": "/nonexistent/script.json"}})).unwrap(),
    );
    let report = run_experiment(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(report.settings["missing-script"].failed_runs.len(), 2);
    assert!(report.settings["base"].failed_runs.is_empty());
}

#[test]
fn setting_filter() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = smoke(dir.path());
    cfg.settings.insert("a".into(), Default::default());
    cfg.settings.insert("b".into(), Default::default());
    let report = run_experiment(&cfg, &RunOptions { settings: vec!["b".into()], ..Default::default() }).unwrap();
    assert_eq!(report.settings.keys().collect::<Vec<_>>(), ["b"]);
    assert!(run_experiment(&cfg, &RunOptions { settings: vec!["zzz".into()], ..Default::default() }).is_err());
}

#[test]
fn tables_agree_across_formats() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&smoke(dir.path()), &RunOptions::default()).unwrap();
    let report = build_report(dir.path(), None).unwrap();
    let out = dir.path().join("tables");
    let csv = emit_tables(&report, TableFormat::Csv, &out).unwrap();
    let md = emit_tables(&report, TableFormat::Markdown, &out).unwrap();
    for (c, m) in csv.iter().zip(&md) {
        let md_text = fs::read_to_string(m).unwrap();
        for line in fs::read_to_string(c).unwrap().lines() {
            for field in line.split(',') {
                assert!(md_text.contains(field), "{field} missing from {}", m.display());
            }
        }
    }
}

#[test]
fn replay_reproduces_every_opening_prompt() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = smoke(dir.path());
    cfg.agent.function_bank_enabled = true;
    cfg.iterations_per_run = 3;
    run_experiment(&cfg, &RunOptions::default()).unwrap();
    let summary = replay(dir.path(), &dir.path().join("replay")).unwrap();
    assert_eq!(summary.conversations, 6);
    assert_eq!(summary.verified, 6, "{:?}", summary.mismatches);
    let md = fs::read_to_string(dir.path().join("replay/base-r00/it03-coder.md")).unwrap();
    assert!(md.contains("## Function bank"));
}
