mod common;

use common::{bowl_config, context};
use tooladapt_core::bridge::ExecStatus;
use tooladapt_core::engine::{run_iteration, Origin, TerminatedBy};

fn transcript(dir: &std::path::Path, run_id: &str, label: &str) -> Vec<serde_json::Value> {
    let path = dir.join("transcripts").join(run_id).join(format!("{label}.jsonl"));
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn clean_block_then_sentinel() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bowl_config(dir.path(), "rollout_clean.json");
    let mut ctx = context(&cfg, "golden-r00");
    let outcome = run_iteration(&mut ctx, 1).unwrap();
    assert_eq!(outcome.rounds_used, 2);
    assert_eq!(outcome.terminated_by, TerminatedBy::Sentinel);
    assert_eq!(outcome.trial_records.len(), 3);
    assert_eq!(outcome.ok_count(), 3);
    for (i, r) in outcome.trial_records.iter().enumerate() {
        assert_eq!(r.run_id, "golden-r00");
        assert_eq!(r.iteration, 1);
        assert_eq!(r.pair_index, i + 1);
        assert_eq!(r.origin, Origin::Coder);
        assert_eq!(r.trial_id, format!("golden-r00-t{i:04}"));
    }
    // p1 = 0.515, p2 = 0.482 for pair 1 of the fixture.
    let expected = 1.0 - (0.515f64 - 0.73).powi(2) - (0.482f64 - 0.20).powi(2);
    assert!((outcome.trial_records[0].objective_val.unwrap() - expected).abs() < 1e-12);
    assert_eq!(ctx.bank.len(), 3);
    assert_eq!(ctx.ledger.snapshot().coder_trials_used, 3);
    assert_eq!(ctx.ledger.snapshot().llm_calls, 2);

    let lines = transcript(dir.path(), "golden-r00", "it01-coder");
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[0]["role"], "system");
    assert!(lines[3]["content"].as_str().unwrap().contains("preprocess_images_1:objective:"));
}

#[test]
fn failing_pair_fixed_in_second_block() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bowl_config(dir.path(), "rollout_fix.json");
    let mut ctx = context(&cfg, "golden-r00");
    let outcome = run_iteration(&mut ctx, 1).unwrap();
    assert_eq!(outcome.rounds_used, 4);
    assert_eq!(outcome.terminated_by, TerminatedBy::Sentinel);
    assert_eq!(outcome.ok_count(), 3);
    let failed: Vec<_> = outcome.trial_records.iter().filter(|r| !r.is_ok()).collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].pair_index, 2);
    assert_eq!(failed[0].status, ExecStatus::Error);
    assert!(failed[0].feedback.contains("ZeroDivisionError"));

    let lines = transcript(dir.path(), "golden-r00", "it01-coder");
    let feedback = lines[3]["content"].as_str().unwrap();
    assert!(feedback.contains("preprocess_images_2 failed:"));
    assert!(feedback.contains("Traceback"));
    assert!(feedback.contains("At least one pair failed"));
}

#[test]
fn no_code_hits_round_cap() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = bowl_config(dir.path(), "rollout_no_code.json");
    cfg.conversation_round_cap = 5;
    let mut ctx = context(&cfg, "golden-r00");
    let outcome = run_iteration(&mut ctx, 1).unwrap();
    assert_eq!(outcome.terminated_by, TerminatedBy::RoundCap);
    assert_eq!(outcome.rounds_used, 5);
    assert!(outcome.trial_records.is_empty());
    assert!(ctx.bank.is_empty());
}

#[test]
fn persistent_failure_records_every_attempt() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = bowl_config(dir.path(), "rollout_always_broken.json");
    cfg.conversation_round_cap = 3;
    let mut ctx = context(&cfg, "golden-r00");
    let outcome = run_iteration(&mut ctx, 1).unwrap();
    assert_eq!(outcome.terminated_by, TerminatedBy::RoundCap);
    assert_eq!(outcome.ok_count(), 0);
    assert_eq!(outcome.trial_records.len(), 9);
    assert_eq!(ctx.ledger.snapshot().coder_trials_used, 9);
}

#[test]
fn worker_death_ends_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = bowl_config(dir.path(), "rollout_worker_exit.json");
    cfg.pairs_per_iteration = 2;
    let mut ctx = context(&cfg, "golden-r00");
    let outcome = run_iteration(&mut ctx, 1).unwrap();
    assert_eq!(outcome.terminated_by, TerminatedBy::WorkerDead);
    assert_eq!(outcome.trial_records.len(), 1);
    assert!(!outcome.trial_records[0].is_ok());
    // The handle restarts the worker for the next iteration.
    let again = run_iteration(&mut ctx, 2).unwrap();
    assert_eq!(again.terminated_by, TerminatedBy::WorkerDead);
}

#[test]
fn sealed_metrics_stay_out_of_the_conversation() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = bowl_config(dir.path(), "rollout_fix.json");
    cfg.worker_command = "builtin:stub --sealed-sentinel 424242".into();
    let mut ctx = context(&cfg, "golden-r00");
    let outcome = run_iteration(&mut ctx, 1).unwrap();
    assert!(outcome.trial_records.iter().filter(|r| r.is_ok()).all(|r| r.objective_test == Some(424242.0)));
    for line in transcript(dir.path(), "golden-r00", "it01-coder") {
        assert!(!line["content"].as_str().unwrap().contains("424242"));
    }
}
