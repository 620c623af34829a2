//! Brute-force reference implementations, written independently of the
//! library code they check.

#![allow(dead_code)]

use std::collections::BTreeMap;

use tooladapt_core::bank::TrialRecord;
use tooladapt_core::bridge::{ExecStatus, ExecutionResult};
use tooladapt_core::config::MetricSpec;
use tooladapt_core::engine::{CandidatePair, Origin};

pub fn record(run_id: &str, seq: u64, val: Option<f64>, test: Option<f64>, pre: &[&str], post: &[&str]) -> TrialRecord {
    let spec = MetricSpec::new(["objective"]);
    let status = if val.is_some() { ExecStatus::Ok } else { ExecStatus::Error };
    let mut result = ExecutionResult::failed(format!("q{seq}"), status, "");
    if let Some(v) = val {
        result.metrics_val.insert("objective".into(), v);
    }
    if let Some(t) = test {
        result.metrics_test.insert("objective".into(), t);
    }
    result.api_calls_pre = pre.iter().map(|s| s.to_string()).collect();
    result.api_calls_post = post.iter().map(|s| s.to_string()).collect();
    let candidate = CandidatePair {
        index: 1,
        pre_source: String::new(),
        post_source: String::new(),
        pre_name: "preprocess_images_1".into(),
        post_name: "postprocess_preds_1".into(),
        origin: Origin::Coder,
        lineage: None,
    };
    let mut r = TrialRecord::from_result(run_id, 1, candidate, result, &spec, "scripted");
    r.created_seq = seq;
    r.trial_id = format!("{run_id}-t{seq:04}");
    r
}

fn better(a: &TrialRecord, b: &TrialRecord) -> bool {
    let (x, y) = (a.objective_val.unwrap(), b.objective_val.unwrap());
    x > y || (x == y && a.created_seq < b.created_seq)
}

/// Selection sort: best k first; then worst k of the rest, worst first.
pub fn sample(records: &[TrialRecord], k_top: usize, k_bottom: usize) -> (Vec<String>, Vec<String>) {
    let mut pool: Vec<&TrialRecord> = records.iter().filter(|r| r.objective_val.is_some()).collect();
    let mut top = Vec::new();
    while top.len() < k_top && !pool.is_empty() {
        let mut best = 0;
        for i in 1..pool.len() {
            if better(pool[i], pool[best]) {
                best = i;
            }
        }
        top.push(pool.remove(best).trial_id.clone());
    }
    let mut bottom = Vec::new();
    while bottom.len() < k_bottom && !pool.is_empty() {
        let mut worst = 0;
        for i in 1..pool.len() {
            if better(pool[worst], pool[i]) {
                worst = i;
            }
        }
        bottom.push(pool.remove(worst).trial_id.clone());
    }
    (top, bottom)
}

/// Top-k by validation objective over all runs, then the maximum test
/// objective among them.
pub fn selection(records: &[TrialRecord], k: usize) -> (Vec<String>, Option<f64>) {
    let mut pool: Vec<&TrialRecord> = records.iter().filter(|r| r.objective_val.is_some()).collect();
    let mut chosen: Vec<&TrialRecord> = Vec::new();
    while chosen.len() < k && !pool.is_empty() {
        let mut best = 0;
        for i in 1..pool.len() {
            let (a, b) = (pool[i], pool[best]);
            let key = |r: &TrialRecord| (r.objective_val.unwrap(), std::cmp::Reverse((r.run_id.clone(), r.created_seq)));
            if key(a).partial_cmp(&key(b)) == Some(std::cmp::Ordering::Greater) {
                best = i;
            }
        }
        chosen.push(pool.remove(best));
    }
    let mut best_test: Option<f64> = None;
    for r in &chosen {
        if let Some(t) = r.objective_test {
            best_test = Some(best_test.map_or(t, |b| if t > b { t } else { b }));
        }
    }
    (chosen.iter().map(|r| r.trial_id.clone()).collect(), best_test)
}

pub fn entropy(weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    let mut h = 0.0;
    for w in weights {
        let p = w / total;
        h -= p * p.ln() / std::f64::consts::LN_2;
    }
    h
}

/// Counts nodes and unordered pairs with nested loops over deduplicated lists.
pub fn graph(solutions: &[Vec<String>]) -> (BTreeMap<String, u64>, BTreeMap<(String, String), u64>) {
    let mut nodes = BTreeMap::new();
    let mut edges = BTreeMap::new();
    for apis in solutions {
        let mut unique: Vec<String> = Vec::new();
        for a in apis {
            if !unique.contains(a) {
                unique.push(a.clone());
            }
        }
        for a in &unique {
            *nodes.entry(a.clone()).or_insert(0) += 1;
        }
        for i in 0..unique.len() {
            for j in 0..unique.len() {
                if unique[i] < unique[j] {
                    *edges.entry((unique[i].clone(), unique[j].clone())).or_insert(0) += 1;
                }
            }
        }
    }
    (nodes, edges)
}

pub fn jaccard(a: &[String], b: &[String]) -> f64 {
    let mut union: Vec<&String> = Vec::new();
    for x in a.iter().chain(b) {
        if !union.contains(&x) {
            union.push(x);
        }
    }
    if union.is_empty() {
        return 0.0;
    }
    let inter = union.iter().filter(|x| a.contains(x) && b.contains(x)).count();
    1.0 - inter as f64 / union.len() as f64
}

/// Mean over ordered pairs i != j, which equals the mean over unordered pairs.
pub fn diversity(solutions: &[(Vec<String>, Vec<String>)]) -> f64 {
    let n = solutions.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total += jaccard(&solutions[i].0, &solutions[j].0) + jaccard(&solutions[i].1, &solutions[j].1);
            }
        }
    }
    total / (n * (n - 1)) as f64
}
