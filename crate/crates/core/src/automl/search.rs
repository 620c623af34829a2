//! Budgeted trial search over one parameterized pair.

use serde::{Deserialize, Serialize};

use super::sampler::{make_sampler, Observation};
use super::space::{Assignment, ParameterizedPair};
use crate::bridge::{BridgeError, ExecStatus, ExecutionResult};
use crate::config::{MetricSpec, SamplerKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrial {
    /// 1-based; trial 1 always evaluates the defaults.
    pub trial: usize,
    pub assignment: Assignment,
    pub status: ExecStatus,
    pub objective_val: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub entry_index: usize,
    pub trials: Vec<SearchTrial>,
    /// Index into `trials` of the best ok trial (earliest among ties).
    pub best: Option<usize>,
    /// Validation result of the best trial, kept for write-back.
    pub best_result: Option<ExecutionResult>,
    pub trials_used: usize,
    /// Set when a bridge failure stopped the search early.
    pub aborted: Option<String>,
}

impl SearchResult {
    pub fn best_trial(&self) -> Option<&SearchTrial> {
        self.best.map(|i| &self.trials[i])
    }

    pub fn best_objective(&self) -> Option<f64> {
        self.best_trial().and_then(|t| t.objective_val)
    }
}

/// Runs `budget` trials: the defaults first, then sampler proposals.
/// `evaluate` executes one assignment on the validation split. A dead
/// worker counts as a failed trial; any other bridge error ends the search.
pub fn run_search<F>(
    pair: &ParameterizedPair,
    budget: usize,
    seed: u64,
    sampler: SamplerKind,
    spec: &MetricSpec,
    mut evaluate: F,
) -> SearchResult
where
    F: FnMut(&Assignment) -> Result<ExecutionResult, BridgeError>,
{
    let mut sampler = make_sampler(sampler, seed);
    let mut history: Vec<Observation> = Vec::with_capacity(budget);
    let mut trials = Vec::with_capacity(budget);
    let mut best: Option<(usize, f64, ExecutionResult)> = None;
    let mut aborted = None;

    for trial in 1..=budget {
        let assignment = if trial == 1 {
            pair.space.defaults.clone()
        } else {
            sampler.propose(&pair.space, &history)
        };
        let result = match evaluate(&assignment) {
            Ok(result) => result,
            Err(BridgeError::WorkerDead) => ExecutionResult::failed("", ExecStatus::Error, "worker died"),
            Err(err) => {
                aborted = Some(err.to_string());
                break;
            }
        };
        let objective = if result.is_ok() { spec.objective(&result.metrics_val) } else { None };
        let status = if objective.is_some() { ExecStatus::Ok } else if result.is_ok() { ExecStatus::Error } else { result.status };
        if let Some(value) = objective {
            if best.as_ref().is_none_or(|(_, b, _)| value > *b) {
                best = Some((trials.len(), value, result));
            }
        }
        history.push((assignment.clone(), objective));
        trials.push(SearchTrial {
            trial,
            assignment,
            status,
            objective_val: objective,
        });
    }

    let trials_used = trials.len();
    let (best, best_result) = match best {
        Some((i, _, r)) => (Some(i), Some(r)),
        None => (None, None),
    };
    SearchResult {
        entry_index: pair.space.entry_index,
        trials,
        best,
        best_result,
        trials_used,
        aborted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automl::space::{ParamSpec, SearchSpace};
    use crate::engine::{CandidatePair, Origin};
    use crate::stub::{bowl_objective, BOWL_VAL_OPTIMUM};
    use serde_json::json;

    pub(crate) fn bowl_pair() -> ParameterizedPair {
        let src = "def preprocess_images_1(x):\n    return x * f1_pre_p1\n\ndef postprocess_preds_1(y):\n    return y + f1_post_p2\n";
        ParameterizedPair {
            candidate: CandidatePair {
                index: 1,
                pre_source: src.into(),
                post_source: src.into(),
                pre_name: "preprocess_images_1".into(),
                post_name: "postprocess_preds_1".into(),
                origin: Origin::Automl,
                lineage: None,
            },
            space: SearchSpace {
                entry_index: 1,
                params: vec![ParamSpec::float("f1_pre_p1", 0.0, 1.0), ParamSpec::float("f1_post_p2", 0.0, 1.0)],
                defaults: [("f1_pre_p1".to_owned(), json!(0.5)), ("f1_post_p2".to_owned(), json!(0.5))].into(),
            },
        }
    }

    fn bowl(a: &Assignment) -> Result<ExecutionResult, BridgeError> {
        let mut r = ExecutionResult::failed("t", ExecStatus::Ok, "");
        let (p1, p2) = (a["f1_pre_p1"].as_f64().unwrap(), a["f1_post_p2"].as_f64().unwrap());
        r.metrics_val.insert("objective".into(), bowl_objective(p1, p2, BOWL_VAL_OPTIMUM));
        Ok(r)
    }

    #[test]
    fn defaults_first_and_budget_exact() {
        let spec = MetricSpec::new(["objective"]);
        for budget in [1, 12, 24] {
            let result = run_search(&bowl_pair(), budget, 5, SamplerKind::Tpe, &spec, bowl);
            assert_eq!(result.trials_used, budget);
            assert_eq!(result.trials[0].assignment, bowl_pair().space.defaults);
            if budget == 1 {
                assert_eq!(result.best, Some(0));
                assert!((result.best_objective().unwrap() - 0.8571).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn best_is_earliest_argmax() {
        let spec = MetricSpec::new(["objective"]);
        let flat = |_: &Assignment| {
            let mut r = ExecutionResult::failed("t", ExecStatus::Ok, "");
            r.metrics_val.insert("objective".into(), 0.5);
            Ok(r)
        };
        let result = run_search(&bowl_pair(), 10, 1, SamplerKind::Uniform, &spec, flat);
        assert_eq!(result.best, Some(0));
    }

    #[test]
    fn all_failed_has_no_best() {
        let spec = MetricSpec::new(["objective"]);
        let result = run_search(&bowl_pair(), 5, 1, SamplerKind::Uniform, &spec, |_| {
            Ok(ExecutionResult::failed("t", ExecStatus::Error, "boom"))
        });
        assert!(result.best.is_none());
        assert_eq!(result.trials_used, 5);
    }

    #[test]
    fn spawn_failure_stops_early() {
        let spec = MetricSpec::new(["objective"]);
        let mut calls = 0;
        let result = run_search(&bowl_pair(), 24, 1, SamplerKind::Uniform, &spec, |a| {
            calls += 1;
            if calls == 4 {
                Err(BridgeError::HandshakeTimeout)
            } else {
                bowl(a)
            }
        });
        assert_eq!(result.trials_used, 3);
        assert!(result.aborted.is_some());
    }
}
