//! Periodic parameterization of the best bank entries followed by a
//! budgeted search over their numeric parameters.

pub mod sampler;
pub mod search;
pub mod space;

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::TrialRecord;
use crate::bridge::{BridgeError, ExecStatus, Split};
use crate::config::{AutoMlConfig, TaskDescriptor};
use crate::engine::{fenced_blocks, parse_function_pairs, EngineError, Origin, ParseError, RunContext};
use crate::llm::{persist_transcript, Conversation, LlmError, LlmGateway};
use crate::prompt::{assemble_automl_prompt, PromptError};
use crate::seed::combine;

pub use sampler::{make_sampler, Sampler, TpeSampler, UniformSampler};
pub use search::{run_search, SearchResult, SearchTrial};
pub use space::{parse_manifest, Assignment, ManifestError, ParamKind, ParamSpec, ParameterizedPair, SearchSpace};

/// True at every `cadence_iterations`-th iteration when enabled.
pub fn should_invoke(iteration: usize, cfg: &AutoMlConfig) -> bool {
    cfg.enabled && cfg.cadence_iterations > 0 && iteration % cfg.cadence_iterations == 0
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ResponseError {
    #[error("expected exactly one ```python code block, found {0}")]
    CodeBlocks(usize),
    #[error("expected exactly one ```json manifest block, found {0}")]
    ManifestBlocks(usize),
    #[error(transparent)]
    Missing(#[from] ParseError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

/// Parses one AutoML reply into a parameterized pair per entry.
pub fn parse_parameterization(
    reply: &str,
    task: &TaskDescriptor,
    n: usize,
) -> Result<Vec<ParameterizedPair>, ResponseError> {
    let blocks = fenced_blocks(reply);
    let (json, code): (Vec<_>, Vec<_>) = blocks.into_iter().partition(|b| b.lang.eq_ignore_ascii_case("json"));
    if code.len() != 1 {
        return Err(ResponseError::CodeBlocks(code.len()));
    }
    if json.len() != 1 {
        return Err(ResponseError::ManifestBlocks(json.len()));
    }
    let source = &code[0].body;
    let candidates = parse_function_pairs(source, n, &task.pre_function_stem, &task.post_function_stem)?;
    let spaces = parse_manifest(&json[0].body, source, n)?;
    Ok(candidates
        .into_iter()
        .zip(spaces)
        .map(|(mut candidate, space)| {
            candidate.origin = Origin::Automl;
            ParameterizedPair { candidate, space }
        })
        .collect())
}

#[derive(Debug, Error)]
pub enum AutoMlError {
    #[error("parameterization conversation hit its round cap")]
    RoundCapExceeded,
    #[error(transparent)]
    Llm(LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Runs the parameterization conversation until a reply validates or the
/// round cap is reached. Validation problems go back as feedback.
pub fn request_parameterization(
    llm: &mut LlmGateway,
    task: &TaskDescriptor,
    entries: &[&TrialRecord],
    round_cap: usize,
) -> (Conversation, Result<Vec<ParameterizedPair>, AutoMlError>) {
    let bundle = match assemble_automl_prompt(task, entries, entries.len()) {
        Ok(bundle) => bundle,
        Err(err) => return (Conversation::new("", round_cap), Err(err.into())),
    };
    let mut conversation = Conversation::new(bundle.system_instructions, round_cap);
    conversation.push_user(bundle.initial_user_message);
    loop {
        let reply = match llm.chat(&mut conversation) {
            Ok(reply) => reply.content,
            Err(LlmError::RoundCapExceeded { .. }) => return (conversation, Err(AutoMlError::RoundCapExceeded)),
            Err(err) => return (conversation, Err(AutoMlError::Llm(err))),
        };
        match parse_parameterization(&reply, task, entries.len()) {
            Ok(pairs) => return (conversation, Ok(pairs)),
            Err(err) => conversation.push_user(format!(
                "The reply was rejected: {err}.\nSend the corrected {} functions in one ```python block followed by one ```json manifest block.",
                2 * entries.len()
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntrySummary {
    pub entry_index: usize,
    pub source_trial_id: String,
    pub trials_used: usize,
    pub default_objective_val: Option<f64>,
    pub best_objective_val: Option<f64>,
    pub written_trial_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvocationSummary {
    pub iteration: usize,
    pub rounds_used: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
    pub entries: Vec<EntrySummary>,
}

#[derive(Serialize)]
struct TrialLogLine<'a> {
    iteration: usize,
    entry_index: usize,
    #[serde(flatten)]
    trial: &'a SearchTrial,
}

pub fn trial_log_path(output_dir: &Path, run_id: &str) -> PathBuf {
    output_dir.join("automl").join(format!("{run_id}.jsonl"))
}

fn append_trial_log(path: &Path, iteration: usize, result: &SearchResult) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut buf = String::new();
    for trial in &result.trials {
        let line = TrialLogLine {
            iteration,
            entry_index: result.entry_index,
            trial,
        };
        buf.push_str(&serde_json::to_string(&line).map_err(std::io::Error::other)?);
        buf.push('\n');
    }
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    file.write_all(buf.as_bytes())?;
    file.sync_data()
}

/// One AutoML invocation for the run: parameterize the top entries, search
/// each, and write the best variant of each back to the bank.
pub fn invoke(ctx: &mut RunContext, iteration: usize) -> Result<InvocationSummary, EngineError> {
    let automl = ctx.config.agent.automl.clone();
    let task = ctx.config.task.clone();
    let spec = task.metric_spec.clone();
    let timeout_s = ctx.config.execution_timeout_s;
    let (top, _) = ctx.bank.sample_for_prompt(automl.entries_per_invocation, 0);
    let entries: Vec<TrialRecord> = top.into_iter().cloned().collect();
    let mut summary = InvocationSummary {
        iteration,
        rounds_used: 0,
        skipped: None,
        entries: Vec::new(),
    };
    if entries.is_empty() {
        summary.skipped = Some("no successful bank entries".into());
        return Ok(summary);
    }

    let refs: Vec<&TrialRecord> = entries.iter().collect();
    let (conversation, parsed) =
        request_parameterization(&mut ctx.llm, &task, &refs, ctx.config.conversation_round_cap);
    summary.rounds_used = conversation.round_count();
    persist_transcript(&ctx.output_dir, &ctx.run_id, &format!("it{iteration:02}-automl"), &conversation)?;
    let pairs = match parsed {
        Ok(pairs) => pairs,
        Err(AutoMlError::RoundCapExceeded) => {
            tracing::warn!(run = %ctx.run_id, iteration, "automl invocation skipped: round cap reached");
            summary.skipped = Some("round cap reached without a valid parameterization".into());
            return Ok(summary);
        }
        Err(AutoMlError::Llm(err)) => return Err(err.into()),
        Err(AutoMlError::Prompt(err)) => return Err(err.into()),
    };

    let log_path = trial_log_path(&ctx.output_dir, &ctx.run_id);
    let model_id = ctx.model_id();
    for (mut pair, source) in pairs.into_iter().zip(&entries) {
        let root = match source.origin {
            Origin::Coder => source.trial_id.clone(),
            Origin::Automl => source.lineage.clone().unwrap_or_else(|| source.trial_id.clone()),
        };
        pair.candidate.lineage = Some(root);
        let entry_index = pair.space.entry_index;
        let seed = combine(&[ctx.seed, iteration as u64, entry_index as u64, automl.sampler_seed_offset]);
        let result = run_search(&pair, automl.trials_per_entry, seed, automl.sampler, &spec, |assignment| {
            let id = ctx.next_request_id();
            ctx.worker.execute_with_params(id, &pair, assignment, Split::Validation, timeout_s)
        });
        ctx.ledger.record_automl_trials(result.trials_used as u64);
        append_trial_log(&log_path, iteration, &result)?;

        let mut entry = EntrySummary {
            entry_index,
            source_trial_id: source.trial_id.clone(),
            trials_used: result.trials_used,
            default_objective_val: result.trials.first().and_then(|t| t.objective_val),
            best_objective_val: result.best_objective(),
            written_trial_id: None,
            aborted: result.aborted.clone(),
        };
        if let (Some(best), Some(best_result)) = (result.best_trial(), result.best_result.clone()) {
            let id = ctx.next_request_id();
            let mut combined = best_result;
            combined.metrics_test = match ctx.worker.execute_with_params(id, &pair, &best.assignment, Split::Test, timeout_s) {
                Ok(test) if test.status == ExecStatus::Ok => test.metrics_test,
                Ok(_) | Err(BridgeError::WorkerDead) => Default::default(),
                Err(err) => return Err(err.into()),
            };
            let mut record = TrialRecord::from_result(&ctx.run_id, iteration, pair.candidate.clone(), combined, &spec, &model_id);
            record.params = best.assignment.clone();
            entry.written_trial_id = Some(ctx.bank.append(record)?.trial_id.clone());
        } else {
            tracing::warn!(run = %ctx.run_id, iteration, entry_index, "all search trials failed; nothing written back");
        }
        summary.entries.push(entry);
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn cadence() {
        let mut cfg = AutoMlConfig::default();
        cfg.enabled = true;
        cfg.cadence_iterations = 5;
        let hits: Vec<usize> = (1..=20).filter(|&i| should_invoke(i, &cfg)).collect();
        assert_eq!(hits, [5, 10, 15, 20]);
        cfg.cadence_iterations = 10;
        let hits: Vec<usize> = (1..=20).filter(|&i| should_invoke(i, &cfg)).collect();
        assert_eq!(hits, [10, 20]);
        cfg.enabled = false;
        assert!((1..=20).all(|i| !should_invoke(i, &cfg)));
    }

    fn bowl_task() -> TaskDescriptor {
        let mut td = TaskDescriptor::new(presets::QUADRATIC_BOWL);
        presets::apply(&mut td);
        td
    }

    fn reply(n: usize, manifest: &str) -> String {
        let mut code = String::new();
        for i in 1..=n {
            code += &format!("def preprocess_images_{i}(x):\n    return x * f{i}_pre_p1\n\ndef postprocess_preds_{i}(y):\n    return y + f{i}_post_p2\n\n");
        }
        format!("Here:\n```python\n{code}```\n```json\n{manifest}\n```\n")
    }

    fn bowl_manifest(n: usize) -> String {
        let mut defaults = serde_json::Map::new();
        let mut space = serde_json::Map::new();
        for i in 1..=n {
            defaults.insert(i.to_string(), serde_json::json!({format!("f{i}_pre_p1"): 0.5, format!("f{i}_post_p2"): 0.5}));
            space.insert(
                i.to_string(),
                serde_json::json!([
                    {"name": format!("f{i}_pre_p1"), "kind": "float", "low": 0.0, "high": 1.0},
                    {"name": format!("f{i}_post_p2"), "kind": "float", "low": 0.0, "high": 1.0}
                ]),
            );
        }
        serde_json::json!({"default_params": defaults, "search_space": space}).to_string()
    }

    #[test]
    fn parses_three_pairs() {
        let pairs = parse_parameterization(&reply(3, &bowl_manifest(3)), &bowl_task(), 3).unwrap();
        assert_eq!(pairs.len(), 3);
        assert_eq!(pairs[2].candidate.pre_name, "preprocess_images_3");
        assert_eq!(pairs[2].space.params.len(), 2);
        assert!(pairs.iter().all(|p| p.candidate.origin == Origin::Automl));
    }

    #[test]
    fn missing_manifest_block() {
        let text = "```python\ndef preprocess_images_1(x):\n    return x\n```";
        assert_eq!(
            parse_parameterization(text, &bowl_task(), 1),
            Err(ResponseError::ManifestBlocks(0))
        );
    }
}
