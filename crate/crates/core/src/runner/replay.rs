//! Prompt audit: renders every stored conversation as Markdown and checks
//! that its opening messages are exactly what the assembler produces from
//! the bank state at that point of the run.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{bank_path, write_atomic, ExperimentIndex, RunnerError};
use crate::bank::{load_records, sample_records, TrialRecord};
use crate::config::ExperimentConfig;
use crate::engine::Origin;
use crate::llm::{Message, Role};
use crate::prompt::{assemble_automl_prompt, assemble_coder_prompts, render_bank_sample, CoderLimits, PromptBundle};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub conversations: usize,
    pub verified: usize,
    /// `run_id/label` of conversations whose opening prompts differ.
    pub mismatches: Vec<String>,
}

fn parse_label(label: &str) -> Option<(usize, &str)> {
    let rest = label.strip_prefix("it")?;
    let (num, kind) = rest.split_once('-')?;
    Some((num.parse().ok()?, kind))
}

fn expected_bundle(cfg: &ExperimentConfig, records: &[TrialRecord], iteration: usize, kind: &str) -> Option<PromptBundle> {
    match kind {
        "coder" => {
            let prior: Vec<TrialRecord> = records.iter().filter(|r| r.iteration < iteration).cloned().collect();
            let sample = if cfg.agent.function_bank_enabled {
                let (top, bottom) = sample_records(&prior, cfg.agent.bank_sample_top, cfg.agent.bank_sample_bottom);
                if top.is_empty() {
                    None
                } else {
                    Some(render_bank_sample(&top, &bottom).ok()?)
                }
            } else {
                None
            };
            let limits = CoderLimits {
                pairs: cfg.pairs_per_iteration,
                round_cap: cfg.conversation_round_cap,
            };
            assemble_coder_prompts(&cfg.task, &cfg.agent, limits, sample.as_ref()).ok()
        }
        "automl" => {
            let prior: Vec<TrialRecord> = records
                .iter()
                .filter(|r| r.iteration < iteration || (r.iteration == iteration && r.origin == Origin::Coder))
                .cloned()
                .collect();
            let (top, _) = sample_records(&prior, cfg.agent.automl.entries_per_invocation, 0);
            assemble_automl_prompt(&cfg.task, &top, top.len()).ok()
        }
        _ => None,
    }
}

fn render_markdown(run_id: &str, label: &str, messages: &[Message]) -> String {
    let mut out = format!("# {run_id} {label}\n");
    for (i, m) in messages.iter().enumerate() {
        let role = match m.role {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        out += &format!("\n## {} {role}\n\n{}\n", i + 1, m.content.trim_end());
    }
    out
}

/// Writes `<out_dir>/<run_id>/<label>.md` for every transcript of the
/// experiment in `output_dir`.
pub fn replay(output_dir: &Path, out_dir: &Path) -> Result<ReplaySummary, RunnerError> {
    let index = ExperimentIndex::load(output_dir)?;
    let mut summary = ReplaySummary::default();
    for run in &index.runs {
        let Some(entry) = index.settings.iter().find(|s| s.name == run.setting) else {
            continue;
        };
        let records = load_records(&bank_path(output_dir, &run.setting, &run.run_id), &entry.config.task.metric_spec)
            .unwrap_or_default();
        let dir = output_dir.join("transcripts").join(&run.run_id);
        let Ok(listing) = fs::read_dir(&dir) else {
            continue;
        };
        let mut files: Vec<_> = listing.filter_map(|e| e.ok()).map(|e| e.path()).collect();
        files.sort();
        for path in files.into_iter().filter(|p| p.extension().is_some_and(|e| e == "jsonl")) {
            let label = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let text = fs::read_to_string(&path).map_err(|e| RunnerError::io(&path, e))?;
            let messages: Vec<Message> = text
                .lines()
                .map(serde_json::from_str)
                .collect::<Result<_, _>>()
                .map_err(|e| RunnerError::Corrupt {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
            summary.conversations += 1;

            let expected = parse_label(&label).and_then(|(it, kind)| expected_bundle(&entry.config, &records, it, kind));
            let matches = match (expected, messages.first(), messages.get(1)) {
                (Some(b), Some(system), Some(user)) => {
                    system.content == b.system_instructions && user.content == b.initial_user_message
                }
                _ => false,
            };
            if matches {
                summary.verified += 1;
            } else {
                summary.mismatches.push(format!("{}/{label}", run.run_id));
            }
            let md = render_markdown(&run.run_id, &label, &messages);
            write_atomic(&out_dir.join(&run.run_id).join(format!("{label}.md")), md.as_bytes())?;
        }
    }
    Ok(summary)
}
