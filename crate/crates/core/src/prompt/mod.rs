//! Renders every prompt the engine sends. Rendering is a pure function of
//! its inputs; test-split values never reach the text.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bank::TrialRecord;
use crate::bridge::{ExecStatus, ExecutionResult};
use crate::config::{AgentConfig, TaskDescriptor};

pub mod template;

pub use template::{render, TemplateError};

pub const FEEDBACK_LIMIT: usize = 4000;
pub const TERMINATE: &str = "TERMINATE";

pub(crate) const CODER_SYSTEM: &str = include_str!("../../templates/coder_system.txt");
pub(crate) const CODER_TASK: &str = include_str!("../../templates/coder_task.txt");
pub(crate) const SECTION_DATA: &str = include_str!("../../templates/section_data.txt");
pub(crate) const SECTION_API: &str = include_str!("../../templates/section_api.txt");
pub(crate) const SECTION_EXPERT: &str = include_str!("../../templates/section_expert.txt");
pub(crate) const SECTION_BANK: &str = include_str!("../../templates/section_bank.txt");
pub(crate) const AUTOML_SYSTEM: &str = include_str!("../../templates/automl_system.txt");
pub(crate) const AUTOML_TASK: &str = include_str!("../../templates/automl_task.txt");

const TEMPLATES: [(&str, &str); 8] = [
    ("automl_system", AUTOML_SYSTEM),
    ("automl_task", AUTOML_TASK),
    ("coder_system", CODER_SYSTEM),
    ("coder_task", CODER_TASK),
    ("section_api", SECTION_API),
    ("section_bank", SECTION_BANK),
    ("section_data", SECTION_DATA),
    ("section_expert", SECTION_EXPERT),
];

/// Section headings, used to locate optional components in rendered text.
pub const DATA_HEADING: &str = "## Dataset";
pub const API_HEADING: &str = "## Available APIs";
pub const EXPERT_HEADING: &str = "## Expert reference functions";
pub const BANK_HEADING: &str = "## Function bank";

/// sha256 of each template asset, for run provenance.
pub fn template_hashes() -> BTreeMap<String, String> {
    TEMPLATES
        .iter()
        .map(|(name, text)| ((*name).to_owned(), hex::encode(Sha256::digest(text.as_bytes()))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_instructions: String,
    pub initial_user_message: String,
    pub component_fingerprint: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankSampleEntry {
    pub rank_label: String,
    pub pre_source: String,
    pub post_source: String,
    pub pre_name: String,
    pub post_name: String,
    /// Bound parameters of a tuned variant, rendered ahead of its source.
    pub params: BTreeMap<String, Value>,
    pub validation_objective: f64,
}

impl BankSampleEntry {
    fn from_record(label: String, record: &TrialRecord) -> Self {
        Self {
            rank_label: label,
            pre_source: record.candidate.pre_source.clone(),
            post_source: record.candidate.post_source.clone(),
            pre_name: record.candidate.pre_name.clone(),
            post_name: record.candidate.post_name.clone(),
            params: record.params.clone(),
            validation_objective: record.objective_val.unwrap_or(f64::NAN),
        }
    }

    fn write_code(&self, out: &mut String) {
        let prelude: String = self
            .params
            .iter()
            .map(|(name, value)| format!("{name} = {}\n", python_literal(value)))
            .collect();
        if self.pre_source == self.post_source {
            let _ = write!(out, "```python\n{prelude}{}", self.pre_source);
        } else {
            let _ = write!(out, "```python\n{prelude}{}", self.pre_source);
            ensure_newline(out);
            let _ = write!(out, "```\n```python\n{}", self.post_source);
        }
        ensure_newline(out);
        out.push_str("```\n");
    }
}

/// Top entries first, then bottom entries; validation values only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankSampleBlock {
    pub entries: Vec<BankSampleEntry>,
}

impl BankSampleBlock {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for entry in &self.entries {
            let _ = writeln!(
                out,
                "### {} (validation objective {}; entry points {} / {})",
                entry.rank_label,
                fmt_objective(entry.validation_objective),
                entry.pre_name,
                entry.post_name
            );
            entry.write_code(&mut out);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("trial `{0}` appears in both the top and bottom groups")]
pub struct OverlapError(pub String);

#[derive(Debug, Error, PartialEq, Eq)]
#[error("expected {expected} entries, got {found}")]
pub struct ArityError {
    pub expected: usize,
    pub found: usize,
}

pub fn render_bank_sample(top: &[&TrialRecord], bottom: &[&TrialRecord]) -> Result<BankSampleBlock, OverlapError> {
    if let Some(dup) = top.iter().find(|t| bottom.iter().any(|b| b.trial_id == t.trial_id)) {
        return Err(OverlapError(dup.trial_id.clone()));
    }
    let entries = top
        .iter()
        .enumerate()
        .map(|(i, r)| BankSampleEntry::from_record(format!("Top-{}", i + 1), r))
        .chain(
            bottom
                .iter()
                .enumerate()
                .map(|(i, r)| BankSampleEntry::from_record(format!("Bottom-{}", i + 1), r)),
        )
        .collect();
    Ok(BankSampleBlock { entries })
}

/// Counts that shape the coder prompt but live outside the agent config.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoderLimits {
    pub pairs: usize,
    pub round_cap: usize,
}

pub fn assemble_coder_prompts(
    task: &TaskDescriptor,
    agent: &AgentConfig,
    limits: CoderLimits,
    bank_sample: Option<&BankSampleBlock>,
) -> Result<PromptBundle, TemplateError> {
    let names = function_names(task, limits.pairs);
    let pairs = limits.pairs.to_string();
    let system = render(
        CODER_SYSTEM,
        &[
            ("pairs", pairs.as_str()),
            ("names", names.as_str()),
            ("pre_stem", task.pre_function_stem.as_str()),
        ],
    )?;

    let mut sections = String::new();
    if agent.data_prompt_enabled {
        sections += &render(SECTION_DATA, &[("dataset_details", task.dataset_details.trim_end())])?;
    }
    if agent.api_list_enabled {
        let list: Vec<String> = task
            .api_list
            .iter()
            .map(|e| {
                if e.doc.is_empty() {
                    format!("- `{}`", e.name)
                } else {
                    format!("- `{}`: {}", e.name, e.doc)
                }
            })
            .collect();
        sections += &render(SECTION_API, &[("api_list", list.join("\n").as_str())])?;
    }
    if agent.expert_functions_enabled {
        let mut sources = String::new();
        for source in [&task.expert_pre_source, &task.expert_post_source].into_iter().flatten() {
            sources += "```python\n";
            sources += source;
            ensure_newline(&mut sources);
            sources += "```\n";
        }
        if !sources.is_empty() {
            sections += &render(SECTION_EXPERT, &[("expert_sources", sources.as_str())])?;
        }
    }
    let bank_block = bank_sample.filter(|b| agent.function_bank_enabled && !b.entries.is_empty());
    if let Some(block) = bank_block {
        sections += &render(SECTION_BANK, &[("bank_block", block.render().as_str())])?;
    }

    let round_cap = limits.round_cap.to_string();
    let initial = render(
        CODER_TASK,
        &[
            ("pairs", pairs.as_str()),
            ("sections", sections.as_str()),
            ("metric_details", task.metric_details.trim_end()),
            ("post_skeleton", task.post_skeleton_source.trim_end()),
            ("round_cap", round_cap.as_str()),
        ],
    )?;

    let fingerprint = BTreeMap::from([
        ("api_list".to_owned(), agent.api_list_enabled),
        ("data_prompt".to_owned(), agent.data_prompt_enabled),
        ("expert_functions".to_owned(), agent.expert_functions_enabled),
        ("function_bank".to_owned(), agent.function_bank_enabled),
    ]);
    Ok(PromptBundle {
        system_instructions: system,
        initial_user_message: initial,
        component_fingerprint: fingerprint,
    })
}

fn function_names(task: &TaskDescriptor, pairs: usize) -> String {
    let mut names = Vec::with_capacity(pairs * 2);
    names.extend((1..=pairs).map(|i| format!("`{}`", task.pre_name(i))));
    names.extend((1..=pairs).map(|i| format!("`{}`", task.post_name(i))));
    names.join(", ")
}

/// The AutoML conversation's prompts for `n_functions` bank entries.
pub fn assemble_automl_prompt(
    task: &TaskDescriptor,
    entries: &[&TrialRecord],
    n_functions: usize,
) -> Result<PromptBundle, PromptError> {
    if entries.len() != n_functions {
        return Err(ArityError {
            expected: n_functions,
            found: entries.len(),
        }
        .into());
    }
    let n_total = (2 * n_functions).to_string();
    let system = render(AUTOML_SYSTEM, &[("n_total", n_total.as_str())])?;

    let mut listing = String::new();
    for (i, record) in entries.iter().enumerate() {
        let entry = BankSampleEntry::from_record(format!("Entry {}", i + 1), record);
        let _ = writeln!(
            listing,
            "### {} (validation objective {}; entry points {} / {})",
            entry.rank_label,
            fmt_objective(entry.validation_objective),
            entry.pre_name,
            entry.post_name
        );
        entry.write_code(&mut listing);
        listing.push('\n');
    }
    let n = n_functions.to_string();
    let names = function_names(task, n_functions);
    let initial = render(
        AUTOML_TASK,
        &[
            ("n_functions", n.as_str()),
            ("pre_stem", task.pre_function_stem.as_str()),
            ("post_stem", task.post_function_stem.as_str()),
            ("entries", listing.as_str()),
            ("names", names.as_str()),
        ],
    )?;
    Ok(PromptBundle {
        system_instructions: system,
        initial_user_message: initial,
        component_fingerprint: BTreeMap::from([("automl".to_owned(), true)]),
    })
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Arity(#[from] ArityError),
    #[error(transparent)]
    Overlap(#[from] OverlapError),
}

/// Execution feedback for one pair. Reads validation fields only.
pub fn format_execution_feedback(pre_name: &str, result: &ExecutionResult) -> String {
    match result.status {
        ExecStatus::Ok => result
            .metrics_val
            .iter()
            .map(|(metric, score)| format!("{pre_name}:{metric}:{}", fmt_objective(*score)))
            .collect::<Vec<_>>()
            .join("\n"),
        ExecStatus::Error => format!("{pre_name} failed:\n{}", truncate_tail(&result.feedback, FEEDBACK_LIMIT)),
        ExecStatus::Timeout => format!("{pre_name}: {}", timeout_notice(result)),
    }
}

fn timeout_notice(result: &ExecutionResult) -> String {
    if result.feedback.starts_with("execution timed out") {
        result.feedback.clone()
    } else {
        format!("execution timed out after {}s", result.duration_s)
    }
}

/// Keeps the last `limit` characters, prefixed with a marker when cut.
pub fn truncate_tail(text: &str, limit: usize) -> String {
    let count = text.chars().count();
    if count <= limit {
        return text.to_owned();
    }
    let cut = count - limit;
    let start = text.char_indices().nth(cut).map_or(text.len(), |(i, _)| i);
    format!("[... {cut} earlier characters truncated ...]\n{}", &text[start..])
}

pub fn fmt_objective(value: f64) -> String {
    format!("{value:.4}")
}

fn ensure_newline(s: &mut String) {
    if !s.ends_with('\n') {
        s.push('\n');
    }
}

fn python_literal(value: &Value) -> String {
    match value {
        Value::Bool(true) => "True".into(),
        Value::Bool(false) => "False".into(),
        Value::Null => "None".into(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests;
