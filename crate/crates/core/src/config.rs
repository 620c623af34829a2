//! Experiment configuration, task descriptors and config loading.
//!
//! The canonical on-disk form is JSON. Unknown keys are rejected at every
//! level so that an experiment's provenance can be diffed field by field.
//! Loading fills defaults, applies the built-in task preset named by
//! `task.task_id` (when one exists) and validates the count invariants.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::presets;

/// Errors raised while loading an experiment configuration.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file not found: {0}")]
    MissingFile(PathBuf),
    #[error("failed to read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid value for `{field}`: {reason}")]
    ValidationError { field: String, reason: String },
}

impl ConfigError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::ValidationError {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

fn default_runs() -> usize {
    20
}
fn default_iterations() -> usize {
    20
}
fn default_pairs() -> usize {
    3
}
fn default_round_cap() -> usize {
    20
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_parallel() -> usize {
    1
}
fn default_timeout_s() -> f64 {
    120.0
}
fn default_true() -> bool {
    true
}
fn default_three() -> usize {
    3
}
fn default_top_k() -> usize {
    15
}
fn default_cadence() -> usize {
    5
}
fn default_trials() -> usize {
    24
}

/// Top-level experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_iterations")]
    pub iterations_per_run: usize,
    #[serde(default = "default_pairs")]
    pub pairs_per_iteration: usize,
    #[serde(default = "default_round_cap")]
    pub conversation_round_cap: usize,
    #[serde(default)]
    pub agent: AgentConfig,
    pub task: TaskDescriptor,
    #[serde(default)]
    pub llm: LlmBackendConfig,
    pub worker_command: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_parallel")]
    pub parallel_runs: usize,
    /// Wall-clock limit for one candidate execution.
    #[serde(default = "default_timeout_s")]
    pub execution_timeout_s: f64,
    /// Named settings of the experiment matrix. Empty means a single
    /// `base` setting using `agent` and `llm` unchanged.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub settings: BTreeMap<String, SettingDelta>,
}

/// Partial override of the base agent/LLM configuration for one setting.
/// Both members are JSON merge patches validated after application.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingDelta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm: Option<serde_json::Value>,
}

/// Component toggles and budgets for the coding agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    #[serde(default = "default_true")]
    pub data_prompt_enabled: bool,
    #[serde(default = "default_true")]
    pub api_list_enabled: bool,
    #[serde(default)]
    pub expert_functions_enabled: bool,
    #[serde(default)]
    pub function_bank_enabled: bool,
    #[serde(default = "default_three")]
    pub bank_sample_top: usize,
    #[serde(default = "default_three")]
    pub bank_sample_bottom: usize,
    #[serde(default)]
    pub automl: AutoMlConfig,
    #[serde(default = "default_top_k")]
    pub selection_top_k: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            data_prompt_enabled: true,
            api_list_enabled: true,
            expert_functions_enabled: false,
            function_bank_enabled: false,
            bank_sample_top: 3,
            bank_sample_bottom: 3,
            automl: AutoMlConfig::default(),
            selection_top_k: 15,
        }
    }
}

/// Which proposal strategy drives an AutoML search after the defaults trial.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Uniform,
    #[default]
    Tpe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoMlConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_cadence")]
    pub cadence_iterations: usize,
    #[serde(default = "default_three")]
    pub entries_per_invocation: usize,
    #[serde(default = "default_trials")]
    pub trials_per_entry: usize,
    #[serde(default)]
    pub sampler_seed_offset: u64,
    #[serde(default)]
    pub sampler: SamplerKind,
}

impl Default for AutoMlConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            cadence_iterations: 5,
            entries_per_invocation: 3,
            trials_per_entry: 24,
            sampler_seed_offset: 0,
            sampler: SamplerKind::default(),
        }
    }
}

/// Reduced-search ablations relative to the default AutoML budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoMlAblation {
    HalfFrequency,
    HalfIterations,
}

impl fmt::Display for AutoMlAblation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AutoMlAblation::HalfFrequency => f.write_str("half-frequency"),
            AutoMlAblation::HalfIterations => f.write_str("half-iterations"),
        }
    }
}

impl AutoMlConfig {
    /// Ablation flags implied by this configuration (empty for the full search).
    pub fn ablations(&self) -> Vec<AutoMlAblation> {
        let mut flags = Vec::new();
        if !self.enabled {
            return flags;
        }
        if self.cadence_iterations == 10 {
            flags.push(AutoMlAblation::HalfFrequency);
        }
        if self.trials_per_entry == 12 {
            flags.push(AutoMlAblation::HalfIterations);
        }
        flags
    }
}

/// One documented API offered to the coding agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiListEntry {
    pub name: String,
    #[serde(default)]
    pub doc: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveDirection {
    #[default]
    Maximize,
}

/// Named metrics combined into one scalar objective by a weighted sum.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSpec {
    #[serde(default)]
    pub metric_names: Vec<String>,
    #[serde(default)]
    pub weights: Vec<f64>,
    #[serde(default)]
    pub objective_direction: ObjectiveDirection,
}

impl MetricSpec {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        let metric_names: Vec<String> = names.into_iter().map(Into::into).collect();
        let weights = vec![1.0; metric_names.len()];
        Self {
            metric_names,
            weights,
            objective_direction: ObjectiveDirection::Maximize,
        }
    }

    /// Weighted sum of the named metrics, or `None` when any is missing.
    pub fn objective(&self, metrics: &BTreeMap<String, f64>) -> Option<f64> {
        let mut total = 0.0;
        for (name, weight) in self.metric_names.iter().zip(self.effective_weights()) {
            total += weight * metrics.get(name)?;
        }
        Some(total)
    }

    fn effective_weights(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.metric_names.len()).map(|i| self.weights.get(i).copied().unwrap_or(1.0))
    }
}

fn default_pre_stem() -> String {
    "preprocess_images".to_owned()
}
fn default_post_stem() -> String {
    "postprocess_preds".to_owned()
}

/// Everything the agent is told about the task, plus the function naming contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskDescriptor {
    pub task_id: String,
    #[serde(default)]
    pub dataset_details: String,
    #[serde(default)]
    pub metric_details: String,
    #[serde(default)]
    pub metric_spec: MetricSpec,
    #[serde(default)]
    pub api_list: Vec<ApiListEntry>,
    /// Alternative to an inline `api_list`; resolved relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_list_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expert_pre_source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expert_post_source: Option<String>,
    #[serde(default)]
    pub post_skeleton_source: String,
    #[serde(default = "default_pre_stem")]
    pub pre_function_stem: String,
    #[serde(default = "default_post_stem")]
    pub post_function_stem: String,
    /// Free-form metadata (e.g. reference split sizes); carried, never interpreted.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl TaskDescriptor {
    pub fn new(task_id: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            dataset_details: String::new(),
            metric_details: String::new(),
            metric_spec: MetricSpec::default(),
            api_list: Vec::new(),
            api_list_file: None,
            expert_pre_source: None,
            expert_post_source: None,
            post_skeleton_source: String::new(),
            pre_function_stem: default_pre_stem(),
            post_function_stem: default_post_stem(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn pre_name(&self, index: usize) -> String {
        format!("{}_{}", self.pre_function_stem, index)
    }

    pub fn post_name(&self, index: usize) -> String {
        format!("{}_{}", self.post_function_stem, index)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Http,
    Scripted,
}

fn default_model() -> String {
    "gpt-4.1".to_owned()
}
fn default_endpoint() -> Option<String> {
    Some("https://api.openai.com/v1/chat/completions".to_owned())
}
fn default_credential_env() -> Option<String> {
    Some("OPENAI_API_KEY".to_owned())
}
fn default_temperature() -> f64 {
    1.0
}
fn default_max_tokens() -> u32 {
    4096
}
fn default_retry_base_ms() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmBackendConfig {
    #[serde(default)]
    pub kind: BackendKind,
    #[serde(default = "default_model")]
    pub model_id: String,
    #[serde(default = "default_endpoint")]
    pub endpoint: Option<String>,
    #[serde(default = "default_credential_env")]
    pub credential_env: Option<String>,
    #[serde(default)]
    pub script_path: Option<PathBuf>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
    /// First retry delay; doubles per attempt.
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_delay_ms: u64,
}

impl Default for LlmBackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Http,
            model_id: default_model(),
            endpoint: default_endpoint(),
            credential_env: default_credential_env(),
            script_path: None,
            temperature: default_temperature(),
            max_output_tokens: default_max_tokens(),
            retry_base_delay_ms: default_retry_base_ms(),
        }
    }
}

impl LlmBackendConfig {
    pub fn scripted(path: impl Into<PathBuf>) -> Self {
        Self {
            kind: BackendKind::Scripted,
            model_id: "scripted".to_owned(),
            script_path: Some(path.into()),
            ..Self::default()
        }
    }

    pub fn validate(&self, prefix: &str) -> Result<(), ConfigError> {
        match self.kind {
            BackendKind::Scripted if self.script_path.is_none() => Err(ConfigError::invalid(
                format!("{prefix}script_path"),
                "required for scripted backend",
            )),
            BackendKind::Http if self.endpoint.is_none() => Err(ConfigError::invalid(
                format!("{prefix}endpoint"),
                "required for http backend",
            )),
            BackendKind::Http if self.credential_env.is_none() => Err(ConfigError::invalid(
                format!("{prefix}credential_env"),
                "required for http backend",
            )),
            _ if self.model_id.trim().is_empty() => {
                Err(ConfigError::invalid(format!("{prefix}model_id"), "must be non-empty"))
            }
            _ => Ok(()),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self, prefix: &str) -> Result<(), ConfigError> {
        if self.selection_top_k < 1 {
            return Err(ConfigError::invalid(
                format!("{prefix}selection_top_k"),
                "must be ≥ 1",
            ));
        }
        let automl = &self.automl;
        if automl.cadence_iterations < 1 {
            return Err(ConfigError::invalid(
                format!("{prefix}automl.cadence_iterations"),
                "must be ≥ 1",
            ));
        }
        if automl.trials_per_entry < 1 {
            return Err(ConfigError::invalid(
                format!("{prefix}automl.trials_per_entry"),
                "must be ≥ 1",
            ));
        }
        if automl.enabled && automl.entries_per_invocation < 1 {
            return Err(ConfigError::invalid(
                format!("{prefix}automl.entries_per_invocation"),
                "must be ≥ 1",
            ));
        }
        Ok(())
    }
}

impl ExperimentConfig {
    /// Minimal config: only the required fields, everything else defaulted.
    pub fn minimal(task_id: &str, worker_command: &str) -> Self {
        let mut cfg = Self {
            master_seed: 0,
            runs: default_runs(),
            iterations_per_run: default_iterations(),
            pairs_per_iteration: default_pairs(),
            conversation_round_cap: default_round_cap(),
            agent: AgentConfig::default(),
            task: TaskDescriptor::new(task_id),
            llm: LlmBackendConfig::default(),
            worker_command: worker_command.to_owned(),
            output_dir: default_output_dir(),
            parallel_runs: default_parallel(),
            execution_timeout_s: default_timeout_s(),
            settings: BTreeMap::new(),
        };
        presets::apply(&mut cfg.task);
        cfg
    }

    /// Coder trials the experiment plans per setting.
    pub fn coder_trial_budget(&self) -> usize {
        self.runs * self.iterations_per_run * self.pairs_per_iteration
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let counts = [
            ("runs", self.runs),
            ("iterations_per_run", self.iterations_per_run),
            ("pairs_per_iteration", self.pairs_per_iteration),
            ("conversation_round_cap", self.conversation_round_cap),
            ("parallel_runs", self.parallel_runs),
        ];
        for (field, value) in counts {
            if value < 1 {
                return Err(ConfigError::invalid(field, "must be ≥ 1"));
            }
        }
        if !(self.execution_timeout_s > 0.0) {
            return Err(ConfigError::invalid("execution_timeout_s", "must be > 0"));
        }
        if self.worker_command.trim().is_empty() {
            return Err(ConfigError::invalid("worker_command", "must be non-empty"));
        }
        if self.task.task_id.trim().is_empty() {
            return Err(ConfigError::invalid("task.task_id", "must be non-empty"));
        }
        let metrics = &self.task.metric_spec;
        if !metrics.weights.is_empty() && metrics.weights.len() != metrics.metric_names.len() {
            return Err(ConfigError::invalid(
                "task.metric_spec.weights",
                "length must equal metric_names length",
            ));
        }
        self.agent.validate("agent.")?;
        self.llm.validate("llm.")?;
        for name in self.settings.keys() {
            if !is_path_safe(name) {
                return Err(ConfigError::invalid(
                    format!("settings.{name}"),
                    "setting names may only contain letters, digits, '-' and '_'",
                ));
            }
        }
        self.resolve_settings()?;
        Ok(())
    }

    /// The experiment matrix: one config per setting, in name order, with
    /// the setting's deltas merged into `agent` and `llm`. No settings
    /// means a single `base` setting.
    pub fn resolve_settings(&self) -> Result<Vec<(String, ExperimentConfig)>, ConfigError> {
        let mut base = self.clone();
        base.settings.clear();
        if self.settings.is_empty() {
            return Ok(vec![(BASE_SETTING.to_owned(), base)]);
        }
        self.settings
            .iter()
            .map(|(name, delta)| {
                let mut cfg = base.clone();
                if let Some(patch) = &delta.agent {
                    cfg.agent = merged(&cfg.agent, patch, &format!("settings.{name}.agent"))?;
                    cfg.agent.validate(&format!("settings.{name}.agent."))?;
                }
                if let Some(patch) = &delta.llm {
                    cfg.llm = merged(&cfg.llm, patch, &format!("settings.{name}.llm"))?;
                    cfg.llm.validate(&format!("settings.{name}.llm."))?;
                }
                Ok((name.clone(), cfg))
            })
            .collect()
    }

    /// Canonical JSON serialization (pretty, stable field order).
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

pub const BASE_SETTING: &str = "base";

fn merged<T: Serialize + serde::de::DeserializeOwned>(
    base: &T,
    patch: &serde_json::Value,
    field: &str,
) -> Result<T, ConfigError> {
    let mut doc = serde_json::to_value(base).expect("config serializes");
    json_patch::merge(&mut doc, patch);
    serde_json::from_value(doc).map_err(|err| ConfigError::invalid(field, err.to_string()))
}

pub(crate) fn is_path_safe(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// Expands `$VAR` and `${VAR}` from the process environment. Unset
/// variables expand to the empty string.
pub fn expand_env(text: &str) -> String {
    let pattern = Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}|\$([A-Za-z_][A-Za-z0-9_]*)")
        .expect("static regex");
    pattern
        .replace_all(text, |caps: &regex::Captures<'_>| {
            let name = caps.get(1).or_else(|| caps.get(2)).unwrap().as_str();
            std::env::var(name).unwrap_or_default()
        })
        .into_owned()
}

/// Reads, defaults and validates an experiment config file.
pub fn load_experiment_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            ConfigError::MissingFile(path.to_path_buf())
        } else {
            ConfigError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })?;
    let base_dir = path.parent().unwrap_or_else(|| Path::new("."));
    parse_experiment_config(&text, base_dir)
}

/// Same as [`load_experiment_config`] for in-memory text; relative paths
/// resolve against `base_dir`.
pub fn parse_experiment_config(text: &str, base_dir: &Path) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg: ExperimentConfig =
        serde_json::from_str(text).map_err(|err| ConfigError::ParseError {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        })?;

    cfg.worker_command = expand_env(&cfg.worker_command);
    if let Some(var) = cfg.llm.credential_env.as_mut() {
        *var = expand_env(var);
    }
    if let Some(script) = cfg.llm.script_path.as_mut() {
        if script.is_relative() {
            *script = base_dir.join(&*script);
        }
    }
    for delta in cfg.settings.values_mut() {
        let script = delta
            .llm
            .as_mut()
            .and_then(|llm| llm.get_mut("script_path"))
            .filter(|v| v.as_str().is_some_and(|p| Path::new(p).is_relative()));
        if let Some(value) = script {
            let joined = base_dir.join(value.as_str().unwrap_or_default());
            *value = serde_json::Value::String(joined.to_string_lossy().into_owned());
        }
    }
    if let Some(list_file) = cfg.task.api_list_file.take() {
        let full = if list_file.is_relative() {
            base_dir.join(&list_file)
        } else {
            list_file
        };
        let raw = std::fs::read_to_string(&full).map_err(|err| {
            ConfigError::invalid("task.api_list_file", format!("{}: {err}", full.display()))
        })?;
        cfg.task.api_list = serde_json::from_str(&raw).map_err(|err| {
            ConfigError::invalid("task.api_list_file", format!("{}: {err}", full.display()))
        })?;
    }
    presets::apply(&mut cfg.task);
    if cfg.task.metric_spec.weights.is_empty() {
        cfg.task.metric_spec.weights = vec![1.0; cfg.task.metric_spec.metric_names.len()];
    }
    cfg.validate()?;
    Ok(cfg)
}

/// One problem found in a task descriptor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, field: &str, message: &str) {
        self.violations.push(Violation {
            field: field.to_owned(),
            message: message.to_owned(),
        });
    }
}

/// Lists every reason the descriptor cannot drive an experiment.
/// `api_list_required` is false under the no-API-list ablation.
pub fn validate_task_descriptor(td: &TaskDescriptor, api_list_required: bool) -> ValidationReport {
    let mut report = ValidationReport::default();
    if td.task_id.trim().is_empty() {
        report.push("task_id", "task id required");
    }
    if td.post_skeleton_source.trim().is_empty() {
        report.push("post_skeleton_source", "post skeleton required");
    }
    if td.metric_spec.metric_names.is_empty() {
        report.push("metric_spec.metric_names", "at least one metric required");
    }
    let mut seen = BTreeSet::new();
    for name in &td.metric_spec.metric_names {
        if !seen.insert(name) {
            report.push("metric_spec.metric_names", "duplicate metric");
            break;
        }
    }
    if !td.metric_spec.weights.is_empty()
        && td.metric_spec.weights.len() != td.metric_spec.metric_names.len()
    {
        report.push("metric_spec.weights", "weights length must equal metric_names length");
    }
    if api_list_required && td.api_list.is_empty() {
        report.push("api_list", "api list required when the api list component is enabled");
    }
    let ident = Regex::new(r"^[A-Za-z_][A-Za-z0-9_]*$").expect("static regex");
    if !ident.is_match(&td.pre_function_stem) {
        report.push("pre_function_stem", "must be an identifier");
    }
    if !ident.is_match(&td.post_function_stem) {
        report.push("post_function_stem", "must be an identifier");
    }
    report
}
