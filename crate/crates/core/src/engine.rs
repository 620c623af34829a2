//! One optimization iteration: coder conversation, candidate extraction,
//! execution and feedback until the sentinel or the round cap.

use std::path::PathBuf;
use std::sync::{Arc, LazyLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{BankError, FunctionBank, TrialRecord};
use crate::bridge::{BridgeError, ExecStatus, ExecuteRequest, ExecutionResult, Split, WorkerHandle};
use crate::config::ExperimentConfig;
use crate::ledger::BudgetLedger;
use crate::llm::{persist_transcript, Conversation, LlmError, LlmGateway};
use crate::prompt::{
    assemble_coder_prompts, format_execution_feedback, render_bank_sample, CoderLimits, PromptError, TERMINATE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Coder,
    Automl,
}

/// One pre/post pair inside a submitted code block. Both sources hold the
/// whole block; the names pick the entry points.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidatePair {
    pub index: usize,
    pub pre_source: String,
    pub post_source: String,
    pub pre_name: String,
    pub post_name: String,
    pub origin: Origin,
    pub lineage: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodeBlockError {
    #[error("no fenced code block found")]
    NoCodeBlock,
    #[error("found {0} fenced code blocks, expected exactly one")]
    MultipleCodeBlocks(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("missing function `{0}`")]
    MissingFunction(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FencedBlock {
    pub lang: String,
    pub body: String,
}

/// All closed ``` fences in `text`, in order. The body is the exact text
/// between the opening and closing fence lines.
pub fn fenced_blocks(text: &str) -> Vec<FencedBlock> {
    let mut blocks = Vec::new();
    let mut open: Option<(String, usize)> = None;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim_start_matches([' ', '\t']);
        let line_start = offset;
        offset += line.len();
        if let Some(rest) = trimmed.strip_prefix("```") {
            match &open {
                None => open = Some((rest.trim().to_owned(), offset)),
                Some((lang, body_start)) if rest.trim().is_empty() => {
                    blocks.push(FencedBlock {
                        lang: lang.clone(),
                        body: text[*body_start..line_start].to_owned(),
                    });
                    open = None;
                }
                Some(_) => {}
            }
        }
    }
    blocks
}

pub fn extract_code_block(message: &str) -> Result<String, CodeBlockError> {
    let mut blocks = fenced_blocks(message);
    match blocks.len() {
        0 => Err(CodeBlockError::NoCodeBlock),
        1 => Ok(blocks.pop().expect("one block").body),
        n => Err(CodeBlockError::MultipleCodeBlocks(n)),
    }
}

static TOP_LEVEL_DEF: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^(?:async[ \t]+)?def[ \t]+([A-Za-z_][A-Za-z0-9_]*)[ \t]*\(").expect("valid regex"));

pub fn top_level_definitions(source: &str) -> Vec<&str> {
    TOP_LEVEL_DEF
        .captures_iter(source)
        .map(|c| c.get(1).expect("group").as_str())
        .collect()
}

/// Checks that `<pre_stem>_i` and `<post_stem>_i` are defined at top level
/// for every i in 1..=expected.
pub fn parse_function_pairs(
    source: &str,
    expected: usize,
    pre_stem: &str,
    post_stem: &str,
) -> Result<Vec<CandidatePair>, ParseError> {
    let defined = top_level_definitions(source);
    let mut pairs = Vec::with_capacity(expected);
    for index in 1..=expected {
        let pre_name = format!("{pre_stem}_{index}");
        let post_name = format!("{post_stem}_{index}");
        for name in [&pre_name, &post_name] {
            if !defined.contains(&name.as_str()) {
                return Err(ParseError::MissingFunction(name.clone()));
            }
        }
        pairs.push(CandidatePair {
            index,
            pre_source: source.to_owned(),
            post_source: source.to_owned(),
            pre_name,
            post_name,
            origin: Origin::Coder,
            lineage: None,
        });
    }
    Ok(pairs)
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("transcript: {0}")]
    Transcript(#[from] std::io::Error),
}

/// Everything one run owns. Never shared between runs.
pub struct RunContext {
    pub run_id: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub bank: FunctionBank,
    pub worker: WorkerHandle,
    pub llm: LlmGateway,
    pub ledger: Arc<BudgetLedger>,
    pub output_dir: PathBuf,
    requests: u64,
}

impl RunContext {
    pub fn new(
        run_id: impl Into<String>,
        seed: u64,
        config: ExperimentConfig,
        bank: FunctionBank,
        worker: WorkerHandle,
        llm: LlmGateway,
        output_dir: PathBuf,
    ) -> Self {
        let ledger = Arc::clone(llm.ledger());
        Self {
            run_id: run_id.into(),
            seed,
            config,
            bank,
            worker,
            llm,
            ledger,
            output_dir,
            requests: 0,
        }
    }

    pub(crate) fn next_request_id(&mut self) -> String {
        self.requests += 1;
        format!("{}-q{:05}", self.run_id, self.requests)
    }

    pub(crate) fn model_id(&self) -> String {
        self.llm.model_id().to_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminatedBy {
    Sentinel,
    RoundCap,
    /// The worker died mid-iteration; the iteration was abandoned.
    WorkerDead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationOutcome {
    pub iteration: usize,
    pub trial_records: Vec<TrialRecord>,
    pub rounds_used: usize,
    pub terminated_by: TerminatedBy,
}

impl IterationOutcome {
    pub fn ok_count(&self) -> usize {
        self.trial_records.iter().filter(|r| r.is_ok()).count()
    }
}

enum PairOutcome {
    Done(ExecutionResult),
    Dead,
}

fn execute_pair(ctx: &mut RunContext, pair: &CandidatePair) -> Result<PairOutcome, BridgeError> {
    let request = ExecuteRequest {
        id: ctx.next_request_id(),
        task: ctx.config.task.task_id.clone(),
        split: Split::Both,
        source: pair.pre_source.clone(),
        pre_name: pair.pre_name.clone(),
        post_name: pair.post_name.clone(),
        params: None,
        timeout_s: ctx.config.execution_timeout_s,
    };
    let id = request.id.clone();
    ctx.ledger.record_coder_trial();
    match ctx.worker.execute_candidate(request) {
        Ok(result) => Ok(PairOutcome::Done(result)),
        Err(BridgeError::Protocol(message)) => Ok(PairOutcome::Done(ExecutionResult::failed(
            id,
            ExecStatus::Error,
            format!("worker protocol error: {message}"),
        ))),
        Err(BridgeError::WorkerDead) => Ok(PairOutcome::Dead),
        Err(err) => Err(err),
    }
}

/// Runs the coder conversation for one iteration.
///
/// Ok trials are committed to the bank only when every pair of a
/// submission succeeds; failed pairs are committed as they occur. After a
/// full success the model must reply with the sentinel.
pub fn run_iteration(ctx: &mut RunContext, iteration: usize) -> Result<IterationOutcome, EngineError> {
    let cfg = &ctx.config;
    let pairs = cfg.pairs_per_iteration;
    let sample = if cfg.agent.function_bank_enabled {
        let (top, bottom) = ctx
            .bank
            .sample_for_prompt(cfg.agent.bank_sample_top, cfg.agent.bank_sample_bottom);
        if top.is_empty() {
            None
        } else {
            Some(render_bank_sample(&top, &bottom).map_err(PromptError::from)?)
        }
    } else {
        None
    };
    let bundle = assemble_coder_prompts(
        &cfg.task,
        &cfg.agent,
        CoderLimits {
            pairs,
            round_cap: cfg.conversation_round_cap,
        },
        sample.as_ref(),
    )
    .map_err(PromptError::from)?;
    let mut conversation = Conversation::new(bundle.system_instructions, cfg.conversation_round_cap);
    conversation.push_user(bundle.initial_user_message);

    let label = format!("it{iteration:02}-coder");
    let result = drive(ctx, iteration, &mut conversation);
    persist_transcript(&ctx.output_dir, &ctx.run_id, &label, &conversation)?;
    let (trial_records, terminated_by) = result?;
    Ok(IterationOutcome {
        iteration,
        trial_records,
        rounds_used: conversation.round_count(),
        terminated_by,
    })
}

fn drive(
    ctx: &mut RunContext,
    iteration: usize,
    conversation: &mut Conversation,
) -> Result<(Vec<TrialRecord>, TerminatedBy), EngineError> {
    let pairs = ctx.config.pairs_per_iteration;
    let pre_stem = ctx.config.task.pre_function_stem.clone();
    let post_stem = ctx.config.task.post_function_stem.clone();
    let model_id = ctx.model_id();
    let mut committed = Vec::new();
    let mut succeeded = false;

    loop {
        let reply = match ctx.llm.chat(conversation) {
            Ok(reply) => reply.content,
            Err(LlmError::RoundCapExceeded { .. }) => return Ok((committed, TerminatedBy::RoundCap)),
            Err(err) => return Err(err.into()),
        };
        if succeeded {
            if reply.contains(TERMINATE) {
                return Ok((committed, TerminatedBy::Sentinel));
            }
            conversation.push_user(format!(
                "All {pairs} pairs have already been evaluated and no further submissions are accepted. \
                 Report the scores as {pre_stem}_<i>:<metric>:<score> and reply {TERMINATE}."
            ));
            continue;
        }

        let block = match extract_code_block(&reply) {
            Ok(block) => block,
            Err(CodeBlockError::NoCodeBlock) if reply.contains(TERMINATE) => {
                conversation.push_user(format!(
                    "Nothing has been evaluated yet, so {TERMINATE} is not accepted. \
                     Submit all {pairs} pairs in one fenced code block."
                ));
                continue;
            }
            Err(CodeBlockError::NoCodeBlock) => {
                conversation.push_user(format!(
                    "Your reply had no code block. Submit all {pairs} pairs in exactly one fenced code block."
                ));
                continue;
            }
            Err(CodeBlockError::MultipleCodeBlocks(n)) => {
                conversation.push_user(format!(
                    "Your reply had {n} code blocks. Put all {pairs} pairs in exactly one fenced code block."
                ));
                continue;
            }
        };
        let candidates = match parse_function_pairs(&block, pairs, &pre_stem, &post_stem) {
            Ok(candidates) => candidates,
            Err(ParseError::MissingFunction(name)) => {
                conversation.push_user(format!(
                    "The code block does not define `{name}` at top level. \
                     Resubmit all {pairs} pairs ({pre_stem}_1..{pairs} and {post_stem}_1..{pairs}) in one block."
                ));
                continue;
            }
        };

        let mut lines = Vec::with_capacity(pairs);
        let mut results = Vec::with_capacity(pairs);
        for candidate in candidates {
            match execute_pair(ctx, &candidate)? {
                PairOutcome::Done(result) => {
                    let record = TrialRecord::from_result(
                        &ctx.run_id,
                        iteration,
                        candidate.clone(),
                        result.clone(),
                        &ctx.config.task.metric_spec,
                        &model_id,
                    );
                    let mut shown = result;
                    if !record.is_ok() && shown.is_ok() {
                        shown.status = ExecStatus::Error;
                        shown.feedback = record.feedback.clone();
                    }
                    lines.push(format_execution_feedback(&candidate.pre_name, &shown));
                    results.push(record);
                }
                PairOutcome::Dead => {
                    let id = ctx.next_request_id();
                    let record = TrialRecord::from_result(
                        &ctx.run_id,
                        iteration,
                        candidate,
                        ExecutionResult::failed(id, ExecStatus::Error, "worker process died during execution"),
                        &ctx.config.task.metric_spec,
                        &model_id,
                    );
                    committed.push(ctx.bank.append(record)?.clone());
                    return Ok((committed, TerminatedBy::WorkerDead));
                }
            }
        }

        let all_ok = results.iter().all(TrialRecord::is_ok);
        for record in results {
            if all_ok || !record.is_ok() {
                committed.push(ctx.bank.append(record)?.clone());
            }
        }
        let scores = lines.join("\n");
        if all_ok {
            succeeded = true;
            conversation.push_user(format!(
                "{scores}\n\nAll {pairs} pairs were evaluated. Report the scores in the required format and reply {TERMINATE}."
            ));
        } else {
            conversation.push_user(format!(
                "{scores}\n\nAt least one pair failed. Fix the errors and resubmit all {pairs} pairs in one code block."
            ));
        }
    }
}
