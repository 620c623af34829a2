use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use tooladapt_core::config::{load_experiment_config, validate_task_descriptor, ConfigError};
use tooladapt_core::runner::{
    build_report, emit_tables, replay, run_experiment, select, write_report, RunOptions, RunnerError, TableFormat,
};
use tooladapt_core::stub::{ServeExit, StubOptions, StubWorker};

#[derive(Parser)]
#[command(name = "tooladapt", version, about = "Run and analyse tool-adaptation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Markdown,
    Both,
}

impl Format {
    fn formats(self) -> Vec<TableFormat> {
        match self {
            Format::Csv => vec![TableFormat::Csv],
            Format::Markdown => vec![TableFormat::Markdown],
            Format::Both => vec![TableFormat::Csv, TableFormat::Markdown],
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Execute the experiment matrix.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        parallel: Option<usize>,
        /// Only run these settings (repeatable).
        #[arg(long = "setting")]
        settings: Vec<String>,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute the report and tables from an experiment directory.
    Analyze {
        #[arg(long)]
        banks: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        format: Format,
        /// Report directory; defaults to `<banks>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rerun final selection with a different k.
    Select {
        #[arg(long)]
        banks: PathBuf,
        #[arg(long)]
        k: usize,
        /// Write JSON here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config file without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-render every stored conversation and check its opening prompts.
    Replay {
        #[arg(long)]
        banks: PathBuf,
        /// Defaults to `<banks>/replay`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the reference stub worker on standard input/output.
    Worker {
        #[arg(long, value_delimiter = ',')]
        tasks: Vec<String>,
        #[arg(long)]
        sealed_sentinel: Option<f64>,
    },
}

/// Exit 1 marks bad input, 2 a failure while doing the work.
enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        let invalid = err.chain().any(|cause| {
            cause.downcast_ref::<ConfigError>().is_some_and(|c| !matches!(c, ConfigError::Io { .. }))
        });
        if invalid {
            Failure::Invalid(err)
        } else {
            Failure::Runtime(err)
        }
    }
}

fn print_json(value: &impl serde::Serialize, out: Option<&Path>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => Ok(io::stdout().write_all(text.as_bytes())?),
    }
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { config, parallel, settings, out } => {
            let mut cfg = load_experiment_config(&config).context("loading config")?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let report = run_experiment(&cfg, &RunOptions { parallel, settings }).map_err(|e| match e {
                RunnerError::Config(_) | RunnerError::UnknownSetting(_) => Failure::Invalid(e.into()),
                other => Failure::Runtime(other.into()),
            })?;
            let failed: usize = report.settings.values().map(|s| s.failed_runs.len()).sum();
            if failed > 0 {
                eprintln!("{failed} run(s) failed; see {}", cfg.output_dir.join("experiment.json").display());
            }
            println!("{}", cfg.output_dir.join("report").display());
            Ok(())
        }
        Command::Analyze { banks, format, out } => {
            let report = build_report(&banks, None).context("building report")?;
            match out {
                None if matches!(format, Format::Both) => write_report(&banks, &report).context("writing report")?,
                out => {
                    let dir = out.unwrap_or_else(|| banks.join("report"));
                    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                    std::fs::write(dir.join("report.json"), tooladapt_core::runner::report_json(&report))
                        .context("writing report")?;
                    for f in format.formats() {
                        emit_tables(&report, f, &dir).context("writing tables")?;
                    }
                }
            }
            Ok(())
        }
        Command::Select { banks, k, out } => {
            if k == 0 {
                return Err(Failure::Invalid(anyhow::anyhow!("--k must be at least 1")));
            }
            let reports = select(&banks, k).context("selecting")?;
            print_json(&reports, out.as_deref())?;
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = load_experiment_config(&config).map_err(anyhow::Error::new)?;
            let settings = cfg.resolve_settings().map_err(anyhow::Error::new)?;
            let mut problems = 0;
            for (name, resolved) in &settings {
                let report = validate_task_descriptor(&resolved.task, resolved.agent.api_list_enabled);
                for v in &report.violations {
                    eprintln!("{name}: task.{}: {}", v.field, v.message);
                    problems += 1;
                }
            }
            if problems > 0 {
                return Err(Failure::Invalid(anyhow::anyhow!("{problems} problem(s) in task descriptor")));
            }
            println!("ok: {} setting(s)", settings.len());
            Ok(())
        }
        Command::Replay { banks, out } => {
            let out = out.unwrap_or_else(|| banks.join("replay"));
            let summary = replay(&banks, &out).context("replaying transcripts")?;
            print_json(&summary, None)?;
            if !summary.mismatches.is_empty() {
                return Err(Failure::Runtime(anyhow::anyhow!(
                    "{} conversation(s) do not match their re-rendered prompts",
                    summary.mismatches.len()
                )));
            }
            Ok(())
        }
        Command::Worker { tasks, sealed_sentinel } => {
            let mut options = StubOptions::default();
            if !tasks.is_empty() {
                options.tasks = tasks;
            }
            options.sealed_sentinel = sealed_sentinel;
            let cancel = AtomicBool::new(false);
            let exit = StubWorker::new(options)
                .serve(io::stdin().lock(), io::stdout().lock(), &cancel)
                .context("worker i/o")?;
            if exit == ServeExit::Died {
                // Simulated crash requested by a candidate.
                std::process::exit(70);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
