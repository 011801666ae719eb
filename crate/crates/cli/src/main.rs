//! Command-line front end: validate datasets, run assessments, evaluate
//! predictions, and run the standard-vs-chain-of-thought ablation.
//!
//! Exit codes are a stable contract: 0 success, 2 validation failure,
//! 3 when more than half the attempted transcripts fail, 4 when evaluation
//! cannot join records to gold labels, 1 for any other error.
//!
//! Option precedence: CLI flags > config file (`--config`, JSON) >
//! environment (`COTPHQ_BASE_URL`, `COTPHQ_API_KEY`) > built-in defaults.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use cotphq::commands::{
    backend_from_spec, cmd_ablate, cmd_eval, cmd_run, cmd_validate, render_validation_text,
    RunConfig,
};
use cotphq::dataset::Split;
use cotphq::prompts::{PromptMode, DEFAULT_MAX_CHARS};
use cotphq::report::{render_ablation_text, render_eval_text};

const EXIT_VALIDATION: u8 = 2;
const EXIT_RUN_FAILURES: u8 = 3;
const EXIT_JOIN_FAILURE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "cotphq",
    version,
    about = "Staged chain-of-thought PHQ-8 assessment over interview transcripts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a labels file and the transcripts it references
    Validate {
        /// Path to labels.csv
        #[arg(long)]
        manifest: PathBuf,
        /// Write the validation report as JSON to this path
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Assess every transcript in a split, one JSONL record each
    Run(RunArgs),
    /// Compute CCC/MAE and band confusion for recorded assessments
    Eval {
        /// Records file produced by `run`
        #[arg(long)]
        records: PathBuf,
        /// Path to labels.csv
        #[arg(long)]
        manifest: PathBuf,
        /// Require full coverage of this split (train|val|test)
        #[arg(long)]
        split: Option<String>,
        /// Report path (default: records path with .eval.json extension)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a split in both prompting modes and compare
    Ablate(RunArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Path to labels.csv
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Split to assess: train|val|test (default test)
    #[arg(long)]
    split: Option<String>,
    /// Prompting mode: standard|cot (default cot)
    #[arg(long)]
    mode: Option<String>,
    /// Model identifier sent to the backend (default gpt-4o)
    #[arg(long)]
    model: Option<String>,
    /// Backend spec: mock:<script-path>, http, or a base URL (default http)
    #[arg(long)]
    backend: Option<String>,
    /// Response cache directory; omit to disable caching
    #[arg(long = "cache-dir")]
    cache_dir: Option<PathBuf>,
    /// Output directory for records and reports (default ./out)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Concurrent transcript workers (default 4)
    #[arg(long)]
    workers: Option<usize>,
    /// Directory of prompt template overrides
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Feed only participant turns to the model (default true)
    #[arg(long = "participant-only")]
    participant_only: Option<bool>,
    /// Transcript character budget; longer transcripts keep the tail
    #[arg(long = "max-chars")]
    max_chars: Option<usize>,
    /// Sampling temperature (default 0)
    #[arg(long)]
    temperature: Option<f64>,
    /// Completion token limit per call (default 4096)
    #[arg(long = "max-tokens")]
    max_tokens: Option<u32>,
    /// Seed passed to providers that support one (default 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Repeat runs for ablation rows, reporting means (default 1)
    #[arg(long)]
    repeats: Option<usize>,
    /// JSON config file supplying any of the above
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Config-file counterpart of `RunArgs`; every key optional.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    manifest: Option<PathBuf>,
    split: Option<String>,
    mode: Option<String>,
    model: Option<String>,
    backend: Option<String>,
    cache_dir: Option<PathBuf>,
    out: Option<PathBuf>,
    workers: Option<usize>,
    templates: Option<PathBuf>,
    participant_only: Option<bool>,
    max_chars: Option<usize>,
    temperature: Option<f64>,
    max_tokens: Option<u32>,
    seed: Option<u64>,
    repeats: Option<usize>,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(path) => {
            let content = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config file {}", path.display()))?;
            serde_json::from_str(&content)
                .with_context(|| format!("bad config file {}", path.display()))
        }
    }
}

fn resolve_config(args: &RunArgs) -> Result<RunConfig> {
    let file = load_file_config(args.config.as_deref())?;
    let manifest = args
        .manifest
        .clone()
        .or(file.manifest)
        .context("--manifest is required (flag or config file)")?;
    let out_dir = args
        .out
        .clone()
        .or(file.out)
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut config = RunConfig::new(manifest, out_dir);
    if let Some(split) = args.split.clone().or(file.split) {
        config.split = Split::from_str(&split).map_err(anyhow::Error::msg)?;
    }
    if let Some(mode) = args.mode.clone().or(file.mode) {
        config.mode = PromptMode::from_str(&mode).map_err(anyhow::Error::msg)?;
    }
    if let Some(model) = args.model.clone().or(file.model) {
        config.model_id = model;
    }
    if let Some(backend) = args.backend.clone().or(file.backend) {
        config.backend_spec = backend;
    }
    config.cache_dir = args.cache_dir.clone().or(file.cache_dir);
    if let Some(workers) = args.workers.or(file.workers) {
        anyhow::ensure!(workers >= 1, "--workers must be at least 1");
        config.workers = workers;
    }
    config.templates_dir = args.templates.clone().or(file.templates);
    config.participant_only = args
        .participant_only
        .or(file.participant_only)
        .unwrap_or(true);
    config.max_chars = args
        .max_chars
        .or(file.max_chars)
        .unwrap_or(DEFAULT_MAX_CHARS);
    config.temperature = args.temperature.or(file.temperature).unwrap_or(0.0);
    config.max_tokens = args.max_tokens.or(file.max_tokens).unwrap_or(4096);
    config.seed = args.seed.or(file.seed).or(Some(0));
    config.repeats = args.repeats.or(file.repeats).unwrap_or(1);
    Ok(config)
}

fn run_cli(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Validate { manifest, out } => {
            let report = cmd_validate(&manifest)?;
            print!("{}", render_validation_text(&report));
            if let Some(path) = out {
                let mut json = serde_json::to_string_pretty(&report)?;
                json.push('\n');
                std::fs::write(&path, json)?;
                println!("report written to {}", path.display());
            }
            Ok(if report.valid { 0 } else { EXIT_VALIDATION })
        }
        Command::Run(args) => {
            let config = resolve_config(&args)?;
            let backend = backend_from_spec(&config.backend_spec, config.cache_dir.as_deref())?;
            let summary = cmd_run(&config, backend.as_ref())?;
            println!(
                "assessed {} ({} failed, {} skipped) -> {}",
                summary.completed,
                summary.failed,
                summary.skipped,
                summary.records_path.display()
            );
            println!(
                "tokens: {} prompt, {} completion",
                summary.usage.prompt_tokens, summary.usage.completion_tokens
            );
            Ok(if summary.failure_fraction() > 0.5 {
                eprintln!(
                    "error: {}/{} transcripts failed",
                    summary.failed, summary.attempted
                );
                EXIT_RUN_FAILURES
            } else {
                0
            })
        }
        Command::Eval {
            records,
            manifest,
            split,
            out,
        } => {
            let split = split
                .map(|s| Split::from_str(&s).map_err(anyhow::Error::msg))
                .transpose()?;
            match cmd_eval(&records, &manifest, split, out.as_deref()) {
                Ok((report, path)) => {
                    print!("{}", render_eval_text(&report));
                    println!("report written to {}", path.display());
                    Ok(0)
                }
                Err(err) if err.is_join_failure() => {
                    eprintln!("error: {err}");
                    Ok(EXIT_JOIN_FAILURE)
                }
                Err(err) => Err(err.into()),
            }
        }
        Command::Ablate(args) => {
            let config = resolve_config(&args)?;
            let backend = backend_from_spec(&config.backend_spec, config.cache_dir.as_deref())?;
            let (report, path) = cmd_ablate(&config, backend.as_ref())?;
            print!("{}", render_ablation_text(&report));
            println!("report written to {}", path.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run_cli(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
