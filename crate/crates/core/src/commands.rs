//! The operations behind the CLI subcommands: validate, run, eval, ablate.
//!
//! These functions take an injected [`Backend`] so tests can count provider
//! calls; the CLI builds one from a backend spec string via
//! [`backend_from_spec`].

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::Utc;
use serde::Serialize;
use thiserror::Error;

use crate::backend::{
    Backend, BackendError, CachedBackend, HttpBackend, MockBackend, Usage,
};
use crate::dataset::{
    band_distribution, load_manifest, load_transcript, scan_manifest, DatasetError, RejectedRow,
    Split,
};
use crate::metrics::{Band, EvalSummary, MetricsError};
use crate::pipeline::{
    append_record, read_records, ErrorRecord, PipelineConfig, RunRecord, StoreError,
};
use crate::prompts::{PromptConfig, PromptError, PromptMode, TemplateSet, DEFAULT_MAX_CHARS};
use crate::report::{build_eval_report, AblationReport, AblationRow, EvalReport, ReportError};
use crate::runner::run_batch;

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Join(ReportError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CommandError {
    pub fn is_join_failure(&self) -> bool {
        matches!(self, CommandError::Join(ReportError::JoinFailure { .. }))
    }
}

impl From<ReportError> for CommandError {
    fn from(err: ReportError) -> Self {
        match err {
            ReportError::Metrics(m) => CommandError::Metrics(m),
            join @ ReportError::JoinFailure { .. } => CommandError::Join(join),
        }
    }
}

/// Everything a run or ablation needs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub manifest_path: PathBuf,
    pub split: Split,
    pub mode: PromptMode,
    pub model_id: String,
    pub backend_spec: String,
    pub cache_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub workers: usize,
    pub templates_dir: Option<PathBuf>,
    pub participant_only: bool,
    pub max_chars: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
    pub repeats: usize,
}

impl RunConfig {
    pub fn new(manifest_path: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            manifest_path: manifest_path.into(),
            split: Split::Test,
            mode: PromptMode::ChainOfThought,
            model_id: "gpt-4o".to_string(),
            backend_spec: "http".to_string(),
            cache_dir: None,
            out_dir: out_dir.into(),
            workers: 4,
            templates_dir: None,
            participant_only: true,
            max_chars: DEFAULT_MAX_CHARS,
            temperature: 0.0,
            max_tokens: 4096,
            seed: Some(0),
            repeats: 1,
        }
    }

    fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            model_id: self.model_id.clone(),
            prompt: PromptConfig {
                participant_only: self.participant_only,
                max_chars: self.max_chars,
            },
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            seed: self.seed,
            cancel: None,
        }
    }

    fn templates(&self) -> Result<TemplateSet, PromptError> {
        match &self.templates_dir {
            Some(dir) => TemplateSet::from_dir(dir),
            None => Ok(TemplateSet::bundled()),
        }
    }
}

/// Build a backend from its spec string: `mock:<script-path>`, `http`
/// (endpoint and key from the environment), or an explicit base URL. A cache
/// directory wraps the result in a [`CachedBackend`].
pub fn backend_from_spec(
    spec: &str,
    cache_dir: Option<&Path>,
) -> Result<Box<dyn Backend>, CommandError> {
    let base: Box<dyn Backend> = if let Some(script) = spec.strip_prefix("mock:") {
        Box::new(MockBackend::from_script_file(Path::new(script))?)
    } else if spec == "http" {
        Box::new(HttpBackend::from_env()?)
    } else if spec.starts_with("http://") || spec.starts_with("https://") {
        let api_key = std::env::var(crate::backend::API_KEY_ENV).unwrap_or_default();
        Box::new(HttpBackend::new(spec, api_key))
    } else {
        return Err(BackendError::InvalidRequest(format!(
            "unknown backend spec '{spec}' (expected mock:<path>, http, or a base URL)"
        ))
        .into());
    };
    Ok(match cache_dir {
        Some(dir) => Box::new(CachedBackend::new(base, dir)?),
        None => base,
    })
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '-'
            }
        })
        .collect()
}

/// Records file for one (model, mode) pair inside the output directory.
pub fn records_path(out_dir: &Path, model_id: &str, mode: PromptMode) -> PathBuf {
    out_dir.join(format!("{}_{}.jsonl", sanitize(model_id), mode))
}

// ---------------------------------------------------------------------------
// validate

#[derive(Debug, Clone, Serialize)]
pub struct BandCount {
    pub band: Band,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitSummary {
    pub split: Split,
    pub count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band_counts: Option<Vec<BandCount>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub schema: String,
    pub total_rows: usize,
    pub splits: Vec<SplitSummary>,
    pub rejected_rows: Vec<RejectedRow>,
    pub transcript_errors: Vec<String>,
    pub valid: bool,
}

/// Validate a labels file and every transcript it references. The report is
/// exhaustive: one entry per rejected row and per unreadable transcript.
pub fn cmd_validate(manifest_path: &Path) -> Result<ValidationReport, CommandError> {
    let scan = scan_manifest(manifest_path)?;
    let manifest = &scan.manifest;

    let mut transcript_errors = Vec::new();
    for entry in manifest.entries() {
        if let Err(err) = load_transcript(entry) {
            transcript_errors.push(format!("{}: {err}", entry.participant_id));
        }
    }

    let counts = manifest.counts_by_split();
    let mut splits = Vec::new();
    for split in [Split::Train, Split::Val, Split::Test, Split::Unassigned] {
        let count = counts.get(&split).copied().unwrap_or(0);
        if split == Split::Unassigned && count == 0 {
            continue;
        }
        let (band_counts, note) = match band_distribution(manifest, split) {
            Ok(bands) => (
                Some(
                    Band::ALL
                        .iter()
                        .map(|&band| BandCount {
                            band,
                            count: bands[&band],
                        })
                        .collect(),
                ),
                None,
            ),
            Err(err) => (None, Some(format!("band distribution unavailable: {err}"))),
        };
        splits.push(SplitSummary {
            split,
            count,
            band_counts,
            note,
        });
    }

    let valid = scan.rejected.is_empty() && transcript_errors.is_empty();
    Ok(ValidationReport {
        schema: "validation.v1".to_string(),
        total_rows: manifest.len() + scan.rejected.len(),
        splits,
        rejected_rows: scan.rejected,
        transcript_errors,
        valid,
    })
}

pub fn render_validation_text(report: &ValidationReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<12}{:>8}  bands\n", "Split", "count"));
    for split in &report.splits {
        let bands = match (&split.band_counts, &split.note) {
            (Some(bands), _) => bands
                .iter()
                .map(|b| format!("{}:{}", b.band.label(), b.count))
                .collect::<Vec<_>>()
                .join(" "),
            (None, Some(note)) => note.clone(),
            (None, None) => String::new(),
        };
        out.push_str(&format!(
            "{:<12}{:>8}  {bands}\n",
            split.split.to_string(),
            split.count
        ));
    }
    if !report.rejected_rows.is_empty() {
        out.push_str("rejected rows:\n");
        for row in &report.rejected_rows {
            out.push_str(&format!("  line {}: {}\n", row.line, row.reason));
        }
    }
    if !report.transcript_errors.is_empty() {
        out.push_str("transcript errors:\n");
        for err in &report.transcript_errors {
            out.push_str(&format!("  {err}\n"));
        }
    }
    out.push_str(if report.valid {
        "validation: OK\n"
    } else {
        "validation: FAILED\n"
    });
    out
}

// ---------------------------------------------------------------------------
// run

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub records_path: PathBuf,
    pub split_size: usize,
    pub skipped: usize,
    pub attempted: usize,
    pub completed: usize,
    pub failed: usize,
    pub usage: Usage,
}

impl RunSummary {
    pub fn failure_fraction(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.failed as f64 / self.attempted as f64
        }
    }
}

/// Assess every transcript in the configured split, appending one JSONL
/// record per transcript. Participants with a successful record for the
/// same mode and model are skipped, so interrupted runs restart cheaply;
/// failed participants are retried.
pub fn cmd_run(config: &RunConfig, backend: &dyn Backend) -> Result<RunSummary, CommandError> {
    let manifest = load_manifest(&config.manifest_path)?;
    let templates = config.templates()?;
    let pipeline_config = config.pipeline_config();
    fs::create_dir_all(&config.out_dir)?;
    let records_path = records_path(&config.out_dir, &config.model_id, config.mode);

    let done: HashSet<String> = if records_path.exists() {
        read_records(&records_path)?
            .iter()
            .filter(|r| {
                r.is_ok() && r.mode() == config.mode && r.model_id() == config.model_id
            })
            .map(|r| r.participant_id().to_string())
            .collect()
    } else {
        HashSet::new()
    };

    let mut transcripts = Vec::new();
    let mut load_failures = Vec::new();
    let mut skipped = 0usize;
    let mut split_size = 0usize;
    for entry in manifest.entries_in(config.split) {
        split_size += 1;
        if done.contains(&entry.participant_id) {
            skipped += 1;
            continue;
        }
        match load_transcript(entry) {
            Ok(transcript) => transcripts.push(transcript),
            Err(err) => load_failures.push((entry.participant_id.clone(), err.to_string())),
        }
    }

    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&records_path)?;

    let mut failed = load_failures.len();
    for (participant_id, error) in load_failures {
        let now = Utc::now();
        let record = RunRecord::error(ErrorRecord {
            participant_id,
            mode: config.mode,
            model_id: config.model_id.clone(),
            backend_id: backend.id(),
            error: format!("dataset: {error}"),
            raw_stage_outputs: vec![],
            usage: Usage::default(),
            started_at: now,
            finished_at: now,
        });
        append_record(&mut file, &record)?;
    }

    let mut write_error: Option<std::io::Error> = None;
    let outcome = run_batch(
        &transcripts,
        config.mode,
        backend,
        &templates,
        &pipeline_config,
        config.workers.max(1),
        |record| {
            log::info!(
                "{} {} ({})",
                record.participant_id(),
                if record.is_ok() { "ok" } else { "FAILED" },
                config.mode
            );
            if write_error.is_none() {
                if let Err(err) = append_record(&mut file, &record) {
                    write_error = Some(err);
                }
            }
        },
    );
    if let Some(err) = write_error {
        return Err(err.into());
    }
    failed += outcome.failed;

    log::info!(
        "run complete: {} assessed, {} failed, {} skipped; tokens {}+{}",
        outcome.completed,
        failed,
        skipped,
        outcome.usage.prompt_tokens,
        outcome.usage.completion_tokens
    );
    Ok(RunSummary {
        records_path,
        split_size,
        skipped,
        attempted: outcome.total + failed - outcome.failed,
        completed: outcome.completed,
        failed,
        usage: outcome.usage,
    })
}

// ---------------------------------------------------------------------------
// eval

/// Evaluate a records file against gold labels. Writes the JSON report to
/// `report_out` (default: the records path with an `eval.json` extension)
/// and returns it with the path.
pub fn cmd_eval(
    records_path: &Path,
    manifest_path: &Path,
    split: Option<Split>,
    report_out: Option<&Path>,
) -> Result<(EvalReport, PathBuf), CommandError> {
    let records = read_records(records_path)?;
    let manifest = load_manifest(manifest_path)?;
    let report = build_eval_report(&records, &manifest, split)?;
    let out = report_out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| records_path.with_extension("eval.json"));
    fs::write(&out, crate::report::to_json(&report))?;
    Ok((report, out))
}

// ---------------------------------------------------------------------------
// ablate

fn mean_summaries(summaries: &[EvalSummary]) -> EvalSummary {
    let n = summaries.len().max(1) as f64;
    EvalSummary {
        ccc: summaries.iter().map(|s| s.ccc).sum::<f64>() / n,
        mae: summaries.iter().map(|s| s.mae).sum::<f64>() / n,
        n: summaries.first().map(|s| s.n).unwrap_or(0),
        excluded_count: summaries.first().map(|s| s.excluded_count).unwrap_or(0),
        band_confusion: summaries
            .first()
            .map(|s| s.band_confusion)
            .unwrap_or([[0; 5]; 5]),
        binary_accuracy: summaries.iter().map(|s| s.binary_accuracy).sum::<f64>() / n,
    }
}

/// Run the configured split in both prompting modes against the same
/// backend and emit the paired comparison. A mode that fails wholesale is
/// marked failed without disturbing the other row. With `repeats > 1` each
/// mode runs that many times into per-repeat output directories and the row
/// reports mean CCC/MAE.
pub fn cmd_ablate(
    config: &RunConfig,
    backend: &dyn Backend,
) -> Result<(AblationReport, PathBuf), CommandError> {
    fs::create_dir_all(&config.out_dir)?;
    let repeats = config.repeats.max(1);
    let mut report = AblationReport::new(&config.model_id, config.split, repeats);
    for mode in [PromptMode::Standard, PromptMode::ChainOfThought] {
        let mut summaries = Vec::new();
        let mut failure = None;
        for repeat in 1..=repeats {
            let mut run_config = config.clone();
            run_config.mode = mode;
            if repeats > 1 {
                run_config.out_dir = config.out_dir.join(format!("r{repeat}"));
            }
            let result = cmd_run(&run_config, backend).and_then(|run| {
                cmd_eval(
                    &run.records_path,
                    &config.manifest_path,
                    Some(config.split),
                    None,
                )
            });
            match result {
                Ok((eval, _)) => summaries.push(eval.summary()),
                Err(err) => {
                    log::warn!("{mode} mode failed: {err}");
                    failure = Some(err.to_string());
                    break;
                }
            }
        }
        report.rows.push(match failure {
            Some(error) => AblationRow::failed(mode.to_string(), error),
            None => AblationRow::ok(mode.to_string(), &mean_summaries(&summaries)),
        });
    }
    report.finalize();
    let path = config
        .out_dir
        .join(format!("{}_ablation.json", sanitize(&config.model_id)));
    fs::write(&path, crate::report::to_json(&report))?;
    Ok((report, path))
}
