//! Staged chain-of-thought depression assessment over interview transcripts.
//!
//! The library is organized around the four-stage assessment pipeline
//! (emotion analysis, binary classification, causal/protective reasoning,
//! PHQ-8 severity) plus the machinery needed to run it against real or
//! mocked text-generation backends and to score the results:
//!
//! - [`dataset`] — transcript and label ingestion, synthetic fixtures
//! - [`prompts`] — deterministic prompt rendering for both prompting modes
//! - [`pipeline`] — the per-transcript stage machine and structured parsing
//! - [`backend`] — completion providers: HTTP, scripted mock, response cache
//! - [`metrics`] — CCC, MAE, severity banding, band confusion
//! - [`runner`] — batch execution across transcripts (rayon when the
//!   `parallel` feature is enabled, sequential otherwise)
//! - [`report`] — evaluation and ablation report assembly and formatting
//! - [`commands`] — the operations behind the CLI subcommands

pub mod backend;
pub mod commands;
pub mod dataset;
pub mod metrics;
pub mod pipeline;
pub mod prompts;
pub mod report;
pub mod runner;

pub use backend::{Backend, CompletionRequest, CompletionResponse, MockBackend};
pub use metrics::{band_of, ccc, mae, summarize, Band, EvalPairs, EvalSummary};
pub use pipeline::{run_pipeline, AssessmentRecord, PipelineConfig, RunRecord};
pub use prompts::{PromptMode, Stage, TemplateSet};
