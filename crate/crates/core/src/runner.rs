//! Batch execution of the assessment pipeline across transcripts.
//!
//! With the `parallel` feature (default) transcripts fan out over a rayon
//! pool sized to the worker budget, and completed records stream back
//! through a channel to the single caller-supplied sink, keeping record
//! writing serialized. Without the feature, or with a worker budget of 1,
//! the batch runs sequentially in input order. A single pipeline run is
//! always sequential across its stages; only distinct transcripts run
//! concurrently.

use crate::backend::{Backend, Usage};
use crate::dataset::Transcript;
use crate::pipeline::{assess, PipelineConfig, RunRecord};
use crate::prompts::{PromptMode, TemplateSet};

/// Tallies for one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BatchOutcome {
    pub total: usize,
    pub completed: usize,
    pub failed: usize,
    pub usage: Usage,
}

impl BatchOutcome {
    fn absorb(&mut self, record: &RunRecord) {
        self.total += 1;
        if record.is_ok() {
            self.completed += 1;
        } else {
            self.failed += 1;
        }
        let usage = record.usage();
        self.usage.prompt_tokens += usage.prompt_tokens;
        self.usage.completion_tokens += usage.completion_tokens;
    }
}

/// Assess every transcript, delivering each record to `sink` as it
/// completes. `workers` caps concurrency; 1 forces the sequential path.
pub fn run_batch(
    transcripts: &[Transcript],
    mode: PromptMode,
    backend: &dyn Backend,
    templates: &TemplateSet,
    config: &PipelineConfig,
    workers: usize,
    sink: impl FnMut(RunRecord),
) -> BatchOutcome {
    #[cfg(feature = "parallel")]
    {
        if workers > 1 {
            return run_parallel(transcripts, mode, backend, templates, config, workers, sink);
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        if workers > 1 {
            log::info!("built without the 'parallel' feature; running sequentially");
        }
    }
    run_sequential(transcripts, mode, backend, templates, config, sink)
}

/// The always-available fallback: input order, one transcript at a time.
pub fn run_sequential(
    transcripts: &[Transcript],
    mode: PromptMode,
    backend: &dyn Backend,
    templates: &TemplateSet,
    config: &PipelineConfig,
    mut sink: impl FnMut(RunRecord),
) -> BatchOutcome {
    let mut outcome = BatchOutcome::default();
    for transcript in transcripts {
        let record = assess(transcript, mode, backend, templates, config);
        outcome.absorb(&record);
        sink(record);
    }
    outcome
}

#[cfg(feature = "parallel")]
fn run_parallel(
    transcripts: &[Transcript],
    mode: PromptMode,
    backend: &dyn Backend,
    templates: &TemplateSet,
    config: &PipelineConfig,
    workers: usize,
    mut sink: impl FnMut(RunRecord),
) -> BatchOutcome {
    use rayon::prelude::*;

    let pool = match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool,
        Err(err) => {
            log::warn!("could not build worker pool ({err}); running sequentially");
            return run_sequential(transcripts, mode, backend, templates, config, sink);
        }
    };

    let mut outcome = BatchOutcome::default();
    let (tx, rx) = std::sync::mpsc::channel::<RunRecord>();
    std::thread::scope(|scope| {
        scope.spawn(move || {
            pool.install(|| {
                transcripts.par_iter().for_each_with(tx, |tx, transcript| {
                    let record = assess(transcript, mode, backend, templates, config);
                    // The receiver outlives the pool; a send failure means
                    // the consumer panicked, and dropping the record is the
                    // only option left.
                    let _ = tx.send(record);
                });
            });
        });
        for record in rx {
            outcome.absorb(&record);
            sink(record);
        }
    });
    outcome
}
