//! The per-transcript assessment state machine.
//!
//! Chain-of-thought mode executes the fixed stage order emotion →
//! classification → reasoning → severity, feeding each stage a
//! serialization of the prior structured outputs; standard mode makes the
//! single baseline call. Every backend call's raw text is retained for
//! audit, stage outputs must satisfy their published schema (with one
//! repair retry), the reasoning branch follows the classification verdict,
//! and the severity band is always recomputed from the score. Verdict/score
//! disagreements are flagged, never corrected.

pub mod parse;
pub mod schemas;
mod store;
mod types;

pub use parse::{ParseError, ParsedSeverity};
pub use store::{append_record, read_records, StoreError};
pub use types::*;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use chrono::Utc;
use thiserror::Error;

use crate::backend::{Backend, BackendError, CompletionRequest, Usage};
use crate::metrics::BINARY_CUTOFF;
use crate::prompts::{
    render_stage_prompt, render_standard_prompt, PromptConfig, PromptError, PromptMode, Stage,
    StagePrompt, TemplateSet,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("backend failure: {0}")]
    Backend(#[from] BackendError),
    #[error("stage {stage} output still invalid after repair retry: {last_error}")]
    StageParseFailure {
        stage: Stage,
        last_error: ParseError,
    },
    #[error("prompt rendering failed: {0}")]
    Prompt(#[from] PromptError),
    #[error("run cancelled")]
    Cancelled,
}

/// Cooperative cancellation flag checked between stages.
#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

/// Per-run configuration shared by every stage call.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub model_id: String,
    pub prompt: PromptConfig,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Passed on the wire when the provider supports it; ignored otherwise.
    pub seed: Option<u64>,
    pub cancel: Option<CancelToken>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            model_id: "gpt-4o".to_string(),
            prompt: PromptConfig::default(),
            temperature: 0.0,
            max_tokens: 4096,
            seed: Some(0),
            cancel: None,
        }
    }
}

/// A failed run together with the audit trail collected before the failure.
#[derive(Debug)]
pub struct PipelineFailure {
    pub error: PipelineError,
    pub raw_stage_outputs: Vec<RawStageOutput>,
    pub usage: Usage,
    pub started_at: chrono::DateTime<Utc>,
    pub finished_at: chrono::DateTime<Utc>,
}

impl std::fmt::Display for PipelineFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for PipelineFailure {}

/// Emit [`Inconsistency::VerdictScoreMismatch`] when the binary verdict and
/// the PHQ-8 score fall on opposite sides of the cutoff-10 rule. Pure
/// annotation; neither output is modified.
pub fn check_consistency(
    classification: &ClassificationResult,
    severity: &SeverityAssessment,
) -> Vec<Inconsistency> {
    let verdict_depressed = classification.verdict == Verdict::Depressed;
    let score_depressed = severity.phq8_score() >= BINARY_CUTOFF;
    if verdict_depressed != score_depressed {
        vec![Inconsistency::VerdictScoreMismatch]
    } else {
        Vec::new()
    }
}

struct StageCaller<'a> {
    backend: &'a dyn Backend,
    config: &'a PipelineConfig,
    raws: Vec<RawStageOutput>,
    usage: Usage,
}

impl<'a> StageCaller<'a> {
    fn new(backend: &'a dyn Backend, config: &'a PipelineConfig) -> Self {
        Self {
            backend,
            config,
            raws: Vec::new(),
            usage: Usage::default(),
        }
    }

    fn check_cancelled(&self) -> Result<(), PipelineError> {
        match &self.config.cancel {
            Some(token) if token.is_cancelled() => Err(PipelineError::Cancelled),
            _ => Ok(()),
        }
    }

    fn complete(&mut self, stage: Stage, system: &str, user: &str) -> Result<String, PipelineError> {
        let request = CompletionRequest::new(self.config.model_id.clone(), system, user)
            .with_temperature(self.config.temperature)
            .with_max_tokens(self.config.max_tokens)
            .with_seed(self.config.seed);
        let response = self.backend.complete(&request)?;
        self.usage.prompt_tokens += response.usage.prompt_tokens;
        self.usage.completion_tokens += response.usage.completion_tokens;
        self.raws.push(RawStageOutput {
            stage,
            text: response.text.clone(),
        });
        Ok(response.text)
    }

    /// Call the backend for one stage and parse the response. A schema
    /// violation triggers exactly one repair retry with the violation
    /// message appended and the schema restated; both raw responses are
    /// retained either way.
    fn call_stage<T>(
        &mut self,
        prompt: &StagePrompt,
        parse: impl Fn(&str) -> Result<T, ParseError>,
    ) -> Result<T, PipelineError> {
        self.check_cancelled()?;
        let raw = self.complete(prompt.stage, &prompt.system_text, &prompt.user_text)?;
        let first_error = match parse(&raw) {
            Ok(value) => return Ok(value),
            Err(err) => err,
        };
        log::warn!(
            "stage {} response rejected ({first_error}); repair retry",
            prompt.stage
        );
        let repair_user = format!(
            "{}\n\nYour previous response was rejected: {first_error}\n\
             Respond again with exactly one JSON object conforming to schema \"{}\":\n{}",
            prompt.user_text,
            prompt.schema_id,
            schemas::document(prompt.stage).trim_end(),
        );
        let raw = self.complete(prompt.stage, &prompt.system_text, &repair_user)?;
        parse(&raw).map_err(|last_error| PipelineError::StageParseFailure {
            stage: prompt.stage,
            last_error,
        })
    }
}

struct StageResults {
    emotion: Option<EmotionProfile>,
    classification: ClassificationResult,
    reasoning: Option<ReasoningReport>,
    severity: SeverityAssessment,
}

fn run_chain(
    transcript: &crate::dataset::Transcript,
    caller: &mut StageCaller<'_>,
    templates: &TemplateSet,
    prompt_config: &PromptConfig,
) -> Result<StageResults, PipelineError> {
    let mut prior = StageOutputs::default();

    let prompt = render_stage_prompt(Stage::Emotion, transcript, &prior, templates, prompt_config)?;
    let emotion = caller.call_stage(&prompt, parse::parse_emotion)?;
    prior.emotion = Some(emotion);

    let prompt =
        render_stage_prompt(Stage::Classification, transcript, &prior, templates, prompt_config)?;
    let classification = caller.call_stage(&prompt, parse::parse_classification)?;
    let branch = classification.verdict.expected_branch();
    prior.classification = Some(classification);

    let prompt =
        render_stage_prompt(Stage::Reasoning, transcript, &prior, templates, prompt_config)?;
    let reasoning = caller.call_stage(&prompt, |raw| parse::parse_reasoning(raw, branch))?;
    prior.reasoning = Some(reasoning);

    let prompt =
        render_stage_prompt(Stage::Severity, transcript, &prior, templates, prompt_config)?;
    let parsed = caller.call_stage(&prompt, parse::parse_severity)?;

    Ok(StageResults {
        emotion: prior.emotion,
        classification: prior.classification.expect("set above"),
        reasoning: prior.reasoning,
        severity: parsed.assessment,
    })
}

fn run_standard(
    transcript: &crate::dataset::Transcript,
    caller: &mut StageCaller<'_>,
    templates: &TemplateSet,
    prompt_config: &PromptConfig,
) -> Result<StageResults, PipelineError> {
    let prompt = render_standard_prompt(transcript, templates, prompt_config)?;
    let parsed = caller.call_stage(&prompt, |raw| {
        let parsed = parse::parse_severity(raw)?;
        if parsed.verdict.is_none() {
            return Err(ParseError::SchemaViolation {
                path: "verdict".to_string(),
                reason: "required in standard mode".to_string(),
            });
        }
        Ok(parsed)
    })?;
    Ok(StageResults {
        emotion: None,
        classification: ClassificationResult {
            verdict: parsed.verdict.expect("checked above"),
            rationale: parsed.rationale.unwrap_or_default(),
            confidence: None,
        },
        reasoning: None,
        severity: parsed.assessment,
    })
}

/// Assess one transcript. On failure the audit trail collected so far is
/// returned inside the [`PipelineFailure`].
pub fn run_pipeline(
    transcript: &crate::dataset::Transcript,
    mode: PromptMode,
    backend: &dyn Backend,
    templates: &TemplateSet,
    config: &PipelineConfig,
) -> Result<AssessmentRecord, Box<PipelineFailure>> {
    let started_at = Utc::now();
    let mut caller = StageCaller::new(backend, config);
    let result = match mode {
        PromptMode::ChainOfThought => {
            run_chain(transcript, &mut caller, templates, &config.prompt)
        }
        PromptMode::Standard => run_standard(transcript, &mut caller, templates, &config.prompt),
    };
    let finished_at = Utc::now();
    match result {
        Ok(results) => {
            let flags = check_consistency(&results.classification, &results.severity);
            Ok(AssessmentRecord {
                participant_id: transcript.participant_id.clone(),
                mode,
                model_id: config.model_id.clone(),
                backend_id: backend.id(),
                emotion: results.emotion,
                classification: results.classification,
                reasoning: results.reasoning,
                severity: results.severity,
                raw_stage_outputs: caller.raws,
                flags,
                usage: caller.usage,
                started_at,
                finished_at,
            })
        }
        Err(error) => Err(Box::new(PipelineFailure {
            error,
            raw_stage_outputs: caller.raws,
            usage: caller.usage,
            started_at,
            finished_at,
        })),
    }
}

/// Assess one transcript, folding failures into an error record instead of
/// an `Err`. This is what batch runs persist.
pub fn assess(
    transcript: &crate::dataset::Transcript,
    mode: PromptMode,
    backend: &dyn Backend,
    templates: &TemplateSet,
    config: &PipelineConfig,
) -> RunRecord {
    match run_pipeline(transcript, mode, backend, templates, config) {
        Ok(record) => RunRecord::ok(record),
        Err(failure) => RunRecord::error(ErrorRecord {
            participant_id: transcript.participant_id.clone(),
            mode,
            model_id: config.model_id.clone(),
            backend_id: backend.id(),
            error: failure.error.to_string(),
            raw_stage_outputs: failure.raw_stage_outputs,
            usage: failure.usage,
            started_at: failure.started_at,
            finished_at: failure.finished_at,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use crate::dataset::{Speaker, Split, Transcript, Turn};
    use crate::metrics::Band;

    pub(crate) fn transcript(id: &str) -> Transcript {
        Transcript {
            participant_id: id.to_string(),
            turns: vec![
                Turn {
                    speaker: Speaker::Interviewer,
                    text: "How have you been?".into(),
                },
                Turn {
                    speaker: Speaker::Participant,
                    text: "Honestly, it has been a rough month.".into(),
                },
            ],
            gold_score: None,
            split: Split::Unassigned,
            warnings: vec![],
        }
    }

    pub(crate) const EMOTION_OK: &str = r#"{"signals": [{"kind": "sadness",
        "intensity": "high", "polarity": "negative",
        "source": "internal_thoughts", "evidence": "a rough month"}]}"#;

    pub(crate) fn classification_raw(verdict: &str) -> String {
        format!(r#"{{"verdict": "{verdict}", "rationale": "test rationale"}}"#)
    }

    pub(crate) fn reasoning_raw(branch: Branch) -> String {
        let dimension = match branch {
            Branch::Contributing => "psychological",
            Branch::Protective => "social_support",
        };
        format!(
            r#"{{"factors": [{{"dimension": "{dimension}", "description": "d", "evidence": "a rough month"}}]}}"#
        )
    }

    pub(crate) fn cot_mock(verdict: &str, score: u8) -> MockBackend {
        let branch = if verdict == "depressed" {
            Branch::Contributing
        } else {
            Branch::Protective
        };
        MockBackend::rules([
            ("emotion.v1".to_string(), EMOTION_OK.to_string()),
            ("classification.v1".to_string(), classification_raw(verdict)),
            ("reasoning.v1".to_string(), reasoning_raw(branch)),
            (
                "severity.v1".to_string(),
                format!(r#"{{"phq8_score": {score}}}"#),
            ),
        ])
    }

    fn config() -> PipelineConfig {
        PipelineConfig::default()
    }

    #[test]
    fn cot_depressed_run_takes_contributing_branch() {
        let mock = cot_mock("depressed", 15);
        let record = run_pipeline(
            &transcript("P1"),
            PromptMode::ChainOfThought,
            &mock,
            &TemplateSet::bundled(),
            &config(),
        )
        .unwrap();
        assert_eq!(record.classification.verdict, Verdict::Depressed);
        assert_eq!(
            record.reasoning.as_ref().unwrap().branch,
            Branch::Contributing
        );
        assert_eq!(record.severity.phq8_score(), 15);
        assert_eq!(record.severity.band(), Band::ModeratelySevere);
        assert!(record.flags.is_empty());
        assert!(record.emotion.is_some());
        assert_eq!(record.raw_stage_outputs.len(), 4);
        assert_eq!(mock.call_count(), 4);
        let stages: Vec<Stage> = record.raw_stage_outputs.iter().map(|r| r.stage).collect();
        assert_eq!(stages, crate::prompts::COT_STAGES.to_vec());
    }

    #[test]
    fn cot_not_depressed_run_takes_protective_branch() {
        let mock = cot_mock("not_depressed", 2);
        let record = run_pipeline(
            &transcript("P2"),
            PromptMode::ChainOfThought,
            &mock,
            &TemplateSet::bundled(),
            &config(),
        )
        .unwrap();
        assert_eq!(record.classification.verdict, Verdict::NotDepressed);
        assert_eq!(
            record.reasoning.as_ref().unwrap().branch,
            Branch::Protective
        );
        assert_eq!(record.severity.band(), Band::Minimal);
        assert!(record.flags.is_empty());
    }

    #[test]
    fn verdict_score_mismatch_is_flagged_not_corrected() {
        let mock = cot_mock("not_depressed", 16);
        let record = run_pipeline(
            &transcript("P3"),
            PromptMode::ChainOfThought,
            &mock,
            &TemplateSet::bundled(),
            &config(),
        )
        .unwrap();
        assert_eq!(record.flags, vec![Inconsistency::VerdictScoreMismatch]);
        assert_eq!(record.classification.verdict, Verdict::NotDepressed);
        assert_eq!(record.severity.phq8_score(), 16);
    }

    #[test]
    fn consistency_boundaries() {
        let classification = |v| ClassificationResult {
            verdict: v,
            rationale: String::new(),
            confidence: None,
        };
        let severity = |s| SeverityAssessment::from_score(s).unwrap();
        assert!(check_consistency(&classification(Verdict::Depressed), &severity(10)).is_empty());
        assert_eq!(
            check_consistency(&classification(Verdict::Depressed), &severity(9)),
            vec![Inconsistency::VerdictScoreMismatch]
        );
        assert!(
            check_consistency(&classification(Verdict::NotDepressed), &severity(0)).is_empty()
        );
        assert_eq!(
            check_consistency(&classification(Verdict::NotDepressed), &severity(10)),
            vec![Inconsistency::VerdictScoreMismatch]
        );
    }

    #[test]
    fn standard_mode_makes_one_call_and_has_no_intermediate_outputs() {
        let mock = MockBackend::rules([(
            "severity.v1",
            r#"{"verdict": "depressed", "phq8_score": 14, "rationale": "direct"}"#,
        )]);
        let record = run_pipeline(
            &transcript("P4"),
            PromptMode::Standard,
            &mock,
            &TemplateSet::bundled(),
            &config(),
        )
        .unwrap();
        assert_eq!(mock.call_count(), 1);
        assert!(record.emotion.is_none());
        assert!(record.reasoning.is_none());
        assert_eq!(record.classification.verdict, Verdict::Depressed);
        assert_eq!(record.classification.rationale, "direct");
        assert_eq!(record.severity.band(), Band::Moderate);
        assert_eq!(record.raw_stage_outputs.len(), 1);
    }

    #[test]
    fn standard_mode_requires_verdict() {
        // Missing verdict triggers repair; repaired response succeeds.
        let mock = MockBackend::queue([
            r#"{"phq8_score": 14}"#,
            r#"{"phq8_score": 14, "verdict": "depressed"}"#,
        ]);
        let record = run_pipeline(
            &transcript("P5"),
            PromptMode::Standard,
            &mock,
            &TemplateSet::bundled(),
            &config(),
        )
        .unwrap();
        assert_eq!(mock.call_count(), 2);
        assert_eq!(record.raw_stage_outputs.len(), 2);
        assert_eq!(record.classification.verdict, Verdict::Depressed);
    }

    #[test]
    fn repair_retry_recovers_then_gives_up() {
        // First response malformed, second valid: parsed, both raws kept.
        let mock = MockBackend::queue([
            "garbage",
            EMOTION_OK,
            &classification_raw("depressed"),
            &reasoning_raw(Branch::Contributing),
            r#"{"phq8_score": 11}"#,
        ]);
        let record = run_pipeline(
            &transcript("P6"),
            PromptMode::ChainOfThought,
            &mock,
            &TemplateSet::bundled(),
            &config(),
        )
        .unwrap();
        assert_eq!(record.raw_stage_outputs.len(), 5);
        assert_eq!(record.raw_stage_outputs[0].stage, Stage::Emotion);
        assert_eq!(record.raw_stage_outputs[1].stage, Stage::Emotion);
        assert_eq!(mock.call_count(), 5);

        // Both attempts malformed: hard failure carrying the audit trail.
        let mock = MockBackend::queue(["garbage", "more garbage"]);
        let failure = run_pipeline(
            &transcript("P7"),
            PromptMode::ChainOfThought,
            &mock,
            &TemplateSet::bundled(),
            &config(),
        )
        .unwrap_err();
        assert!(matches!(
            failure.error,
            PipelineError::StageParseFailure {
                stage: Stage::Emotion,
                ..
            }
        ));
        assert_eq!(failure.raw_stage_outputs.len(), 2);
        assert_eq!(mock.call_count(), 2);
    }

    #[test]
    fn repair_prompt_restates_schema_and_violation() {
        let mock = cot_mock("depressed", 12);
        // Valid first responses: no repair happens, exactly 4 calls.
        run_pipeline(
            &transcript("P8"),
            PromptMode::ChainOfThought,
            &mock,
            &TemplateSet::bundled(),
            &config(),
        )
        .unwrap();
        assert_eq!(mock.call_count(), 4);
    }

    #[test]
    fn backend_failure_surfaces_with_partial_audit() {
        let mock = MockBackend::queue([EMOTION_OK]);
        let failure = run_pipeline(
            &transcript("P9"),
            PromptMode::ChainOfThought,
            &mock,
            &TemplateSet::bundled(),
            &config(),
        )
        .unwrap_err();
        assert!(matches!(failure.error, PipelineError::Backend(_)));
        assert_eq!(failure.raw_stage_outputs.len(), 1);

        let record = assess(
            &transcript("P9"),
            PromptMode::ChainOfThought,
            &MockBackend::queue(Vec::<String>::new()),
            &TemplateSet::bundled(),
            &config(),
        );
        assert!(!record.is_ok());
        assert_eq!(record.participant_id(), "P9");
    }

    #[test]
    fn cancelled_before_first_stage() {
        let token = CancelToken::new();
        token.cancel();
        let mut cfg = config();
        cfg.cancel = Some(token);
        let mock = cot_mock("depressed", 5);
        let failure = run_pipeline(
            &transcript("P10"),
            PromptMode::ChainOfThought,
            &mock,
            &TemplateSet::bundled(),
            &cfg,
        )
        .unwrap_err();
        assert!(matches!(failure.error, PipelineError::Cancelled));
        assert_eq!(mock.call_count(), 0);
    }

    #[test]
    fn audit_count_matches_backend_calls_under_repairs() {
        // Severity stage needs one repair: 5 calls total, 5 raw outputs.
        let mock = MockBackend::queue([
            EMOTION_OK.to_string(),
            classification_raw("depressed"),
            reasoning_raw(Branch::Contributing),
            r#"{"phq8_score": 99}"#.to_string(),
            r#"{"phq8_score": 9}"#.to_string(),
        ]);
        let record = run_pipeline(
            &transcript("P11"),
            PromptMode::ChainOfThought,
            &mock,
            &TemplateSet::bundled(),
            &config(),
        )
        .unwrap();
        assert_eq!(record.raw_stage_outputs.len(), mock.call_count());
        // Depressed verdict with score 9 is flagged.
        assert_eq!(record.flags, vec![Inconsistency::VerdictScoreMismatch]);
    }
}
