//! Deterministic prompt rendering.
//!
//! Chain-of-thought mode renders four stage prompts in fixed order, each
//! embedding a serialization of all prior stage outputs; standard mode
//! renders a single prompt asking for the verdict and score directly.
//! Templates are plain text with `{{placeholder}}` markers; a bundled set
//! ships in the crate and any template can be overridden by dropping a file
//! of the same name into a directory passed to [`TemplateSet::from_dir`].
//!
//! Rendering is pure: identical inputs yield byte-identical prompts, and
//! every enumerated option list is generated from the closed vocabularies
//! of the stage output types rather than written into template text.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Speaker, Transcript};
use crate::metrics::Band;
use crate::pipeline::schemas;
use crate::pipeline::{
    EmotionSource, FactorDimension, Intensity, Polarity, StageOutputs, Verdict,
};

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("stage {0} is missing a required prior stage output")]
    MissingPriorStage(Stage),
    #[error("template not found: {0}")]
    TemplateNotFound(String),
    #[error("transcript has no usable turns")]
    EmptyTranscript,
}

/// Prompting mode: the single-shot baseline or the four-stage chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptMode {
    #[serde(rename = "standard")]
    Standard,
    #[serde(rename = "cot")]
    ChainOfThought,
}

impl PromptMode {
    /// Stage prompts rendered per transcript, in execution order.
    pub fn stages(self) -> &'static [Stage] {
        match self {
            PromptMode::Standard => &[Stage::Severity],
            PromptMode::ChainOfThought => &COT_STAGES,
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PromptMode::Standard => f.write_str("standard"),
            PromptMode::ChainOfThought => f.write_str("cot"),
        }
    }
}

impl std::str::FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "standard" => Ok(PromptMode::Standard),
            "cot" | "chain-of-thought" | "chain_of_thought" => Ok(PromptMode::ChainOfThought),
            other => Err(format!("unknown mode '{other}' (expected standard|cot)")),
        }
    }
}

/// Pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Emotion,
    Classification,
    Reasoning,
    Severity,
}

/// Fixed chain-of-thought stage order.
pub const COT_STAGES: [Stage; 4] = [
    Stage::Emotion,
    Stage::Classification,
    Stage::Reasoning,
    Stage::Severity,
];

impl Stage {
    /// Identifier of the JSON schema this stage's output must satisfy.
    pub fn schema_id(self) -> &'static str {
        match self {
            Stage::Emotion => "emotion.v1",
            Stage::Classification => "classification.v1",
            Stage::Reasoning => "reasoning.v1",
            Stage::Severity => "severity.v1",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Emotion => "emotion",
            Stage::Classification => "classification",
            Stage::Reasoning => "reasoning",
            Stage::Severity => "severity",
        };
        f.write_str(name)
    }
}

/// A fully rendered prompt for one backend call.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePrompt {
    pub stage: Stage,
    pub system_text: String,
    pub user_text: String,
    pub schema_id: &'static str,
}

const TEMPLATE_NAMES: [&str; 7] = [
    "system",
    "emotion",
    "classification",
    "reasoning_contributing",
    "reasoning_protective",
    "severity",
    "standard",
];

const BUNDLED: [(&str, &str); 7] = [
    ("system", include_str!("../templates/system.txt")),
    ("emotion", include_str!("../templates/emotion.txt")),
    ("classification", include_str!("../templates/classification.txt")),
    (
        "reasoning_contributing",
        include_str!("../templates/reasoning_contributing.txt"),
    ),
    (
        "reasoning_protective",
        include_str!("../templates/reasoning_protective.txt"),
    ),
    ("severity", include_str!("../templates/severity.txt")),
    ("standard", include_str!("../templates/standard.txt")),
];

/// An immutable set of named templates.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<String, String>,
}

impl TemplateSet {
    /// The templates compiled into the crate.
    pub fn bundled() -> Self {
        Self {
            templates: BUNDLED
                .iter()
                .map(|(name, text)| (name.to_string(), text.to_string()))
                .collect(),
        }
    }

    /// Bundled templates with per-file overrides from `dir`: any
    /// `<name>.txt` present replaces the bundled text, missing files keep
    /// the default.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        if !dir.is_dir() {
            return Err(PromptError::TemplateNotFound(dir.display().to_string()));
        }
        let mut set = Self::bundled();
        for name in TEMPLATE_NAMES {
            let path = dir.join(format!("{name}.txt"));
            if path.is_file() {
                let text = std::fs::read_to_string(&path)
                    .map_err(|_| PromptError::TemplateNotFound(path.display().to_string()))?;
                set.templates.insert(name.to_string(), text);
            }
        }
        Ok(set)
    }

    fn get(&self, name: &str) -> Result<&str, PromptError> {
        self.templates
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| PromptError::TemplateNotFound(name.to_string()))
    }
}

/// Rendering knobs shared by every prompt.
#[derive(Debug, Clone)]
pub struct PromptConfig {
    /// Restrict prompt text to the participant's turns (default) or include
    /// interviewer turns as well.
    pub participant_only: bool,
    /// Character budget for the transcript block; longer transcripts keep
    /// the tail behind a truncation notice.
    pub max_chars: usize,
}

pub const DEFAULT_MAX_CHARS: usize = 48_000;

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            participant_only: true,
            max_chars: DEFAULT_MAX_CHARS,
        }
    }
}

fn transcript_block(transcript: &Transcript, config: &PromptConfig) -> Result<String, PromptError> {
    let mut lines = Vec::new();
    for turn in &transcript.turns {
        if config.participant_only && turn.speaker != Speaker::Participant {
            continue;
        }
        let label = match turn.speaker {
            Speaker::Interviewer => "Interviewer",
            Speaker::Participant => "Participant",
        };
        lines.push(format!("{label}: {}", turn.text));
    }
    if lines.is_empty() {
        return Err(PromptError::EmptyTranscript);
    }
    Ok(truncate_tail(lines.join("\n"), config.max_chars))
}

fn truncate_tail(text: String, budget: usize) -> String {
    let total = text.chars().count();
    if total <= budget {
        return text;
    }
    let tail: String = text.chars().skip(total - budget).collect();
    format!("[transcript truncated: showing the final {budget} of {total} characters]\n{tail}")
}

fn quoted_options<I: IntoIterator<Item = &'static str>>(tokens: I) -> String {
    tokens
        .into_iter()
        .map(|t| format!("\"{t}\""))
        .collect::<Vec<_>>()
        .join(" | ")
}

fn band_definitions() -> String {
    Band::ALL
        .iter()
        .map(|band| {
            let (lo, hi) = band.range();
            format!("- {}: {lo}-{hi}", band.label())
        })
        .collect::<Vec<_>>()
        .join("\n")
}

// Single-pass placeholder substitution: unknown markers are left verbatim,
// and substituted values are never rescanned.
fn render(template: &str, values: &BTreeMap<&str, String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let name = &after[..end];
                match values.get(name.trim()) {
                    Some(value) => out.push_str(value),
                    None => {
                        out.push_str("{{");
                        out.push_str(name);
                        out.push_str("}}");
                    }
                }
                rest = &after[end + 2..];
            }
            None => {
                out.push_str(rest);
                return out;
            }
        }
    }
    out.push_str(rest);
    out
}

fn common_values(
    stage: Stage,
    transcript: &Transcript,
    config: &PromptConfig,
) -> Result<BTreeMap<&'static str, String>, PromptError> {
    let mut values = BTreeMap::new();
    values.insert("transcript", transcript_block(transcript, config)?);
    values.insert("schema_id", stage.schema_id().to_string());
    values.insert("schema", schemas::document(stage).trim_end().to_string());
    values.insert("band_definitions", band_definitions());
    values.insert(
        "intensity_options",
        quoted_options(Intensity::ALL.map(Intensity::token)),
    );
    values.insert(
        "polarity_options",
        quoted_options(Polarity::ALL.map(Polarity::token)),
    );
    values.insert(
        "source_options",
        quoted_options(EmotionSource::ALL.map(EmotionSource::token)),
    );
    values.insert(
        "contributing_dimensions",
        quoted_options(FactorDimension::CONTRIBUTING.map(FactorDimension::token)),
    );
    values.insert(
        "protective_dimensions",
        quoted_options(FactorDimension::PROTECTIVE.map(FactorDimension::token)),
    );
    Ok(values)
}

fn require_prior(stage: Stage, prior: &StageOutputs) -> Result<(), PromptError> {
    let satisfied = match stage {
        Stage::Emotion => true,
        Stage::Classification => prior.emotion.is_some(),
        Stage::Reasoning => prior.emotion.is_some() && prior.classification.is_some(),
        Stage::Severity => {
            prior.emotion.is_some() && prior.classification.is_some() && prior.reasoning.is_some()
        }
    };
    if satisfied {
        Ok(())
    } else {
        Err(PromptError::MissingPriorStage(stage))
    }
}

/// Render the chain-of-thought prompt for one stage. `prior` must contain
/// the outputs of every preceding stage; the reasoning template branches on
/// the classification verdict.
pub fn render_stage_prompt(
    stage: Stage,
    transcript: &Transcript,
    prior: &StageOutputs,
    templates: &TemplateSet,
    config: &PromptConfig,
) -> Result<StagePrompt, PromptError> {
    require_prior(stage, prior)?;
    let template_name = match stage {
        Stage::Emotion => "emotion",
        Stage::Classification => "classification",
        Stage::Reasoning => {
            let verdict = prior
                .classification
                .as_ref()
                .expect("checked by require_prior")
                .verdict;
            match verdict.expected_branch() {
                crate::pipeline::Branch::Contributing => "reasoning_contributing",
                crate::pipeline::Branch::Protective => "reasoning_protective",
            }
        }
        Stage::Severity => "severity",
    };
    let mut values = common_values(stage, transcript, config)?;
    values.insert(
        "prior",
        serde_json::to_string_pretty(prior).expect("stage outputs serialize"),
    );
    if let Some(classification) = &prior.classification {
        let verdict = match classification.verdict {
            Verdict::Depressed => "depressed",
            Verdict::NotDepressed => "not_depressed",
        };
        values.insert("verdict", verdict.to_string());
    }
    Ok(StagePrompt {
        stage,
        system_text: templates.get("system")?.to_string(),
        user_text: render(templates.get(template_name)?, &values),
        schema_id: stage.schema_id(),
    })
}

/// Render the single-shot baseline prompt: verdict plus PHQ-8 score in one
/// response, no intermediate reasoning scaffolding.
pub fn render_standard_prompt(
    transcript: &Transcript,
    templates: &TemplateSet,
    config: &PromptConfig,
) -> Result<StagePrompt, PromptError> {
    let values = common_values(Stage::Severity, transcript, config)?;
    Ok(StagePrompt {
        stage: Stage::Severity,
        system_text: templates.get("system")?.to_string(),
        user_text: render(templates.get("standard")?, &values),
        schema_id: Stage::Severity.schema_id(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Split, Turn};
    use crate::pipeline::{
        Branch, ClassificationResult, EmotionProfile, Factor, ReasoningReport,
    };

    fn transcript() -> Transcript {
        Transcript {
            participant_id: "P1".into(),
            turns: vec![
                Turn {
                    speaker: Speaker::Interviewer,
                    text: "How have you been sleeping?".into(),
                },
                Turn {
                    speaker: Speaker::Participant,
                    text: "Badly. I wake up at four and stare at the ceiling.".into(),
                },
            ],
            gold_score: None,
            split: Split::Unassigned,
            warnings: vec![],
        }
    }

    fn classification(verdict: Verdict) -> ClassificationResult {
        ClassificationResult {
            verdict,
            rationale: "test".into(),
            confidence: None,
        }
    }

    fn full_prior(verdict: Verdict) -> StageOutputs {
        StageOutputs {
            emotion: Some(EmotionProfile::default()),
            classification: Some(classification(verdict)),
            reasoning: Some(ReasoningReport {
                branch: verdict.expected_branch(),
                factors: vec![Factor {
                    dimension: match verdict.expected_branch() {
                        Branch::Contributing => FactorDimension::Social,
                        Branch::Protective => FactorDimension::SocialSupport,
                    },
                    description: "d".into(),
                    evidence: "e".into(),
                }],
            }),
        }
    }

    #[test]
    fn severity_prompt_embeds_band_definitions() {
        let prompt = render_stage_prompt(
            Stage::Severity,
            &transcript(),
            &full_prior(Verdict::Depressed),
            &TemplateSet::bundled(),
            &PromptConfig::default(),
        )
        .unwrap();
        assert!(prompt.user_text.contains("Minimal: 0-4"));
        assert!(prompt.user_text.contains("Moderately Severe: 15-19"));
        assert!(prompt.user_text.contains("Severe: 20-24"));
        assert_eq!(prompt.schema_id, "severity.v1");
    }

    #[test]
    fn reasoning_prompt_branches_on_verdict() {
        let templates = TemplateSet::bundled();
        let config = PromptConfig::default();
        let mut prior = full_prior(Verdict::NotDepressed);
        prior.reasoning = None;
        let protective =
            render_stage_prompt(Stage::Reasoning, &transcript(), &prior, &templates, &config)
                .unwrap();
        assert!(protective.user_text.contains("protective factors"));
        assert!(protective.user_text.contains("\"social_support\""));
        assert!(!protective.user_text.contains("\"functional_impairment\""));

        let mut prior = full_prior(Verdict::Depressed);
        prior.reasoning = None;
        let contributing =
            render_stage_prompt(Stage::Reasoning, &transcript(), &prior, &templates, &config)
                .unwrap();
        assert!(contributing.user_text.contains("factors contributing"));
        assert!(contributing.user_text.contains("\"functional_impairment\""));
        assert!(!contributing.user_text.contains("\"healthy_habits\""));
    }

    #[test]
    fn missing_prior_stage_is_an_error() {
        let err = render_stage_prompt(
            Stage::Classification,
            &transcript(),
            &StageOutputs::default(),
            &TemplateSet::bundled(),
            &PromptConfig::default(),
        )
        .unwrap_err();
        assert_eq!(err, PromptError::MissingPriorStage(Stage::Classification));
    }

    #[test]
    fn emotion_prompt_enumerates_closed_vocabularies() {
        let prompt = render_stage_prompt(
            Stage::Emotion,
            &transcript(),
            &StageOutputs::default(),
            &TemplateSet::bundled(),
            &PromptConfig::default(),
        )
        .unwrap();
        for token in ["\"low\"", "\"medium\"", "\"high\""] {
            assert!(prompt.user_text.contains(token), "missing {token}");
        }
        for token in ["\"positive\"", "\"negative\"", "\"neutral\""] {
            assert!(prompt.user_text.contains(token), "missing {token}");
        }
        for token in [
            "\"internal_thoughts\"",
            "\"external_events\"",
            "\"relationships\"",
            "\"health\"",
        ] {
            assert!(prompt.user_text.contains(token), "missing {token}");
        }
        // No unreplaced markers left behind.
        assert!(!prompt.user_text.contains("{{"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let templates = TemplateSet::bundled();
        let config = PromptConfig::default();
        let prior = full_prior(Verdict::Depressed);
        let a =
            render_stage_prompt(Stage::Severity, &transcript(), &prior, &templates, &config)
                .unwrap();
        let b =
            render_stage_prompt(Stage::Severity, &transcript(), &prior, &templates, &config)
                .unwrap();
        assert_eq!(a, b);

        let s1 = render_standard_prompt(&transcript(), &templates, &config).unwrap();
        let s2 = render_standard_prompt(&transcript(), &templates, &config).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn standard_prompt_is_single_severity_stage() {
        let prompt = render_standard_prompt(
            &transcript(),
            &TemplateSet::bundled(),
            &PromptConfig::default(),
        )
        .unwrap();
        assert_eq!(prompt.stage, Stage::Severity);
        assert_eq!(prompt.schema_id, "severity.v1");
        assert!(prompt.user_text.contains("\"verdict\""));
        assert_eq!(PromptMode::Standard.stages().len(), 1);
        assert_eq!(
            PromptMode::ChainOfThought.stages(),
            &[
                Stage::Emotion,
                Stage::Classification,
                Stage::Reasoning,
                Stage::Severity
            ]
        );
    }

    #[test]
    fn long_transcript_keeps_tail_with_notice() {
        let mut t = transcript();
        t.turns[1].text = "x".repeat(200);
        let config = PromptConfig {
            participant_only: true,
            max_chars: 50,
        };
        let prompt =
            render_standard_prompt(&t, &TemplateSet::bundled(), &config).unwrap();
        assert!(prompt
            .user_text
            .contains("[transcript truncated: showing the final 50 of"));
        // The tail survives; the head does not.
        assert!(prompt.user_text.contains(&"x".repeat(50)));
        assert!(!prompt.user_text.contains("Participant:"));
    }

    #[test]
    fn participant_only_filters_interviewer_turns() {
        let templates = TemplateSet::bundled();
        let with_filter = render_standard_prompt(
            &transcript(),
            &templates,
            &PromptConfig::default(),
        )
        .unwrap();
        assert!(!with_filter.user_text.contains("Interviewer:"));

        let config = PromptConfig {
            participant_only: false,
            ..PromptConfig::default()
        };
        let without_filter =
            render_standard_prompt(&transcript(), &templates, &config).unwrap();
        assert!(without_filter.user_text.contains("Interviewer:"));
    }

    #[test]
    fn interviewer_only_transcript_is_empty_under_filter() {
        let mut t = transcript();
        t.turns.retain(|turn| turn.speaker == Speaker::Interviewer);
        let err = render_standard_prompt(
            &t,
            &TemplateSet::bundled(),
            &PromptConfig::default(),
        )
        .unwrap_err();
        assert_eq!(err, PromptError::EmptyTranscript);
    }

    #[test]
    fn template_dir_overrides_are_partial() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("standard.txt"),
            "CUSTOM {{schema_id}}\n{{transcript}}\n",
        )
        .unwrap();
        let set = TemplateSet::from_dir(dir.path()).unwrap();
        let prompt =
            render_standard_prompt(&transcript(), &set, &PromptConfig::default()).unwrap();
        assert!(prompt.user_text.starts_with("CUSTOM severity.v1"));
        // Unrelated templates still come from the bundle.
        let severity = render_stage_prompt(
            Stage::Severity,
            &transcript(),
            &full_prior(Verdict::Depressed),
            &set,
            &PromptConfig::default(),
        )
        .unwrap();
        assert!(severity.user_text.contains("Minimal: 0-4"));

        let missing = TemplateSet::from_dir(&dir.path().join("nope")).unwrap_err();
        assert!(matches!(missing, PromptError::TemplateNotFound(_)));
    }

    #[test]
    fn prior_outputs_are_embedded() {
        let prior = full_prior(Verdict::Depressed);
        let prompt = render_stage_prompt(
            Stage::Severity,
            &transcript(),
            &prior,
            &TemplateSet::bundled(),
            &PromptConfig::default(),
        )
        .unwrap();
        assert!(prompt.user_text.contains("\"verdict\": \"depressed\""));
        assert!(prompt.user_text.contains("\"signals\": []"));
    }
}
