//! Domain types for the four assessment stages and the persisted audit
//! record.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::backend::Usage;
use crate::metrics::{band_of, Band, MetricsError};
use crate::prompts::{PromptMode, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intensity {
    Low,
    Medium,
    High,
}

impl Intensity {
    pub const ALL: [Intensity; 3] = [Intensity::Low, Intensity::Medium, Intensity::High];

    pub fn token(self) -> &'static str {
        match self {
            Intensity::Low => "low",
            Intensity::Medium => "medium",
            Intensity::High => "high",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Negative, Polarity::Neutral];

    pub fn token(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmotionSource {
    InternalThoughts,
    ExternalEvents,
    Relationships,
    Health,
}

impl EmotionSource {
    pub const ALL: [EmotionSource; 4] = [
        EmotionSource::InternalThoughts,
        EmotionSource::ExternalEvents,
        EmotionSource::Relationships,
        EmotionSource::Health,
    ];

    pub fn token(self) -> &'static str {
        match self {
            EmotionSource::InternalThoughts => "internal_thoughts",
            EmotionSource::ExternalEvents => "external_events",
            EmotionSource::Relationships => "relationships",
            EmotionSource::Health => "health",
        }
    }
}

/// One extracted emotional signal with its supporting excerpt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionSignal {
    /// Emotion type; open vocabulary (sadness, guilt, hope, ...).
    pub kind: String,
    pub intensity: Intensity,
    pub polarity: Polarity,
    pub source: EmotionSource,
    /// Verbatim transcript excerpt carrying the signal.
    pub evidence: String,
}

/// Stage-1 output: the transcript's emotional profile. Signal order is the
/// model's output order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmotionProfile {
    pub signals: Vec<EmotionSignal>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Depressed,
    NotDepressed,
}

impl Verdict {
    /// The reasoning branch this verdict activates.
    pub fn expected_branch(self) -> Branch {
        match self {
            Verdict::Depressed => Branch::Contributing,
            Verdict::NotDepressed => Branch::Protective,
        }
    }
}

/// Stage-2 output: the binary depression verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub verdict: Verdict,
    pub rationale: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Contributing,
    Protective,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorDimension {
    Social,
    Biological,
    Psychological,
    FunctionalImpairment,
    SocialSupport,
    PsychologicalResilience,
    HealthyHabits,
}

impl FactorDimension {
    pub const CONTRIBUTING: [FactorDimension; 4] = [
        FactorDimension::Social,
        FactorDimension::Biological,
        FactorDimension::Psychological,
        FactorDimension::FunctionalImpairment,
    ];

    pub const PROTECTIVE: [FactorDimension; 3] = [
        FactorDimension::SocialSupport,
        FactorDimension::PsychologicalResilience,
        FactorDimension::HealthyHabits,
    ];

    pub fn token(self) -> &'static str {
        match self {
            FactorDimension::Social => "social",
            FactorDimension::Biological => "biological",
            FactorDimension::Psychological => "psychological",
            FactorDimension::FunctionalImpairment => "functional_impairment",
            FactorDimension::SocialSupport => "social_support",
            FactorDimension::PsychologicalResilience => "psychological_resilience",
            FactorDimension::HealthyHabits => "healthy_habits",
        }
    }

    pub fn legal_for(self, branch: Branch) -> bool {
        match branch {
            Branch::Contributing => Self::CONTRIBUTING.contains(&self),
            Branch::Protective => Self::PROTECTIVE.contains(&self),
        }
    }
}

/// One ranked factor with its supporting excerpt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub dimension: FactorDimension,
    pub description: String,
    pub evidence: String,
}

/// Stage-3 output: ranked contributing or protective factors. Rank order is
/// list order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningReport {
    pub branch: Branch,
    pub factors: Vec<Factor>,
}

/// Stage-4 output. The band is always derived from the score; a
/// model-reported band is never stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeverityAssessment {
    phq8_score: u8,
    band: Band,
}

impl SeverityAssessment {
    pub fn from_score(phq8_score: u8) -> Result<Self, MetricsError> {
        let band = band_of(phq8_score as i64)?;
        Ok(Self { phq8_score, band })
    }

    pub fn phq8_score(&self) -> u8 {
        self.phq8_score
    }

    pub fn band(&self) -> Band {
        self.band
    }
}

impl<'de> Deserialize<'de> for SeverityAssessment {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        struct Raw {
            phq8_score: u8,
            // Stored band is ignored; the invariant band == band_of(score)
            // is re-established on every load.
            #[serde(default)]
            #[allow(dead_code)]
            band: Option<Band>,
        }
        let raw = Raw::deserialize(deserializer)?;
        SeverityAssessment::from_score(raw.phq8_score).map_err(serde::de::Error::custom)
    }
}

/// Annotation attached to a record when stage outputs disagree; never
/// mutates the outputs themselves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inconsistency {
    /// Binary verdict and PHQ-8 score fall on opposite sides of the
    /// cutoff-10 rule.
    VerdictScoreMismatch,
}

/// Unmodified model text for one backend call, in call order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawStageOutput {
    pub stage: Stage,
    pub text: String,
}

/// Accumulated outputs of completed stages, serialized into later-stage
/// prompts.
#[derive(Debug, Clone, Default, Serialize)]
pub struct StageOutputs {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub emotion: Option<EmotionProfile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classification: Option<ClassificationResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<ReasoningReport>,
}

/// Full audit record for one assessed transcript.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssessmentRecord {
    pub participant_id: String,
    pub mode: PromptMode,
    pub model_id: String,
    pub backend_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotion: Option<EmotionProfile>,
    pub classification: ClassificationResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<ReasoningReport>,
    pub severity: SeverityAssessment,
    pub raw_stage_outputs: Vec<RawStageOutput>,
    pub flags: Vec<Inconsistency>,
    pub usage: Usage,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

/// Record written when a transcript could not be assessed; keeps whatever
/// raw outputs were collected before the failure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub participant_id: String,
    pub mode: PromptMode,
    pub model_id: String,
    pub backend_id: String,
    pub error: String,
    #[serde(default)]
    pub raw_stage_outputs: Vec<RawStageOutput>,
    #[serde(default)]
    pub usage: Usage,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

pub const RECORD_SCHEMA: &str = "assessment.v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunRecordBody {
    Ok(AssessmentRecord),
    Error(ErrorRecord),
}

/// One JSONL line of a run's output: a successful assessment or an error
/// record, under a versioned schema tag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema: String,
    #[serde(flatten)]
    pub body: RunRecordBody,
}

impl RunRecord {
    pub fn ok(record: AssessmentRecord) -> Self {
        Self {
            schema: RECORD_SCHEMA.to_string(),
            body: RunRecordBody::Ok(record),
        }
    }

    pub fn error(record: ErrorRecord) -> Self {
        Self {
            schema: RECORD_SCHEMA.to_string(),
            body: RunRecordBody::Error(record),
        }
    }

    pub fn participant_id(&self) -> &str {
        match &self.body {
            RunRecordBody::Ok(r) => &r.participant_id,
            RunRecordBody::Error(r) => &r.participant_id,
        }
    }

    pub fn mode(&self) -> PromptMode {
        match &self.body {
            RunRecordBody::Ok(r) => r.mode,
            RunRecordBody::Error(r) => r.mode,
        }
    }

    pub fn model_id(&self) -> &str {
        match &self.body {
            RunRecordBody::Ok(r) => &r.model_id,
            RunRecordBody::Error(r) => &r.model_id,
        }
    }

    pub fn usage(&self) -> Usage {
        match &self.body {
            RunRecordBody::Ok(r) => r.usage,
            RunRecordBody::Error(r) => r.usage,
        }
    }

    pub fn as_ok(&self) -> Option<&AssessmentRecord> {
        match &self.body {
            RunRecordBody::Ok(r) => Some(r),
            RunRecordBody::Error(_) => None,
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self.body, RunRecordBody::Ok(_))
    }
}
