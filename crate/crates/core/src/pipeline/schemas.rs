//! Published stage-output schema documents.
//!
//! The JSON files under `schemas/` are the versioned contract for model
//! responses; they are compiled in so prompts and repair retries can restate
//! them verbatim.

use crate::prompts::Stage;

pub const EMOTION_V1: &str = include_str!("../../schemas/emotion.v1.json");
pub const CLASSIFICATION_V1: &str = include_str!("../../schemas/classification.v1.json");
pub const REASONING_V1: &str = include_str!("../../schemas/reasoning.v1.json");
pub const SEVERITY_V1: &str = include_str!("../../schemas/severity.v1.json");

/// The schema document for a stage's output.
pub fn document(stage: Stage) -> &'static str {
    match stage {
        Stage::Emotion => EMOTION_V1,
        Stage::Classification => CLASSIFICATION_V1,
        Stage::Reasoning => REASONING_V1,
        Stage::Severity => SEVERITY_V1,
    }
}
