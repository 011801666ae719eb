//! Structured parsing of model stage outputs.
//!
//! Models frequently wrap their answer in prose or a reasoning preamble, so
//! parsing starts by extracting the first well-formed JSON object from the
//! raw text. Field validation is strict about shape but lenient about enum
//! spelling: tokens are matched case-insensitively with spaces, underscores
//! and hyphens ignored, so `"Not Depressed"` and `"not_depressed"` are the
//! same verdict. Scores arrive as JSON numbers and are rounded to the
//! nearest integer, ties away from zero, then range-checked.

use serde_json::{Map, Value};
use thiserror::Error;

use super::types::{
    Branch, ClassificationResult, EmotionProfile, EmotionSignal, EmotionSource, Factor,
    FactorDimension, Intensity, Polarity, ReasoningReport, SeverityAssessment, Verdict,
};

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("no JSON object found in model output")]
    NoJsonFound,
    #[error("schema violation at {path}: {reason}")]
    SchemaViolation { path: String, reason: String },
    #[error("phq8_score {0} outside the PHQ-8 range 0-24")]
    ScoreOutOfRange(i64),
}

fn violation(path: impl Into<String>, reason: impl Into<String>) -> ParseError {
    ParseError::SchemaViolation {
        path: path.into(),
        reason: reason.into(),
    }
}

/// Extract the first well-formed JSON object embedded in `raw`.
pub fn extract_first_json_object(raw: &str) -> Result<Value, ParseError> {
    for (idx, ch) in raw.char_indices() {
        if ch != '{' {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&raw[idx..]).into_iter::<Value>();
        if let Some(Ok(value @ Value::Object(_))) = stream.next() {
            return Ok(value);
        }
    }
    Err(ParseError::NoJsonFound)
}

fn as_object<'a>(value: &'a Value, path: &str) -> Result<&'a Map<String, Value>, ParseError> {
    value
        .as_object()
        .ok_or_else(|| violation(path, "expected a JSON object"))
}

fn required<'a>(
    map: &'a Map<String, Value>,
    key: &str,
    parent: &str,
) -> Result<&'a Value, ParseError> {
    map.get(key)
        .ok_or_else(|| violation(join(parent, key), "missing required field"))
}

fn join(parent: &str, key: &str) -> String {
    if parent.is_empty() {
        key.to_string()
    } else {
        format!("{parent}.{key}")
    }
}

fn as_string(value: &Value, path: &str) -> Result<String, ParseError> {
    value
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| violation(path, "expected a string"))
}

fn as_nonempty_string(value: &Value, path: &str) -> Result<String, ParseError> {
    let s = as_string(value, path)?;
    if s.trim().is_empty() {
        return Err(violation(path, "must be non-empty"));
    }
    Ok(s)
}

// Normalization used for enum matching: case-insensitive, separator-blind.
fn lenient_token(raw: &str) -> String {
    raw.chars()
        .filter(|c| !matches!(c, ' ' | '_' | '-'))
        .flat_map(char::to_lowercase)
        .collect()
}

fn match_enum<T: Copy>(
    value: &Value,
    options: &[(&str, T)],
    path: &str,
) -> Result<T, ParseError> {
    let raw = as_string(value, path)?;
    let token = lenient_token(&raw);
    options
        .iter()
        .find(|(name, _)| lenient_token(name) == token)
        .map(|&(_, v)| v)
        .ok_or_else(|| {
            let allowed: Vec<&str> = options.iter().map(|&(name, _)| name).collect();
            violation(
                path,
                format!("'{raw}' is not one of {}", allowed.join(", ")),
            )
        })
}

fn intensity_options() -> Vec<(&'static str, Intensity)> {
    Intensity::ALL.iter().map(|&v| (v.token(), v)).collect()
}

fn polarity_options() -> Vec<(&'static str, Polarity)> {
    Polarity::ALL.iter().map(|&v| (v.token(), v)).collect()
}

fn source_options() -> Vec<(&'static str, EmotionSource)> {
    EmotionSource::ALL.iter().map(|&v| (v.token(), v)).collect()
}

const VERDICT_OPTIONS: [(&str, Verdict); 2] = [
    ("depressed", Verdict::Depressed),
    ("not_depressed", Verdict::NotDepressed),
];

const BRANCH_OPTIONS: [(&str, Branch); 2] = [
    ("contributing", Branch::Contributing),
    ("protective", Branch::Protective),
];

/// Parse a stage-1 emotion profile.
pub fn parse_emotion(raw: &str) -> Result<EmotionProfile, ParseError> {
    let value = extract_first_json_object(raw)?;
    let map = as_object(&value, "")?;
    let signals_value = required(map, "signals", "")?;
    let items = signals_value
        .as_array()
        .ok_or_else(|| violation("signals", "expected an array"))?;
    let mut signals = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let path = format!("signals[{i}]");
        let obj = as_object(item, &path)?;
        signals.push(EmotionSignal {
            kind: as_nonempty_string(required(obj, "kind", &path)?, &join(&path, "kind"))?
                .trim()
                .to_lowercase(),
            intensity: match_enum(
                required(obj, "intensity", &path)?,
                &intensity_options(),
                &join(&path, "intensity"),
            )?,
            polarity: match_enum(
                required(obj, "polarity", &path)?,
                &polarity_options(),
                &join(&path, "polarity"),
            )?,
            source: match_enum(
                required(obj, "source", &path)?,
                &source_options(),
                &join(&path, "source"),
            )?,
            evidence: as_nonempty_string(
                required(obj, "evidence", &path)?,
                &join(&path, "evidence"),
            )?,
        });
    }
    Ok(EmotionProfile { signals })
}

/// Parse a stage-2 classification result.
pub fn parse_classification(raw: &str) -> Result<ClassificationResult, ParseError> {
    let value = extract_first_json_object(raw)?;
    let map = as_object(&value, "")?;
    let verdict = match_enum(required(map, "verdict", "")?, &VERDICT_OPTIONS, "verdict")?;
    let rationale = as_string(required(map, "rationale", "")?, "rationale")?;
    let confidence = match map.get("confidence") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let c = v
                .as_f64()
                .ok_or_else(|| violation("confidence", "expected a number"))?;
            if !(0.0..=1.0).contains(&c) {
                return Err(violation("confidence", format!("{c} outside [0, 1]")));
            }
            Some(c)
        }
    };
    Ok(ClassificationResult {
        verdict,
        rationale,
        confidence,
    })
}

/// Parse a stage-3 reasoning report for the branch selected by the stage-2
/// verdict. A branch echoed by the model must match; every factor dimension
/// must be legal for the branch.
pub fn parse_reasoning(raw: &str, expected_branch: Branch) -> Result<ReasoningReport, ParseError> {
    let value = extract_first_json_object(raw)?;
    let map = as_object(&value, "")?;
    if let Some(branch_value) = map.get("branch") {
        let branch = match_enum(branch_value, &BRANCH_OPTIONS, "branch")?;
        if branch != expected_branch {
            return Err(violation(
                "branch",
                format!(
                    "'{}' does not match the classification verdict (expected '{}')",
                    BRANCH_OPTIONS
                        .iter()
                        .find(|&&(_, b)| b == branch)
                        .map(|&(n, _)| n)
                        .unwrap_or("?"),
                    BRANCH_OPTIONS
                        .iter()
                        .find(|&&(_, b)| b == expected_branch)
                        .map(|&(n, _)| n)
                        .unwrap_or("?"),
                ),
            ));
        }
    }
    let factors_value = required(map, "factors", "")?;
    let items = factors_value
        .as_array()
        .ok_or_else(|| violation("factors", "expected an array"))?;
    if items.is_empty() {
        return Err(violation("factors", "must contain at least one factor"));
    }
    let legal: Vec<(&str, FactorDimension)> = match expected_branch {
        Branch::Contributing => FactorDimension::CONTRIBUTING
            .iter()
            .map(|&d| (d.token(), d))
            .collect(),
        Branch::Protective => FactorDimension::PROTECTIVE
            .iter()
            .map(|&d| (d.token(), d))
            .collect(),
    };
    let mut factors = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let path = format!("factors[{i}]");
        let obj = as_object(item, &path)?;
        factors.push(Factor {
            dimension: match_enum(
                required(obj, "dimension", &path)?,
                &legal,
                &join(&path, "dimension"),
            )?,
            description: as_nonempty_string(
                required(obj, "description", &path)?,
                &join(&path, "description"),
            )?,
            evidence: as_nonempty_string(
                required(obj, "evidence", &path)?,
                &join(&path, "evidence"),
            )?,
        });
    }
    Ok(ReasoningReport {
        branch: expected_branch,
        factors,
    })
}

/// A parsed stage-4 output. The verdict is present only when the model
/// reported one (required in standard mode, ignored in chain-of-thought
/// mode).
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedSeverity {
    pub assessment: SeverityAssessment,
    pub verdict: Option<Verdict>,
    pub rationale: Option<String>,
}

fn round_score(value: f64) -> Result<u8, ParseError> {
    if !value.is_finite() {
        return Err(violation("phq8_score", "must be a finite number"));
    }
    let rounded = value.round(); // ties away from zero
    if !(0.0..=24.0).contains(&rounded) {
        return Err(ParseError::ScoreOutOfRange(rounded as i64));
    }
    Ok(rounded as u8)
}

/// Parse a stage-4 severity output. The band is recomputed from the score;
/// any band the model reports is ignored.
pub fn parse_severity(raw: &str) -> Result<ParsedSeverity, ParseError> {
    let value = extract_first_json_object(raw)?;
    let map = as_object(&value, "")?;
    let score_value = required(map, "phq8_score", "")?;
    let number = score_value
        .as_f64()
        .ok_or_else(|| violation("phq8_score", "expected a number"))?;
    let score = round_score(number)?;
    let assessment =
        SeverityAssessment::from_score(score).map_err(|e| violation("phq8_score", e.to_string()))?;
    let verdict = match map.get("verdict") {
        None | Some(Value::Null) => None,
        Some(v) => Some(match_enum(v, &VERDICT_OPTIONS, "verdict")?),
    };
    let rationale = match map.get("rationale") {
        None | Some(Value::Null) => None,
        Some(v) => Some(as_string(v, "rationale")?),
    };
    Ok(ParsedSeverity {
        assessment,
        verdict,
        rationale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Band;

    #[test]
    fn extracts_first_object_past_preamble() {
        let raw = "Thinking it through... the answer is:\n{\"phq8_score\": 7} trailing";
        let value = extract_first_json_object(raw).unwrap();
        assert_eq!(value["phq8_score"], 7);

        // A brace that opens no valid object is skipped in favor of a later
        // well-formed one.
        let raw = "weird { not json } then {\"a\": 1}";
        let value = extract_first_json_object(raw).unwrap();
        assert_eq!(value["a"], 1);

        assert_eq!(
            extract_first_json_object("no json here").unwrap_err(),
            ParseError::NoJsonFound
        );
        assert_eq!(
            extract_first_json_object("[1, 2, 3]").unwrap_err(),
            ParseError::NoJsonFound
        );
    }

    #[test]
    fn severity_score_banding_and_rounding() {
        let parsed = parse_severity(r#"{"phq8_score": 12}"#).unwrap();
        assert_eq!(parsed.assessment.phq8_score(), 12);
        assert_eq!(parsed.assessment.band(), Band::Moderate);

        let parsed = parse_severity(r#"{"phq8_score": 11.6}"#).unwrap();
        assert_eq!(parsed.assessment.phq8_score(), 12);

        // Ties round away from zero.
        let parsed = parse_severity(r#"{"phq8_score": 11.5}"#).unwrap();
        assert_eq!(parsed.assessment.phq8_score(), 12);

        assert_eq!(
            parse_severity(r#"{"phq8_score": 24.6}"#).unwrap_err(),
            ParseError::ScoreOutOfRange(25)
        );
        assert_eq!(
            parse_severity(r#"{"phq8_score": -1}"#).unwrap_err(),
            ParseError::ScoreOutOfRange(-1)
        );
        assert!(matches!(
            parse_severity(r#"{"phq8_score": "twelve"}"#).unwrap_err(),
            ParseError::SchemaViolation { .. }
        ));
    }

    #[test]
    fn severity_verdict_is_optional_and_lenient() {
        let parsed = parse_severity(r#"{"phq8_score": 3, "verdict": "Not Depressed"}"#).unwrap();
        assert_eq!(parsed.verdict, Some(Verdict::NotDepressed));
        let parsed = parse_severity(r#"{"phq8_score": 3}"#).unwrap();
        assert_eq!(parsed.verdict, None);
    }

    #[test]
    fn emotion_closed_vocabulary_is_enforced() {
        let ok = r#"{"signals": [{"kind": "Sadness", "intensity": "HIGH",
            "polarity": "negative", "source": "Internal Thoughts",
            "evidence": "I feel empty"}]}"#;
        let profile = parse_emotion(ok).unwrap();
        assert_eq!(profile.signals[0].kind, "sadness");
        assert_eq!(profile.signals[0].intensity, Intensity::High);
        assert_eq!(profile.signals[0].source, EmotionSource::InternalThoughts);

        let bad = r#"{"signals": [{"kind": "sadness", "intensity": "extreme",
            "polarity": "negative", "source": "health", "evidence": "x"}]}"#;
        match parse_emotion(bad).unwrap_err() {
            ParseError::SchemaViolation { path, .. } => {
                assert_eq!(path, "signals[0].intensity");
            }
            other => panic!("unexpected: {other}"),
        }

        let empty_evidence = r#"{"signals": [{"kind": "sadness", "intensity": "low",
            "polarity": "negative", "source": "health", "evidence": "  "}]}"#;
        assert!(parse_emotion(empty_evidence).is_err());

        assert_eq!(
            parse_emotion(r#"{"signals": []}"#).unwrap(),
            EmotionProfile::default()
        );
    }

    #[test]
    fn classification_confidence_range_checked() {
        let ok = r#"{"verdict": "depressed", "rationale": "low mood", "confidence": 0.8}"#;
        let c = parse_classification(ok).unwrap();
        assert_eq!(c.verdict, Verdict::Depressed);
        assert_eq!(c.confidence, Some(0.8));

        let bad = r#"{"verdict": "depressed", "rationale": "x", "confidence": 1.5}"#;
        assert!(parse_classification(bad).is_err());

        let missing_rationale = r#"{"verdict": "depressed"}"#;
        assert!(parse_classification(missing_rationale).is_err());
    }

    #[test]
    fn reasoning_branch_and_dimension_legality() {
        let ok = r#"{"factors": [{"dimension": "social", "description": "isolation",
            "evidence": "I stopped calling people"}]}"#;
        let report = parse_reasoning(ok, Branch::Contributing).unwrap();
        assert_eq!(report.branch, Branch::Contributing);
        assert_eq!(report.factors.len(), 1);

        // Protective dimension under the contributing branch is illegal.
        let wrong_dim = r#"{"factors": [{"dimension": "healthy_habits",
            "description": "d", "evidence": "e"}]}"#;
        assert!(parse_reasoning(wrong_dim, Branch::Contributing).is_err());
        assert!(parse_reasoning(wrong_dim, Branch::Protective).is_ok());

        // An echoed branch that contradicts the verdict is a violation.
        let contradicting = r#"{"branch": "protective", "factors": [{"dimension": "social",
            "description": "d", "evidence": "e"}]}"#;
        assert!(parse_reasoning(contradicting, Branch::Contributing).is_err());

        let empty = r#"{"factors": []}"#;
        assert!(parse_reasoning(empty, Branch::Contributing).is_err());
    }
}
