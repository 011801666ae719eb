//! Evaluation and ablation reports.
//!
//! Reports are byte-deterministic given identical records: pairs are sorted
//! by participant id, floats in text tables are fixed at three decimals for
//! CCC and two for MAE, and JSON keeps full precision.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{CorpusManifest, Split};
use crate::metrics::{band_of, summarize, Band, EvalPairs, EvalSummary, MetricsError};
use crate::pipeline::RunRecord;

pub const EVAL_SCHEMA: &str = "eval.v1";
pub const ABLATION_SCHEMA: &str = "ablation.v1";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("records do not join to gold labels (missing: {missing:?}, unknown: {unknown:?})")]
    JoinFailure {
        /// Gold-labeled participants in the selected split with no record.
        missing: Vec<String>,
        /// Recorded participants with no usable gold label.
        unknown: Vec<String>,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// One joined prediction/gold pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub participant_id: String,
    pub gold: u8,
    pub prediction: u8,
    pub gold_band: Band,
    pub predicted_band: Band,
}

/// Evaluation report over one records file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    /// `<model> (<mode>)`, taken from the evaluated records.
    pub label: String,
    pub n: usize,
    pub excluded_count: usize,
    pub ccc: f64,
    pub mae: f64,
    pub binary_accuracy: f64,
    pub band_confusion: [[u32; 5]; 5],
    pub pairs: Vec<PairRow>,
}

impl EvalReport {
    pub fn summary(&self) -> EvalSummary {
        EvalSummary {
            ccc: self.ccc,
            mae: self.mae,
            n: self.n,
            excluded_count: self.excluded_count,
            band_confusion: self.band_confusion,
            binary_accuracy: self.binary_accuracy,
        }
    }
}

/// Join run records to gold labels and summarize.
///
/// The last record per participant wins, so restarted runs supersede earlier
/// attempts. Error records are excluded from the metric vectors and counted
/// in `excluded_count`. When `split` is given, every gold-labeled entry of
/// that split must be covered by some record; in every case, each successful
/// record must join to a gold label.
pub fn build_eval_report(
    records: &[RunRecord],
    manifest: &CorpusManifest,
    split: Option<Split>,
) -> Result<EvalReport, ReportError> {
    let mut last: BTreeMap<&str, &RunRecord> = BTreeMap::new();
    for record in records {
        last.insert(record.participant_id(), record);
    }

    let mut unknown = Vec::new();
    let mut rows = Vec::new();
    let mut excluded = 0usize;
    let mut label = None;
    for (&participant_id, record) in &last {
        match record.as_ok() {
            None => excluded += 1,
            Some(assessment) => {
                if label.is_none() {
                    label = Some(format!("{} ({})", assessment.model_id, assessment.mode));
                }
                let gold = manifest
                    .find(participant_id)
                    .and_then(|entry| entry.gold_score);
                match gold {
                    None => unknown.push(participant_id.to_string()),
                    Some(gold) => {
                        let prediction = assessment.severity.phq8_score();
                        rows.push(PairRow {
                            participant_id: participant_id.to_string(),
                            gold,
                            prediction,
                            gold_band: band_of(gold as i64).expect("validated at load"),
                            predicted_band: assessment.severity.band(),
                        });
                    }
                }
            }
        }
    }

    let mut missing = Vec::new();
    if let Some(split) = split {
        for entry in manifest.entries_in(split) {
            if entry.gold_score.is_some() && !last.contains_key(entry.participant_id.as_str()) {
                missing.push(entry.participant_id.clone());
            }
        }
    }
    if !missing.is_empty() || !unknown.is_empty() {
        missing.sort();
        unknown.sort();
        return Err(ReportError::JoinFailure { missing, unknown });
    }

    // BTreeMap iteration already sorted rows by participant id.
    let predictions: Vec<u8> = rows.iter().map(|r| r.prediction).collect();
    let golds: Vec<u8> = rows.iter().map(|r| r.gold).collect();
    let pairs = EvalPairs::new(predictions, golds, excluded)?;
    let summary = summarize(&pairs)?;
    Ok(EvalReport {
        schema: EVAL_SCHEMA.to_string(),
        label: label.unwrap_or_else(|| "unknown".to_string()),
        n: summary.n,
        excluded_count: summary.excluded_count,
        ccc: summary.ccc,
        mae: summary.mae,
        binary_accuracy: summary.binary_accuracy,
        band_confusion: summary.band_confusion,
        pairs: rows,
    })
}

/// Serialize a report as pretty JSON with a trailing newline.
pub fn to_json(report: &impl Serialize) -> String {
    let mut out = serde_json::to_string_pretty(report).expect("reports serialize");
    out.push('\n');
    out
}

fn band_header() -> String {
    let short = ["Minimal", "Mild", "Moderate", "ModSev", "Severe"];
    let mut line = format!("{:<14}", "gold \\ pred");
    for name in short {
        line.push_str(&format!("{name:>9}"));
    }
    line
}

/// Fixed-width text table mirroring the method/CCC/MAE layout, plus counts
/// and the band confusion grid.
pub fn render_eval_text(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<32}{:>8}{:>8}\n", "Method", "CCC", "MAE"));
    out.push_str(&format!(
        "{:<32}{:>8.3}{:>8.2}\n",
        report.label, report.ccc, report.mae
    ));
    out.push_str(&format!(
        "n={} excluded={} binary_accuracy={:.3}\n",
        report.n, report.excluded_count, report.binary_accuracy
    ));
    out.push('\n');
    out.push_str(&band_header());
    out.push('\n');
    let short = ["Minimal", "Mild", "Moderate", "ModSev", "Severe"];
    for (i, row) in report.band_confusion.iter().enumerate() {
        out.push_str(&format!("{:<14}", short[i]));
        for count in row {
            out.push_str(&format!("{count:>9}"));
        }
        out.push('\n');
    }
    out
}

/// One mode's result inside an ablation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ccc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub excluded_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AblationRow {
    pub fn ok(mode: impl Into<String>, summary: &EvalSummary) -> Self {
        Self {
            mode: mode.into(),
            status: "ok".to_string(),
            ccc: Some(summary.ccc),
            mae: Some(summary.mae),
            n: Some(summary.n),
            excluded_count: Some(summary.excluded_count),
            error: None,
        }
    }

    pub fn failed(mode: impl Into<String>, error: impl Into<String>) -> Self {
        Self {
            mode: mode.into(),
            status: "failed".to_string(),
            ccc: None,
            mae: None,
            n: None,
            excluded_count: None,
            error: Some(error.into()),
        }
    }
}

/// Improvement of the chain-of-thought row over the standard row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationDelta {
    pub ccc: f64,
    pub mae: f64,
}

/// Paired standard-vs-chain-of-thought comparison for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub schema: String,
    pub model_id: String,
    pub split: String,
    pub repeats: usize,
    /// Standard row first, chain-of-thought row second.
    pub rows: Vec<AblationRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<AblationDelta>,
}

impl AblationReport {
    pub fn new(model_id: impl Into<String>, split: Split, repeats: usize) -> Self {
        Self {
            schema: ABLATION_SCHEMA.to_string(),
            model_id: model_id.into(),
            split: split.to_string(),
            repeats,
            rows: Vec::new(),
            delta: None,
        }
    }

    /// Fill in the delta when both rows evaluated successfully.
    pub fn finalize(&mut self) {
        let standard = self.rows.iter().find(|r| r.mode == "standard");
        let cot = self.rows.iter().find(|r| r.mode == "cot");
        self.delta = match (standard, cot) {
            (Some(s), Some(c)) => match (s.ccc, s.mae, c.ccc, c.mae) {
                (Some(s_ccc), Some(s_mae), Some(c_ccc), Some(c_mae)) => Some(AblationDelta {
                    ccc: c_ccc - s_ccc,
                    mae: c_mae - s_mae,
                }),
                _ => None,
            },
            _ => None,
        };
    }
}

/// Two-row table (plus delta) mirroring the model/CoT/CCC/MAE layout.
pub fn render_ablation_text(report: &AblationReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24}{:<6}{:>8}{:>8}\n",
        "Model", "CoT", "CCC", "MAE"
    ));
    for row in &report.rows {
        let cot = if row.mode == "cot" { "yes" } else { "no" };
        match (row.ccc, row.mae) {
            (Some(ccc), Some(mae)) => {
                out.push_str(&format!(
                    "{:<24}{:<6}{:>8.3}{:>8.2}\n",
                    report.model_id, cot, ccc, mae
                ));
            }
            _ => {
                out.push_str(&format!(
                    "{:<24}{:<6}  failed: {}\n",
                    report.model_id,
                    cot,
                    row.error.as_deref().unwrap_or("unknown error")
                ));
            }
        }
    }
    if let Some(delta) = &report.delta {
        out.push_str(&format!(
            "{:<24}{:<6}{:>8}{:>8}\n",
            "delta",
            "",
            format!("{:+.3}", delta.ccc),
            format!("{:+.2}", delta.mae)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Usage;
    use crate::pipeline::{
        AssessmentRecord, ClassificationResult, ErrorRecord, SeverityAssessment, Verdict,
    };
    use crate::prompts::PromptMode;
    use chrono::TimeZone;

    fn ok_record(pid: &str, score: u8) -> RunRecord {
        let ts = chrono::Utc.timestamp_opt(0, 0).unwrap();
        RunRecord::ok(AssessmentRecord {
            participant_id: pid.to_string(),
            mode: PromptMode::ChainOfThought,
            model_id: "test-model".into(),
            backend_id: "mock".into(),
            emotion: None,
            classification: ClassificationResult {
                verdict: if score >= 10 {
                    Verdict::Depressed
                } else {
                    Verdict::NotDepressed
                },
                rationale: String::new(),
                confidence: None,
            },
            reasoning: None,
            severity: SeverityAssessment::from_score(score).unwrap(),
            raw_stage_outputs: vec![],
            flags: vec![],
            usage: Usage::default(),
            started_at: ts,
            finished_at: ts,
        })
    }

    fn error_record(pid: &str) -> RunRecord {
        let ts = chrono::Utc.timestamp_opt(0, 0).unwrap();
        RunRecord::error(ErrorRecord {
            participant_id: pid.to_string(),
            mode: PromptMode::ChainOfThought,
            model_id: "test-model".into(),
            backend_id: "mock".into(),
            error: "boom".into(),
            raw_stage_outputs: vec![],
            usage: Usage::default(),
            started_at: ts,
            finished_at: ts,
        })
    }

    fn manifest(rows: &[(&str, u8)]) -> CorpusManifest {
        let dir = tempfile::tempdir().unwrap();
        let mut labels = String::from("participant_id,split,phq8_score\n");
        for (pid, score) in rows {
            labels.push_str(&format!("{pid},test,{score}\n"));
        }
        let path = dir.path().join("labels.csv");
        std::fs::write(&path, labels).unwrap();
        crate::dataset::load_manifest(&path).unwrap()
    }

    #[test]
    fn report_matches_hand_computed_metrics() {
        let manifest = manifest(&[("P1", 1), ("P2", 2), ("P3", 4)]);
        let records = vec![ok_record("P1", 1), ok_record("P2", 2), ok_record("P3", 3)];
        let report = build_eval_report(&records, &manifest, Some(Split::Test)).unwrap();
        assert!((report.ccc - 6.0 / 7.0).abs() < 1e-12);
        assert!((report.mae - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.n, 3);
        assert_eq!(report.label, "test-model (cot)");
        assert_eq!(report.pairs.len(), 3);
        assert_eq!(report.pairs[0].participant_id, "P1");
    }

    #[test]
    fn excluded_records_counted_not_scored() {
        let manifest = manifest(&[("P1", 1), ("P2", 2), ("P3", 4)]);
        let records = vec![ok_record("P1", 1), ok_record("P2", 2), error_record("P3")];
        let report = build_eval_report(&records, &manifest, Some(Split::Test)).unwrap();
        assert_eq!(report.n, 2);
        assert_eq!(report.excluded_count, 1);
    }

    #[test]
    fn last_record_per_participant_wins() {
        let manifest = manifest(&[("P1", 5)]);
        let records = vec![error_record("P1"), ok_record("P1", 5), ok_record("P1", 7)];
        // One participant: CCC needs two pairs, so expect the metrics error
        // rather than a join failure.
        let err = build_eval_report(&records, &manifest, Some(Split::Test)).unwrap_err();
        assert!(matches!(err, ReportError::Metrics(_)));

        let manifest = manifest(&[("P1", 5), ("P2", 9)]);
        let records = vec![
            error_record("P1"),
            ok_record("P1", 5),
            ok_record("P2", 9),
            ok_record("P1", 7),
        ];
        let report = build_eval_report(&records, &manifest, Some(Split::Test)).unwrap();
        assert_eq!(report.excluded_count, 0);
        assert_eq!(report.pairs[0].prediction, 7);
    }

    #[test]
    fn join_failures_name_both_directions() {
        let manifest = manifest(&[("P1", 1), ("P2", 2), ("P3", 3), ("P4", 4)]);
        let records = vec![ok_record("P1", 1), ok_record("P2", 2), ok_record("PX", 9)];
        match build_eval_report(&records, &manifest, Some(Split::Test)).unwrap_err() {
            ReportError::JoinFailure { missing, unknown } => {
                assert_eq!(missing, vec!["P3".to_string(), "P4".to_string()]);
                assert_eq!(unknown, vec!["PX".to_string()]);
            }
            other => panic!("unexpected: {other}"),
        }

        // Without a split, coverage is not required but records must join.
        let records = vec![ok_record("P1", 1), ok_record("P2", 2)];
        assert!(build_eval_report(&records, &manifest, None).is_ok());
    }

    #[test]
    fn report_bytes_are_deterministic() {
        let manifest = manifest(&[("P1", 1), ("P2", 2), ("P3", 4)]);
        let records = vec![ok_record("P3", 3), ok_record("P1", 1), ok_record("P2", 2)];
        let a = build_eval_report(&records, &manifest, Some(Split::Test)).unwrap();
        let reordered = vec![ok_record("P1", 1), ok_record("P2", 2), ok_record("P3", 3)];
        let b = build_eval_report(&reordered, &manifest, Some(Split::Test)).unwrap();
        assert_eq!(to_json(&a), to_json(&b));
        assert_eq!(render_eval_text(&a), render_eval_text(&b));
    }

    #[test]
    fn text_tables_use_fixed_precision() {
        let manifest = manifest(&[("P1", 1), ("P2", 2), ("P3", 4)]);
        let records = vec![ok_record("P1", 1), ok_record("P2", 2), ok_record("P3", 3)];
        let report = build_eval_report(&records, &manifest, Some(Split::Test)).unwrap();
        let text = render_eval_text(&report);
        assert!(text.contains("0.857"), "{text}");
        assert!(text.contains("0.33"), "{text}");

        let mut ablation = AblationReport::new("test-model", Split::Test, 1);
        ablation.rows.push(AblationRow::ok(
            "standard",
            &EvalSummary {
                ccc: 0.55,
                mae: 4.33,
                n: 3,
                excluded_count: 0,
                band_confusion: [[0; 5]; 5],
                binary_accuracy: 1.0,
            },
        ));
        ablation.rows.push(AblationRow::ok(
            "cot",
            &EvalSummary {
                ccc: 0.637,
                mae: 4.07,
                n: 3,
                excluded_count: 0,
                band_confusion: [[0; 5]; 5],
                binary_accuracy: 1.0,
            },
        ));
        ablation.finalize();
        let delta = ablation.delta.unwrap();
        assert!((delta.ccc - 0.087).abs() < 1e-12);
        assert!((delta.mae + 0.26).abs() < 1e-12);
        let text = render_ablation_text(&ablation);
        assert!(text.contains("0.550"), "{text}");
        assert!(text.contains("+0.087"), "{text}");
        assert!(text.contains("-0.26"), "{text}");
    }

    #[test]
    fn failed_row_renders_without_delta() {
        let mut ablation = AblationReport::new("m", Split::Test, 1);
        ablation.rows.push(AblationRow::failed("standard", "all runs failed"));
        ablation.rows.push(AblationRow::ok(
            "cot",
            &EvalSummary {
                ccc: 0.9,
                mae: 1.0,
                n: 3,
                excluded_count: 0,
                band_confusion: [[0; 5]; 5],
                binary_accuracy: 1.0,
            },
        ));
        ablation.finalize();
        assert!(ablation.delta.is_none());
        let text = render_ablation_text(&ablation);
        assert!(text.contains("failed: all runs failed"));
        assert!(text.contains("0.900"));
    }
}
