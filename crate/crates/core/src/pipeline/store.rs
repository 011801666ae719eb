//! JSONL persistence for run records: one JSON object per line, append-only,
//! schema-versioned.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use thiserror::Error;

use super::types::{RunRecord, RECORD_SCHEMA};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad record at {path}:{line}: {reason}")]
    BadRecord {
        path: String,
        line: usize,
        reason: String,
    },
}

/// Append one record as a single JSONL line and flush.
pub fn append_record(writer: &mut impl Write, record: &RunRecord) -> std::io::Result<()> {
    let line = serde_json::to_string(record)?;
    writer.write_all(line.as_bytes())?;
    writer.write_all(b"\n")?;
    writer.flush()
}

/// Read every record from a JSONL file. Lines must parse and carry the
/// expected schema tag; blank lines are ignored.
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, StoreError> {
    let file = fs::File::open(path).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| StoreError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RunRecord =
            serde_json::from_str(&line).map_err(|e| StoreError::BadRecord {
                path: path.display().to_string(),
                line: idx + 1,
                reason: e.to_string(),
            })?;
        if record.schema != RECORD_SCHEMA {
            return Err(StoreError::BadRecord {
                path: path.display().to_string(),
                line: idx + 1,
                reason: format!("unsupported schema '{}'", record.schema),
            });
        }
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use crate::pipeline::tests::{cot_mock, transcript};
    use crate::pipeline::{assess, PipelineConfig};
    use crate::prompts::{PromptMode, TemplateSet};

    #[test]
    fn round_trip_preserves_records() {
        let templates = TemplateSet::bundled();
        let config = PipelineConfig::default();
        let ok = assess(
            &transcript("P1"),
            PromptMode::ChainOfThought,
            &cot_mock("depressed", 12),
            &templates,
            &config,
        );
        let err = assess(
            &transcript("P2"),
            PromptMode::ChainOfThought,
            &MockBackend::queue(Vec::<String>::new()),
            &templates,
            &config,
        );

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let mut file = fs::File::create(&path).unwrap();
        append_record(&mut file, &ok).unwrap();
        append_record(&mut file, &err).unwrap();
        drop(file);

        let records = read_records(&path).unwrap();
        assert_eq!(records.len(), 2);
        assert!(records[0].is_ok());
        assert!(!records[1].is_ok());
        assert_eq!(records[0].participant_id(), "P1");
        assert_eq!(
            records[0].as_ok().unwrap().severity.phq8_score(),
            12
        );
    }

    #[test]
    fn unknown_schema_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        fs::write(&path, "{\"schema\": \"assessment.v99\", \"status\": \"error\"}\n").unwrap();
        assert!(read_records(&path).is_err());
    }
}
