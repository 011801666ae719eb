//! Transcript and gold-label ingestion.
//!
//! The corpus layout is a `labels.csv` file (`participant_id,split,phq8_score`)
//! with one transcript file per participant sitting next to it: either
//! `<participant_id>.csv` with a `speaker,text` header, or
//! `<participant_id>.txt` with one utterance per line (all attributed to the
//! participant). The licensed E-DAIC corpus is reduced to this layout by a
//! one-time local conversion; the repository itself only ever ships the
//! synthetic fixtures in [`fixtures`].
//!
//! Loaded manifests and transcripts are immutable values, safe to share
//! across concurrent pipeline workers.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{band_of, Band, PHQ8_MAX};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("participant {participant_id}: score {value} outside 0-24")]
    ScoreOutOfRange { participant_id: String, value: i64 },
    #[error("transcript {0} has no non-empty utterances")]
    EmptyTranscript(PathBuf),
    #[error("malformed transcript line {line} in {path}: {reason}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("participant {0} has no gold score")]
    MissingGoldScore(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Interviewer,
    Participant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl Split {
    fn parse(raw: &str) -> Option<Split> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            "" | "unassigned" => Some(Split::Unassigned),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Split::parse(s).ok_or_else(|| format!("unknown split '{s}' (expected train|val|test)"))
    }
}

/// One interview utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

/// One participant's interview, with an optional gold PHQ-8 score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Transcript {
    pub participant_id: String,
    pub turns: Vec<Turn>,
    pub gold_score: Option<u8>,
    pub split: Split,
    /// Ingestion notes, e.g. unknown speaker labels that were normalized.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// One labels-file row with its resolved transcript path.
#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub participant_id: String,
    pub transcript_path: PathBuf,
    pub gold_score: Option<u8>,
    pub split: Split,
}

/// A parsed labels file.
#[derive(Debug, Clone)]
pub struct CorpusManifest {
    entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn counts_by_split(&self) -> BTreeMap<Split, usize> {
        let mut counts = BTreeMap::new();
        for entry in &self.entries {
            *counts.entry(entry.split).or_insert(0) += 1;
        }
        counts
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn find(&self, participant_id: &str) -> Option<&ManifestEntry> {
        self.entries
            .iter()
            .find(|e| e.participant_id == participant_id)
    }
}

/// A manifest row that failed validation, with the line it came from.
#[derive(Debug, Clone, Serialize)]
pub struct RejectedRow {
    pub line: usize,
    pub reason: String,
}

/// Result of a tolerant manifest scan: accepted entries plus every rejected
/// row. `accepted + rejected` always equals the number of input rows.
#[derive(Debug)]
pub struct ManifestScan {
    pub manifest: CorpusManifest,
    pub rejected: Vec<RejectedRow>,
}

fn resolve_transcript_path(dir: &Path, participant_id: &str) -> PathBuf {
    let csv_path = dir.join(format!("{participant_id}.csv"));
    if csv_path.exists() {
        return csv_path;
    }
    let txt_path = dir.join(format!("{participant_id}.txt"));
    if txt_path.exists() {
        return txt_path;
    }
    // Neither exists; keep the CSV name so validation can report it.
    csv_path
}

fn parse_row(
    record: &csv::StringRecord,
    line: usize,
    dir: &Path,
    seen: &mut HashSet<String>,
) -> Result<ManifestEntry, DatasetError> {
    if record.len() != 3 {
        return Err(DatasetError::MalformedRow {
            line,
            reason: format!("expected 3 columns, found {}", record.len()),
        });
    }
    let participant_id = record[0].trim().to_string();
    if participant_id.is_empty() {
        return Err(DatasetError::MalformedRow {
            line,
            reason: "empty participant_id".into(),
        });
    }
    if !seen.insert(participant_id.clone()) {
        return Err(DatasetError::MalformedRow {
            line,
            reason: format!("duplicate participant_id '{participant_id}'"),
        });
    }
    let split = Split::parse(&record[1]).ok_or_else(|| DatasetError::MalformedRow {
        line,
        reason: format!("unknown split '{}'", &record[1]),
    })?;
    let score_raw = record[2].trim();
    let gold_score = if score_raw.is_empty() {
        None
    } else {
        let value: i64 = score_raw.parse().map_err(|_| DatasetError::MalformedRow {
            line,
            reason: format!("phq8_score '{score_raw}' is not an integer"),
        })?;
        if !(0..=PHQ8_MAX as i64).contains(&value) {
            return Err(DatasetError::ScoreOutOfRange {
                participant_id,
                value,
            });
        }
        Some(value as u8)
    };
    Ok(ManifestEntry {
        transcript_path: resolve_transcript_path(dir, &participant_id),
        participant_id,
        gold_score,
        split,
    })
}

fn manifest_reader(path: &Path) -> Result<csv::Reader<fs::File>, DatasetError> {
    if !path.exists() {
        return Err(DatasetError::MissingFile(path.to_path_buf()));
    }
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| DatasetError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e),
        })
}

/// Load a labels file, failing on the first invalid row.
pub fn load_manifest(path: &Path) -> Result<CorpusManifest, DatasetError> {
    let mut reader = manifest_reader(path)?;
    let dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2; // 1-based, after the header
        let record = record.map_err(|e| DatasetError::MalformedRow {
            line,
            reason: e.to_string(),
        })?;
        entries.push(parse_row(&record, line, &dir, &mut seen)?);
    }
    Ok(CorpusManifest { entries })
}

/// Load a labels file tolerantly, keeping valid rows and collecting every
/// rejected one. Used by validation so a single bad row does not mask the
/// rest.
pub fn scan_manifest(path: &Path) -> Result<ManifestScan, DatasetError> {
    let mut reader = manifest_reader(path)?;
    let dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    let mut rejected = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let parsed = record
            .map_err(|e| DatasetError::MalformedRow {
                line,
                reason: e.to_string(),
            })
            .and_then(|rec| parse_row(&rec, line, &dir, &mut seen));
        match parsed {
            Ok(entry) => entries.push(entry),
            Err(err) => rejected.push(RejectedRow {
                line,
                reason: err.to_string(),
            }),
        }
    }
    Ok(ManifestScan {
        manifest: CorpusManifest { entries },
        rejected,
    })
}

fn normalize_speaker(raw: &str, warnings: &mut Vec<String>, line: usize) -> Speaker {
    match raw.trim().to_ascii_lowercase().as_str() {
        "interviewer" | "ellie" | "agent" => Speaker::Interviewer,
        "participant" | "patient" | "client" | "user" => Speaker::Participant,
        other => {
            warnings.push(format!(
                "line {line}: unknown speaker label '{other}', attributed to interviewer"
            ));
            Speaker::Interviewer
        }
    }
}

/// Load the transcript referenced by a manifest entry.
///
/// CSV files must carry a `speaker,text` header; plain-text files attribute
/// every line to the participant. Utterances that are empty after trimming
/// are dropped; a transcript with none left is an error.
pub fn load_transcript(entry: &ManifestEntry) -> Result<Transcript, DatasetError> {
    let path = &entry.transcript_path;
    if !path.exists() {
        return Err(DatasetError::MissingFile(path.clone()));
    }
    let mut warnings = Vec::new();
    let turns = if path.extension().is_some_and(|ext| ext == "csv") {
        read_csv_turns(path, &mut warnings)?
    } else {
        read_plain_turns(path)?
    };
    if turns.is_empty() {
        return Err(DatasetError::EmptyTranscript(path.clone()));
    }
    Ok(Transcript {
        participant_id: entry.participant_id.clone(),
        turns,
        gold_score: entry.gold_score,
        split: entry.split,
        warnings,
    })
}

fn read_csv_turns(path: &Path, warnings: &mut Vec<String>) -> Result<Vec<Turn>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| DatasetError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e),
        })?;
    let mut turns = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| DatasetError::MalformedLine {
            path: path.to_path_buf(),
            line,
            reason: e.to_string(),
        })?;
        if record.len() < 2 {
            return Err(DatasetError::MalformedLine {
                path: path.to_path_buf(),
                line,
                reason: format!("expected 2 columns (speaker,text), found {}", record.len()),
            });
        }
        let text = record[1].trim();
        if text.is_empty() {
            continue;
        }
        turns.push(Turn {
            speaker: normalize_speaker(&record[0], warnings, line),
            text: text.to_string(),
        });
    }
    Ok(turns)
}

fn read_plain_turns(path: &Path) -> Result<Vec<Turn>, DatasetError> {
    let content = fs::read_to_string(path).map_err(|e| DatasetError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(content
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| Turn {
            speaker: Speaker::Participant,
            text: l.to_string(),
        })
        .collect())
}

/// Write a transcript in the two-column CSV layout. Round-trips through
/// [`load_transcript`] on the (speaker, text) sequence.
pub fn write_transcript(path: &Path, turns: &[Turn]) -> Result<(), DatasetError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| DatasetError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })?;
    let io_err = |e: csv::Error| DatasetError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    };
    writer.write_record(["speaker", "text"]).map_err(io_err)?;
    for turn in turns {
        let speaker = match turn.speaker {
            Speaker::Interviewer => "interviewer",
            Speaker::Participant => "participant",
        };
        writer.write_record([speaker, &turn.text]).map_err(io_err)?;
    }
    writer.flush().map_err(|e| DatasetError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Severity-band counts over one split. Every entry in the split must carry
/// a gold score; all five bands are present in the result, zero-filled.
pub fn band_distribution(
    manifest: &CorpusManifest,
    split: Split,
) -> Result<BTreeMap<Band, usize>, DatasetError> {
    let mut counts: BTreeMap<Band, usize> = Band::ALL.iter().map(|&b| (b, 0)).collect();
    for entry in manifest.entries_in(split) {
        let score = entry
            .gold_score
            .ok_or_else(|| DatasetError::MissingGoldScore(entry.participant_id.clone()))?;
        let band = band_of(score as i64).expect("score validated at load");
        *counts.get_mut(&band).expect("all bands present") += 1;
    }
    Ok(counts)
}

pub mod fixtures {
    //! Synthetic corpora for offline tests and benches.
    //!
    //! Nothing here is drawn from E-DAIC; the utterances are invented and the
    //! only thing mirrored from the real corpus is the split/band shape.

    use super::*;

    /// Per-band counts matching the reference corpus distribution.
    pub fn reference_band_counts(split: Split) -> [(Band, usize); 5] {
        let (minimal, mild, moderate, mod_severe, severe) = match split {
            Split::Train => (77, 36, 26, 17, 7),
            Split::Val | Split::Test => (26, 15, 8, 6, 1),
            Split::Unassigned => (0, 0, 0, 0, 0),
        };
        [
            (Band::Minimal, minimal),
            (Band::Mild, mild),
            (Band::Moderate, moderate),
            (Band::ModeratelySevere, mod_severe),
            (Band::Severe, severe),
        ]
    }

    /// One synthetic corpus row.
    #[derive(Debug, Clone)]
    pub struct FixtureRow {
        pub participant_id: String,
        pub split: Split,
        pub gold_score: Option<u8>,
    }

    const PARTICIPANT_LINES: [&str; 6] = [
        "I have been keeping busy with work, mostly.",
        "Sleep has been all over the place lately.",
        "I used to enjoy hiking on weekends.",
        "My sister calls me every few days to check in.",
        "Some mornings it is hard to get started.",
        "Cooking dinner is still something I look forward to.",
    ];

    fn fixture_turns(participant_id: &str) -> Vec<Turn> {
        let mut turns = vec![Turn {
            speaker: Speaker::Interviewer,
            text: "How have things been since we last spoke?".to_string(),
        }];
        // Vary the utterance order per participant so prompts differ.
        let shift = participant_id
            .bytes()
            .fold(0usize, |acc, b| acc.wrapping_add(b as usize))
            % PARTICIPANT_LINES.len();
        for i in 0..4 {
            turns.push(Turn {
                speaker: Speaker::Participant,
                text: PARTICIPANT_LINES[(shift + i) % PARTICIPANT_LINES.len()].to_string(),
            });
        }
        turns
    }

    /// Write a labels file plus transcript files for the given rows.
    /// Returns the labels path.
    pub fn write_corpus(dir: &Path, rows: &[FixtureRow]) -> Result<PathBuf, DatasetError> {
        let labels_path = dir.join("labels.csv");
        let io_err = |path: &Path, e: std::io::Error| DatasetError::Io {
            path: path.to_path_buf(),
            source: e,
        };
        let mut labels = String::from("participant_id,split,phq8_score\n");
        for (idx, row) in rows.iter().enumerate() {
            let score = row
                .gold_score
                .map(|s| s.to_string())
                .unwrap_or_default();
            labels.push_str(&format!("{},{},{}\n", row.participant_id, row.split, score));
            let turns = fixture_turns(&row.participant_id);
            if idx % 7 == 3 {
                // A sprinkling of plain-text transcripts.
                let txt_path = dir.join(format!("{}.txt", row.participant_id));
                let body: String = turns
                    .iter()
                    .filter(|t| t.speaker == Speaker::Participant)
                    .map(|t| format!("{}\n", t.text))
                    .collect();
                fs::write(&txt_path, body).map_err(|e| io_err(&txt_path, e))?;
            } else {
                let csv_path = dir.join(format!("{}.csv", row.participant_id));
                write_transcript(&csv_path, &turns)?;
            }
        }
        fs::write(&labels_path, labels).map_err(|e| io_err(&labels_path, e))?;
        Ok(labels_path)
    }

    /// Build a corpus whose split sizes and per-band counts mirror the
    /// reference distribution (163 train / 56 val / 56 test). Scores cycle
    /// through each band's range so they are deterministic.
    pub fn write_reference_corpus(dir: &Path) -> Result<PathBuf, DatasetError> {
        let mut rows = Vec::new();
        let mut serial = 0usize;
        for split in [Split::Train, Split::Val, Split::Test] {
            for (band, count) in reference_band_counts(split) {
                let (lo, hi) = band.range();
                let width = (hi - lo + 1) as usize;
                for i in 0..count {
                    serial += 1;
                    rows.push(FixtureRow {
                        participant_id: format!("S{serial:04}"),
                        split,
                        gold_score: Some(lo + (i % width) as u8),
                    });
                }
            }
        }
        write_corpus(dir, &rows)
    }

    /// Small three-participant corpus used across tests: golds 15, 2, 10.
    pub fn write_small_corpus(dir: &Path) -> Result<PathBuf, DatasetError> {
        let rows = [("P001", 15u8), ("P002", 2), ("P003", 10)]
            .into_iter()
            .map(|(id, score)| FixtureRow {
                participant_id: id.to_string(),
                split: Split::Test,
                gold_score: Some(score),
            })
            .collect::<Vec<_>>();
        write_corpus(dir, &rows)
    }
}
