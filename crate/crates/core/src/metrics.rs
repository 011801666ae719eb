//! Agreement metrics for PHQ-8 severity prediction.
//!
//! Provides the concordance correlation coefficient (CCC) and mean absolute
//! error (MAE) over prediction/gold score vectors, the five-band severity
//! mapping, and an aggregate [`EvalSummary`] with band confusion and
//! cutoff-10 binary accuracy.
//!
//! CCC uses population moments (divide by N) for variance and covariance,
//! Lin's original convention. Sums are accumulated with Neumaier
//! compensation so the functions stay accurate for vectors far larger than
//! the corpora they were written for.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum PHQ-8 total score.
pub const PHQ8_MAX: u8 = 24;

/// Clinical cutoff: scores at or above this count as a Depressed verdict.
pub const BINARY_CUTOFF: u8 = 10;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("need at least {need} pairs, got {got}")]
    InsufficientData { need: usize, got: usize },
    #[error("length mismatch: {predictions} predictions vs {golds} golds")]
    LengthMismatch { predictions: usize, golds: usize },
    #[error("score {0} outside the PHQ-8 range 0-24")]
    ScoreOutOfRange(i64),
    #[error("CCC undefined: both sequences are constant with equal means")]
    DegenerateInput,
}

/// PHQ-8 severity band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Minimal,
    Mild,
    Moderate,
    ModeratelySevere,
    Severe,
}

impl Band {
    pub const ALL: [Band; 5] = [
        Band::Minimal,
        Band::Mild,
        Band::Moderate,
        Band::ModeratelySevere,
        Band::Severe,
    ];

    /// Inclusive score range covered by this band.
    pub fn range(self) -> (u8, u8) {
        match self {
            Band::Minimal => (0, 4),
            Band::Mild => (5, 9),
            Band::Moderate => (10, 14),
            Band::ModeratelySevere => (15, 19),
            Band::Severe => (20, 24),
        }
    }

    /// Human-readable label, as used in prompts and text reports.
    pub fn label(self) -> &'static str {
        match self {
            Band::Minimal => "Minimal",
            Band::Mild => "Mild",
            Band::Moderate => "Moderate",
            Band::ModeratelySevere => "Moderately Severe",
            Band::Severe => "Severe",
        }
    }

    /// Row/column index in a band confusion matrix.
    pub fn index(self) -> usize {
        match self {
            Band::Minimal => 0,
            Band::Mild => 1,
            Band::Moderate => 2,
            Band::ModeratelySevere => 3,
            Band::Severe => 4,
        }
    }
}

impl std::fmt::Display for Band {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Map a PHQ-8 score to its severity band. Scores outside 0-24 are rejected.
pub fn band_of(score: i64) -> Result<Band, MetricsError> {
    match score {
        0..=4 => Ok(Band::Minimal),
        5..=9 => Ok(Band::Mild),
        10..=14 => Ok(Band::Moderate),
        15..=19 => Ok(Band::ModeratelySevere),
        20..=24 => Ok(Band::Severe),
        other => Err(MetricsError::ScoreOutOfRange(other)),
    }
}

/// A validated prediction/gold vector pair.
///
/// `excluded_count` records pipeline runs that failed and therefore do not
/// appear in either vector; it travels with the pair so evaluation reports
/// cannot silently drop failures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalPairs {
    predictions: Vec<u8>,
    golds: Vec<u8>,
    excluded_count: usize,
}

impl EvalPairs {
    pub fn new(
        predictions: Vec<u8>,
        golds: Vec<u8>,
        excluded_count: usize,
    ) -> Result<Self, MetricsError> {
        if predictions.len() != golds.len() {
            return Err(MetricsError::LengthMismatch {
                predictions: predictions.len(),
                golds: golds.len(),
            });
        }
        for &v in predictions.iter().chain(golds.iter()) {
            if v > PHQ8_MAX {
                return Err(MetricsError::ScoreOutOfRange(v as i64));
            }
        }
        Ok(Self {
            predictions,
            golds,
            excluded_count,
        })
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    pub fn predictions(&self) -> &[u8] {
        &self.predictions
    }

    pub fn golds(&self) -> &[u8] {
        &self.golds
    }

    pub fn excluded_count(&self) -> usize {
        self.excluded_count
    }
}

// Neumaier-compensated summation.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn mean(values: &[u8]) -> f64 {
    compensated_sum(values.iter().map(|&v| v as f64)) / values.len() as f64
}

/// Concordance correlation coefficient between predictions and golds.
///
/// CCC = 2*cov / (var_pred + var_gold + (mean_pred - mean_gold)^2), with
/// population moments. When both sequences are constant with equal means the
/// denominator is exactly zero and the value is undefined; that case is
/// surfaced as [`MetricsError::DegenerateInput`] rather than a number.
pub fn ccc(pairs: &EvalPairs) -> Result<f64, MetricsError> {
    let n = pairs.len();
    if n < 2 {
        return Err(MetricsError::InsufficientData { need: 2, got: n });
    }
    let nf = n as f64;
    let mean_pred = mean(&pairs.predictions);
    let mean_gold = mean(&pairs.golds);
    let var_pred = compensated_sum(
        pairs
            .predictions
            .iter()
            .map(|&p| (p as f64 - mean_pred).powi(2)),
    ) / nf;
    let var_gold =
        compensated_sum(pairs.golds.iter().map(|&g| (g as f64 - mean_gold).powi(2))) / nf;
    let cov = compensated_sum(
        pairs
            .predictions
            .iter()
            .zip(pairs.golds.iter())
            .map(|(&p, &g)| (p as f64 - mean_pred) * (g as f64 - mean_gold)),
    ) / nf;
    let gap = mean_pred - mean_gold;
    let denom = var_pred + var_gold + gap * gap;
    if denom == 0.0 {
        return Err(MetricsError::DegenerateInput);
    }
    Ok((2.0 * cov / denom).clamp(-1.0, 1.0))
}

/// Mean absolute error between predictions and golds.
pub fn mae(pairs: &EvalPairs) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let total = compensated_sum(
        pairs
            .predictions
            .iter()
            .zip(pairs.golds.iter())
            .map(|(&p, &g)| (p as f64 - g as f64).abs()),
    );
    Ok(total / pairs.len() as f64)
}

/// Aggregate evaluation result over one prediction/gold pair set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub ccc: f64,
    pub mae: f64,
    pub n: usize,
    pub excluded_count: usize,
    /// Counts indexed `[gold band][predicted band]` in band order
    /// Minimal, Mild, Moderate, Moderately Severe, Severe.
    pub band_confusion: [[u32; 5]; 5],
    /// Fraction of pairs where prediction and gold fall on the same side of
    /// the cutoff-10 Depressed/NotDepressed rule.
    pub binary_accuracy: f64,
}

/// Compute CCC, MAE, band confusion and binary accuracy in one pass.
pub fn summarize(pairs: &EvalPairs) -> Result<EvalSummary, MetricsError> {
    let ccc = ccc(pairs)?;
    let mae = mae(pairs)?;
    let mut confusion = [[0u32; 5]; 5];
    let mut binary_hits = 0usize;
    for (&p, &g) in pairs.predictions.iter().zip(pairs.golds.iter()) {
        let gold_band = band_of(g as i64).expect("validated in EvalPairs::new");
        let pred_band = band_of(p as i64).expect("validated in EvalPairs::new");
        confusion[gold_band.index()][pred_band.index()] += 1;
        if (p >= BINARY_CUTOFF) == (g >= BINARY_CUTOFF) {
            binary_hits += 1;
        }
    }
    Ok(EvalSummary {
        ccc,
        mae,
        n: pairs.len(),
        excluded_count: pairs.excluded_count,
        band_confusion: confusion,
        binary_accuracy: binary_hits as f64 / pairs.len() as f64,
    })
}
