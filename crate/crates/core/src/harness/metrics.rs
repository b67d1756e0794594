use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IrisError, Result};
use crate::types::{Aspect, Domain};

/// Judges report scores on a grid of this many steps per point, which
/// keeps `6 − raw` exact in binary floating point.
pub const SCORE_STEPS_PER_POINT: f64 = 1024.0;

/// Rounds a score onto the judging grid.
pub fn quantize_score(x: f64) -> f64 {
    (x * SCORE_STEPS_PER_POINT).round() / SCORE_STEPS_PER_POINT
}

fn check_score(x: f64) -> Result<()> {
    if !(1.0..=5.0).contains(&x) {
        return Err(IrisError::ScoreOutOfRange(x));
    }
    Ok(())
}

/// Positive-aspect scores pass through; negative-aspect scores become
/// `6 − raw`.
pub fn invert(raw: f64, aspect: Aspect) -> Result<f64> {
    check_score(raw)?;
    Ok(match aspect {
        Aspect::Positive => raw,
        Aspect::Negative => 6.0 - raw,
    })
}

/// Sum of the adjusted positive and negative aspect scores, in `[2, 10]`.
pub fn domain_score(pos_adjusted: f64, neg_adjusted: f64) -> Result<f64> {
    check_score(pos_adjusted)?;
    check_score(neg_adjusted)?;
    Ok(pos_adjusted + neg_adjusted)
}

/// Mean and population variance.
pub fn aggregate(scores: &[f64]) -> Result<(f64, f64)> {
    if scores.is_empty() {
        return Err(IrisError::InvalidArgument("aggregate of no scores".into()));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeKind {
    Mock,
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub question_id: String,
    pub domain: Domain,
    pub aspect: Aspect,
    pub raw: f64,
    pub adjusted: f64,
    pub judge: JudgeKind,
}

impl ScoreRecord {
    pub fn new(
        question_id: impl Into<String>,
        domain: Domain,
        aspect: Aspect,
        raw: f64,
        judge: JudgeKind,
    ) -> Result<Self> {
        Ok(ScoreRecord {
            question_id: question_id.into(),
            domain,
            aspect,
            raw,
            adjusted: invert(raw, aspect)?,
            judge,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ScoreRow {
    question_id: String,
    domain: Domain,
    aspect: Aspect,
    raw: f64,
    adjusted: f64,
}

/// CSV with columns `question_id, domain, aspect, raw, adjusted`.
pub fn write_scores(path: &Path, scores: &[ScoreRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in scores {
        w.serialize(ScoreRow {
            question_id: s.question_id.clone(),
            domain: s.domain,
            aspect: s.aspect,
            raw: s.raw,
            adjusted: s.adjusted,
        })?;
    }
    w.flush().map_err(|e| IrisError::io(path, e))
}

/// Reads a score CSV; the judge kind is not stored in the file.
pub fn read_scores(path: &Path, judge: JudgeKind) -> Result<Vec<ScoreRecord>> {
    if !path.exists() {
        return Err(IrisError::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize::<ScoreRow>() {
        let row = row?;
        let rec = ScoreRecord::new(row.question_id, row.domain, row.aspect, row.raw, judge)?;
        if rec.adjusted != row.adjusted {
            return Err(IrisError::InvalidArgument(format!(
                "score row for `{}` has adjusted {} but raw {}",
                rec.question_id, row.adjusted, row.raw
            )));
        }
        out.push(rec);
    }
    Ok(out)
}
