use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IrisError, Result};
use crate::types::{Domain, UNKNOWN_TOPIC};

fn unknown_topic() -> String {
    UNKNOWN_TOPIC.to_string()
}

/// One line of a question file: `{"id", "domain", "topic", "text"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionRecord {
    pub id: String,
    pub domain: Domain,
    #[serde(default = "unknown_topic")]
    pub topic: String,
    pub text: String,
}

impl QuestionRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.text.is_empty() {
            return Err("empty text".into());
        }
        if self.topic.is_empty() {
            return Err("empty topic".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

/// Valid records plus a report of rejected lines (1-based line numbers).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionSet {
    pub records: Vec<QuestionRecord>,
    pub rejected: Vec<LineError>,
}

pub fn parse_questions(text: &str) -> QuestionSet {
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let outcome = serde_json::from_str::<QuestionRecord>(line)
            .map_err(|e| e.to_string())
            .and_then(|r| r.validate().map(|_| r))
            .and_then(|r| {
                if ids.insert(r.id.clone()) {
                    Ok(r)
                } else {
                    Err(format!("duplicate id `{}`", r.id))
                }
            });
        match outcome {
            Ok(r) => records.push(r),
            Err(message) => rejected.push(LineError { line: line_no, message }),
        }
    }
    QuestionSet { records, rejected }
}

/// Reads a JSONL question file. Malformed lines are skipped and reported;
/// a file without any valid record is an error.
pub fn load_questions(path: &Path) -> Result<QuestionSet> {
    let text = fs::read_to_string(path).map_err(|e| IrisError::io(path, e))?;
    let set = parse_questions(&text);
    for e in &set.rejected {
        log::warn!("{}:{}: skipped: {}", path.display(), e.line, e.message);
    }
    if set.records.is_empty() {
        return Err(IrisError::EmptyQuestions);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_and_invalid_lines() {
        let text = r#"{"id":"q1","domain":"E","topic":"travel","text":"Where to?"}
{"id":"q2","domain":"O","text":"Why?"}
{"id":"q3","domain":"E","topic":"work"}

{"id":"q4","domain":"X","topic":"work","text":"a"}
{"id":"q1","domain":"E","topic":"travel","text":"again"}
{"id":"q5","domain":"C","topic":"work","text":"Plan?"}
"#;
        let set = parse_questions(text);
        assert_eq!(set.records.len(), 3);
        assert_eq!(set.records[1].topic, UNKNOWN_TOPIC);
        let lines: Vec<usize> = set.rejected.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![3, 5, 6]);
    }

    #[test]
    fn empty_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.jsonl");
        fs::write(&p, "").unwrap();
        assert!(matches!(load_questions(&p), Err(IrisError::EmptyQuestions)));
        assert!(matches!(
            load_questions(&dir.path().join("missing.jsonl")),
            Err(IrisError::MissingFile(_))
        ));
    }
}
