//! Line-delimited JSON dataset records.
//!
//! QA answers are token index pairs, inclusive on both ends, over the
//! whitespace tokenization of the paragraph. Classification records carry one
//! sentence or a pair plus a class index.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenize::token_count;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {source}")]
    BadRecord {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: answer span [{start}, {end}] is not a valid token range of a {len}-token paragraph")]
    BadSpan {
        line: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One span-extraction example.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct QaRecord {
    pub id: String,
    pub question: String,
    pub paragraph: String,
    /// First answer token, index into the tokenized paragraph.
    pub answer_start_token: usize,
    /// Last answer token, inclusive.
    pub answer_end_token: usize,
}

/// One classification example. `sentence2` is absent for single-sentence
/// tasks.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ClsRecord {
    pub id: String,
    pub sentence1: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence2: Option<String>,
    pub label: usize,
}

/// An unlabeled QA input, as consumed by prediction. Labeled records parse
/// too; the answer fields are ignored.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct QaInput {
    pub id: String,
    pub question: String,
    pub paragraph: String,
}

/// An unlabeled classification input.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ClsInput {
    pub id: String,
    pub sentence1: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence2: Option<String>,
}

fn parse_lines<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, DataError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record =
            serde_json::from_str(line).map_err(|source| DataError::BadRecord { line: i + 1, source })?;
        out.push(record);
    }
    Ok(out)
}

/// Loads labeled QA records, validating each answer span against the
/// paragraph's token count.
pub fn load_qa(path: &Path) -> Result<Vec<QaRecord>, DataError> {
    let text = fs::read_to_string(path)?;
    let records: Vec<QaRecord> = parse_lines(&text)?;
    let mut seen = 0usize;
    for record in &records {
        // Recover the 1-based source line for error reporting: records are in
        // file order and blank lines were skipped.
        seen += 1;
        let len = token_count(&record.paragraph);
        if record.answer_start_token > record.answer_end_token || record.answer_end_token >= len {
            return Err(DataError::BadSpan {
                line: nth_content_line(&text, seen),
                start: record.answer_start_token,
                end: record.answer_end_token,
                len,
            });
        }
    }
    Ok(records)
}

fn nth_content_line(text: &str, n: usize) -> usize {
    let mut seen = 0;
    for (i, line) in text.lines().enumerate() {
        if !line.trim().is_empty() {
            seen += 1;
            if seen == n {
                return i + 1;
            }
        }
    }
    0
}

/// Loads labeled classification records.
pub fn load_cls(path: &Path) -> Result<Vec<ClsRecord>, DataError> {
    let text = fs::read_to_string(path)?;
    parse_lines(&text)
}

/// Loads QA inputs for prediction; answer fields, if present, are ignored.
pub fn load_qa_inputs(path: &Path) -> Result<Vec<QaInput>, DataError> {
    let text = fs::read_to_string(path)?;
    parse_lines(&text)
}

/// Loads classification inputs for prediction; labels, if present, are
/// ignored.
pub fn load_cls_inputs(path: &Path) -> Result<Vec<ClsInput>, DataError> {
    let text = fs::read_to_string(path)?;
    parse_lines(&text)
}

/// Writes records as one JSON object per line.
pub fn save_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), DataError> {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
