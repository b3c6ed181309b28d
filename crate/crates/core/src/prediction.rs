//! Annotator predictions and the trailer grammar used to read them out of
//! model responses.
//!
//! A response carries one trailer line per rated item:
//!
//! ```text
//! LABEL=<1-5> CONFIDENCE=<0-100>
//! ```
//!
//! Anything else in the response is ignored. Out-of-range values are
//! reported as failures; nothing is clamped.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{Label, TaskKind};

/// Default sampling temperatures for sensitivity sweeps.
pub const DEFAULT_TEMPERATURES: [f64; 3] = [0.0, 0.5, 1.0];
pub const DEFAULT_MAX_TOKENS: u32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams { temperature: 0.0, max_tokens: DEFAULT_MAX_TOKENS }
    }
}

/// One annotator's label and verbalized confidence for one unit and task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorPrediction {
    pub annotator_id: String,
    pub unit_id: String,
    pub task: TaskKind,
    pub label: Label,
    /// Percentage in `[0, 100]`, kept unrounded.
    pub confidence: f64,
    pub raw_response: String,
    pub params: GenerationParams,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("no LABEL=/CONFIDENCE= trailer found")]
    NoTrailer,
    #[error("expected {expected} trailer lines, found {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error("label {0} outside the 1-5 scale")]
    LabelOutOfRange(i64),
    #[error("confidence {0} outside [0, 100]")]
    ConfidenceOutOfRange(f64),
    #[error("malformed trailer `{0}`")]
    Malformed(String),
}

/// Extract exactly `expected_items` `(label, confidence)` pairs, in the order
/// the trailers appear.
pub fn parse_response(raw: &str, expected_items: usize) -> Result<Vec<(Label, f64)>, ParseError> {
    let mut found = Vec::new();
    for line in raw.lines() {
        if let Some(pair) = parse_trailer(line)? {
            found.push(pair);
        }
    }
    if found.is_empty() {
        return Err(ParseError::NoTrailer);
    }
    if found.len() != expected_items {
        return Err(ParseError::CountMismatch { expected: expected_items, found: found.len() });
    }
    Ok(found)
}

fn parse_trailer(line: &str) -> Result<Option<(Label, f64)>, ParseError> {
    let Some(start) = line.find("LABEL=") else {
        return Ok(None);
    };
    let malformed = || ParseError::Malformed(line.trim().into());
    let rest = &line[start + "LABEL=".len()..];
    let mut parts = rest.split_whitespace();
    let label_text = parts.next().ok_or_else(malformed)?;
    let conf_field = parts.next().ok_or_else(malformed)?;
    // Trailing punctuation from chatty models is tolerated, extra words are not.
    if parts.next().is_some() {
        return Err(malformed());
    }
    let conf_text = conf_field.strip_prefix("CONFIDENCE=").ok_or_else(malformed)?;
    let conf_text = conf_text.trim_end_matches(['.', '%']);

    let label_value: i64 = label_text.trim_end_matches(',').parse().map_err(|_| malformed())?;
    let label = Label::new(label_value).map_err(|_| ParseError::LabelOutOfRange(label_value))?;
    let confidence: f64 = conf_text.parse().map_err(|_| malformed())?;
    if !(0.0..=100.0).contains(&confidence) {
        return Err(ParseError::ConfidenceOutOfRange(confidence));
    }
    Ok(Some((label, confidence)))
}

/// Render the trailer line for a single item.
pub fn format_trailer(label: Label, confidence: f64) -> String {
    alloc::format!("LABEL={label} CONFIDENCE={confidence}")
}
