//! Query/clarification-pane pairs, the unit every label attaches to.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{Label, TaskKind};

pub const MIN_OPTIONS: usize = 2;
pub const MAX_OPTIONS: usize = 5;
/// Smallest pane group a query should carry for list-wise rating.
pub const MIN_PANES_PER_QUERY: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UnitError {
    #[error("pane {pane_id}: options length {len} < {MIN_OPTIONS}")]
    TooFewOptions { pane_id: String, len: usize },
    #[error("pane {pane_id}: options length {len} > {MAX_OPTIONS}")]
    TooManyOptions { pane_id: String, len: usize },
    #[error("pane {pane_id}: option {position} is empty")]
    EmptyOption { pane_id: String, position: usize },
    #[error("pane {pane_id}: empty question")]
    EmptyQuestion { pane_id: String },
}

/// A multi-choice clarification question with its ordered options.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClarificationPane {
    pub pane_id: String,
    pub question: String,
    pub options: Vec<String>,
}

impl ClarificationPane {
    pub fn validate(&self) -> Result<(), UnitError> {
        let len = self.options.len();
        if len < MIN_OPTIONS {
            return Err(UnitError::TooFewOptions { pane_id: self.pane_id.clone(), len });
        }
        if len > MAX_OPTIONS {
            return Err(UnitError::TooManyOptions { pane_id: self.pane_id.clone(), len });
        }
        if self.question.trim().is_empty() {
            return Err(UnitError::EmptyQuestion { pane_id: self.pane_id.clone() });
        }
        if let Some(position) = self.options.iter().position(|o| o.trim().is_empty()) {
            return Err(UnitError::EmptyOption { pane_id: self.pane_id.clone(), position });
        }
        Ok(())
    }
}

/// One query shown with one clarification pane, plus any gold labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationUnit {
    pub unit_id: String,
    pub query_id: String,
    pub query: String,
    pub pane: ClarificationPane,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub gold: BTreeMap<TaskKind, Label>,
}

impl AnnotationUnit {
    pub fn gold(&self, task: TaskKind) -> Option<Label> {
        self.gold.get(&task).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn pane(options: &[&str]) -> ClarificationPane {
        ClarificationPane {
            pane_id: "p1".into(),
            question: "Which one?".into(),
            options: options.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn option_bounds() {
        assert!(pane(&["a", "b"]).validate().is_ok());
        assert!(pane(&["a", "b", "c", "d", "e"]).validate().is_ok());
        let err = pane(&["a", "b", "c", "d", "e", "f"]).validate().unwrap_err();
        assert_eq!(err.to_string(), "pane p1: options length 6 > 5");
        assert!(matches!(pane(&["a"]).validate(), Err(UnitError::TooFewOptions { .. })));
        assert!(matches!(
            pane(&["a", " "]).validate(),
            Err(UnitError::EmptyOption { position: 1, .. })
        ));
        let mut p = pane(&["a", "b"]);
        p.question = String::new();
        assert!(p.validate().is_err());
    }
}
