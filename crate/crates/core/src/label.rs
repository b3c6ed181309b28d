//! Ordinal labels and the five labelling dimensions.

use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of points on the rating scale.
pub const SCALE_POINTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("label {0} outside the 1-5 scale")]
    OutOfRange(i64),
    #[error("unknown task kind `{0}`")]
    UnknownTask(alloc::string::String),
}

/// A rating on the 1-5 ordinal scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct Label(u8);

impl Label {
    pub const MIN: Label = Label(1);
    pub const MAX: Label = Label(5);

    pub fn new(value: i64) -> Result<Self, LabelError> {
        if (1..=SCALE_POINTS as i64).contains(&value) {
            Ok(Label(value as u8))
        } else {
            Err(LabelError::OutOfRange(value))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// Zero-based position on the scale, used for matrix indexing.
    pub fn index(self) -> usize {
        usize::from(self.0 - 1)
    }

    pub fn from_index(index: usize) -> Option<Self> {
        (index < SCALE_POINTS).then(|| Label(index as u8 + 1))
    }

    /// All five labels in ascending order.
    pub fn all() -> impl Iterator<Item = Label> {
        (1..=SCALE_POINTS as u8).map(Label)
    }
}

impl TryFrom<i64> for Label {
    type Error = LabelError;
    fn try_from(value: i64) -> Result<Self, Self::Error> {
        Label::new(value)
    }
}

impl From<Label> for u8 {
    fn from(label: Label) -> u8 {
        label.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The labelling dimensions. Preference is rated list-wise over every pane of
/// a query; the others are rated on a single query/pane pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Preference,
    Quality,
    Coverage,
    Diversity,
    OptionOrder,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::Preference,
        TaskKind::Quality,
        TaskKind::Coverage,
        TaskKind::Diversity,
        TaskKind::OptionOrder,
    ];

    pub fn is_listwise(self) -> bool {
        matches!(self, TaskKind::Preference)
    }

    /// Stable lowercase key used in file names and records.
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Preference => "preference",
            TaskKind::Quality => "quality",
            TaskKind::Coverage => "coverage",
            TaskKind::Diversity => "diversity",
            TaskKind::OptionOrder => "option_order",
        }
    }

    pub fn parse(s: &str) -> Result<Self, LabelError> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| LabelError::UnknownTask(s.into()))
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
