//! Core algorithms for confidence-gated, human-in-the-loop annotation of
//! search clarification panes.
//!
//! Everything here is pure and `no_std` (with `alloc`): label and task types,
//! prompt construction, response parsing, a deterministic simulated
//! annotator, evaluation metrics, ensemble aggregation with the accept/flag
//! rules, and Pareto-front threshold calibration. File formats, HTTP and the
//! CLI live in the `hitl` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod calibration;
pub mod ensemble;
pub mod label;
pub mod metrics;
pub mod prediction;
pub mod sim;
pub mod tasking;
pub mod unit;

pub use calibration::{
    enumerate_grid, evaluate_pair, pareto_front, select_best, CalibrationError, CalibrationOutcome,
    CalibrationPoint, Selection,
};
pub use ensemble::{
    aggregate, apply_hitl, decide, EnsembleError, EnsembleRecord, FinalLabel, FinalLabelSet,
    HitlDecision, LabelSource, ThresholdPair,
};
pub use label::{Label, LabelError, TaskKind};
pub use metrics::{ConfusionMatrix, MetricsError, MetricsReport, SensitivityStats};
pub use prediction::{parse_response, AnnotatorPrediction, GenerationParams, ParseError};
pub use sim::{ErrorSpread, SimProfile};
pub use unit::{AnnotationUnit, ClarificationPane, UnitError};
