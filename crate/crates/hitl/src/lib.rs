//! IO side of the annotation pipeline: corpus files, annotator adapters,
//! the review queue service and the orchestrating CLI.

pub mod annotators;
pub mod corpus;
pub mod orchestrator;
pub mod review;
pub mod synth;
pub mod templates;
