//! Majority-vote aggregation of annotator predictions and the accept/flag
//! rules that gate each aggregated label.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{Label, TaskKind, SCALE_POINTS};
use crate::metrics::{self, MetricsError, MetricsReport};
use crate::prediction::AnnotatorPrediction;

/// Confidence credited to a human-supplied label when scoring CWA.
pub const HUMAN_CONFIDENCE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnsembleError {
    #[error("no predictions to aggregate")]
    Empty,
    #[error("prediction for unit {found_unit}/{found_task} mixed into {unit_id}/{task}")]
    Mixed { unit_id: String, task: TaskKind, found_unit: String, found_task: TaskKind },
}

/// The ensemble's view of one unit for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRecord {
    pub unit_id: String,
    pub task: TaskKind,
    /// `None` only when no annotator produced a valid prediction.
    pub aggregated_label: Option<Label>,
    pub mean_confidence: f64,
    /// Population standard deviation of the contributing confidences.
    pub confidence_sd: f64,
    pub contributing: Vec<AnnotatorPrediction>,
    /// Annotators that were asked, valid or not.
    pub expected_annotators: usize,
}

impl EnsembleRecord {
    /// Placeholder for a unit where every annotator failed.
    pub fn without_predictions(unit_id: impl Into<String>, task: TaskKind, expected: usize) -> Self {
        EnsembleRecord {
            unit_id: unit_id.into(),
            task,
            aggregated_label: None,
            mean_confidence: 0.0,
            confidence_sd: 0.0,
            contributing: Vec::new(),
            expected_annotators: expected,
        }
    }

    pub fn votes(&self) -> [usize; SCALE_POINTS] {
        let mut votes = [0; SCALE_POINTS];
        for p in &self.contributing {
            votes[p.label.index()] += 1;
        }
        votes
    }

    fn insufficient(&self) -> bool {
        self.contributing.is_empty() || (self.expected_annotators >= 2 && self.contributing.len() < 2)
    }
}

/// Aggregate one unit's predictions.
///
/// The label with the most votes wins. Ties go to the label whose voters
/// report the larger summed confidence, then to the lower label.
pub fn aggregate(
    predictions: &[AnnotatorPrediction],
    expected_annotators: usize,
) -> Result<EnsembleRecord, EnsembleError> {
    let first = predictions.first().ok_or(EnsembleError::Empty)?;
    if let Some(stray) = predictions
        .iter()
        .find(|p| p.unit_id != first.unit_id || p.task != first.task)
    {
        return Err(EnsembleError::Mixed {
            unit_id: first.unit_id.clone(),
            task: first.task,
            found_unit: stray.unit_id.clone(),
            found_task: stray.task,
        });
    }

    let mut votes = [0usize; SCALE_POINTS];
    let mut conf_sums = [0.0f64; SCALE_POINTS];
    for p in predictions {
        votes[p.label.index()] += 1;
        conf_sums[p.label.index()] += p.confidence;
    }
    // Ascending scan with strict improvement keeps the lower label on full ties.
    let mut best = 0;
    for c in 1..SCALE_POINTS {
        let more_votes = votes[c] > votes[best];
        let same_votes_more_conf = votes[c] == votes[best] && conf_sums[c] > conf_sums[best];
        if more_votes || same_votes_more_conf {
            best = c;
        }
    }

    let confidences: Vec<f64> = predictions.iter().map(|p| p.confidence).collect();
    Ok(EnsembleRecord {
        unit_id: first.unit_id.clone(),
        task: first.task,
        aggregated_label: Label::from_index(best),
        mean_confidence: metrics::mean(&confidences),
        confidence_sd: metrics::population_sd(&confidences),
        contributing: predictions.to_vec(),
        expected_annotators: expected_annotators.max(predictions.len()),
    })
}

/// Candidate cut-offs for auto-acceptance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPair {
    /// Minimum mean confidence, in percent.
    pub confidence_threshold: f64,
    /// Maximum confidence standard deviation.
    pub sd_threshold: f64,
}

impl ThresholdPair {
    pub fn new(confidence_threshold: f64, sd_threshold: f64) -> Self {
        ThresholdPair { confidence_threshold, sd_threshold }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitlDecision {
    AutoAccept,
    FlagHighVariance,
    FlagLowConfidence,
    FlagInsufficientPredictions,
}

impl HitlDecision {
    pub fn is_flagged(self) -> bool {
        self != HitlDecision::AutoAccept
    }
}

pub fn decide(record: &EnsembleRecord, thresholds: ThresholdPair) -> HitlDecision {
    if record.insufficient() {
        HitlDecision::FlagInsufficientPredictions
    } else if record.mean_confidence < thresholds.confidence_threshold {
        HitlDecision::FlagLowConfidence
    } else if record.confidence_sd > thresholds.sd_threshold {
        HitlDecision::FlagHighVariance
    } else {
        HitlDecision::AutoAccept
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Model,
    Human,
    /// Flagged, but no human label is available yet.
    Pending,
}

/// One line of the final label set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalLabel {
    pub unit_id: String,
    pub task: TaskKind,
    pub aggregated_label: Option<Label>,
    pub mean_confidence: f64,
    pub confidence_sd: f64,
    pub decision: HitlDecision,
    pub final_label: Option<Label>,
    pub source: LabelSource,
}

impl FinalLabel {
    /// Confidence used when scoring CWA over final labels.
    pub fn confidence(&self) -> f64 {
        match self.source {
            LabelSource::Human => HUMAN_CONFIDENCE,
            _ => self.mean_confidence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FinalLabelSet {
    pub entries: Vec<FinalLabel>,
}

impl FinalLabelSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn flagged(&self) -> usize {
        self.entries.iter().filter(|e| e.decision.is_flagged()).count()
    }

    pub fn pending(&self) -> impl Iterator<Item = &FinalLabel> {
        self.entries.iter().filter(|e| e.source == LabelSource::Pending)
    }

    pub fn is_complete(&self) -> bool {
        self.pending().next().is_none()
    }

    /// Percentage of units that skipped human review; `None` for an empty set.
    pub fn her(&self) -> Option<f64> {
        metrics::her(self.flagged(), self.len()).ok()
    }

    /// Fill pending entries from `gold`; returns how many were resolved.
    pub fn resolve_pending<F>(&mut self, mut gold: F) -> usize
    where
        F: FnMut(&str, TaskKind) -> Option<Label>,
    {
        let mut resolved = 0;
        for e in self.entries.iter_mut().filter(|e| e.source == LabelSource::Pending) {
            if let Some(label) = gold(&e.unit_id, e.task) {
                e.final_label = Some(label);
                e.source = LabelSource::Human;
                resolved += 1;
            }
        }
        resolved
    }

    /// Metrics of the final labels against `gold`, over entries that have
    /// both a final label and a gold label. HER covers every entry.
    pub fn metrics<F>(&self, mut gold: F) -> Result<MetricsReport, MetricsError>
    where
        F: FnMut(&str, TaskKind) -> Option<Label>,
    {
        let mut pred = Vec::new();
        let mut truth = Vec::new();
        let mut conf = Vec::new();
        for e in &self.entries {
            if let (Some(f), Some(g)) = (e.final_label, gold(&e.unit_id, e.task)) {
                pred.push(f);
                truth.push(g);
                conf.push(e.confidence());
            }
        }
        let report = MetricsReport::compute(&pred, &truth, Some(&conf))?;
        Ok(match self.her() {
            Some(h) => report.with_her(h),
            None => report,
        })
    }
}

/// Apply the accept/flag rules and substitute human labels for flagged units.
///
/// Flagged units whose human label is not available stay `Pending`; they are
/// never silently accepted.
pub fn apply_hitl<F>(records: &[EnsembleRecord], thresholds: ThresholdPair, mut gold: F) -> FinalLabelSet
where
    F: FnMut(&str, TaskKind) -> Option<Label>,
{
    let entries = records
        .iter()
        .map(|r| {
            let decision = decide(r, thresholds);
            let (final_label, source) = if decision.is_flagged() {
                match gold(&r.unit_id, r.task) {
                    Some(label) => (Some(label), LabelSource::Human),
                    None => (None, LabelSource::Pending),
                }
            } else {
                (r.aggregated_label, LabelSource::Model)
            };
            FinalLabel {
                unit_id: r.unit_id.clone(),
                task: r.task,
                aggregated_label: r.aggregated_label,
                mean_confidence: r.mean_confidence,
                confidence_sd: r.confidence_sd,
                decision,
                final_label,
                source,
            }
        })
        .collect();
    FinalLabelSet { entries }
}
