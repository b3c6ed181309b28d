//! Threshold calibration on a gold-labelled subset.
//!
//! Candidate `(confidence, sd)` pairs come from a grid spanning the observed
//! ensemble statistics. Each pair is scored by the weighted kappa of the
//! post-substitution labels and by the fraction of units sent to review. The
//! operating point is the cheapest non-dominated pair that still meets the
//! kappa floor.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::{apply_hitl, EnsembleRecord, ThresholdPair};
use crate::label::{Label, TaskKind};
use crate::metrics::{MetricsError, MetricsReport};

pub const CONFIDENCE_STEP: f64 = 5.0;
pub const SD_STEP: f64 = 2.0;
/// Minimum acceptable weighted kappa.
pub const DEFAULT_KW_MIN: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("inverted {axis} range: min {min} > max {max}")]
    InvertedRange { axis: &'static str, min: f64, max: f64 },
    #[error("non-finite {axis} bound")]
    NonFinite { axis: &'static str },
    #[error("no records with predictions to calibrate on")]
    NoRecords,
    #[error("gold label missing for unit {unit_id}")]
    MissingGold { unit_id: String },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn axis_values(min: f64, max: f64, step: f64, snap_up: bool, axis: &'static str) -> Result<Vec<f64>, CalibrationError> {
    if !min.is_finite() || !max.is_finite() {
        return Err(CalibrationError::NonFinite { axis });
    }
    if min > max {
        return Err(CalibrationError::InvertedRange { axis, min, max });
    }
    let first = if snap_up { libm::ceil(min / step) } else { libm::floor(min / step) } as i64;
    let mut values = Vec::new();
    let mut k = first;
    loop {
        let v = k as f64 * step;
        if v > max {
            break;
        }
        values.push(v);
        k += 1;
    }
    if values.last() != Some(&max) {
        values.push(max);
    }
    Ok(values)
}

/// Candidate threshold pairs.
///
/// Confidence: multiples of 5 from `ceil5(min)` up to `max`, plus `max`.
/// SD: multiples of 2 from `floor2(min)` up to `max`, plus `max`.
/// Pairs are ordered by confidence, then SD.
pub fn enumerate_grid(
    observed_conf: (f64, f64),
    observed_sd: (f64, f64),
) -> Result<Vec<ThresholdPair>, CalibrationError> {
    let conf = axis_values(observed_conf.0, observed_conf.1, CONFIDENCE_STEP, true, "confidence")?;
    let sd = axis_values(observed_sd.0, observed_sd.1, SD_STEP, false, "sd")?;
    Ok(conf
        .iter()
        .flat_map(|&c| sd.iter().map(move |&s| ThresholdPair::new(c, s)))
        .collect())
}

/// Observed `(min, max)` of mean confidence and SD over records that carry
/// at least one prediction.
pub fn observed_ranges(records: &[EnsembleRecord]) -> Option<((f64, f64), (f64, f64))> {
    let mut iter = records.iter().filter(|r| !r.contributing.is_empty());
    let first = iter.next()?;
    let mut conf = (first.mean_confidence, first.mean_confidence);
    let mut sd = (first.confidence_sd, first.confidence_sd);
    for r in iter {
        conf = (conf.0.min(r.mean_confidence), conf.1.max(r.mean_confidence));
        sd = (sd.0.min(r.confidence_sd), sd.1.max(r.confidence_sd));
    }
    Some((conf, sd))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub thresholds: ThresholdPair,
    pub kw: f64,
    /// Flagged fraction in `[0, 1]`.
    pub human_effort: f64,
    pub flagged: usize,
    pub total: usize,
    pub metrics: MetricsReport,
    pub on_front: bool,
}

/// Score one threshold pair: substitute gold for every flagged unit and
/// compare the result with gold.
pub fn evaluate_pair<F>(
    pair: ThresholdPair,
    records: &[EnsembleRecord],
    mut gold: F,
) -> Result<CalibrationPoint, CalibrationError>
where
    F: FnMut(&str, TaskKind) -> Option<Label>,
{
    if records.is_empty() {
        return Err(CalibrationError::NoRecords);
    }
    let set = apply_hitl(records, pair, &mut gold);
    if let Some(p) = set.pending().next() {
        return Err(CalibrationError::MissingGold { unit_id: p.unit_id.clone() });
    }
    let mut pred = Vec::with_capacity(set.len());
    let mut truth = Vec::with_capacity(set.len());
    let mut conf = Vec::with_capacity(set.len());
    for e in &set.entries {
        let g = gold(&e.unit_id, e.task)
            .ok_or_else(|| CalibrationError::MissingGold { unit_id: e.unit_id.clone() })?;
        // Accepted entries always carry the aggregated label; flagged ones the gold.
        pred.push(e.final_label.unwrap_or(g));
        truth.push(g);
        conf.push(e.confidence());
    }
    let flagged = set.flagged();
    let total = set.len();
    let metrics = MetricsReport::compute(&pred, &truth, Some(&conf))?
        .with_her(crate::metrics::her(flagged, total)?);
    Ok(CalibrationPoint {
        thresholds: pair,
        kw: metrics.kw,
        human_effort: flagged as f64 / total as f64,
        flagged,
        total,
        metrics,
        on_front: false,
    })
}

/// `a` dominates `b`: no worse on both axes, strictly better on one.
pub fn dominates(a: &CalibrationPoint, b: &CalibrationPoint) -> bool {
    a.kw >= b.kw
        && a.human_effort <= b.human_effort
        && (a.kw > b.kw || a.human_effort < b.human_effort)
}

fn by_thresholds(a: &ThresholdPair, b: &ThresholdPair) -> Ordering {
    a.confidence_threshold
        .total_cmp(&b.confidence_threshold)
        .then(a.sd_threshold.total_cmp(&b.sd_threshold))
}

/// Indices of the non-dominated points, ordered by increasing effort.
///
/// Points sharing both coordinates collapse to the one with the lowest
/// confidence threshold, then lowest SD threshold.
pub fn pareto_front(points: &[CalibrationPoint]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&points[i], &points[j]);
        a.human_effort
            .total_cmp(&b.human_effort)
            .then(b.kw.total_cmp(&a.kw))
            .then(by_thresholds(&a.thresholds, &b.thresholds))
    });
    let mut front = Vec::new();
    let mut best_kw = f64::NEG_INFINITY;
    for i in order {
        if points[i].kw > best_kw {
            best_kw = points[i].kw;
            front.push(i);
        }
    }
    front
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub thresholds: ThresholdPair,
    /// Index into the evaluated points.
    pub point: usize,
    pub meets_constraint: bool,
}

/// Pick the operating point from `front` (indices into `points`).
///
/// Cheapest front point with `kw >= kw_min`; ties go to higher kappa, then
/// lower confidence threshold, then lower SD threshold. Without any such
/// point, the highest-kappa point is returned with `meets_constraint` unset.
pub fn select_best(points: &[CalibrationPoint], front: &[usize], kw_min: f64) -> Option<Selection> {
    let rank = |&&i: &&usize, &&j: &&usize| {
        let (a, b) = (&points[i], &points[j]);
        a.human_effort
            .total_cmp(&b.human_effort)
            .then(b.kw.total_cmp(&a.kw))
            .then(by_thresholds(&a.thresholds, &b.thresholds))
    };
    if let Some(&i) = front.iter().filter(|&&i| points[i].kw >= kw_min).min_by(rank) {
        return Some(Selection { thresholds: points[i].thresholds, point: i, meets_constraint: true });
    }
    let i = *front.iter().min_by(|&&i, &&j| {
        let (a, b) = (&points[i], &points[j]);
        b.kw.total_cmp(&a.kw)
            .then(a.human_effort.total_cmp(&b.human_effort))
            .then(by_thresholds(&a.thresholds, &b.thresholds))
    })?;
    Some(Selection { thresholds: points[i].thresholds, point: i, meets_constraint: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOutcome {
    pub observed_confidence: (f64, f64),
    pub observed_sd: (f64, f64),
    pub points: Vec<CalibrationPoint>,
    /// Indices into `points`.
    pub front: Vec<usize>,
    pub selected: Selection,
    pub kw_min: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl CalibrationOutcome {
    /// Mark the front and select, from already evaluated points.
    pub fn from_points(
        observed_confidence: (f64, f64),
        observed_sd: (f64, f64),
        mut points: Vec<CalibrationPoint>,
        kw_min: f64,
    ) -> Result<Self, CalibrationError> {
        let front = pareto_front(&points);
        for &i in &front {
            points[i].on_front = true;
        }
        let selected = select_best(&points, &front, kw_min).ok_or(CalibrationError::NoRecords)?;
        let warning = (!selected.meets_constraint).then(|| {
            alloc::format!(
                "no front point reaches kw >= {kw_min}; selected the highest-kw point (kw {})",
                points[selected.point].kw
            )
        });
        Ok(CalibrationOutcome {
            observed_confidence,
            observed_sd,
            points,
            front,
            selected,
            kw_min,
            warning,
        })
    }

    pub fn selected_point(&self) -> &CalibrationPoint {
        &self.points[self.selected.point]
    }
}

/// Grid, evaluate, front and select, sequentially.
pub fn calibrate<F>(records: &[EnsembleRecord], mut gold: F, kw_min: f64) -> Result<CalibrationOutcome, CalibrationError>
where
    F: FnMut(&str, TaskKind) -> Option<Label>,
{
    let (conf, sd) = observed_ranges(records).ok_or(CalibrationError::NoRecords)?;
    let points = enumerate_grid(conf, sd)?
        .into_iter()
        .map(|pair| evaluate_pair(pair, records, &mut gold))
        .collect::<Result<Vec<_>, _>>()?;
    CalibrationOutcome::from_points(conf, sd, points, kw_min)
}
