//! Evaluation metrics for ordinal 1-5 labels.
//!
//! Every matrix is 5x5 regardless of which classes occur, so macro averages
//! always run over all five classes. Degenerate Pearson and CWA values are
//! `None` rather than an error or zero.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{Label, TaskKind, SCALE_POINTS};

const K: usize = SCALE_POINTS;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("length mismatch: {pred} predictions vs {gold} gold labels")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("no units to score")]
    Empty,
    #[error("flagged count {flagged} exceeds total {total}")]
    FlaggedExceedsTotal { flagged: usize, total: usize },
    #[error("unit {unit_id} has {found} runs, expected {expected}")]
    RaggedRuns { unit_id: String, expected: usize, found: usize },
    #[error("sensitivity needs at least 2 runs per unit, found {0}")]
    TooFewRuns(usize),
}

fn check_lengths<A, B>(pred: &[A], gold: &[B]) -> Result<(), MetricsError> {
    if pred.len() != gold.len() {
        return Err(MetricsError::LengthMismatch { pred: pred.len(), gold: gold.len() });
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Counts indexed `[gold][predicted]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; K]; K],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, gold: usize) -> u64 {
        self.counts[gold].iter().sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        self.counts.iter().map(|row| row[pred]).sum()
    }

    pub fn transpose(&self) -> Self {
        let mut counts = [[0; K]; K];
        for (t, row) in self.counts.iter().enumerate() {
            for (p, &c) in row.iter().enumerate() {
                counts[p][t] = c;
            }
        }
        ConfusionMatrix { counts }
    }

    pub fn get(&self, gold: Label, pred: Label) -> u64 {
        self.counts[gold.index()][pred.index()]
    }
}

pub fn confusion_matrix(pred: &[Label], gold: &[Label]) -> Result<ConfusionMatrix, MetricsError> {
    check_lengths(pred, gold)?;
    let mut cm = ConfusionMatrix::default();
    for (p, g) in pred.iter().zip(gold) {
        cm.counts[g.index()][p.index()] += 1;
    }
    Ok(cm)
}

/// Cohen's kappa with quadratic weights `(i - j)^2 / (k - 1)^2`.
///
/// When the expected weighted disagreement is zero (both raters put all mass
/// on one label) the result is 1.0 if the observed disagreement is also zero
/// and 0.0 otherwise.
pub fn quadratic_weighted_kappa(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    let n = total as f64;
    let denom_w = ((K - 1) * (K - 1)) as f64;
    let rows: Vec<f64> = (0..K).map(|i| cm.row_sum(i) as f64 / n).collect();
    let cols: Vec<f64> = (0..K).map(|j| cm.col_sum(j) as f64 / n).collect();

    let mut observed = 0.0;
    let mut expected = 0.0;
    for i in 0..K {
        for j in 0..K {
            let d = i as f64 - j as f64;
            let w = d * d / denom_w;
            observed += w * cm.counts[i][j] as f64 / n;
            expected += w * rows[i] * cols[j];
        }
    }
    if expected == 0.0 {
        return Ok(if observed == 0.0 { 1.0 } else { 0.0 });
    }
    Ok(1.0 - observed / expected)
}

/// Per-class precision, recall and F1 over all five classes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: [f64; K],
    pub recall: [f64; K],
    pub f1: [f64; K],
}

pub fn class_scores(cm: &ConfusionMatrix) -> Result<ClassScores, MetricsError> {
    if cm.total() == 0 {
        return Err(MetricsError::Empty);
    }
    let mut s = ClassScores::default();
    for c in 0..K {
        let tp = cm.counts[c][c] as f64;
        let col = cm.col_sum(c);
        let row = cm.row_sum(c);
        s.precision[c] = if col == 0 { 0.0 } else { tp / col as f64 };
        s.recall[c] = if row == 0 { 0.0 } else { tp / row as f64 };
        let (p, r) = (s.precision[c], s.recall[c]);
        s.f1[c] = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    }
    Ok(s)
}

pub fn macro_precision(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    Ok(class_scores(cm)?.precision.iter().sum::<f64>() / K as f64)
}

pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    Ok(class_scores(cm)?.f1.iter().sum::<f64>() / K as f64)
}

pub fn mae(pred: &[Label], gold: &[Label]) -> Result<f64, MetricsError> {
    check_lengths(pred, gold)?;
    let sum: u64 = pred
        .iter()
        .zip(gold)
        .map(|(p, g)| u64::from(p.value().abs_diff(g.value())))
        .sum();
    Ok(sum as f64 / pred.len() as f64)
}

/// Product-moment correlation; `None` when either side has zero variance.
pub fn pearson(pred: &[Label], gold: &[Label]) -> Result<Option<f64>, MetricsError> {
    check_lengths(pred, gold)?;
    let n = pred.len() as f64;
    let xs = pred.iter().map(|l| f64::from(l.value()));
    let ys = gold.iter().map(|l| f64::from(l.value()));
    let mx = xs.clone().sum::<f64>() / n;
    let my = ys.clone().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    let r = sxy / (libm::sqrt(sxx) * libm::sqrt(syy));
    Ok(Some(r.clamp(-1.0, 1.0)))
}

/// Confidence-weighted accuracy: confidence mass on correct predictions over
/// total confidence mass. `None` when every confidence is zero.
pub fn cwa(outcomes: &[(bool, f64)]) -> Result<Option<f64>, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::Empty);
    }
    let total: f64 = outcomes.iter().map(|&(_, c)| c).sum();
    if total == 0.0 {
        return Ok(None);
    }
    let correct: f64 = outcomes.iter().filter(|(ok, _)| *ok).map(|&(_, c)| c).sum();
    Ok(Some(correct / total))
}

/// Human effort reduction, in percent.
pub fn her(flagged: usize, total: usize) -> Result<f64, MetricsError> {
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    if flagged > total {
        return Err(MetricsError::FlaggedExceedsTotal { flagged, total });
    }
    Ok(100.0 - 100.0 * flagged as f64 / total as f64)
}

/// Shannon entropy (natural log) of the empirical label distribution.
pub fn entropy(labels: &[Label]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let mut counts = [0usize; K];
    for l in labels {
        counts[l.index()] += 1;
    }
    let n = labels.len() as f64;
    // `+ 0.0` turns a negated zero back into 0.0
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * libm::log(p)
        })
        .sum::<f64>()
        + 0.0
}

/// Population standard deviation of label values.
pub fn label_sd(labels: &[Label]) -> f64 {
    let values: Vec<f64> = labels.iter().map(|l| f64::from(l.value())).collect();
    population_sd(&values)
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

pub(crate) fn population_sd(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    libm::sqrt(var)
}

/// The full metric set for one scored label list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub units: usize,
    pub macro_precision: f64,
    pub macro_f1: f64,
    pub mae: f64,
    pub kw: f64,
    pub pearson: Option<f64>,
    pub cwa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub her: Option<f64>,
    pub confusion: ConfusionMatrix,
    pub per_class: ClassScores,
}

impl MetricsReport {
    /// `confidences`, when given, runs parallel to `pred` and feeds CWA.
    pub fn compute(
        pred: &[Label],
        gold: &[Label],
        confidences: Option<&[f64]>,
    ) -> Result<Self, MetricsError> {
        let confusion = confusion_matrix(pred, gold)?;
        let per_class = class_scores(&confusion)?;
        let cwa = match confidences {
            Some(conf) => {
                check_lengths(pred, conf)?;
                let outcomes: Vec<(bool, f64)> = pred
                    .iter()
                    .zip(gold)
                    .zip(conf)
                    .map(|((p, g), &c)| (p == g, c))
                    .collect();
                cwa(&outcomes)?
            }
            None => None,
        };
        Ok(MetricsReport {
            units: pred.len(),
            macro_precision: per_class.precision.iter().sum::<f64>() / K as f64,
            macro_f1: per_class.f1.iter().sum::<f64>() / K as f64,
            mae: mae(pred, gold)?,
            kw: quadratic_weighted_kappa(&confusion)?,
            pearson: pearson(pred, gold)?,
            cwa,
            her: None,
            confusion,
            per_class,
        })
    }

    pub fn with_her(mut self, her: f64) -> Self {
        self.her = Some(her);
        self
    }
}

/// Labels one annotator produced for one unit across repeated runs
/// (temperatures or prompt variants).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatedRuns {
    pub annotator_id: String,
    pub task: TaskKind,
    pub unit_id: String,
    pub labels: Vec<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub annotator_id: String,
    pub task: TaskKind,
    pub units: usize,
    pub runs: usize,
    pub mean_entropy: f64,
    pub mean_sd: f64,
    pub max_entropy: f64,
}

/// Per-(annotator, task) means of per-unit entropy and label SD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityStats {
    pub rows: Vec<SensitivityRow>,
}

impl SensitivityStats {
    pub fn is_all_zero(&self) -> bool {
        self.rows.iter().all(|r| r.mean_entropy == 0.0 && r.mean_sd == 0.0)
    }
}

pub fn sensitivity_report(runs: &[RepeatedRuns]) -> Result<SensitivityStats, MetricsError> {
    let Some(first) = runs.first() else {
        return Err(MetricsError::Empty);
    };
    let r = first.labels.len();
    if r < 2 {
        return Err(MetricsError::TooFewRuns(r));
    }
    if let Some(bad) = runs.iter().find(|u| u.labels.len() != r) {
        return Err(MetricsError::RaggedRuns {
            unit_id: bad.unit_id.clone(),
            expected: r,
            found: bad.labels.len(),
        });
    }

    // (annotator, task) -> (units, entropy sum, sd sum, max entropy)
    let mut groups: BTreeMap<(&str, TaskKind), (usize, f64, f64, f64)> = BTreeMap::new();
    for unit in runs {
        let h = entropy(&unit.labels);
        let sd = label_sd(&unit.labels);
        let g = groups.entry((unit.annotator_id.as_str(), unit.task)).or_insert((0, 0.0, 0.0, 0.0));
        g.0 += 1;
        g.1 += h;
        g.2 += sd;
        g.3 = g.3.max(h);
    }
    let rows = groups
        .into_iter()
        .map(|((annotator, task), (n, h, sd, max_h))| SensitivityRow {
            annotator_id: annotator.into(),
            task,
            units: n,
            runs: r,
            mean_entropy: h / n as f64,
            mean_sd: sd / n as f64,
            max_entropy: max_h,
        })
        .collect();
    Ok(SensitivityStats { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(v: &[i64]) -> Vec<Label> {
        v.iter().map(|&x| Label::new(x).unwrap()).collect()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn identity_matrix() {
        let l = labels(&[1, 2, 3, 4, 5]);
        let cm = confusion_matrix(&l, &l).unwrap();
        for i in 0..K {
            for j in 0..K {
                assert_eq!(cm.counts[i][j], u64::from(i == j));
            }
        }
    }

    #[test]
    fn single_off_diagonal_cell() {
        let cm = confusion_matrix(&labels(&[2]), &labels(&[1])).unwrap();
        assert_eq!(cm.get(Label::new(1).unwrap(), Label::new(2).unwrap()), 1);
        assert_eq!(cm.total(), 1);
    }

    #[test]
    fn confusion_errors() {
        assert_eq!(
            confusion_matrix(&labels(&[1, 2]), &labels(&[1])),
            Err(MetricsError::LengthMismatch { pred: 2, gold: 1 })
        );
        assert_eq!(confusion_matrix(&[], &[]), Err(MetricsError::Empty));
        assert_eq!(quadratic_weighted_kappa(&ConfusionMatrix::default()), Err(MetricsError::Empty));
    }

    #[test]
    fn kappa_anchors() {
        let l = labels(&[1, 3, 3, 5, 2]);
        let cm = confusion_matrix(&l, &l).unwrap();
        assert_eq!(quadratic_weighted_kappa(&cm).unwrap(), 1.0);

        // sum w*O = 2 * 0.5 / 16 = 0.0625, sum w*E = 2 * 0.25 / 16 = 0.03125
        let cm = confusion_matrix(&labels(&[2, 1]), &labels(&[1, 2])).unwrap();
        assert_eq!(quadratic_weighted_kappa(&cm).unwrap(), -1.0);

        let threes = labels(&[3, 3, 3]);
        let cm = confusion_matrix(&threes, &threes).unwrap();
        assert_eq!(quadratic_weighted_kappa(&cm).unwrap(), 1.0);
    }

    #[test]
    fn kappa_constant_disagreement_is_zero() {
        let cm = confusion_matrix(&labels(&[4, 4]), &labels(&[3, 3])).unwrap();
        assert_eq!(quadratic_weighted_kappa(&cm).unwrap(), 0.0);
    }

    #[test]
    fn macro_scores() {
        let l = labels(&[1, 2, 3, 4, 5]);
        let cm = confusion_matrix(&l, &l).unwrap();
        assert_eq!(macro_precision(&cm).unwrap(), 1.0);
        assert_eq!(macro_f1(&cm).unwrap(), 1.0);

        // Class 1 is never predicted: its precision is 0 and still averaged in.
        let pred = labels(&[2, 2, 3, 4, 5]);
        let gold = labels(&[1, 2, 3, 4, 5]);
        let cm = confusion_matrix(&pred, &gold).unwrap();
        let s = class_scores(&cm).unwrap();
        assert_eq!(s.precision[0], 0.0);
        assert_eq!(s.precision[1], 0.5);
        assert!(close(macro_precision(&cm).unwrap(), (0.0 + 0.5 + 1.0 + 1.0 + 1.0) / 5.0, 1e-12));
        // F1: class1 0, class2 2*.5*1/1.5 = 2/3, rest 1
        assert!(close(macro_f1(&cm).unwrap(), (2.0 / 3.0 + 3.0) / 5.0, 1e-12));
    }

    #[test]
    fn mae_and_pearson() {
        let l = labels(&[1, 2, 4]);
        assert_eq!(mae(&l, &l).unwrap(), 0.0);
        assert!(close(pearson(&l, &l).unwrap().unwrap(), 1.0, 1e-12));
        assert_eq!(mae(&labels(&[1, 3]), &labels(&[2, 5])).unwrap(), 1.5);
        assert_eq!(pearson(&labels(&[3, 3, 3]), &labels(&[1, 2, 3])).unwrap(), None);
        assert!(pearson(&labels(&[3]), &labels(&[3, 2])).is_err());
    }

    #[test]
    fn cwa_cases() {
        assert_eq!(cwa(&[(true, 10.0), (true, 90.0)]).unwrap(), Some(1.0));
        let v = cwa(&[(true, 90.0), (true, 70.0), (false, 80.0)]).unwrap().unwrap();
        assert!(close(v, 160.0 / 240.0, 1e-12));
        assert_eq!(cwa(&[(false, 50.0), (false, 20.0)]).unwrap(), Some(0.0));
        assert_eq!(cwa(&[(true, 0.0)]).unwrap(), None);
        assert_eq!(cwa(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn her_cases() {
        assert_eq!(her(0, 100).unwrap(), 100.0);
        assert_eq!(her(100, 100).unwrap(), 0.0);
        assert_eq!(her(55, 100).unwrap(), 45.0);
        assert_eq!(her(26, 100).unwrap(), 74.0);
        assert_eq!(her(0, 0), Err(MetricsError::Empty));
        assert!(her(3, 2).is_err());
    }

    #[test]
    fn entropy_and_sd() {
        let all_five = labels(&[5, 5, 5]);
        assert_eq!(entropy(&all_five), 0.0);
        assert_eq!(label_sd(&all_five), 0.0);
        assert!(close(entropy(&labels(&[3, 4, 5])), libm::log(3.0), 1e-12));
        // -(2/3 ln 2/3 + 1/3 ln 1/3) = 0.636514...
        assert!(close(entropy(&labels(&[4, 4, 5])), 0.636_514_168_294_813_4, 1e-12));
        // values 4,4,5: mean 13/3, var = (1/9+1/9+4/9)/3 = 2/9
        assert!(close(label_sd(&labels(&[4, 4, 5])), libm::sqrt(2.0 / 9.0), 1e-12));
        assert!(close(label_sd(&labels(&[4, 4, 5])), 0.4714, 1e-4));
    }

    #[test]
    fn sensitivity_grouping_and_errors() {
        let run = |a: &str, u: &str, l: &[i64]| RepeatedRuns {
            annotator_id: a.into(),
            task: TaskKind::Quality,
            unit_id: u.into(),
            labels: labels(l),
        };
        let stats = sensitivity_report(&[
            run("a", "u1", &[3, 4, 5]),
            run("a", "u2", &[4, 4, 4]),
            run("b", "u1", &[2, 2, 2]),
        ])
        .unwrap();
        assert_eq!(stats.rows.len(), 2);
        let a = &stats.rows[0];
        assert_eq!(a.annotator_id, "a");
        assert!(close(a.mean_entropy, libm::log(3.0) / 2.0, 1e-12));
        assert!(close(a.max_entropy, libm::log(3.0), 1e-12));
        assert_eq!(stats.rows[1].mean_entropy, 0.0);

        assert!(matches!(
            sensitivity_report(&[run("a", "u1", &[3, 4, 5]), run("a", "u2", &[3, 4])]),
            Err(MetricsError::RaggedRuns { .. })
        ));
        assert_eq!(sensitivity_report(&[run("a", "u1", &[3])]), Err(MetricsError::TooFewRuns(1)));
    }

    #[test]
    fn report_bundles_metrics() {
        let pred = labels(&[3, 4, 5, 5]);
        let gold = labels(&[3, 4, 4, 5]);
        let r = MetricsReport::compute(&pred, &gold, Some(&[90.0, 80.0, 50.0, 80.0])).unwrap();
        assert_eq!(r.units, 4);
        assert_eq!(r.mae, 0.25);
        assert!(close(r.cwa.unwrap(), 250.0 / 300.0, 1e-12));
        assert_eq!(r.her, None);
        assert_eq!(r.with_her(45.0).her, Some(45.0));
    }
}
