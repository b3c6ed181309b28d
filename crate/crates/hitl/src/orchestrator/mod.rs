//! End-to-end runs: calibrate on a labelled subset, apply the chosen
//! thresholds to the remainder, sweep generation settings, and report.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! calibration/<task>.report   summary record, then one record per grid point
//! calibration/<task>.table
//! final/<task>.labels         one final label per line, unit-id order
//! metrics/<task>.report       summary, final-label and raw-ensemble metrics
//! metrics/<task>.table
//! metrics/summary.report      per task and overall HER
//! sensitivity/<group>.report
//! provenance.meta             timestamps, config hash, seeds, annotator ids
//! ```
//!
//! Everything except `provenance.meta` is a pure function of the config and
//! seeds in simulation mode.

pub mod config;
pub mod engine;
pub mod report;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use chrono::Utc;
use hitl_core::calibration::{enumerate_grid, evaluate_pair, observed_ranges, CalibrationError, CalibrationOutcome};
use hitl_core::ensemble::{apply_hitl, EnsembleRecord, FinalLabel, FinalLabelSet, HitlDecision, ThresholdPair};
use hitl_core::metrics::{self, sensitivity_report, RepeatedRuns, SensitivityStats};
use hitl_core::tasking::{enumerate_variants, PromptVariant};
use hitl_core::{GenerationParams, Label, MetricsReport, TaskKind};
use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

use crate::annotators::{AnnotatorConfig, GoldIndex};
use crate::corpus::{load_corpus, sample_subset, Corpus, CorpusError, LoadOptions};
use crate::review::{DecidedTotals, ItemContent, ModelVote, ReviewError, ReviewStore};

pub use config::{RunConfig, RunMode};
pub use engine::{Annotations, Engine};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PENDING: i32 = 3;
pub const EXIT_ANNOTATOR: i32 = 4;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error("corpus: {0}")]
    Corpus(#[from] CorpusError),
    #[error("annotator failure: {0}")]
    Annotator(String),
    #[error("calibration for {task}: {source}")]
    Calibration { task: TaskKind, source: CalibrationError },
    #[error("review store: {0}")]
    Review(#[from] ReviewError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error("{0}")]
    Internal(String),
}

impl RunError {
    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> RunError {
        let context = context.into();
        move |source| RunError::Io { context, source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Corpus(_) | RunError::Calibration { .. } => EXIT_CONFIG,
            RunError::Annotator(_) => EXIT_ANNOTATOR,
            _ => 1,
        }
    }
}

impl From<config::ConfigError> for RunError {
    fn from(e: config::ConfigError) -> Self {
        RunError::Config(e.0)
    }
}

/// Grid evaluation spread over the rayon pool. Point order matches the grid.
pub fn calibrate_parallel(
    records: &[EnsembleRecord],
    gold: &GoldIndex,
    kw_min: f64,
) -> Result<CalibrationOutcome, CalibrationError> {
    let (conf, sd) = observed_ranges(records).ok_or(CalibrationError::NoRecords)?;
    let points = enumerate_grid(conf, sd)?
        .into_par_iter()
        .map(|pair| evaluate_pair(pair, records, |u, t| lookup(gold, u, t)))
        .collect::<Result<Vec<_>, _>>()?;
    CalibrationOutcome::from_points(conf, sd, points, kw_min)
}

fn lookup(gold: &GoldIndex, unit_id: &str, task: TaskKind) -> Option<Label> {
    gold.get(&(unit_id.to_string(), task)).copied()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskResult {
    pub thresholds: ThresholdPair,
    pub labels: FinalLabelSet,
    pub metrics: Option<MetricsReport>,
    pub ensemble_metrics: Option<MetricsReport>,
    pub missing_predictions: usize,
}

impl TaskResult {
    pub fn pending(&self) -> usize {
        self.labels.pending().count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApplyOutcome {
    pub tasks: BTreeMap<TaskKind, TaskResult>,
    pub overall_her: Option<f64>,
}

impl ApplyOutcome {
    pub fn pending(&self) -> usize {
        self.tasks.values().map(TaskResult::pending).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityGroup {
    pub name: String,
    /// One label per annotator, task and unit for every setting.
    pub runs: Vec<RepeatedRuns>,
    pub stats: SensitivityStats,
    /// (annotator, task, unit) triples dropped for lacking a label in some run.
    pub incomplete: usize,
}

pub struct Pipeline {
    pub config: RunConfig,
    pub corpus: Corpus,
    pub subset: Corpus,
    pub remainder: Corpus,
    gold: Arc<GoldIndex>,
    engine: Engine,
}

impl Pipeline {
    pub fn load(config: RunConfig, use_cache: bool) -> Result<Self, RunError> {
        let loaded = load_corpus(&config.corpus, LoadOptions { strict_groups: config.strict_groups })?;
        for w in &loaded.warnings {
            tracing::warn!("{w}");
        }
        Pipeline::from_corpus(config, loaded.corpus, use_cache)
    }

    pub fn from_corpus(config: RunConfig, corpus: Corpus, use_cache: bool) -> Result<Self, RunError> {
        config.validate()?;
        let (subset, remainder) = sample_subset(&corpus, config.calibration.fraction, config.calibration.seed)?;
        let gold = Arc::new(corpus.gold_index());
        let engine = Engine::new(&config, gold.clone(), use_cache)?;
        Ok(Pipeline { config, corpus, subset, remainder, gold, engine })
    }

    fn out(&self, parts: &[&str]) -> PathBuf {
        parts.iter().fold(self.config.output_dir.clone(), |p, s| p.join(s))
    }

    fn variant(&self) -> PromptVariant {
        PromptVariant::new(
            self.config.prompt.transformation,
            self.config.generation.max_tokens,
            self.config.prompt.shuffle_seed,
        )
    }

    async fn annotate_split(&self, split: &Corpus, task: TaskKind, variant: &PromptVariant, params: GenerationParams) -> Result<(Vec<String>, Annotations), RunError> {
        let mut ids: Vec<String> = split.units.iter().map(|u| u.unit_id.clone()).collect();
        ids.sort();
        let set: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        let setting = self.engine.setting(&self.subset, task);
        let prompts = self.engine.prompts(&self.corpus, &set, task, &setting, variant)?;
        let ann = self.engine.annotate(&prompts, &set, params).await?;
        Ok((ids, ann))
    }

    /// Annotate the subset, grid-search thresholds and write the
    /// calibration reports.
    pub async fn calibrate(&self) -> Result<BTreeMap<TaskKind, CalibrationOutcome>, RunError> {
        let started = Utc::now();
        let mut out = BTreeMap::new();
        for &task in &self.config.tasks {
            let (ids, ann) = self.annotate_split(&self.subset, task, &self.variant(), self.config.generation).await?;
            let records = ann.records(&ids, task, self.engine.len())?;
            let outcome = calibrate_parallel(&records, &self.gold, self.config.calibration.kw_min)
                .map_err(|source| RunError::Calibration { task, source })?;
            self.write_calibration(task, &outcome, &records, ann.missing.len())?;
            out.insert(task, outcome);
        }
        self.write_provenance("calibrate", started)?;
        Ok(out)
    }

    fn write_calibration(
        &self,
        task: TaskKind,
        o: &CalibrationOutcome,
        records: &[EnsembleRecord],
        missing: usize,
    ) -> Result<(), RunError> {
        let sel = o.selected_point();
        let insufficient = records
            .iter()
            .filter(|r| hitl_core::ensemble::decide(r, sel.thresholds) == HitlDecision::FlagInsufficientPredictions)
            .count();
        let mut lines = vec![json!({
            "record": "summary",
            "task": task,
            "subset_units": records.len(),
            "annotators": self.engine.annotator_ids(),
            "observed_confidence": o.observed_confidence,
            "observed_sd": o.observed_sd,
            "grid_points": o.points.len(),
            "front": o.front,
            "selected": o.selected.thresholds,
            "selected_index": o.selected.point,
            "selected_kw": sel.kw,
            "selected_her": sel.metrics.her,
            "meets_constraint": o.selected.meets_constraint,
            "kw_min": o.kw_min,
            "warning": o.warning,
            "missing_predictions": missing,
            "insufficient_units": insufficient,
        })];
        for (i, p) in o.points.iter().enumerate() {
            let mut v = serde_json::to_value(p).map_err(|e| RunError::Internal(e.to_string()))?;
            v["record"] = json!("point");
            v["index"] = json!(i);
            lines.push(v);
        }
        report::write_jsonl(&self.out(&["calibration", &format!("{}.report", task.as_str())]), &lines)?;
        report::write_file(
            &self.out(&["calibration", &format!("{}.table", task.as_str())]),
            report::calibration_table(task.as_str(), o).as_bytes(),
        )
    }

    /// Thresholds chosen by a previous `calibrate`.
    pub fn calibrated_thresholds(&self, task: TaskKind) -> Result<ThresholdPair, RunError> {
        let path = self.out(&["calibration", &format!("{}.report", task.as_str())]);
        if !path.exists() {
            return Err(RunError::Config(format!(
                "no calibration for {task} at {}; run calibrate or pass thresholds",
                path.display()
            )));
        }
        let lines: Vec<Value> = report::read_jsonl(&path)?;
        let selected = lines
            .first()
            .filter(|v| v["record"] == "summary")
            .map(|v| v["selected"].clone())
            .ok_or_else(|| RunError::Config(format!("{}: missing summary record", path.display())))?;
        serde_json::from_value(selected).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))
    }

    /// Annotate the remainder once per annotator, decide, substitute or
    /// enqueue, and write labels and metrics.
    pub async fn apply(&self, thresholds: Option<ThresholdPair>) -> Result<ApplyOutcome, RunError> {
        let started = Utc::now();
        let mut store = match self.config.mode {
            RunMode::Review => Some(ReviewStore::open(&self.config.review_log())?),
            RunMode::Simulation => None,
        };
        let mut tasks = BTreeMap::new();
        for &task in &self.config.tasks {
            let th = match thresholds {
                Some(t) => t,
                None => self.calibrated_thresholds(task)?,
            };
            let (ids, ann) = self.annotate_split(&self.remainder, task, &self.variant(), self.config.generation).await?;
            let records = ann.records(&ids, task, self.engine.len())?;
            let set = match &mut store {
                None => apply_hitl(&records, th, |u, t| lookup(&self.gold, u, t)),
                Some(store) => {
                    let snap = store.snapshot().clone();
                    let set = apply_hitl(&records, th, |u, t| snap.human_label(t, u));
                    store.enqueue(self.review_items(task, &set, &ann))?;
                    store.record_totals(task, DecidedTotals { total: set.len(), flagged: set.flagged() })?;
                    set
                }
            };
            tasks.insert(task, self.finish_task(task, th, set, ann.missing.len())?);
        }
        let outcome = self.write_summary(tasks)?;
        self.write_provenance("apply", started)?;
        Ok(outcome)
    }

    fn review_items(&self, task: TaskKind, set: &FinalLabelSet, ann: &Annotations) -> Vec<ItemContent> {
        let mut votes: HashMap<&str, Vec<ModelVote>> = HashMap::new();
        for p in ann.predictions.iter().filter(|p| p.task == task) {
            votes.entry(p.unit_id.as_str()).or_default().push(ModelVote {
                annotator_id: p.annotator_id.clone(),
                label: p.label,
                confidence: p.confidence,
            });
        }
        set.pending()
            .filter_map(|e| {
                let unit = self.corpus.unit(&e.unit_id)?;
                Some(ItemContent {
                    item_id: ItemContent::item_id_for(task, &e.unit_id),
                    unit_id: e.unit_id.clone(),
                    task,
                    query: unit.query.clone(),
                    question: unit.pane.question.clone(),
                    options: unit.pane.options.clone(),
                    aggregated_label: e.aggregated_label,
                    mean_confidence: e.mean_confidence,
                    confidence_sd: e.confidence_sd,
                    predictions: votes.remove(e.unit_id.as_str()).unwrap_or_default(),
                    reason: e.decision,
                })
            })
            .collect()
    }

    fn finish_task(
        &self,
        task: TaskKind,
        thresholds: ThresholdPair,
        labels: FinalLabelSet,
        missing_predictions: usize,
    ) -> Result<TaskResult, RunError> {
        let gold = |u: &str, t: TaskKind| lookup(&self.gold, u, t);
        let final_metrics = labels.metrics(gold).ok();
        let ensemble_metrics = {
            let (mut pred, mut truth, mut conf) = (Vec::new(), Vec::new(), Vec::new());
            for e in &labels.entries {
                if let (Some(a), Some(g)) = (e.aggregated_label, gold(&e.unit_id, e.task)) {
                    pred.push(a);
                    truth.push(g);
                    conf.push(e.mean_confidence);
                }
            }
            MetricsReport::compute(&pred, &truth, Some(&conf)).ok()
        };
        let pending = labels.pending().count();
        let insufficient =
            labels.entries.iter().filter(|e| e.decision == HitlDecision::FlagInsufficientPredictions).count();
        let mut lines = vec![json!({
            "record": "summary",
            "task": task,
            "status": if pending == 0 { "complete" } else { "pending" },
            "units": labels.len(),
            "flagged": labels.flagged(),
            "pending": pending,
            "her": labels.her(),
            "thresholds": thresholds,
            "missing_predictions": missing_predictions,
            "insufficient_units": insufficient,
        })];
        let mut table = format!("task {}: {} units, {} flagged, {} pending\n\n", task.as_str(), labels.len(), labels.flagged(), pending);
        if let Some(m) = &final_metrics {
            lines.push(json!({"record": "final", "partial": pending > 0, "metrics": m}));
            let title = if pending > 0 { "final labels (partial: reviews pending)" } else { "final labels" };
            table.push_str(&report::metrics_table(title, m));
            table.push('\n');
        }
        if let Some(m) = &ensemble_metrics {
            lines.push(json!({"record": "ensemble", "metrics": m}));
            table.push_str(&report::metrics_table("raw ensemble (before review)", m));
        }
        let name = task.as_str();
        report::write_jsonl(&self.out(&["final", &format!("{name}.labels")]), &labels.entries)?;
        report::write_jsonl(&self.out(&["metrics", &format!("{name}.report")]), &lines)?;
        report::write_file(&self.out(&["metrics", &format!("{name}.table")]), table.as_bytes())?;
        Ok(TaskResult { thresholds, labels, metrics: final_metrics, ensemble_metrics, missing_predictions })
    }

    fn write_summary(&self, tasks: BTreeMap<TaskKind, TaskResult>) -> Result<ApplyOutcome, RunError> {
        let mut lines = Vec::new();
        let (mut units, mut flagged, mut pending) = (0, 0, 0);
        for (task, r) in &tasks {
            lines.push(json!({
                "record": "task",
                "task": task,
                "units": r.labels.len(),
                "flagged": r.labels.flagged(),
                "pending": r.pending(),
                "her": r.labels.her(),
                "kw": r.metrics.as_ref().map(|m| m.kw),
            }));
            units += r.labels.len();
            flagged += r.labels.flagged();
            pending += r.pending();
        }
        let overall_her = metrics::her(flagged, units).ok();
        lines.push(json!({"record": "overall", "units": units, "flagged": flagged, "pending": pending, "her": overall_her}));
        report::write_jsonl(&self.out(&["metrics", "summary.report"]), &lines)?;
        Ok(ApplyOutcome { tasks, overall_her })
    }

    /// Rebuild labels and metrics from `final/`, filling pending entries
    /// from the review store.
    pub fn report(&self) -> Result<ApplyOutcome, RunError> {
        let started = Utc::now();
        let store = match self.config.mode {
            RunMode::Review => Some(ReviewStore::open(&self.config.review_log())?),
            RunMode::Simulation => None,
        };
        let mut tasks = BTreeMap::new();
        for &task in &self.config.tasks {
            let name = task.as_str();
            let entries: Vec<FinalLabel> = report::read_jsonl(&self.out(&["final", &format!("{name}.labels")]))?;
            let mut set = FinalLabelSet { entries };
            if let Some(store) = &store {
                let snap = store.snapshot();
                set.resolve_pending(|u, t| snap.human_label(t, u));
            }
            let summary: Vec<Value> = report::read_jsonl(&self.out(&["metrics", &format!("{name}.report")]))?;
            let head = summary.first().cloned().unwrap_or(Value::Null);
            let thresholds: ThresholdPair = serde_json::from_value(head["thresholds"].clone())
                .map_err(|e| RunError::Config(format!("metrics/{name}.report: {e}")))?;
            let missing = head["missing_predictions"].as_u64().unwrap_or(0) as usize;
            tasks.insert(task, self.finish_task(task, thresholds, set, missing)?);
        }
        let outcome = self.write_summary(tasks)?;
        self.write_provenance("report", started)?;
        Ok(outcome)
    }

    /// Repeat the full annotation under each temperature, and under each
    /// prompt variant at temperature 0.
    pub async fn sensitivity(&self) -> Result<Vec<SensitivityGroup>, RunError> {
        let started = Utc::now();
        let cfg = &self.config.sensitivity;
        let mut groups: Vec<(&str, Vec<(PromptVariant, GenerationParams)>)> = Vec::new();
        if cfg.temperatures.len() >= 2 {
            let base = self.variant();
            let settings = cfg
                .temperatures
                .iter()
                .map(|&t| (base.clone(), GenerationParams { temperature: t, ..self.config.generation }))
                .collect();
            groups.push(("temperature", settings));
        }
        let variants = enumerate_variants(&cfg.token_limits, self.config.prompt.shuffle_seed);
        if variants.len() >= 2 {
            let settings = variants
                .into_iter()
                .map(|v| {
                    let p = GenerationParams { temperature: 0.0, max_tokens: v.max_tokens };
                    (v, p)
                })
                .collect();
            groups.push(("prompt_variants", settings));
        }
        if groups.is_empty() {
            return Err(RunError::Config("sensitivity needs at least two temperatures or prompt variants".into()));
        }
        let ids = self.engine.annotator_ids();
        let mut out = Vec::new();
        for (name, settings) in groups {
            let mut labels: BTreeMap<(usize, TaskKind, String), Vec<Label>> = BTreeMap::new();
            for &task in &self.config.tasks {
                for (variant, params) in &settings {
                    let (_, ann) = self.annotate_split(&self.corpus, task, variant, *params).await?;
                    for p in ann.predictions {
                        let ai = ids.iter().position(|a| *a == p.annotator_id).expect("known annotator");
                        labels.entry((ai, task, p.unit_id)).or_default().push(p.label);
                    }
                }
            }
            let total = labels.len();
            let runs: Vec<RepeatedRuns> = labels
                .into_iter()
                .filter(|(_, l)| l.len() == settings.len())
                .map(|((ai, task, unit_id), labels)| RepeatedRuns { annotator_id: ids[ai].clone(), task, unit_id, labels })
                .collect();
            let incomplete = total - runs.len();
            let stats = sensitivity_report(&runs).map_err(|e| RunError::Annotator(format!("sensitivity {name}: {e}")))?;
            let mut lines: Vec<Value> = stats.rows.iter().map(|r| json!({"record": "row", "group": name, "row": r})).collect();
            lines.push(json!({
                "record": "settings",
                "group": name,
                "settings": settings.iter().map(|(v, p)| json!({"variant": v.variant_id, "temperature": p.temperature, "max_tokens": p.max_tokens})).collect::<Vec<_>>(),
                "incomplete": incomplete,
            }));
            report::write_jsonl(&self.out(&["sensitivity", &format!("{name}.report")]), &lines)?;
            report::write_file(
                &self.out(&["sensitivity", &format!("{name}.table")]),
                report::sensitivity_table(name, &stats).as_bytes(),
            )?;
            out.push(SensitivityGroup { name: name.to_string(), runs, stats, incomplete });
        }
        self.write_provenance("sensitivity", started)?;
        Ok(out)
    }

    /// Merge this command's entry into `provenance.meta`.
    fn write_provenance(&self, command: &str, started: chrono::DateTime<Utc>) -> Result<(), RunError> {
        let path = self.out(&["provenance.meta"]);
        let mut doc: serde_json::Map<String, Value> = std::fs::read_to_string(&path)
            .ok()
            .and_then(|s| serde_json::from_str(&s).ok())
            .unwrap_or_default();
        let annotators: Vec<Value> = self
            .config
            .annotators
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let (kind, seed) = match a {
                    AnnotatorConfig::Simulated { profile, .. } => ("simulated", Some(profile.seed)),
                    AnnotatorConfig::Remote(_) => ("remote", None),
                };
                json!({"id": a.id(), "alias": annotator_alias(i), "kind": kind, "seed": seed})
            })
            .collect();
        doc.insert(
            command.to_string(),
            json!({
                "started_at": started.to_rfc3339(),
                "finished_at": Utc::now().to_rfc3339(),
                "config_hash": self.config.hash(),
                "tool_version": env!("CARGO_PKG_VERSION"),
                "corpus": self.config.corpus,
                "units": self.corpus.len(),
                "subset_units": self.subset.len(),
                "remainder_units": self.remainder.len(),
                "calibration_seed": self.config.calibration.seed,
                "shuffle_seed": self.config.prompt.shuffle_seed,
                "mode": self.config.mode,
                "annotators": annotators,
            }),
        );
        let text = serde_json::to_string_pretty(&doc).map_err(|e| RunError::Internal(e.to_string()))?;
        report::write_file(&path, text.as_bytes())
    }
}

/// Neutral display name for the i-th annotator: "Annotator A", "B", ...
pub fn annotator_alias(i: usize) -> String {
    let mut n = i;
    let mut s = String::new();
    loop {
        s.insert(0, (b'A' + (n % 26) as u8) as char);
        if n < 26 {
            break;
        }
        n = n / 26 - 1;
    }
    format!("Annotator {s}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aliases() {
        assert_eq!(annotator_alias(0), "Annotator A");
        assert_eq!(annotator_alias(3), "Annotator D");
        assert_eq!(annotator_alias(26), "Annotator AA");
    }
}
