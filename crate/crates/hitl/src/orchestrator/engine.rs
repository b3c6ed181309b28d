use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use futures::stream::{self, StreamExt};
use hitl_core::ensemble::{aggregate, EnsembleRecord};
use hitl_core::tasking::{build_prompt, render_pair, FewShotExample, PromptMode, PromptSetting, PromptTarget, PromptText, PromptVariant};
use hitl_core::{AnnotationUnit, AnnotatorPrediction, GenerationParams, TaskKind};

use crate::annotators::{AnnotateError, Annotator, GoldIndex, MissingPrediction, ResponseCache};
use crate::corpus::Corpus;
use crate::templates::TemplateSet;

use super::config::RunConfig;
use super::RunError;

/// Prompts in flight at once across all annotators. Remote adapters apply
/// their own tighter caps.
const FAN_OUT: usize = 64;

#[derive(Debug, Default, Clone)]
pub struct Annotations {
    /// Sorted by unit id, then annotator order.
    pub predictions: Vec<AnnotatorPrediction>,
    pub missing: Vec<MissingPrediction>,
}

impl Annotations {
    /// One record per unit, in unit-id order. Units with no valid
    /// prediction get an empty record, which the decision rules force-flag.
    pub fn records(&self, unit_ids: &[String], task: TaskKind, expected: usize) -> Result<Vec<EnsembleRecord>, RunError> {
        let mut by_unit: HashMap<&str, Vec<AnnotatorPrediction>> = HashMap::new();
        for p in self.predictions.iter().filter(|p| p.task == task) {
            by_unit.entry(p.unit_id.as_str()).or_default().push(p.clone());
        }
        unit_ids
            .iter()
            .map(|u| match by_unit.get(u.as_str()) {
                Some(preds) => aggregate(preds, expected).map_err(|e| RunError::Internal(e.to_string())),
                None => Ok(EnsembleRecord::without_predictions(u.clone(), task, expected)),
            })
            .collect()
    }
}

pub struct Engine {
    annotators: Vec<Annotator>,
    templates: TemplateSet,
    mode: PromptMode,
}

impl Engine {
    pub fn new(config: &RunConfig, gold: Arc<GoldIndex>, use_cache: bool) -> Result<Self, RunError> {
        let cache = if use_cache && config.cache.enabled && config.annotators.iter().any(|a| !a.is_simulated()) {
            Some(Arc::new(ResponseCache::new(config.cache_dir()).map_err(RunError::io("cache dir"))?))
        } else {
            None
        };
        let annotators = config
            .annotators
            .iter()
            .map(|a| {
                Annotator::from_config(a, gold.clone(), cache.clone()).map_err(|e| match e {
                    AnnotateError::MissingCredential(_) => RunError::Config(e.to_string()),
                    other => RunError::Annotator(other.to_string()),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let templates = match &config.prompt.templates_dir {
            Some(dir) => TemplateSet::load_dir(dir).map_err(|e| RunError::Config(e.to_string()))?,
            None => TemplateSet::default(),
        };
        Ok(Engine { annotators, templates, mode: config.prompt.mode })
    }

    pub fn annotator_ids(&self) -> Vec<String> {
        self.annotators.iter().map(|a| a.id().to_string()).collect()
    }

    pub fn len(&self) -> usize {
        self.annotators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotators.is_empty()
    }

    /// Few-shot setting for `task`: the first unit (by id) of `pool` for
    /// each gold label value. Zero-shot mode ignores the pool.
    pub fn setting(&self, pool: &Corpus, task: TaskKind) -> PromptSetting {
        match self.mode {
            PromptMode::Zss => PromptSetting::zero_shot(),
            PromptMode::Fss => {
                let mut units: Vec<&AnnotationUnit> = pool.units.iter().collect();
                units.sort_by(|a, b| a.unit_id.cmp(&b.unit_id));
                let mut by_label = BTreeMap::new();
                for u in units {
                    if let Some(g) = u.gold(task) {
                        by_label.entry(g).or_insert_with(|| FewShotExample {
                            unit_id: u.unit_id.clone(),
                            rendering: render_pair(u),
                            label: g,
                        });
                    }
                }
                PromptSetting::few_shot(by_label.into_values().collect())
            }
        }
    }

    /// Prompts covering `split` for `task`. List-wise tasks get one prompt
    /// per query showing every pane of that query from `corpus`.
    pub fn prompts(
        &self,
        corpus: &Corpus,
        split: &BTreeSet<&str>,
        task: TaskKind,
        setting: &PromptSetting,
        variant: &PromptVariant,
    ) -> Result<Vec<PromptText>, RunError> {
        let template = self.templates.get(task, self.mode);
        let err = |e: hitl_core::tasking::PromptError| RunError::Config(format!("prompt for {task}: {e}"));
        let mut out = Vec::new();
        if task.is_listwise() {
            for q in &corpus.queries {
                if !q.pane_ids.iter().any(|p| split.contains(p.as_str())) {
                    continue;
                }
                let group: Vec<AnnotationUnit> = corpus.group_units(&q.query_id).into_iter().cloned().collect();
                out.push(build_prompt(&template, PromptTarget::Group(&group), setting, variant).map_err(err)?);
            }
        } else {
            for u in corpus.units.iter().filter(|u| split.contains(u.unit_id.as_str())) {
                out.push(build_prompt(&template, PromptTarget::Unit(u), setting, variant).map_err(err)?);
            }
        }
        Ok(out)
    }

    /// Run every annotator once over `prompts`. Predictions for units
    /// outside `split` (context panes of list-wise prompts) are dropped.
    pub async fn annotate(
        &self,
        prompts: &[PromptText],
        split: &BTreeSet<&str>,
        params: GenerationParams,
    ) -> Result<Annotations, RunError> {
        let jobs = self.annotators.iter().enumerate().flat_map(|(ai, a)| prompts.iter().map(move |p| (ai, a, p)));
        let results: Vec<(usize, Vec<Result<AnnotatorPrediction, MissingPrediction>>)> = stream::iter(jobs)
            .map(|(ai, a, p)| async move {
                let params = GenerationParams { max_tokens: p.max_tokens, ..params };
                (ai, a.annotate_or_missing(p, params).await)
            })
            .buffer_unordered(FAN_OUT)
            .collect()
            .await;

        let mut ok: Vec<(usize, AnnotatorPrediction)> = Vec::new();
        let mut missing = Vec::new();
        let mut successes = vec![0usize; self.annotators.len()];
        for (ai, batch) in results {
            for r in batch {
                match r {
                    Ok(p) if split.contains(p.unit_id.as_str()) => {
                        successes[ai] += 1;
                        ok.push((ai, p));
                    }
                    Ok(_) => successes[ai] += 1,
                    Err(m) if split.contains(m.unit_id.as_str()) => missing.push(m),
                    Err(_) => {}
                }
            }
        }
        if !prompts.is_empty() {
            if let Some(ai) = successes.iter().position(|&n| n == 0) {
                let reason = missing
                    .iter()
                    .find(|m| m.annotator_id == self.annotators[ai].id())
                    .map(|m| m.reason.clone())
                    .unwrap_or_default();
                return Err(RunError::Annotator(format!(
                    "annotator {} produced no usable prediction: {reason}",
                    self.annotators[ai].id()
                )));
            }
        }
        ok.sort_by(|(ai, a), (bi, b)| a.unit_id.cmp(&b.unit_id).then(a.task.cmp(&b.task)).then(ai.cmp(bi)));
        missing.sort_by(|a, b| a.unit_id.cmp(&b.unit_id).then(a.annotator_id.cmp(&b.annotator_id)));
        Ok(Annotations { predictions: ok.into_iter().map(|(_, p)| p).collect(), missing })
    }
}
