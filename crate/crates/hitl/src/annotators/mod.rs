//! A uniform annotator interface over remote model endpoints and the seeded
//! simulator.

mod cache;
mod remote;

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use hitl_core::prediction::parse_response;
use hitl_core::sim::{self, SimProfile};
use hitl_core::tasking::PromptText;
use hitl_core::{AnnotatorPrediction, GenerationParams, Label, ParseError, TaskKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::ResponseCache;
pub use remote::{ProviderConfig, RemoteClient, TokenBucket};

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("unparseable response: {error}")]
    Unparseable { error: ParseError, raw: String },
    #[error("no gold label for simulated unit {0}")]
    NoGold(String),
    #[error("missing credential: environment variable {0} is not set")]
    MissingCredential(String),
}

/// Marker for a prediction that could not be obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingPrediction {
    pub annotator_id: String,
    pub unit_id: String,
    pub task: TaskKind,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnnotatorConfig {
    Simulated {
        id: String,
        #[serde(flatten)]
        profile: SimProfile,
    },
    Remote(ProviderConfig),
}

impl AnnotatorConfig {
    pub fn id(&self) -> &str {
        match self {
            AnnotatorConfig::Simulated { id, .. } => id,
            AnnotatorConfig::Remote(p) => &p.id,
        }
    }

    pub fn is_simulated(&self) -> bool {
        matches!(self, AnnotatorConfig::Simulated { .. })
    }
}

/// Provider config file: a list of `[[annotator]]` tables.
#[derive(Debug, Clone, Deserialize)]
pub struct ProviderFile {
    #[serde(rename = "annotator", default)]
    pub annotators: Vec<AnnotatorConfig>,
}

pub fn load_provider_file(path: &Path) -> anyhow::Result<Vec<AnnotatorConfig>> {
    let text = std::fs::read_to_string(path)?;
    let file: ProviderFile = toml::from_str(&text)?;
    Ok(file.annotators)
}

pub type GoldIndex = HashMap<(String, TaskKind), Label>;

enum Backend {
    Simulated { profile: SimProfile, gold: Arc<GoldIndex> },
    Remote(Box<RemoteClient>),
}

pub struct Annotator {
    id: String,
    backend: Backend,
}

impl Annotator {
    pub fn simulated(id: impl Into<String>, profile: SimProfile, gold: Arc<GoldIndex>) -> Self {
        Annotator { id: id.into(), backend: Backend::Simulated { profile, gold } }
    }

    pub fn remote(client: RemoteClient) -> Self {
        Annotator { id: client.config().id.clone(), backend: Backend::Remote(Box::new(client)) }
    }

    pub fn from_config(
        config: &AnnotatorConfig,
        gold: Arc<GoldIndex>,
        cache: Option<Arc<ResponseCache>>,
    ) -> Result<Self, AnnotateError> {
        Ok(match config {
            AnnotatorConfig::Simulated { id, profile } => Annotator::simulated(id.clone(), profile.clone(), gold),
            AnnotatorConfig::Remote(p) => Annotator::remote(RemoteClient::new(p.clone(), cache)?),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// One prediction per rated item in `prompt`, in prompt order.
    pub async fn annotate(
        &self,
        prompt: &PromptText,
        params: GenerationParams,
    ) -> Result<Vec<AnnotatorPrediction>, AnnotateError> {
        let expected = prompt.unit_ids.len();
        let raw = match &self.backend {
            Backend::Simulated { profile, gold } => {
                let setting = sim::setting_key(&params, &prompt.variant_id);
                let mut lines = Vec::with_capacity(expected);
                for unit_id in &prompt.unit_ids {
                    let g = gold
                        .get(&(unit_id.clone(), prompt.task))
                        .copied()
                        .ok_or_else(|| AnnotateError::NoGold(unit_id.clone()))?;
                    let pos = sim::stream_position(profile, unit_id, prompt.task, &setting);
                    let (label, conf) = sim::sim_draw(profile, g, pos);
                    lines.push(hitl_core::prediction::format_trailer(label, conf));
                }
                lines.join("\n")
            }
            Backend::Remote(client) => client.complete(prompt, params).await?,
        };
        let parsed = parse_response(&raw, expected)
            .map_err(|error| AnnotateError::Unparseable { error, raw: raw.clone() })?;
        Ok(prompt
            .unit_ids
            .iter()
            .zip(parsed)
            .map(|(unit_id, (label, confidence))| AnnotatorPrediction {
                annotator_id: self.id.clone(),
                unit_id: unit_id.clone(),
                task: prompt.task,
                label,
                confidence,
                raw_response: raw.clone(),
                params,
            })
            .collect())
    }

    /// Like [`annotate`](Self::annotate), but failures become per-unit
    /// [`MissingPrediction`] markers.
    pub async fn annotate_or_missing(
        &self,
        prompt: &PromptText,
        params: GenerationParams,
    ) -> Vec<Result<AnnotatorPrediction, MissingPrediction>> {
        match self.annotate(prompt, params).await {
            Ok(preds) => preds.into_iter().map(Ok).collect(),
            Err(e) => {
                tracing::warn!(annotator = %self.id, task = %prompt.task, "annotation failed: {e}");
                prompt
                    .unit_ids
                    .iter()
                    .map(|u| {
                        Err(MissingPrediction {
                            annotator_id: self.id.clone(),
                            unit_id: u.clone(),
                            task: prompt.task,
                            reason: e.to_string(),
                        })
                    })
                    .collect()
            }
        }
    }
}
