use std::collections::HashSet;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use hitl_core::calibration::DEFAULT_KW_MIN;
use hitl_core::prediction::DEFAULT_TEMPERATURES;
use hitl_core::tasking::{PromptMode, Transformation, DEFAULT_TOKEN_LIMITS};
use hitl_core::{GenerationParams, TaskKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotators::AnnotatorConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Flagged units take their stored gold label.
    #[default]
    Simulation,
    /// Flagged units go to the review queue.
    Review,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub mode: PromptMode,
    pub transformation: Transformation,
    pub shuffle_seed: u64,
    pub templates_dir: Option<PathBuf>,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            mode: PromptMode::Zss,
            transformation: Transformation::Baseline,
            shuffle_seed: 0,
            templates_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub fraction: f64,
    pub seed: u64,
    pub kw_min: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig { fraction: 0.10, seed: 42, kw_min: DEFAULT_KW_MIN }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityConfig {
    pub temperatures: Vec<f64>,
    /// Token limits crossed with every prompt transformation, at
    /// temperature 0. Empty skips the prompt-variant sweep.
    pub token_limits: Vec<u32>,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig { temperatures: DEFAULT_TEMPERATURES.to_vec(), token_limits: DEFAULT_TOKEN_LIMITS.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub enabled: bool,
    /// Defaults to `<output_dir>/cache`.
    pub dir: Option<PathBuf>,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig { enabled: true, dir: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReviewConfig {
    /// Defaults to `<output_dir>/review/events.jsonl`.
    pub log: Option<PathBuf>,
    pub bind: SocketAddr,
    /// Environment variable holding the shared bearer token.
    pub token_env: Option<String>,
    pub static_dir: Option<PathBuf>,
}

impl Default for ReviewConfig {
    fn default() -> Self {
        ReviewConfig {
            log: None,
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            token_env: None,
            static_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub tasks: Vec<TaskKind>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub mode: RunMode,
    #[serde(default)]
    pub strict_groups: bool,
    #[serde(default)]
    pub prompt: PromptConfig,
    #[serde(default)]
    pub generation: GenerationParams,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub sensitivity: SensitivityConfig,
    #[serde(default)]
    pub cache: CacheConfig,
    #[serde(default)]
    pub review: ReviewConfig,
    #[serde(rename = "annotator", default)]
    pub annotators: Vec<AnnotatorConfig>,
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

impl RunConfig {
    /// Parse a TOML config. Relative paths resolve against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.output_dir);
        for p in [&mut self.prompt.templates_dir, &mut self.cache.dir, &mut self.review.log, &mut self.review.static_dir]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let f = self.calibration.fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(ConfigError(format!("calibration.fraction {f} outside (0, 1]")));
        }
        if !self.calibration.kw_min.is_finite() || self.calibration.kw_min > 1.0 {
            return Err(ConfigError(format!("calibration.kw_min {} is not a reachable kappa", self.calibration.kw_min)));
        }
        if self.tasks.is_empty() {
            return Err(ConfigError("no tasks configured".into()));
        }
        if self.annotators.is_empty() {
            return Err(ConfigError("at least one [[annotator]] is required".into()));
        }
        let mut seen = HashSet::new();
        for a in &self.annotators {
            if !seen.insert(a.id()) {
                return Err(ConfigError(format!("duplicate annotator id {}", a.id())));
            }
        }
        let t = self.generation.temperature;
        if !(t.is_finite() && t >= 0.0) || self.generation.max_tokens == 0 {
            return Err(ConfigError("generation needs temperature >= 0 and max_tokens > 0".into()));
        }
        Ok(())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache.dir.clone().unwrap_or_else(|| self.output_dir.join("cache"))
    }

    pub fn review_log(&self) -> PathBuf {
        self.review.log.clone().unwrap_or_else(|| self.output_dir.join("review").join("events.jsonl"))
    }

    /// SHA-256 over the canonical JSON form of the effective config.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        corpus = "data/corpus.jsonl"
        tasks = ["quality", "preference"]
        output_dir = "out"

        [[annotator]]
        kind = "simulated"
        id = "a"
        hit_rate = 0.5
        conf_correct_mean = 92.0
        conf_wrong_mean = 78.0
        conf_sd = 6.0
        seed = 1
    "#;

    #[test]
    fn defaults_and_path_resolution() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, MINIMAL).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.corpus, dir.path().join("data/corpus.jsonl"));
        assert_eq!(cfg.calibration.fraction, 0.10);
        assert_eq!(cfg.calibration.kw_min, 0.7);
        assert_eq!(cfg.mode, RunMode::Simulation);
        assert_eq!(cfg.review_log(), dir.path().join("out/review/events.jsonl"));
        assert_eq!(cfg.hash(), cfg.clone().hash());
    }

    #[test]
    fn rejects_bad_values() {
        let bad = MINIMAL.replace("output_dir = \"out\"", "output_dir = \"out\"\n[calibration]\nfraction = 0.0");
        let mut cfg: RunConfig = toml::from_str(&bad).unwrap();
        assert!(cfg.validate().is_err());
        cfg.calibration.fraction = 1.0;
        cfg.validate().unwrap();
        cfg.annotators.push(cfg.annotators[0].clone());
        assert!(cfg.validate().unwrap_err().0.contains("duplicate"));
        assert!(toml::from_str::<RunConfig>(&MINIMAL.replace("tasks", "taskz")).is_err());
    }
}
