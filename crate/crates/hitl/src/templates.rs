//! Task templates on disk: `<dir>/<task>.<mode>.toml`, e.g.
//! `quality.fss.toml`. Missing files fall back to the built-in wording.

use std::collections::BTreeMap;
use std::path::Path;

use hitl_core::tasking::{PromptMode, TaskTemplate};
use hitl_core::TaskKind;
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("reading template {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("template {path}: {source}")]
    Parse { path: String, source: toml::de::Error },
}

/// Template file contents. `task` is implied by the file name.
#[derive(Debug, Deserialize)]
struct TemplateFile {
    guideline: String,
    #[serde(default)]
    rationale: String,
    scale: String,
    rephrased: Option<String>,
    body: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct TemplateSet {
    overrides: BTreeMap<(TaskKind, PromptMode), TaskTemplate>,
}

impl TemplateSet {
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = TemplateSet::default();
        for task in TaskKind::ALL {
            for mode in [PromptMode::Zss, PromptMode::Fss] {
                let path = dir.join(format!("{}.{}.toml", task.as_str(), mode.as_str()));
                if !path.exists() {
                    continue;
                }
                let shown = path.display().to_string();
                let text = std::fs::read_to_string(&path)
                    .map_err(|source| TemplateError::Io { path: shown.clone(), source })?;
                let file: TemplateFile =
                    toml::from_str(&text).map_err(|source| TemplateError::Parse { path: shown, source })?;
                let default = TaskTemplate::default_for(task);
                set.overrides.insert(
                    (task, mode),
                    TaskTemplate {
                        task,
                        rephrased: file.rephrased.unwrap_or_else(|| file.guideline.clone()),
                        guideline: file.guideline,
                        rationale: file.rationale,
                        scale: file.scale,
                        body: file.body.unwrap_or(default.body),
                    },
                );
            }
        }
        Ok(set)
    }

    pub fn get(&self, task: TaskKind, mode: PromptMode) -> TaskTemplate {
        self.overrides
            .get(&(task, mode))
            .cloned()
            .unwrap_or_else(|| TaskTemplate::default_for(task))
    }

    /// Write the built-in templates, one file per task and mode.
    pub fn write_defaults(dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for task in TaskKind::ALL {
            let t = TaskTemplate::default_for(task);
            let text = format!(
                "guideline = {}\nrationale = {}\nscale = {}\nrephrased = {}\nbody = {}\n",
                toml_str(&t.guideline),
                toml_str(&t.rationale),
                toml_str(&t.scale),
                toml_str(&t.rephrased),
                toml_str(&t.body),
            );
            for mode in [PromptMode::Zss, PromptMode::Fss] {
                std::fs::write(dir.join(format!("{}.{}.toml", task.as_str(), mode.as_str())), &text)?;
            }
        }
        Ok(())
    }
}

fn toml_str(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}
