use std::path::{Path, PathBuf};

use hitl_core::GenerationParams;
use sha2::{Digest, Sha256};

/// On-disk store of raw model responses keyed by annotator, model, prompt
/// and generation parameters.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(ResponseCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(annotator_id: &str, model: &str, prompt: &str, params: &GenerationParams) -> String {
        let mut h = Sha256::new();
        for part in [annotator_id, model, prompt] {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
        h.update(params.temperature.to_bits().to_le_bytes());
        h.update(params.max_tokens.to_le_bytes());
        hex::encode(h.finalize())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        std::fs::read_to_string(self.dir.join(format!("{key}.txt"))).ok()
    }

    pub fn put(&self, key: &str, raw: &str) -> std::io::Result<()> {
        // write-then-rename so a crash never leaves a truncated entry
        let tmp = self.dir.join(format!("{key}.tmp"));
        std::fs::write(&tmp, raw)?;
        std::fs::rename(tmp, self.dir.join(format!("{key}.txt")))
    }
}
