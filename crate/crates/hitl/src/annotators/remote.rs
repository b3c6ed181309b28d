use std::sync::Arc;
use std::time::{Duration, Instant};

use hitl_core::tasking::PromptText;
use hitl_core::GenerationParams;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::{Mutex, Semaphore};

use super::{AnnotateError, ResponseCache};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub id: String,
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the API key. No auth header when unset.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_auth_header")]
    pub auth_header: String,
    #[serde(default = "default_auth_prefix")]
    pub auth_prefix: String,
    /// JSON body with `{model}`, `{prompt}`, `{temperature}` and
    /// `{max_tokens}` placeholders. Defaults to a chat-completions body.
    #[serde(default)]
    pub request_template: Option<Value>,
    /// Dotted path to the response text; numeric segments index arrays.
    #[serde(default = "default_response_path")]
    pub response_path: String,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    /// Zero disables rate limiting.
    #[serde(default = "default_rate")]
    pub rate_per_minute: u32,
}

fn default_auth_header() -> String {
    "Authorization".into()
}
fn default_auth_prefix() -> String {
    "Bearer ".into()
}
fn default_response_path() -> String {
    "choices.0.message.content".into()
}
fn default_timeout() -> u64 {
    60_000
}
fn default_concurrency() -> usize {
    4
}
fn default_rate() -> u32 {
    60
}

pub fn default_request_template() -> Value {
    serde_json::json!({
        "model": "{model}",
        "messages": [{"role": "user", "content": "{prompt}"}],
        "temperature": "{temperature}",
        "max_tokens": "{max_tokens}",
    })
}

/// Token bucket refilled continuously at `per_minute / 60` tokens a second.
#[derive(Debug)]
pub struct TokenBucket {
    capacity: f64,
    per_sec: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(per_minute: u32, burst: usize) -> Self {
        let capacity = burst.max(1) as f64;
        TokenBucket {
            capacity,
            per_sec: per_minute as f64 / 60.0,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    pub async fn acquire(&self) {
        if self.per_sec <= 0.0 {
            return;
        }
        loop {
            let wait = {
                let mut st = self.state.lock().await;
                let now = Instant::now();
                let refill = now.duration_since(st.1).as_secs_f64() * self.per_sec;
                st.0 = (st.0 + refill).min(self.capacity);
                st.1 = now;
                if st.0 >= 1.0 {
                    st.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - st.0) / self.per_sec)
            };
            tokio::time::sleep(wait).await;
        }
    }
}

pub struct RemoteClient {
    config: ProviderConfig,
    http: reqwest::Client,
    auth: Option<String>,
    permits: Arc<Semaphore>,
    bucket: TokenBucket,
    cache: Option<Arc<ResponseCache>>,
}

impl RemoteClient {
    pub fn new(config: ProviderConfig, cache: Option<Arc<ResponseCache>>) -> Result<Self, AnnotateError> {
        let auth = match &config.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| AnnotateError::MissingCredential(var.clone()))?),
            None => None,
        };
        let http = reqwest::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| AnnotateError::Transport(e.to_string()))?;
        Ok(RemoteClient {
            permits: Arc::new(Semaphore::new(config.max_concurrency.max(1))),
            bucket: TokenBucket::new(config.rate_per_minute, config.max_concurrency),
            config,
            http,
            auth,
            cache,
        })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    /// Raw response text for `prompt`. A failed or unparseable first attempt
    /// is retried once; only parseable responses are cached.
    pub async fn complete(&self, prompt: &PromptText, params: GenerationParams) -> Result<String, AnnotateError> {
        let key = ResponseCache::key(&self.config.id, &self.config.model, &prompt.text, &params);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            return Ok(hit);
        }
        let expected = prompt.unit_ids.len();
        let mut last = None;
        for attempt in 0..2 {
            match self.request(&prompt.text, params).await {
                Ok(raw) => match hitl_core::parse_response(&raw, expected) {
                    Ok(_) => {
                        if let Some(c) = &self.cache {
                            if let Err(e) = c.put(&key, &raw) {
                                tracing::warn!("cache write failed: {e}");
                            }
                        }
                        return Ok(raw);
                    }
                    Err(error) => last = Some(AnnotateError::Unparseable { error, raw }),
                },
                Err(e) => last = Some(e),
            }
            tracing::debug!(annotator = %self.config.id, attempt, "remote attempt failed");
        }
        Err(last.expect("two attempts were made"))
    }

    async fn request(&self, prompt: &str, params: GenerationParams) -> Result<String, AnnotateError> {
        let _permit = self.permits.acquire().await.expect("semaphore is never closed");
        self.bucket.acquire().await;
        let template = self.config.request_template.clone().unwrap_or_else(default_request_template);
        let body = fill_template(template, &self.config.model, prompt, params);
        let mut req = self.http.post(&self.config.base_url).json(&body);
        if let Some(key) = &self.auth {
            req = req.header(self.config.auth_header.as_str(), format!("{}{key}", self.config.auth_prefix));
        }
        let resp = req.send().await.map_err(|e| AnnotateError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(AnnotateError::Transport(format!("HTTP {status}")));
        }
        let json: Value = resp.json().await.map_err(|e| AnnotateError::Transport(e.to_string()))?;
        extract_path(&json, &self.config.response_path)
            .ok_or_else(|| AnnotateError::Transport(format!("no string at {}", self.config.response_path)))
    }
}

/// Substitute placeholders in every string of `template`. A string that is
/// exactly `{temperature}` or `{max_tokens}` becomes a JSON number.
pub fn fill_template(template: Value, model: &str, prompt: &str, params: GenerationParams) -> Value {
    match template {
        Value::String(s) => match s.as_str() {
            "{temperature}" => serde_json::json!(params.temperature),
            "{max_tokens}" => serde_json::json!(params.max_tokens),
            _ => {
                // model first so prompt text is never rescanned
                let s = s
                    .replace("{model}", model)
                    .replace("{temperature}", &params.temperature.to_string())
                    .replace("{max_tokens}", &params.max_tokens.to_string());
                Value::String(s.replace("{prompt}", prompt))
            }
        },
        Value::Array(items) => Value::Array(items.into_iter().map(|v| fill_template(v, model, prompt, params)).collect()),
        Value::Object(map) => Value::Object(
            map.into_iter().map(|(k, v)| (k, fill_template(v, model, prompt, params))).collect(),
        ),
        other => other,
    }
}

pub fn extract_path(value: &Value, path: &str) -> Option<String> {
    let mut cur = value;
    for seg in path.split('.').filter(|s| !s.is_empty()) {
        cur = match cur {
            Value::Array(items) => items.get(seg.parse::<usize>().ok()?)?,
            Value::Object(map) => map.get(seg)?,
            _ => return None,
        };
    }
    cur.as_str().map(str::to_string)
}
