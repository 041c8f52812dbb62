//! Client for OpenAI-compatible chat-completions endpoints.
//!
//! Every prompt is sent as a single user message. Responses are stored in a
//! content-addressed on-disk cache keyed on (model, prompt, temperature,
//! max_tokens), so reruns never re-query a prompt that already has an
//! answer. Transient failures (429, 408, 5xx, timeouts, connection errors)
//! are retried with exponential backoff and jitter.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use futures::stream::{self, StreamExt};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::sync::Mutex;

use crate::parser::PredictionRecord;
use crate::promptgen::{InferenceLine, PromptInstance};
use crate::scenario::ScenarioId;

pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid endpoint configuration: {0}")]
    Config(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Endpoint { status: u16, body: String },
    #[error("gave up after {attempts} attempts; last error: {last}")]
    RetryExhausted { attempts: u32, last: String },
    #[error("malformed response from endpoint: {0}")]
    Protocol(String),
    #[error("cache error at {path}: {message}")]
    Cache { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    #[serde(with = "millis")]
    pub base_backoff: Duration,
    #[serde(with = "millis")]
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Backoff before retry number `retry` (1-based), without jitter.
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry.saturating_sub(1));
        self.base_backoff
            .saturating_mul(factor)
            .min(self.max_backoff)
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

/// Endpoint settings. The API key is not part of this struct; it is read
/// from the environment variable named by `api_key_env` when the client is
/// built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    pub api_key_env: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(with = "millis", rename = "timeout_ms")]
    pub timeout: Duration,
    pub max_parallel: usize,
    pub retry: RetryPolicy,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com".into(),
            model_name: "gpt-4".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            temperature: 0.0,
            max_tokens: 256,
            timeout: Duration::from_secs(60),
            max_parallel: 8,
            retry: RetryPolicy::default(),
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), ClientError> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(ClientError::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_parallel == 0 {
            return Err(ClientError::Config(
                "max_parallel must be at least 1".into(),
            ));
        }
        if self.retry.max_attempts == 0 {
            return Err(ClientError::Config(
                "retry.max_attempts must be at least 1".into(),
            ));
        }
        if self.model_name.is_empty() {
            return Err(ClientError::Config("model_name is empty".into()));
        }
        reqwest::Url::parse(&self.base_url)
            .map_err(|e| ClientError::Config(format!("base_url `{}`: {e}", self.base_url)))?;
        Ok(())
    }

    /// `base_url` may be the server root or already end in `/v1`.
    pub fn completions_url(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/v1") {
            format!("{base}/chat/completions")
        } else {
            format!("{base}/v1/chat/completions")
        }
    }
}

/// An API key that never prints.
#[derive(Clone, Default)]
pub struct Secret(Option<String>);

impl Secret {
    pub fn from_env(var: &str) -> Self {
        Self(std::env::var(var).ok().filter(|v| !v.is_empty()))
    }

    pub fn new(value: impl Into<String>) -> Self {
        Self(Some(value.into()))
    }

    fn expose(&self) -> Option<&str> {
        self.0.as_deref()
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.0.is_some() {
            "Secret(***)"
        } else {
            "Secret(none)"
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_name: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl CompletionRequest {
    pub fn new(config: &EndpointConfig, prompt: impl Into<String>) -> Self {
        Self {
            model_name: config.model_name.clone(),
            prompt: prompt.into(),
            temperature: config.temperature,
            max_tokens: config.max_tokens,
        }
    }

    /// SHA-256 over the fields that determine the answer.
    pub fn cache_key(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.model_name.as_bytes());
        h.update([0]);
        h.update(self.prompt.as_bytes());
        h.update([0]);
        h.update(self.temperature.to_bits().to_le_bytes());
        h.update(self.max_tokens.to_le_bytes());
        hex::encode(h.finalize())
    }

    fn body(&self) -> serde_json::Value {
        serde_json::json!({
            "model": self.model_name,
            "messages": [{"role": "user", "content": self.prompt}],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
    #[serde(default)]
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub finish_reason: Option<String>,
    pub usage: Option<Usage>,
    pub latency_ms: u64,
    #[serde(skip)]
    pub cached: bool,
}

/// One cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub request_digest: String,
    pub response: CompletionResponse,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

/// Content-addressed response cache: `<dir>/<key[..2]>/<key>.json`.
///
/// Reads may run concurrently; writes go through a lock and land via
/// write-to-temp-then-rename, so a reader never sees a partial file.
#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ClientError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| ClientError::Cache {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(Self {
            dir,
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    pub async fn get(&self, key: &str) -> Option<CacheEntry> {
        let bytes = tokio::fs::read(self.entry_path(key)).await.ok()?;
        serde_json::from_slice::<CacheEntry>(&bytes)
            .ok()
            .filter(|e| e.key == key)
    }

    pub async fn put(&self, entry: &CacheEntry) -> Result<(), ClientError> {
        let path = self.entry_path(&entry.key);
        let err = |e: std::io::Error| ClientError::Cache {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let _guard = self.write_lock.lock().await;
        tokio::fs::create_dir_all(path.parent().expect("entry has a parent"))
            .await
            .map_err(err)?;
        let tmp = path.with_extension("json.tmp");
        let bytes = serde_json::to_vec(entry).expect("cache entry serializes");
        tokio::fs::write(&tmp, bytes).await.map_err(err)?;
        tokio::fs::rename(&tmp, &path).await.map_err(err)?;
        Ok(())
    }

    /// Number of stored entries.
    pub fn len(&self) -> usize {
        let Ok(shards) = std::fs::read_dir(&self.dir) else {
            return 0;
        };
        shards
            .flatten()
            .filter_map(|s| std::fs::read_dir(s.path()).ok())
            .flat_map(|files| files.flatten())
            .filter(|f| f.path().extension().is_some_and(|e| e == "json"))
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

enum Attempt {
    Done(CompletionResponse),
    Transient {
        message: String,
        retry_after: Option<Duration>,
    },
    Fatal(ClientError),
}

#[derive(Debug, Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireMessage,
    finish_reason: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    usage: Option<Usage>,
}

fn excerpt(body: &str) -> String {
    const MAX: usize = 300;
    match body.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}...", &body[..i]),
        None => body.to_string(),
    }
}

/// Something that can be sent as one query.
pub trait QueryItem {
    fn text_id(&self) -> &str;
    fn annotator_id(&self) -> &str;
    fn scenario(&self) -> ScenarioId;
    fn prompt(&self) -> &str;
}

impl QueryItem for PromptInstance {
    fn text_id(&self) -> &str {
        &self.text_id
    }
    fn annotator_id(&self) -> &str {
        &self.annotator_id
    }
    fn scenario(&self) -> ScenarioId {
        self.scenario
    }
    fn prompt(&self) -> &str {
        &self.prompt_text
    }
}

impl QueryItem for InferenceLine {
    fn text_id(&self) -> &str {
        &self.text_id
    }
    fn annotator_id(&self) -> &str {
        &self.annotator_id
    }
    fn scenario(&self) -> ScenarioId {
        self.scenario
    }
    fn prompt(&self) -> &str {
        &self.prompt
    }
}

#[derive(Debug, Clone)]
pub struct LlmClient {
    config: EndpointConfig,
    api_key: Secret,
    http: reqwest::Client,
    cache: Option<Arc<ResponseCache>>,
}

impl LlmClient {
    /// Builds a client, reading the API key from the configured environment
    /// variable. A missing key is allowed (local servers often need none).
    pub fn new(config: EndpointConfig, cache: Option<ResponseCache>) -> Result<Self, ClientError> {
        let key = Secret::from_env(&config.api_key_env);
        Self::with_key(config, key, cache)
    }

    pub fn with_key(
        config: EndpointConfig,
        api_key: Secret,
        cache: Option<ResponseCache>,
    ) -> Result<Self, ClientError> {
        config.validate()?;
        let http = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ClientError::Config(e.to_string()))?;
        Ok(Self {
            config,
            api_key,
            http,
            cache: cache.map(Arc::new),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_deref()
    }

    /// Answers from the cache when possible, otherwise queries the endpoint
    /// (with retries) and caches the answer.
    pub async fn complete(
        &self,
        request: &CompletionRequest,
    ) -> Result<CompletionResponse, ClientError> {
        let key = request.cache_key();
        if let Some(cache) = &self.cache {
            if let Some(entry) = cache.get(&key).await {
                let mut response = entry.response;
                response.cached = true;
                return Ok(response);
            }
        }
        let body = request.body();
        let body_bytes = serde_json::to_vec(&body).expect("request serializes");
        let url = self.config.completions_url();
        let max = self.config.retry.max_attempts;
        let mut last = String::new();
        for attempt in 1..=max {
            match self.attempt(&url, &body_bytes).await {
                Attempt::Done(response) => {
                    if let Some(cache) = &self.cache {
                        let entry = CacheEntry {
                            key,
                            request_digest: hex::encode(Sha256::digest(&body_bytes)),
                            response: response.clone(),
                            timestamp: SystemTime::now()
                                .duration_since(UNIX_EPOCH)
                                .map(|d| d.as_secs())
                                .unwrap_or(0),
                        };
                        cache.put(&entry).await?;
                    }
                    return Ok(response);
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Transient {
                    message,
                    retry_after,
                } => {
                    tracing::debug!(attempt, %message, "transient failure");
                    last = message;
                    if attempt < max {
                        let base = self.config.retry.backoff(attempt);
                        let jitter_ms = rand::rng().random_range(0..=base.as_millis() as u64 / 2);
                        let wait = retry_after
                            .map(|r| r.min(self.config.retry.max_backoff))
                            .unwrap_or(base + Duration::from_millis(jitter_ms));
                        tokio::time::sleep(wait).await;
                    }
                }
            }
        }
        Err(ClientError::RetryExhausted {
            attempts: max,
            last,
        })
    }

    async fn attempt(&self, url: &str, body: &[u8]) -> Attempt {
        let mut req = self
            .http
            .post(url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_vec());
        if let Some(key) = self.api_key.expose() {
            req = req.bearer_auth(key);
        }
        let started = Instant::now();
        let resp = match req.send().await {
            Ok(r) => r,
            Err(e) if e.is_timeout() || e.is_connect() || e.is_request() => {
                return Attempt::Transient {
                    message: e.to_string(),
                    retry_after: None,
                }
            }
            Err(e) => return Attempt::Fatal(ClientError::Protocol(e.to_string())),
        };
        let status = resp.status();
        let retry_after = resp
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = match resp.text().await {
            Ok(t) => t,
            Err(e) => {
                return Attempt::Transient {
                    message: format!("reading body: {e}"),
                    retry_after: None,
                }
            }
        };
        let latency_ms = started.elapsed().as_millis() as u64;
        let code = status.as_u16();
        if code == 429 || code == 408 || status.is_server_error() {
            return Attempt::Transient {
                message: format!("HTTP {code}: {}", excerpt(&text)),
                retry_after,
            };
        }
        if !status.is_success() {
            return Attempt::Fatal(ClientError::Endpoint {
                status: code,
                body: excerpt(&text),
            });
        }
        let wire: WireResponse = match serde_json::from_str(&text) {
            Ok(w) => w,
            Err(e) => {
                return Attempt::Fatal(ClientError::Protocol(format!(
                    "{e}; body: {}",
                    excerpt(&text)
                )))
            }
        };
        let Some(choice) = wire.choices.into_iter().next() else {
            return Attempt::Fatal(ClientError::Protocol("response has no choices".into()));
        };
        Attempt::Done(CompletionResponse {
            text: choice.message.content.unwrap_or_default(),
            finish_reason: choice.finish_reason,
            usage: wire.usage,
            latency_ms,
            cached: false,
        })
    }

    /// Queries every item with at most `max_parallel` requests in flight.
    ///
    /// Output order equals input order. A failing item carries its error in
    /// the record and does not stop the batch. Each answer is cached as soon
    /// as it arrives, so an interrupted batch resumes from the cache.
    pub async fn run_batch<Q: QueryItem + Sync>(&self, items: &[Q]) -> Vec<PredictionRecord> {
        stream::iter(items.iter())
            .map(|item| async move {
                let mut record = PredictionRecord::unparsed(
                    item.text_id(),
                    item.annotator_id(),
                    item.scenario(),
                );
                let request = CompletionRequest::new(&self.config, item.prompt());
                match self.complete(&request).await {
                    Ok(response) => record.raw_response = response.text,
                    Err(e) => record.error = Some(e.to_string()),
                }
                record
            })
            .buffered(self.config.max_parallel)
            .collect()
            .await
    }
}
