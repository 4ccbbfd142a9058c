//! Chat-completion client: one independent single-turn conversation per
//! request, bounded retries, a deterministic mock, and JSONL transcripts.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Mutex, Once};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompt::Prompt;

/// Environment variable holding the live backend credential.
pub const API_KEY_ENV: &str = "DFORGE_API_KEY";

static CRYPTO: Once = Once::new();

/// Installs the process-wide TLS crypto provider used by HTTP clients.
pub fn install_crypto_provider() {
    CRYPTO.call_once(|| {
        let _ = rustls::crypto::ring::default_provider().install_default();
    });
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("backend returned HTTP {status} after {attempts} attempt(s): {body}")]
    Status {
        status: u16,
        attempts: u32,
        body: String,
    },
    #[error("malformed response body: {0}")]
    Malformed(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("credential missing: set {API_KEY_ENV}")]
    MissingCredential,
    #[error("mock backend has no fixture for prompt hash {hash}")]
    MissingFixture { hash: String },
    #[error("cannot load mock fixtures: {0}")]
    Fixtures(String),
    #[error("cannot build HTTP client: {0}")]
    Client(String),
}

/// Decoding settings shared by every request of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestSettings {
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for RequestSettings {
    fn default() -> Self {
        Self {
            model_name: "gpt-3.5-turbo".into(),
            temperature: 1.0,
            max_tokens: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub prompt: Prompt,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub request_id: String,
}

impl LlmRequest {
    /// New request with a random unique id.
    pub fn new(prompt: Prompt, settings: &RequestSettings) -> Self {
        Self::with_id(prompt, settings, uuid::Uuid::new_v4().to_string())
    }

    pub fn with_id(prompt: Prompt, settings: &RequestSettings, request_id: impl Into<String>) -> Self {
        Self {
            prompt,
            model_name: settings.model_name.clone(),
            temperature: settings.temperature,
            max_tokens: settings.max_tokens,
            request_id: request_id.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub request_id: String,
    pub raw_text: String,
    pub latency_ms: u64,
    pub backend: String,
    /// Number of HTTP attempts, 1 when no retry was needed.
    pub attempts: u32,
}

impl LlmResponse {
    pub fn retries(&self) -> u32 {
        self.attempts.saturating_sub(1)
    }
}

#[async_trait]
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    async fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError>;
}

/// Sends a single request.
pub async fn complete(req: &LlmRequest, backend: &dyn Backend) -> Result<LlmResponse, LlmError> {
    backend.complete(req).await
}

/// Sends `reqs` with at most `parallelism` in flight. Results come back in
/// request order; a failed request does not stop the others.
pub async fn complete_batch(
    reqs: &[LlmRequest],
    backend: &dyn Backend,
    parallelism: usize,
) -> Vec<Result<LlmResponse, LlmError>> {
    stream::iter(reqs)
        .map(|r| backend.complete(r))
        .buffered(parallelism.max(1))
        .collect()
        .await
}

/// Source of transcript timestamps.
pub trait Clock: Send + Sync {
    fn now(&self) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> String {
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
    }
}

/// Always reports the same instant; used with the mock backend so that
/// transcripts are reproducible byte for byte.
#[derive(Debug, Clone)]
pub struct FixedClock(pub String);

impl Default for FixedClock {
    fn default() -> Self {
        Self("1970-01-01T00:00:00.000Z".into())
    }
}

impl Clock for FixedClock {
    fn now(&self) -> String {
        self.0.clone()
    }
}

/// One request and its outcome.
#[derive(Debug)]
pub struct Exchange {
    pub request: LlmRequest,
    pub started: String,
    pub finished: String,
    pub result: Result<LlmResponse, LlmError>,
}

/// Like [`complete_batch`] but keeps the requests and timestamps for the
/// transcript.
pub async fn run_exchanges(
    reqs: Vec<LlmRequest>,
    backend: &dyn Backend,
    parallelism: usize,
    clock: &dyn Clock,
) -> Vec<Exchange> {
    stream::iter(reqs)
        .map(|request| async move {
            let started = clock.now();
            let result = backend.complete(&request).await;
            Exchange {
                request,
                started,
                finished: clock.now(),
                result,
            }
        })
        .buffered(parallelism.max(1))
        .collect()
        .await
}

/// Hex SHA-256 of a prompt's text; the mock fixture key.
pub fn prompt_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockFallback {
    /// Unknown prompts are an error.
    #[default]
    Error,
    /// Unknown prompts get a numbered list derived from the prompt hash.
    Synthesize,
}

/// Deterministic offline backend answering from a `{prompt hash: text}` map.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    fixtures: HashMap<String, String>,
    fallback: MockFallback,
}

impl MockBackend {
    pub fn new(fixtures: HashMap<String, String>, fallback: MockFallback) -> Self {
        Self { fixtures, fallback }
    }

    pub fn synthesizing() -> Self {
        Self::new(HashMap::new(), MockFallback::Synthesize)
    }

    /// Reads a JSON object mapping prompt hashes to completions.
    pub fn load(path: impl AsRef<Path>, fallback: MockFallback) -> Result<Self, LlmError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| LlmError::Fixtures(e.to_string()))?;
        let fixtures = serde_json::from_str(&text).map_err(|e| LlmError::Fixtures(e.to_string()))?;
        Ok(Self::new(fixtures, fallback))
    }

    pub fn insert(&mut self, prompt_text: &str, completion: impl Into<String>) {
        self.fixtures.insert(prompt_hash(prompt_text), completion.into());
    }

    fn synthesize(prompt: &Prompt, hash: &str) -> String {
        (1..=prompt.n_distractors)
            .map(|i| format!("{i}. option {}-{i}", &hash[..8]))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[async_trait]
impl Backend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    async fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let hash = prompt_hash(&req.prompt.text);
        let raw_text = match (self.fixtures.get(&hash), self.fallback) {
            (Some(text), _) => text.clone(),
            (None, MockFallback::Synthesize) => Self::synthesize(&req.prompt, &hash),
            (None, MockFallback::Error) => return Err(LlmError::MissingFixture { hash }),
        };
        Ok(LlmResponse {
            request_id: req.request_id.clone(),
            raw_text,
            latency_ms: 0,
            backend: self.name().to_string(),
            attempts: 1,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Exponential backoff for the given 0-based retry number, capped.
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

/// Live chat-completion backend.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    endpoint: String,
    api_key: String,
    client: reqwest::Client,
    retry: RetryPolicy,
}

impl HttpBackend {
    pub fn new(
        endpoint: impl Into<String>,
        api_key: impl Into<String>,
        timeout: Duration,
        retry: RetryPolicy,
    ) -> Result<Self, LlmError> {
        install_crypto_provider();
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Client(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            client,
            retry,
        })
    }

    /// Reads the credential from [`API_KEY_ENV`].
    pub fn from_env(
        endpoint: impl Into<String>,
        timeout: Duration,
        retry: RetryPolicy,
    ) -> Result<Self, LlmError> {
        let key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or(LlmError::MissingCredential)?;
        Self::new(endpoint, key, timeout, retry)
    }

    fn retry_after(resp: &reqwest::Response) -> Option<Duration> {
        resp.headers()
            .get(reqwest::header::RETRY_AFTER)?
            .to_str()
            .ok()?
            .trim()
            .parse::<u64>()
            .ok()
            .map(Duration::from_secs)
    }
}

enum Attempt {
    Done(Result<String, LlmError>),
    Retry {
        wait: Option<Duration>,
        give_up: LlmError,
    },
}

#[async_trait]
impl Backend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    async fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let body = ChatRequest {
            model: &req.model_name,
            messages: [ChatMessage {
                role: "user",
                content: &req.prompt.text,
            }],
            temperature: req.temperature,
            max_tokens: req.max_tokens,
        };
        let start = Instant::now();
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            let outcome = match self
                .client
                .post(&self.endpoint)
                .bearer_auth(&self.api_key)
                .json(&body)
                .send()
                .await
            {
                Err(e) if e.is_timeout() => Attempt::Retry {
                    wait: None,
                    give_up: LlmError::Timeout { attempts },
                },
                Err(e) => Attempt::Retry {
                    wait: None,
                    give_up: LlmError::Transport {
                        attempts,
                        message: e.to_string(),
                    },
                },
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    match status {
                        200..=299 => Attempt::Done(match resp.text().await {
                            Ok(text) => serde_json::from_str::<ChatResponse>(&text)
                                .map_err(|e| LlmError::Malformed(e.to_string()))
                                .and_then(|r| {
                                    r.choices
                                        .into_iter()
                                        .next()
                                        .map(|c| c.message.content)
                                        .ok_or_else(|| LlmError::Malformed("no choices".into()))
                                }),
                            Err(e) if e.is_timeout() => Err(LlmError::Timeout { attempts }),
                            Err(e) => Err(LlmError::Transport {
                                attempts,
                                message: e.to_string(),
                            }),
                        }),
                        401 | 403 => Attempt::Done(Err(LlmError::Auth { status })),
                        429 => Attempt::Retry {
                            wait: Self::retry_after(&resp),
                            give_up: LlmError::RateLimited { attempts },
                        },
                        408 | 500 | 502 | 503 | 504 => Attempt::Retry {
                            wait: Self::retry_after(&resp),
                            give_up: LlmError::Status {
                                status,
                                attempts,
                                body: resp.text().await.unwrap_or_default(),
                            },
                        },
                        _ => Attempt::Done(Err(LlmError::Status {
                            status,
                            attempts,
                            body: resp.text().await.unwrap_or_default(),
                        })),
                    }
                }
            };
            match outcome {
                Attempt::Done(result) => {
                    let raw_text = result?;
                    return Ok(LlmResponse {
                        request_id: req.request_id.clone(),
                        raw_text,
                        latency_ms: start.elapsed().as_millis() as u64,
                        backend: self.name().to_string(),
                        attempts,
                    });
                }
                Attempt::Retry { wait, give_up } => {
                    if attempts > self.retry.max_retries {
                        return Err(give_up);
                    }
                    let backoff = self.retry.delay(attempts - 1);
                    let delay = wait.map_or(backoff, |w| w.min(self.retry.max_delay));
                    tracing::debug!(request_id = %req.request_id, attempts, ?delay, "retrying");
                    tokio::time::sleep(delay).await;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRequest {
    pub request_id: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub strategy: String,
    pub target_id: String,
    pub example_ids: Vec<String>,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptTimestamps {
    pub started: String,
    pub finished: String,
}

/// One line of a transcript file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request: TranscriptRequest,
    pub response: Option<LlmResponse>,
    pub error: Option<String>,
    pub timestamps: TranscriptTimestamps,
}

impl From<&Exchange> for TranscriptEntry {
    fn from(x: &Exchange) -> Self {
        let r = &x.request;
        Self {
            request: TranscriptRequest {
                request_id: r.request_id.clone(),
                model: r.model_name.clone(),
                temperature: r.temperature,
                max_tokens: r.max_tokens,
                strategy: r.prompt.strategy.tag().to_string(),
                target_id: r.prompt.target_id.clone(),
                example_ids: r.prompt.example_ids.clone(),
                prompt: r.prompt.text.clone(),
            },
            response: x.result.as_ref().ok().cloned(),
            error: x.result.as_ref().err().map(ToString::to_string),
            timestamps: TranscriptTimestamps {
                started: x.started.clone(),
                finished: x.finished.clone(),
            },
        }
    }
}

/// Appends transcript entries as JSONL; appends are serialized.
pub struct TranscriptWriter {
    out: Mutex<BufWriter<File>>,
}

impl TranscriptWriter {
    pub fn create(path: impl AsRef<Path>) -> std::io::Result<Self> {
        Ok(Self {
            out: Mutex::new(BufWriter::new(File::create(path)?)),
        })
    }

    pub fn append_to(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: Mutex::new(BufWriter::new(f)),
        })
    }

    pub fn write(&self, entry: &TranscriptEntry) -> std::io::Result<()> {
        let line = serde_json::to_string(entry)?;
        let mut out = self.out.lock().expect("transcript lock poisoned");
        writeln!(out, "{line}")?;
        out.flush()
    }
}

pub fn read_transcript(path: impl AsRef<Path>) -> std::io::Result<Vec<TranscriptEntry>> {
    crate::jsonl::read(path)
}
