//! Model access: chat, embedding and transcription endpoints behind one
//! client with an on-disk response cache, retries, per-endpoint concurrency
//! limits and record/replay.
//!
//! Requests are first expressed as a logical [`Request`]; the cache key is a
//! digest of that logical form, so replay never needs the network or any
//! media tooling. A [`Transport`] turns the logical request into wire traffic.

mod cache;
mod http;
mod limiter;
pub mod mock;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::VideoRef;
use crate::media::Segment;

pub use cache::{CacheEntry, ResponseCache};
pub use http::{FrameEncoder, HttpTransport};
use limiter::Limiter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    Chat,
    ChatVision,
    Embedding,
    Transcription,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub seed: Option<u64>,
    pub max_tokens: u32,
    pub n_samples: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 1.0,
            top_p: 1.0,
            seed: None,
            max_tokens: 1024,
            n_samples: 1,
        }
    }
}

impl SamplingParams {
    /// Near-greedy decoding used for benchmark evaluation of open models.
    pub fn evaluation() -> Self {
        SamplingParams {
            temperature: 0.1,
            top_p: 0.001,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidConfig(format!("temperature {} must be >= 0", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::InvalidConfig(format!("top_p {} must be in (0, 1]", self.top_p)));
        }
        if self.n_samples < 1 {
            return Err(GatewayError::InvalidConfig("n_samples must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff_ms: 500,
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, failed_attempts: u32) -> Duration {
        let ms = self.initial_backoff_ms as f64 * self.multiplier.powi(failed_attempts.saturating_sub(1) as i32);
        Duration::from_millis(ms.min(60_000.0) as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    pub kind: EndpointKind,
    #[serde(default)]
    pub sampling: SamplingParams,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_parallel() -> usize {
    4
}

fn default_timeout() -> u64 {
    120
}

pub const DEFAULT_BASE_URL: &str = "http://localhost:8000/v1";

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, kind: EndpointKind) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            model: model.into(),
            kind,
            sampling: SamplingParams::default(),
            auth_env: None,
            max_parallel: default_parallel(),
            retry: RetryPolicy::default(),
            timeout_secs: default_timeout(),
        }
    }

    pub fn transcriber() -> Self {
        Self::new(DEFAULT_BASE_URL, "whisper", EndpointKind::Transcription)
    }

    pub fn embedder() -> Self {
        Self::new(DEFAULT_BASE_URL, "Qwen3-Embedding-8B", EndpointKind::Embedding)
    }

    pub fn rewriter() -> Self {
        Self::new(DEFAULT_BASE_URL, "DeepSeek-R1", EndpointKind::Chat)
    }

    pub fn verifier() -> Self {
        let mut cfg = Self::new(DEFAULT_BASE_URL, "Qwen2.5-VL-7B-Instruct", EndpointKind::Chat);
        cfg.sampling = SamplingParams::evaluation();
        cfg
    }

    pub fn blind_panel() -> Vec<Self> {
        ["Qwen3-32B", "Llama-3.3-70B-Instruct", "Reka-Flash-3"]
            .into_iter()
            .map(|m| Self::new(DEFAULT_BASE_URL, m, EndpointKind::Chat))
            .collect()
    }

    pub fn with_sampling(&self, sampling: SamplingParams) -> Self {
        EndpointConfig {
            sampling,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_parallel < 1 {
            return Err(GatewayError::InvalidConfig("max_parallel must be >= 1".into()));
        }
        if self.retry.max_attempts < 1 {
            return Err(GatewayError::InvalidConfig("retry.max_attempts must be >= 1".into()));
        }
        if self.model.is_empty() {
            return Err(GatewayError::InvalidConfig("model must be set".into()));
        }
        self.sampling.validate()
    }

    fn limiter_key(&self) -> String {
        format!("{}#{}", self.base_url, self.model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// Frames to attach to a message, by reference. Pixels are only produced by
/// the transport when the request actually goes on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAttachment {
    pub video: VideoRef,
    pub timestamps: Vec<f64>,
    pub resolution_budget: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<FrameAttachment>,
}

impl Message {
    pub fn system(text: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            text: text.into(),
            frames: None,
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            text: text.into(),
            frames: None,
        }
    }

    pub fn user_with_frames(text: impl Into<String>, frames: FrameAttachment) -> Self {
        Message {
            role: Role::User,
            text: text.into(),
            frames: Some(frames),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Chat {
        messages: Vec<Message>,
        sampling: SamplingParams,
        sample_index: u32,
    },
    Embed {
        input: String,
    },
    Transcribe {
        video: VideoRef,
    },
}

impl Request {
    /// Concatenated text of every message, for inspection in tests and logs.
    pub fn text(&self) -> String {
        match self {
            Request::Chat { messages, .. } => messages.iter().map(|m| m.text.as_str()).collect::<Vec<_>>().join("\n"),
            Request::Embed { input } => input.clone(),
            Request::Transcribe { video } => video.uri.clone(),
        }
    }

    pub fn sample_index(&self) -> Option<u32> {
        match self {
            Request::Chat { sample_index, .. } => Some(*sample_index),
            _ => None,
        }
    }

    pub fn frames(&self) -> Option<&FrameAttachment> {
        match self {
            Request::Chat { messages, .. } => messages.iter().find_map(|m| m.frames.as_ref()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Response {
    Text(String),
    Embedding(Vec<f64>),
    Transcript(Vec<Segment>),
}

/// Content digest of `(endpoint kind, model, canonical request)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey(pub String);

impl CacheKey {
    pub fn compute(cfg: &EndpointConfig, request: &Request) -> Self {
        let canonical = canonical_request(cfg, request);
        let digest = Sha256::digest(canonical.to_string().as_bytes());
        CacheKey(hex::encode(digest))
    }
}

impl std::fmt::Display for CacheKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// serde_json maps are key-sorted, so this rendering is canonical.
fn canonical_request(cfg: &EndpointConfig, request: &Request) -> serde_json::Value {
    serde_json::json!({
        "kind": cfg.kind,
        "model": cfg.model,
        "request": request,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("decode error: {0}")]
    Decode(String),
    #[error("{0}")]
    Other(String),
}

impl TransportError {
    fn retryable(&self) -> bool {
        match self {
            TransportError::Timeout | TransportError::Connect(_) => true,
            TransportError::Status { status, .. } => *status == 429 || *status >= 500,
            TransportError::Decode(_) | TransportError::Other(_) => false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("{model}: timed out after {attempts} attempt(s)")]
    Timeout { model: String, attempts: u32 },
    #[error("{model}: connection failed after {attempts} attempt(s): {reason}")]
    Connect { model: String, attempts: u32, reason: String },
    #[error("{model}: http status {status} after {attempts} attempt(s): {body}")]
    HttpStatus {
        model: String,
        status: u16,
        attempts: u32,
        body: String,
    },
    #[error("{model}: cannot decode response: {reason}")]
    Decode { model: String, reason: String },
    #[error("replay cache miss for {model} ({key})")]
    ReplayMiss { model: String, key: CacheKey },
    #[error("{model}: embedding dimension {got} differs from earlier {expected}")]
    DimensionMismatch { model: String, expected: usize, got: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid endpoint config: {0}")]
    InvalidConfig(String),
    #[error("cache io: {0}")]
    Cache(#[from] std::io::Error),
}

/// Wire layer. Implementations must be callable from many threads.
pub trait Transport: Send + Sync {
    fn send(&self, endpoint: &EndpointConfig, request: &Request) -> Result<Response, TransportError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    /// No cache reads or writes.
    Off,
    /// Serve hits from the cache; call the transport on a miss and store the result.
    Record,
    /// Serve only from the cache; a miss is an error.
    Replay,
}

impl std::str::FromStr for CacheMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "off" => Ok(CacheMode::Off),
            "record" => Ok(CacheMode::Record),
            "replay" => Ok(CacheMode::Replay),
            other => Err(format!("unknown cache mode {other:?} (off|record|replay)")),
        }
    }
}

/// A response together with the latency recorded when it was first fetched.
#[derive(Debug, Clone, PartialEq)]
pub struct Exchange {
    pub response: Response,
    pub latency_secs: f64,
    pub from_cache: bool,
}

#[derive(Debug, Default)]
struct Counters {
    network_calls: AtomicU64,
    cache_hits: AtomicU64,
    cache_writes: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GatewayStats {
    /// Transport invocations, retries included.
    pub network_calls: u64,
    pub cache_hits: u64,
    pub cache_writes: u64,
}

pub struct Gateway {
    transport: Arc<dyn Transport>,
    cache: Option<ResponseCache>,
    mode: CacheMode,
    limiters: Mutex<HashMap<String, Arc<Limiter>>>,
    dims: Mutex<HashMap<String, usize>>,
    counters: Counters,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("mode", &self.mode)
            .field("cache", &self.cache.as_ref().map(|c| c.root().to_path_buf()))
            .finish()
    }
}

impl Gateway {
    /// Gateway without a cache; every call reaches the transport.
    pub fn uncached(transport: Arc<dyn Transport>) -> Self {
        Self::build(transport, None, CacheMode::Off)
    }

    pub fn with_cache(transport: Arc<dyn Transport>, cache_dir: impl Into<std::path::PathBuf>, mode: CacheMode) -> Self {
        let cache = match mode {
            CacheMode::Off => None,
            _ => Some(ResponseCache::new(cache_dir.into())),
        };
        Self::build(transport, cache, mode)
    }

    fn build(transport: Arc<dyn Transport>, cache: Option<ResponseCache>, mode: CacheMode) -> Self {
        Gateway {
            transport,
            cache,
            mode,
            limiters: Mutex::new(HashMap::new()),
            dims: Mutex::new(HashMap::new()),
            counters: Counters::default(),
        }
    }

    pub fn mode(&self) -> CacheMode {
        self.mode
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            network_calls: self.counters.network_calls.load(Ordering::SeqCst),
            cache_hits: self.counters.cache_hits.load(Ordering::SeqCst),
            cache_writes: self.counters.cache_writes.load(Ordering::SeqCst),
        }
    }

    fn limiter(&self, cfg: &EndpointConfig) -> Arc<Limiter> {
        let mut map = self.limiters.lock().unwrap_or_else(|e| e.into_inner());
        map.entry(cfg.limiter_key())
            .or_insert_with(|| Arc::new(Limiter::new(cfg.max_parallel)))
            .clone()
    }

    /// Executes a logical request through cache, limiter and retry policy.
    pub fn execute(&self, cfg: &EndpointConfig, request: &Request) -> Result<Exchange, GatewayError> {
        cfg.validate()?;
        let key = CacheKey::compute(cfg, request);

        if let (Some(cache), CacheMode::Record | CacheMode::Replay) = (&self.cache, self.mode) {
            if let Some(entry) = cache.get(&cfg.model, &key)? {
                self.counters.cache_hits.fetch_add(1, Ordering::SeqCst);
                return Ok(Exchange {
                    response: entry.response,
                    latency_secs: entry.latency_secs,
                    from_cache: true,
                });
            }
            if self.mode == CacheMode::Replay {
                return Err(GatewayError::ReplayMiss {
                    model: cfg.model.clone(),
                    key,
                });
            }
        }

        let started = Instant::now();
        let response = self.send_with_retry(cfg, request)?;
        let latency_secs = started.elapsed().as_secs_f64();

        if let (Some(cache), CacheMode::Record) = (&self.cache, self.mode) {
            let entry = CacheEntry {
                key: key.clone(),
                kind: cfg.kind,
                model: cfg.model.clone(),
                request: canonical_request(cfg, request),
                response: response.clone(),
                recorded_at: chrono::Utc::now(),
                latency_secs,
            };
            cache.put(&entry)?;
            self.counters.cache_writes.fetch_add(1, Ordering::SeqCst);
        }
        Ok(Exchange {
            response,
            latency_secs,
            from_cache: false,
        })
    }

    fn send_with_retry(&self, cfg: &EndpointConfig, request: &Request) -> Result<Response, GatewayError> {
        let limiter = self.limiter(cfg);
        let max = cfg.retry.max_attempts;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let result = {
                let _permit = limiter.acquire();
                self.counters.network_calls.fetch_add(1, Ordering::SeqCst);
                self.transport.send(cfg, request)
            };
            match result {
                Ok(r) => return Ok(r),
                Err(e) if e.retryable() && attempt < max => {
                    log::warn!("{}: attempt {attempt}/{max} failed: {e}; retrying", cfg.model);
                    std::thread::sleep(cfg.retry.backoff(attempt));
                }
                Err(e) => return Err(Self::lift(cfg, e, attempt)),
            }
        }
    }

    fn lift(cfg: &EndpointConfig, e: TransportError, attempts: u32) -> GatewayError {
        let model = cfg.model.clone();
        match e {
            TransportError::Timeout => GatewayError::Timeout { model, attempts },
            TransportError::Connect(reason) => GatewayError::Connect { model, attempts, reason },
            TransportError::Status { status, body } => GatewayError::HttpStatus {
                model,
                status,
                attempts,
                body,
            },
            TransportError::Decode(reason) | TransportError::Other(reason) => GatewayError::Decode { model, reason },
        }
    }

    fn check_chat(cfg: &EndpointConfig, messages: &[Message]) -> Result<(), GatewayError> {
        match cfg.kind {
            EndpointKind::Chat => {
                if messages.iter().any(|m| m.frames.is_some()) {
                    return Err(GatewayError::InvalidRequest(format!(
                        "{} is a text-only chat endpoint; frames need chat_vision",
                        cfg.model
                    )));
                }
                Ok(())
            }
            EndpointKind::ChatVision => Ok(()),
            other => Err(GatewayError::InvalidRequest(format!("chat on a {other:?} endpoint"))),
        }
    }

    /// One completion for a given sample index.
    pub fn chat_sample(&self, cfg: &EndpointConfig, messages: &[Message], sample_index: u32) -> Result<Completion, GatewayError> {
        Self::check_chat(cfg, messages)?;
        let request = Request::Chat {
            messages: messages.to_vec(),
            sampling: cfg.sampling.clone(),
            sample_index,
        };
        let ex = self.execute(cfg, &request)?;
        match ex.response {
            Response::Text(text) => Ok(Completion {
                text,
                latency_secs: ex.latency_secs,
            }),
            other => Err(GatewayError::Decode {
                model: cfg.model.clone(),
                reason: format!("expected text, got {other:?}"),
            }),
        }
    }

    pub fn chat(&self, cfg: &EndpointConfig, messages: &[Message]) -> Result<String, GatewayError> {
        self.chat_sample(cfg, messages, 0).map(|c| c.text)
    }

    /// `n` completions, sample indices `0..n`, each cached separately.
    pub fn sample_n(&self, cfg: &EndpointConfig, messages: &[Message], n: u32) -> Result<Vec<String>, GatewayError> {
        if n < 1 {
            return Err(GatewayError::InvalidRequest("sample_n needs n >= 1".into()));
        }
        (0..n).map(|i| self.chat_sample(cfg, messages, i).map(|c| c.text)).collect()
    }

    pub fn embed(&self, cfg: &EndpointConfig, text: &str) -> Result<Vec<f64>, GatewayError> {
        if cfg.kind != EndpointKind::Embedding {
            return Err(GatewayError::InvalidRequest(format!("embed on a {:?} endpoint", cfg.kind)));
        }
        let ex = self.execute(cfg, &Request::Embed { input: text.to_string() })?;
        let vector = match ex.response {
            Response::Embedding(v) => v,
            other => {
                return Err(GatewayError::Decode {
                    model: cfg.model.clone(),
                    reason: format!("expected embedding, got {other:?}"),
                })
            }
        };
        let mut dims = self.dims.lock().unwrap_or_else(|e| e.into_inner());
        match dims.get(&cfg.model) {
            Some(&expected) if expected != vector.len() => Err(GatewayError::DimensionMismatch {
                model: cfg.model.clone(),
                expected,
                got: vector.len(),
            }),
            Some(_) => Ok(vector),
            None => {
                dims.insert(cfg.model.clone(), vector.len());
                Ok(vector)
            }
        }
    }

    pub fn transcribe(&self, cfg: &EndpointConfig, video: &VideoRef) -> Result<Vec<Segment>, GatewayError> {
        if cfg.kind != EndpointKind::Transcription {
            return Err(GatewayError::InvalidRequest(format!("transcribe on a {:?} endpoint", cfg.kind)));
        }
        let ex = self.execute(cfg, &Request::Transcribe { video: video.clone() })?;
        match ex.response {
            Response::Transcript(segments) => Ok(segments),
            other => Err(GatewayError::Decode {
                model: cfg.model.clone(),
                reason: format!("expected transcript, got {other:?}"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub latency_secs: f64,
}
