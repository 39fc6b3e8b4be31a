//! Access to text generators: remote HTTP APIs and an offline lexical mock,
//! behind a shared cache, rate limiter and retry loop.

mod cache;
mod http;
mod mock;

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{cache_key, ResponseCache};
pub use http::{HttpBackend, ANTHROPIC_KEY_VAR, OPENAI_KEY_VAR};
pub use mock::{mock_generate, MockLexicon, TOKEN_SLOT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited")]
    RateLimited,
    #[error("request timed out")]
    Timeout,
    #[error("backend returned an empty completion")]
    EmptyCompletion,
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("network error: {0}")]
    Network(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("cache error: {0}")]
    Cache(String),
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
}

impl GatewayError {
    /// Errors worth retrying after a pause.
    pub fn is_transient(&self) -> bool {
        match self {
            GatewayError::RateLimited | GatewayError::Timeout | GatewayError::Network(_) => true,
            GatewayError::Http { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    OpenaiCompletions,
    AnthropicMessages,
    Mock,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::OpenaiCompletions => "openai_completions",
            BackendKind::AnthropicMessages => "anthropic_messages",
            BackendKind::Mock => "mock",
        })
    }
}

impl std::str::FromStr for BackendKind {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "openai_completions" | "openai" => Ok(BackendKind::OpenaiCompletions),
            "anthropic_messages" | "anthropic" => Ok(BackendKind::AnthropicMessages),
            "mock" => Ok(BackendKind::Mock),
            other => Err(GatewayError::InvalidSpec(format!(
                "unknown backend {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub backend: BackendKind,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// Base URL override for the HTTP backends.
    pub endpoint: Option<String>,
    /// Only read by the mock backend.
    pub lexicon: MockLexicon,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            model_id: "mock-lexical".into(),
            temperature: 0.0,
            max_tokens: 256,
            timeout_ms: 60_000,
            max_retries: 3,
            endpoint: None,
            lexicon: MockLexicon::echo(),
        }
    }
}

impl GeneratorSpec {
    pub fn mock(lexicon: MockLexicon) -> Self {
        Self {
            lexicon,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidSpec(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidSpec(
                "max_tokens must be positive".into(),
            ));
        }
        if self.model_id.contains(['\n', '\r']) {
            return Err(GatewayError::InvalidSpec(
                "model_id must be a single line".into(),
            ));
        }
        Ok(())
    }

    /// Repeated calls are expected to return the same text.
    pub fn is_deterministic(&self) -> bool {
        self.backend == BackendKind::Mock || self.temperature == 0.0
    }

    /// Backend component of the cache key. The mock backend folds in a digest
    /// of its lexicon so that different lexicons never share entries.
    fn cache_backend_tag(&self) -> String {
        match self.backend {
            BackendKind::Mock => {
                let lex = serde_json::to_string(&self.lexicon).expect("lexicon serializes");
                format!(
                    "mock:{}",
                    &hex::encode(Sha256::digest(lex.as_bytes()))[..16]
                )
            }
            other => other.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub cache_dir: Option<String>,
    pub parallelism: usize,
    pub rate_per_minute: Option<f64>,
    /// Overrides the spec's timeout when set.
    pub timeout_ms: Option<u64>,
    /// First retry pause; doubled on every further attempt.
    pub retry_base_ms: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            cache_dir: None,
            parallelism: 4,
            rate_per_minute: None,
            timeout_ms: None,
            retry_base_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub prompt: String,
    pub output: String,
    pub backend: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub latency_ms: u64,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub cache_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

pub trait Backend: Send + Sync {
    fn complete(&self, spec: &GeneratorSpec, prompt: &str) -> Result<Completion, GatewayError>;
}

#[derive(Debug, Default)]
pub struct MockBackend;

impl Backend for MockBackend {
    fn complete(&self, spec: &GeneratorSpec, prompt: &str) -> Result<Completion, GatewayError> {
        let text = mock_generate(&spec.lexicon, prompt);
        let words = |s: &str| s.split_whitespace().count() as u64;
        Ok(Completion {
            prompt_tokens: Some(words(prompt)),
            completion_tokens: Some(words(&text)),
            text,
        })
    }
}

#[derive(Debug)]
struct TokenBucket {
    capacity: f64,
    per_sec: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    fn new(rate_per_minute: f64) -> Self {
        let per_sec = rate_per_minute / 60.0;
        let capacity = per_sec.max(1.0);
        Self {
            capacity,
            per_sec,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    fn acquire(&self) {
        loop {
            let wait = {
                let mut s = self.state.lock().unwrap();
                let now = Instant::now();
                s.0 =
                    (s.0 + now.duration_since(s.1).as_secs_f64() * self.per_sec).min(self.capacity);
                s.1 = now;
                if s.0 >= 1.0 {
                    s.0 -= 1.0;
                    return;
                }
                (1.0 - s.0) / self.per_sec
            };
            thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

/// A generator bound to one spec. Safe to share between threads.
pub struct Gateway {
    spec: GeneratorSpec,
    backend: Arc<dyn Backend>,
    cache: ResponseCache,
    limiter: Option<TokenBucket>,
    parallelism: usize,
    retry_base: Duration,
    backend_calls: AtomicUsize,
    key_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("spec", &self.spec)
            .field("cache_dir", &self.cache.dir())
            .field("backend_calls", &self.backend_calls())
            .finish()
    }
}

impl Gateway {
    /// Builds the backend named by `spec`. HTTP credentials come from the
    /// environment.
    pub fn new(spec: GeneratorSpec, cfg: &GatewayConfig) -> Result<Self, GatewayError> {
        let timeout = Duration::from_millis(cfg.timeout_ms.unwrap_or(spec.timeout_ms));
        let backend: Arc<dyn Backend> = match spec.backend {
            BackendKind::Mock => Arc::new(MockBackend),
            kind => Arc::new(HttpBackend::from_env(kind, timeout)?),
        };
        Self::with_backend(spec, cfg, backend)
    }

    pub fn with_backend(
        spec: GeneratorSpec,
        cfg: &GatewayConfig,
        backend: Arc<dyn Backend>,
    ) -> Result<Self, GatewayError> {
        spec.validate()?;
        let cache = match &cfg.cache_dir {
            Some(dir) => ResponseCache::on_disk(dir)?,
            None => ResponseCache::in_memory(),
        };
        let limiter = match cfg.rate_per_minute {
            Some(r) if r > 0.0 => Some(TokenBucket::new(r)),
            Some(r) => {
                return Err(GatewayError::InvalidSpec(format!(
                    "rate_per_minute must be positive, got {r}"
                )))
            }
            None => None,
        };
        if !spec.is_deterministic() {
            warn!(
                "temperature {} makes generations non-repeatable",
                spec.temperature
            );
        }
        Ok(Self {
            spec,
            backend,
            cache,
            limiter,
            parallelism: cfg.parallelism.max(1),
            retry_base: Duration::from_millis(cfg.retry_base_ms),
            backend_calls: AtomicUsize::new(0),
            key_locks: Mutex::default(),
        })
    }

    pub fn mock(lexicon: MockLexicon) -> Self {
        Self::with_backend(
            GeneratorSpec::mock(lexicon),
            &GatewayConfig::default(),
            Arc::new(MockBackend),
        )
        .expect("default mock spec is valid")
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism
    }

    /// Number of requests that reached the backend, retries included.
    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn key_for(&self, prompt: &str) -> String {
        let s = &self.spec;
        cache_key(
            &s.cache_backend_tag(),
            &s.model_id,
            s.temperature,
            s.max_tokens,
            prompt,
        )
    }

    pub fn generate(&self, prompt: &str) -> Result<GenerationRecord, GatewayError> {
        if prompt.trim().is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        let key = self.key_for(prompt);
        let lock = self
            .key_locks
            .lock()
            .unwrap()
            .entry(key.clone())
            .or_default()
            .clone();
        let _guard = lock.lock().unwrap();

        if let Some(mut hit) = self.cache.get(&key, prompt) {
            hit.cache_hit = true;
            return Ok(hit);
        }
        let start = Instant::now();
        let completion = self.call_with_retries(prompt)?;
        let record = GenerationRecord {
            prompt: prompt.to_string(),
            output: completion.text,
            backend: self.spec.backend.to_string(),
            model_id: self.spec.model_id.clone(),
            temperature: self.spec.temperature,
            max_tokens: self.spec.max_tokens,
            latency_ms: start.elapsed().as_millis() as u64,
            prompt_tokens: completion.prompt_tokens,
            completion_tokens: completion.completion_tokens,
            cache_hit: false,
        };
        self.cache.put(&key, &record)?;
        Ok(record)
    }

    fn call_with_retries(&self, prompt: &str) -> Result<Completion, GatewayError> {
        let mut attempt = 0u32;
        loop {
            if let Some(l) = &self.limiter {
                l.acquire();
            }
            self.backend_calls.fetch_add(1, Ordering::SeqCst);
            match self.backend.complete(&self.spec, prompt) {
                Ok(c) => return Ok(c),
                Err(e) if e.is_transient() && attempt < self.spec.max_retries => {
                    let pause = self.retry_base.saturating_mul(1 << attempt.min(16));
                    debug!(
                        "transient error ({e}); retry {} in {:?}",
                        attempt + 1,
                        pause
                    );
                    thread::sleep(pause);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Generates for every prompt with at most `parallelism` requests in
    /// flight. Results keep input order; failures are reported per item.
    pub fn generate_batch(
        &self,
        prompts: &[String],
        parallelism: usize,
    ) -> Vec<Result<GenerationRecord, GatewayError>> {
        let workers = parallelism.max(1).min(prompts.len().max(1));
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<GenerationRecord, GatewayError>>>> =
            prompts.iter().map(|_| Mutex::new(None)).collect();
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= prompts.len() {
                        break;
                    }
                    *slots[i].lock().unwrap() = Some(self.generate(&prompts[i]));
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().unwrap().expect("every slot filled"))
            .collect()
    }
}
