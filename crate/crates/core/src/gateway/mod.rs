//! Chat-completion access for the pipeline.
//!
//! [`Gateway`] wraps a [`ChatBackend`] with the response cache, retry with
//! exponential backoff, the in-flight bound, the per-minute dispatch cap and
//! the exchange audit log. The task methods (`generate_fills`, `relabel`,
//! `one_shot_classify`, `paraphrase`) render prompts, parse replies strictly and
//! re-ask with a corrective instruction when a reply does not parse.

mod cache;
mod http;
mod limit;
mod mock;
pub mod prompts;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, sha256_hex, ResponseCache};
pub use http::HttpChatBackend;
pub use limit::RateLimiter;
pub use mock::{FailKind, MatchKind, MockBackend, MockFixture, MockReply, MockRule};
pub use prompts::{PromptOverrides, PromptSet};

use crate::corpus::{Judgment, MoralLabel};
use crate::error::{Error, Result};
use crate::masker::{MaskTemplate, PLACEHOLDER};
use limit::Semaphore;

/// Snapshot date given for the generation/annotation model.
pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo-1106";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

/// Fills requested per intended label, and paraphrases per sentence.
pub const FILLS_PER_LABEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl DecodeParams {
    pub fn deterministic(max_output_tokens: u32) -> Self {
        DecodeParams {
            temperature: 0.0,
            max_output_tokens,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub system_text: String,
    pub user_text: String,
    pub params: DecodeParams,
    /// Re-ask ordinal. Identical re-asks are cached under distinct keys so a
    /// warm cache replays the whole sequence instead of the first reply.
    #[serde(default)]
    pub reask: u32,
}

impl ChatExchange {
    pub fn new(system: impl Into<String>, user: impl Into<String>, params: DecodeParams) -> Self {
        ChatExchange {
            system_text: system.into(),
            user_text: user.into(),
            params,
            reask: 0,
        }
    }
}

/// Failure reported by a backend for a single request.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendError {
    /// Network error, HTTP 429 or 5xx. Retried.
    Transient {
        status: Option<u16>,
        message: String,
        retry_after: Option<Duration>,
    },
    /// Rejected credentials. Never retried.
    Auth(String),
    /// Any other rejection. Never retried.
    Fatal(String),
}

pub trait ChatBackend: Send + Sync {
    fn send(
        &self,
        model: &str,
        exchange: &ChatExchange,
    ) -> std::result::Result<String, BackendError>;

    fn name(&self) -> &str;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("backend still failing after {attempts} attempts (last status {status:?}): {message}")]
    Exhausted {
        attempts: u32,
        status: Option<u16>,
        message: String,
    },
    #[error("backend rejected the request: {0}")]
    Rejected(String),
    #[error("reply did not parse after {attempts} attempts; last reply {last_reply:?}")]
    Unparsable { attempts: u32, last_reply: String },
    #[error("cache write failed: {0}")]
    Cache(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl GatewayError {
    /// Errors that end a whole run rather than one item. The cache keeps every
    /// completed reply, so rerunning after the cause is fixed resumes the run
    /// with identical results.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            GatewayError::Auth(_) | GatewayError::Exhausted { .. } | GatewayError::Cache(_)
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Http,
    Mock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint_url: Option<String>,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub max_retries: u32,
    #[serde(with = "crate::duration_secs")]
    pub request_timeout: Duration,
    #[serde(with = "crate::duration_secs")]
    pub retry_base_delay: Duration,
    #[serde(with = "crate::duration_secs")]
    pub retry_max_delay: Duration,
    pub max_concurrent_requests: usize,
    pub requests_per_minute_cap: usize,
    pub cache_path: Option<PathBuf>,
    /// Mock fixture file (mock backend only).
    pub fixtures: Option<PathBuf>,
    pub generation_temperature: f64,
    pub generation_max_tokens: u32,
    pub judgment_temperature: f64,
    pub judgment_max_tokens: u32,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Http,
            endpoint_url: Some(DEFAULT_ENDPOINT.into()),
            model_name: DEFAULT_MODEL.into(),
            api_key_env: Some(DEFAULT_API_KEY_ENV.into()),
            max_retries: 3,
            request_timeout: Duration::from_secs(60),
            retry_base_delay: Duration::from_secs(1),
            retry_max_delay: Duration::from_secs(30),
            max_concurrent_requests: 4,
            requests_per_minute_cap: 300,
            cache_path: None,
            fixtures: None,
            generation_temperature: 1.0,
            generation_max_tokens: 512,
            judgment_temperature: 0.0,
            judgment_max_tokens: 8,
        }
    }
}

impl BackendConfig {
    pub fn mock() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            endpoint_url: None,
            api_key_env: None,
            retry_base_delay: Duration::from_millis(1),
            retry_max_delay: Duration::from_millis(10),
            ..BackendConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == BackendKind::Http {
            if self.endpoint_url.as_deref().is_none_or(str::is_empty) {
                return Err(Error::Config("http backend requires endpoint_url".into()));
            }
            if self.api_key_env.as_deref().is_none_or(str::is_empty) {
                return Err(Error::Config("http backend requires api_key_env".into()));
            }
        }
        if self.max_concurrent_requests == 0 {
            return Err(Error::Config(
                "max_concurrent_requests must be positive".into(),
            ));
        }
        if self.requests_per_minute_cap == 0 {
            return Err(Error::Config(
                "requests_per_minute_cap must be positive".into(),
            ));
        }
        if self.generation_temperature < 0.0 || self.judgment_temperature < 0.0 {
            return Err(Error::Config("temperatures must be non-negative".into()));
        }
        if self.generation_max_tokens == 0 || self.judgment_max_tokens == 0 {
            return Err(Error::Config("max output tokens must be positive".into()));
        }
        Ok(())
    }

    fn generation_params(&self) -> DecodeParams {
        DecodeParams {
            temperature: self.generation_temperature,
            max_output_tokens: self.generation_max_tokens,
        }
    }

    fn judgment_params(&self) -> DecodeParams {
        DecodeParams {
            temperature: self.judgment_temperature,
            max_output_tokens: self.judgment_max_tokens,
        }
    }

    /// Builds the backend this config describes. Reads the API key from the
    /// environment for the HTTP backend.
    pub fn build_backend(&self) -> Result<Arc<dyn ChatBackend>> {
        self.validate()?;
        match self.kind {
            BackendKind::Mock => {
                let path = self
                    .fixtures
                    .as_ref()
                    .ok_or_else(|| Error::Config("mock backend requires a fixtures file".into()))?;
                Ok(Arc::new(MockBackend::new(MockFixture::load(path)?)))
            }
            BackendKind::Http => {
                let var = self.api_key_env.as_deref().expect("validated");
                let key = std::env::var(var)
                    .ok()
                    .filter(|k| !k.trim().is_empty())
                    .ok_or_else(|| {
                        Error::Config(format!("environment variable {var} is not set"))
                    })?;
                let endpoint = self.endpoint_url.clone().expect("validated");
                let backend = HttpChatBackend::new(endpoint, key, self.request_timeout)
                    .map_err(|e| Error::Config(format!("{e:?}")))?;
                Ok(Arc::new(backend))
            }
        }
    }
}

/// Counters for one gateway's lifetime.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    /// Calls to `complete`, whether served from cache or not.
    pub logical_calls: u64,
    pub cache_hits: u64,
    /// Requests actually handed to the backend, retries included.
    pub backend_requests: u64,
    pub retries: u64,
    pub failures: u64,
    pub peak_in_flight: u64,
}

#[derive(Default)]
struct Counters {
    logical_calls: AtomicU64,
    cache_hits: AtomicU64,
    backend_requests: AtomicU64,
    retries: AtomicU64,
    failures: AtomicU64,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

#[derive(Serialize)]
struct ExchangeRecord<'a> {
    model: &'a str,
    system: &'a str,
    user: &'a str,
    temperature: f64,
    max_tokens: u32,
    response: Option<&'a str>,
    error: Option<String>,
    attempts: u32,
    cached: bool,
}

pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    config: BackendConfig,
    prompts: PromptSet,
    cache: Option<ResponseCache>,
    permits: Semaphore,
    rate: RateLimiter,
    counters: Counters,
    audit: Option<Mutex<BufWriter<File>>>,
}

impl Gateway {
    pub fn from_config(config: BackendConfig, prompts: PromptSet) -> Result<Self> {
        let backend = config.build_backend()?;
        Gateway::with_backend(config, prompts, backend)
    }

    pub fn with_backend(
        config: BackendConfig,
        prompts: PromptSet,
        backend: Arc<dyn ChatBackend>,
    ) -> Result<Self> {
        config.validate()?;
        prompts.validate()?;
        let cache = match &config.cache_path {
            Some(p) => Some(ResponseCache::open(p)?),
            None => None,
        };
        Ok(Gateway {
            backend,
            permits: Semaphore::new(config.max_concurrent_requests),
            rate: RateLimiter::per_minute(config.requests_per_minute_cap),
            config,
            prompts,
            cache,
            counters: Counters::default(),
            audit: None,
        })
    }

    /// Persists every exchange (prompt, reply, attempts) to `path` as JSON lines.
    pub fn enable_audit(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.audit = Some(Mutex::new(BufWriter::new(f)));
        Ok(())
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn stats(&self) -> GatewayStats {
        let c = &self.counters;
        GatewayStats {
            logical_calls: c.logical_calls.load(Ordering::SeqCst),
            cache_hits: c.cache_hits.load(Ordering::SeqCst),
            backend_requests: c.backend_requests.load(Ordering::SeqCst),
            retries: c.retries.load(Ordering::SeqCst),
            failures: c.failures.load(Ordering::SeqCst),
            peak_in_flight: c.peak_in_flight.load(Ordering::SeqCst) as u64,
        }
    }

    pub fn flush_audit(&self) {
        if let Some(a) = &self.audit {
            let _ = a.lock().unwrap().flush();
        }
    }

    fn audit(
        &self,
        ex: &ChatExchange,
        response: Option<&str>,
        error: Option<String>,
        attempts: u32,
        cached: bool,
    ) {
        let Some(sink) = &self.audit else { return };
        let rec = ExchangeRecord {
            model: &self.config.model_name,
            system: &ex.system_text,
            user: &ex.user_text,
            temperature: ex.params.temperature,
            max_tokens: ex.params.max_output_tokens,
            response,
            error,
            attempts,
            cached,
        };
        let mut line = serde_json::to_string(&rec).expect("audit record serializes");
        line.push('\n');
        let mut w = sink.lock().unwrap();
        if let Err(e) = w.write_all(line.as_bytes()) {
            log::warn!("audit write failed: {e}");
        }
    }

    fn backoff(&self, attempt: u32, hint: Option<Duration>) -> Duration {
        let base = self.config.retry_base_delay.as_secs_f64();
        let cap = self.config.retry_max_delay.as_secs_f64();
        let exp = (base * 2f64.powi(attempt.saturating_sub(1) as i32)).min(cap);
        let jittered = exp * rand::thread_rng().gen_range(0.5..=1.0);
        let wait = Duration::from_secs_f64(jittered);
        match hint {
            Some(h) => wait.max(h.min(self.config.retry_max_delay)),
            None => wait,
        }
    }

    /// Sends one exchange, consulting the cache first and retrying transient
    /// failures with exponential backoff and jitter.
    pub fn complete(&self, exchange: &ChatExchange) -> std::result::Result<String, GatewayError> {
        if exchange.user_text.is_empty() {
            return Err(GatewayError::InvalidRequest("user text is empty".into()));
        }
        let c = &self.counters;
        c.logical_calls.fetch_add(1, Ordering::SeqCst);
        let key = cache_key(&self.config.model_name, exchange);
        if let Some(hit) = self.cache.as_ref().and_then(|cache| cache.get(&key)) {
            c.cache_hits.fetch_add(1, Ordering::SeqCst);
            self.audit(exchange, Some(&hit), None, 0, true);
            return Ok(hit);
        }

        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let result = {
                let _permit = self.permits.acquire();
                self.rate.wait();
                c.backend_requests.fetch_add(1, Ordering::SeqCst);
                let now = c.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                c.peak_in_flight.fetch_max(now, Ordering::SeqCst);
                let r = self.backend.send(&self.config.model_name, exchange);
                c.in_flight.fetch_sub(1, Ordering::SeqCst);
                r
            };
            let err = match result {
                Ok(text) => {
                    if let Some(cache) = &self.cache {
                        cache
                            .insert(&key, exchange, &text)
                            .map_err(|e| GatewayError::Cache(e.to_string()))?;
                    }
                    self.audit(exchange, Some(&text), None, attempt, false);
                    return Ok(text);
                }
                Err(BackendError::Auth(m)) => GatewayError::Auth(m),
                Err(BackendError::Fatal(m)) => GatewayError::Rejected(m),
                Err(BackendError::Transient {
                    status,
                    message,
                    retry_after,
                }) => {
                    if attempt <= self.config.max_retries {
                        c.retries.fetch_add(1, Ordering::SeqCst);
                        log::debug!("transient failure ({status:?}: {message}); retry {attempt}");
                        std::thread::sleep(self.backoff(attempt, retry_after));
                        continue;
                    }
                    GatewayError::Exhausted {
                        attempts: attempt,
                        status,
                        message,
                    }
                }
            };
            c.failures.fetch_add(1, Ordering::SeqCst);
            self.audit(exchange, None, Some(err.to_string()), attempt, false);
            return Err(err);
        }
    }

    /// Asks with `user`, re-asking with the corrective suffix until `parse`
    /// accepts a reply or the retry budget is spent.
    fn ask_until<T>(
        &self,
        user: &str,
        params: DecodeParams,
        mut parse: impl FnMut(&str) -> Option<T>,
    ) -> std::result::Result<Asked<T>, GatewayError> {
        let attempts_allowed = self.config.max_retries + 1;
        let mut prompt = user.to_string();
        let mut last_reply = String::new();
        for attempt in 1..=attempts_allowed {
            let mut ex = ChatExchange::new(&self.prompts.system, &prompt, params);
            ex.reask = attempt - 1;
            let reply = self.complete(&ex)?;
            if let Some(v) = parse(&reply) {
                return Ok(Asked::Parsed {
                    value: v,
                    attempts: attempt,
                });
            }
            last_reply = reply;
            if attempt == 1 {
                prompt.push_str(&self.prompts.corrective);
            }
        }
        Ok(Asked::Exhausted {
            attempts: attempts_allowed,
            last_reply,
        })
    }

    pub fn generate_fills(
        &self,
        template: &MaskTemplate,
    ) -> std::result::Result<FillOutcome, GatewayError> {
        let mask = template.render();
        let user = prompts::render(&self.prompts.generate, &[("mask", &mask)])
            .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        let asked = self.ask_until(&user, self.config.generation_params(), |reply| {
            let (acc, unacc) = parse_fill_reply(reply).ok()?;
            let set = FillSet::from_raw(&template.pair_id, acc, unacc, 0);
            (set.usable_count() > 0).then_some(set)
        })?;
        Ok(match asked {
            Asked::Parsed {
                mut value,
                attempts,
            } => {
                value.attempts = attempts;
                FillOutcome::Filled(value)
            }
            Asked::Exhausted {
                attempts,
                last_reply,
            } => FillOutcome::GenerationFailed {
                attempts,
                last_reply,
            },
        })
    }

    pub fn relabel(&self, sentence: &str) -> std::result::Result<RelabelVerdict, GatewayError> {
        if sentence.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("sentence is empty".into()));
        }
        let user = prompts::render(&self.prompts.relabel, &[("sentence", sentence)])
            .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        let asked = self.ask_until(&user, self.config.judgment_params(), |r| {
            parse_digit(r, 2).and_then(|d| Judgment::try_from(d).ok())
        })?;
        Ok(match asked {
            Asked::Parsed { value, attempts } => RelabelVerdict {
                sentence: sentence.to_string(),
                verdict: value,
                unparsable: false,
                attempts,
            },
            Asked::Exhausted { attempts, .. } => RelabelVerdict {
                sentence: sentence.to_string(),
                verdict: Judgment::Indistinguishable,
                unparsable: true,
                attempts,
            },
        })
    }

    pub fn one_shot_classify(
        &self,
        sentence: &str,
        exemplar: &Exemplar,
    ) -> std::result::Result<MoralLabel, GatewayError> {
        let label = exemplar.label.to_string();
        let user = prompts::render(
            &self.prompts.classify,
            &[
                ("sentence", sentence),
                ("exemplar_text", &exemplar.text),
                ("exemplar_label", &label),
            ],
        )
        .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        match self.ask_until(&user, self.config.judgment_params(), |r| {
            parse_digit(r, 1).and_then(|d| MoralLabel::try_from(d).ok())
        })? {
            Asked::Parsed { value, .. } => Ok(value),
            Asked::Exhausted {
                attempts,
                last_reply,
            } => Err(GatewayError::Unparsable {
                attempts,
                last_reply,
            }),
        }
    }

    /// Requests label-preserving paraphrases of `sentence`.
    pub fn paraphrase(&self, sentence: &str) -> std::result::Result<ParaphraseSet, GatewayError> {
        let user = prompts::render(&self.prompts.paraphrase, &[("sentence", sentence)])
            .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        match self.ask_until(&user, self.config.generation_params(), |r| {
            parse_paraphrase_reply(r).ok()
        })? {
            Asked::Parsed { value, attempts } => Ok(ParaphraseSet::from_raw(value, attempts)),
            Asked::Exhausted {
                attempts,
                last_reply,
            } => Err(GatewayError::Unparsable {
                attempts,
                last_reply,
            }),
        }
    }
}

enum Asked<T> {
    Parsed { value: T, attempts: u32 },
    Exhausted { attempts: u32, last_reply: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub text: String,
    pub label: MoralLabel,
}

/// One fill in generation order, with its sanitization result.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FillEntry {
    pub intended: MoralLabel,
    pub raw: String,
    /// The sanitized fill, or the reason it was dropped.
    pub fill: std::result::Result<String, String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FillSet {
    pub pair_id: String,
    /// Acceptable-intent fills first, then unacceptable-intent fills, each in
    /// reply order.
    pub entries: Vec<FillEntry>,
    pub attempts: u32,
}

impl FillSet {
    pub fn from_raw(
        pair_id: &str,
        acceptable: Vec<String>,
        unacceptable: Vec<String>,
        attempts: u32,
    ) -> Self {
        let mut entries = Vec::with_capacity(acceptable.len() + unacceptable.len());
        for (intended, raws) in [
            (MoralLabel::Acceptable, acceptable),
            (MoralLabel::Unacceptable, unacceptable),
        ] {
            for (i, raw) in raws.into_iter().enumerate() {
                let fill = if i >= FILLS_PER_LABEL {
                    Err(format!("more than {FILLS_PER_LABEL} fills returned"))
                } else {
                    sanitize_fill(&raw).map_err(str::to_string)
                };
                if let Err(reason) = &fill {
                    log::debug!("pair {pair_id}: dropped fill {raw:?}: {reason}");
                }
                entries.push(FillEntry {
                    intended,
                    raw,
                    fill,
                });
            }
        }
        FillSet {
            pair_id: pair_id.to_string(),
            entries,
            attempts,
        }
    }

    pub fn usable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.fill.is_ok()).count()
    }

    pub fn fills_for(&self, label: MoralLabel) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.intended == label)
            .filter_map(|e| e.fill.as_deref().ok())
            .collect()
    }

    pub fn acceptable_fills(&self) -> Vec<&str> {
        self.fills_for(MoralLabel::Acceptable)
    }

    pub fn unacceptable_fills(&self) -> Vec<&str> {
        self.fills_for(MoralLabel::Unacceptable)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FillOutcome {
    Filled(FillSet),
    GenerationFailed { attempts: u32, last_reply: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelabelVerdict {
    pub sentence: String,
    pub verdict: Judgment,
    /// The reply never parsed; the verdict fell back to indistinguishable.
    pub unparsable: bool,
    pub attempts: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParaphraseSet {
    pub entries: Vec<(String, std::result::Result<String, String>)>,
    pub attempts: u32,
}

impl ParaphraseSet {
    fn from_raw(raws: Vec<String>, attempts: u32) -> Self {
        let entries = raws
            .into_iter()
            .enumerate()
            .map(|(i, raw)| {
                let r = if i >= FILLS_PER_LABEL {
                    Err(format!("more than {FILLS_PER_LABEL} paraphrases returned"))
                } else {
                    sanitize_fill(&raw).map_err(str::to_string)
                };
                (raw, r)
            })
            .collect();
        ParaphraseSet { entries, attempts }
    }

    pub fn usable(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter_map(|(_, r)| r.as_deref().ok())
            .collect()
    }
}

/// Trims a fill and rejects empty ones and ones containing the placeholder or
/// a line break.
pub fn sanitize_fill(raw: &str) -> std::result::Result<String, &'static str> {
    let t = raw.trim();
    if t.is_empty() {
        Err("empty fill")
    } else if t.contains(PLACEHOLDER) {
        Err("fill contains the <> placeholder")
    } else if t.contains(['\n', '\r']) {
        Err("fill contains a line break")
    } else {
        Ok(t.to_string())
    }
}

fn strip_code_fence(reply: &str) -> &str {
    let t = reply.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let Some(body) = rest.strip_suffix("```") else {
        return t;
    };
    // Drop an info string such as "json" on the opening fence line.
    match body.find('\n') {
        Some(i) if body[..i].chars().all(|c| c.is_ascii_alphanumeric()) => body[i + 1..].trim(),
        _ => body.trim(),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FillReply {
    acceptable: Vec<String>,
    unacceptable: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ParaphraseReply {
    paraphrases: Vec<String>,
}

/// Parses `{"acceptable": [...], "unacceptable": [...]}`. Only surrounding
/// whitespace and a single Markdown code fence are tolerated.
pub fn parse_fill_reply(reply: &str) -> std::result::Result<(Vec<String>, Vec<String>), String> {
    let parsed: FillReply =
        serde_json::from_str(strip_code_fence(reply)).map_err(|e| e.to_string())?;
    Ok((parsed.acceptable, parsed.unacceptable))
}

pub fn parse_paraphrase_reply(reply: &str) -> std::result::Result<Vec<String>, String> {
    let parsed: ParaphraseReply =
        serde_json::from_str(strip_code_fence(reply)).map_err(|e| e.to_string())?;
    Ok(parsed.paraphrases)
}

/// Accepts exactly one ASCII digit in `0..=max`, surrounded by optional
/// whitespace.
pub fn parse_digit(reply: &str, max: u8) -> Option<u8> {
    let t = reply.trim();
    let mut chars = t.chars();
    let c = chars.next()?;
    if chars.next().is_some() {
        return None;
    }
    let d = c.to_digit(10)? as u8;
    (d <= max).then_some(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabeledSentence, SentencePair};

    fn gateway(fixture: MockFixture, retries: u32) -> (Gateway, Arc<MockBackend>) {
        let backend = Arc::new(MockBackend::new(fixture));
        let cfg = BackendConfig {
            max_retries: retries,
            ..BackendConfig::mock()
        };
        let gw = Gateway::with_backend(cfg, PromptSet::default(), backend.clone()).unwrap();
        (gw, backend)
    }

    fn template() -> MaskTemplate {
        let pair = SentencePair::from_members(
            "p0",
            LabeledSentence::new(
                "0",
                "１９歳の子にノンアルコール飲料をあげた",
                MoralLabel::Acceptable,
            ),
            LabeledSentence::new(
                "1",
                "１９歳の子にアルコール飲料をあげた",
                MoralLabel::Unacceptable,
            ),
        )
        .unwrap();
        MaskTemplate {
            pair_id: "p0".into(),
            prefix: "１９歳の子に".into(),
            suffix: "をあげた".into(),
            pair,
        }
    }

    #[test]
    fn digits() {
        assert_eq!(parse_digit("1", 2), Some(1));
        assert_eq!(parse_digit(" 2 \n", 2), Some(2));
        assert_eq!(parse_digit("2", 1), None);
        assert_eq!(parse_digit("maybe", 2), None);
        assert_eq!(parse_digit("10", 2), None);
        assert_eq!(parse_digit("", 2), None);
    }

    #[test]
    fn fill_reply_parsing() {
        let ok = "```json\n{\"acceptable\": [\"a\"], \"unacceptable\": [\"b\"]}\n```";
        assert_eq!(
            parse_fill_reply(ok).unwrap(),
            (vec!["a".into()], vec!["b".into()])
        );
        assert!(parse_fill_reply("Sure! {\"acceptable\": [], \"unacceptable\": []}").is_err());
        assert!(parse_fill_reply("{\"acceptable\": [\"a\"]}").is_err());
    }

    #[test]
    fn sanitization_rules() {
        assert_eq!(sanitize_fill(" 本 "), Ok("本".into()));
        assert!(sanitize_fill("  ").is_err());
        assert!(sanitize_fill("お<>酒").is_err());
        assert!(sanitize_fill("a\nb").is_err());
    }

    #[test]
    fn generate_happy_path_and_sanitization() {
        let reply = r#"{"acceptable": ["お菓子", "本", "お<>茶"], "unacceptable": ["お酒", "タバコ", "\n"]}"#;
        let (gw, _) = gateway(
            MockFixture::default().rule(MockRule::substring("１９歳の子に<>をあげた", reply)),
            2,
        );
        let FillOutcome::Filled(set) = gw.generate_fills(&template()).unwrap() else {
            panic!("expected fills");
        };
        assert_eq!(set.acceptable_fills(), ["お菓子", "本"]);
        assert_eq!(set.unacceptable_fills(), ["お酒", "タバコ"]);
        assert_eq!(set.entries.len(), 6);
        assert_eq!(
            set.entries[2].fill,
            Err("fill contains the <> placeholder".into())
        );
        assert_eq!(set.attempts, 1);
    }

    #[test]
    fn generate_reasks_then_fails() {
        let (gw, backend) = gateway(
            MockFixture::default()
                .rule(MockRule::substring("<>をあげた", "I cannot help with that")),
            2,
        );
        match gw.generate_fills(&template()).unwrap() {
            FillOutcome::GenerationFailed { attempts, .. } => assert_eq!(attempts, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(backend.calls(), 3);
    }

    #[test]
    fn generate_recovers_after_corrective_prompt() {
        let fixture = MockFixture::default()
            .rule(MockRule::substring("<>をあげた", "not json"))
            .rule(MockRule::substring(
                "指定された形式だけで回答してください",
                r#"{"acceptable": ["本"], "unacceptable": ["お酒"]}"#,
            ));
        let (gw, _) = gateway(fixture, 2);
        let FillOutcome::Filled(set) = gw.generate_fills(&template()).unwrap() else {
            panic!("expected fills");
        };
        assert_eq!(set.attempts, 2);
        assert_eq!(set.usable_count(), 2);
    }

    #[test]
    fn relabel_parses_and_falls_back() {
        let fixture = MockFixture::default()
            .rule(MockRule::substring("文: A", "1"))
            .rule(MockRule::substring("文: B", " 2 "))
            .rule(MockRule::substring("文: C", "maybe"));
        let (gw, backend) = gateway(fixture, 2);
        assert_eq!(gw.relabel("A").unwrap().verdict, Judgment::Unacceptable);
        assert_eq!(
            gw.relabel("B").unwrap().verdict,
            Judgment::Indistinguishable
        );
        let before = backend.calls();
        let v = gw.relabel("C").unwrap();
        assert_eq!(v.verdict, Judgment::Indistinguishable);
        assert!(v.unparsable);
        assert_eq!(backend.calls() - before, 3);
    }

    #[test]
    fn classify() {
        let ex = Exemplar {
            text: "赤ちゃんに薬を飲ませる".into(),
            label: MoralLabel::Acceptable,
        };
        let fixture = MockFixture::default()
            .rule(MockRule::substring("文: X\n", "0"))
            .rule(MockRule::substring("文: Y\n", "1"))
            .rule(MockRule::substring("文: Z\n", "2"));
        let (gw, _) = gateway(fixture, 1);
        assert_eq!(
            gw.one_shot_classify("X", &ex).unwrap(),
            MoralLabel::Acceptable
        );
        assert_eq!(
            gw.one_shot_classify("Y", &ex).unwrap(),
            MoralLabel::Unacceptable
        );
        assert!(matches!(
            gw.one_shot_classify("Z", &ex),
            Err(GatewayError::Unparsable { attempts: 2, .. })
        ));
    }

    #[test]
    fn cache_short_circuits_backend() {
        let dir = tempfile::tempdir().unwrap();
        let backend = Arc::new(MockBackend::new(
            MockFixture::default().rule(MockRule::substring("文: A", "0")),
        ));
        let cfg = BackendConfig {
            cache_path: Some(dir.path().join("cache.jsonl")),
            ..BackendConfig::mock()
        };
        let gw = Gateway::with_backend(cfg.clone(), PromptSet::default(), backend.clone()).unwrap();
        gw.relabel("A").unwrap();
        gw.relabel("A").unwrap();
        assert_eq!(backend.calls(), 1);
        let warm = Gateway::with_backend(cfg, PromptSet::default(), backend.clone()).unwrap();
        warm.relabel("A").unwrap();
        assert_eq!(backend.calls(), 1);
        assert_eq!(warm.stats().cache_hits, 1);
        assert_eq!(warm.stats().backend_requests, 0);
    }

    #[test]
    fn auth_is_not_retried_and_transient_is() {
        let fixture = MockFixture::default()
            .rule(MockRule::sequence(
                MatchKind::Substring,
                "文: auth",
                [MockReply::Fail {
                    fail: FailKind::Auth,
                }],
            ))
            .rule(MockRule::sequence(
                MatchKind::Substring,
                "文: flaky",
                [
                    MockReply::Fail {
                        fail: FailKind::Transient,
                    },
                    "0".into(),
                ],
            ))
            .rule(MockRule::sequence(
                MatchKind::Substring,
                "文: down",
                [MockReply::Fail {
                    fail: FailKind::Transient,
                }],
            ));
        let (gw, backend) = gateway(fixture, 2);
        assert!(matches!(gw.relabel("auth"), Err(GatewayError::Auth(_))));
        assert_eq!(backend.calls(), 1);
        assert_eq!(gw.relabel("flaky").unwrap().verdict, Judgment::Acceptable);
        assert_eq!(gw.stats().retries, 1);
        assert!(matches!(
            gw.relabel("down"),
            Err(GatewayError::Exhausted {
                attempts: 3,
                status: Some(503),
                ..
            })
        ));
    }

    #[test]
    fn http_config_needs_endpoint_and_key_source() {
        let cfg = BackendConfig {
            endpoint_url: None,
            ..BackendConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = BackendConfig {
            api_key_env: None,
            ..BackendConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = BackendConfig {
            api_key_env: Some("MTLE_TEST_UNSET_KEY_VAR".into()),
            ..BackendConfig::default()
        };
        let err = cfg.build_backend().err().unwrap().to_string();
        assert!(err.contains("MTLE_TEST_UNSET_KEY_VAR"));
    }

    #[test]
    fn paraphrases() {
        let fixture = MockFixture::default().rule(MockRule::substring(
            "文: 元の文",
            r#"{"paraphrases": ["言い換え1", "", "言い換え2", "言い換え3"]}"#,
        ));
        let (gw, _) = gateway(fixture, 0);
        let set = gw.paraphrase("元の文").unwrap();
        assert_eq!(set.usable(), ["言い換え1", "言い換え2"]);
    }
}
