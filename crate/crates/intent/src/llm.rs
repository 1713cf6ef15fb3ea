//! Chat-completion client for running prompt scenarios against a hosted model.
//!
//! The wire format is the common `/chat/completions` JSON schema: a `model`
//! field, a `messages` array (one user message) and sampling parameters. The
//! API key is read from the environment variable named in the endpoint config
//! and never serialized or logged.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use intent_core::prompt::{self, FewShotBank, PromptAssets, Scenario};
use intent_core::{IntentLabel, Query};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("transport error after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP {status} after {attempts} attempts: {body}")]
    Http { status: u16, attempts: u32, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("invalid endpoint config: {0}")]
    InvalidEndpoint(String),
    #[error("all {count} requests failed, first error: {first}")]
    AllFailed { count: usize, first: String },
}

fn default_api_key_env() -> String {
    "INTENT_API_KEY".to_string()
}
fn default_timeout_secs() -> f64 {
    60.0
}
fn default_max_retries() -> u32 {
    4
}
fn default_max_concurrent() -> usize {
    4
}
fn default_backoff_base_ms() -> u64 {
    500
}
fn default_backoff_max_ms() -> u64 {
    30_000
}

/// Endpoint configuration, loaded from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEndpoint {
    /// e.g. `https://api.example.com/v1`; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_concurrent")]
    pub max_concurrent: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_backoff_max_ms")]
    pub backoff_max_ms: u64,
    /// Seed of the backoff jitter source.
    #[serde(default)]
    pub jitter_seed: u64,
}

impl ModelEndpoint {
    pub fn new(base_url: &str, model: &str) -> ModelEndpoint {
        ModelEndpoint {
            base_url: base_url.to_string(),
            model: model.to_string(),
            api_key_env: default_api_key_env(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            max_concurrent: default_max_concurrent(),
            temperature: 0.0,
            max_tokens: None,
            backoff_base_ms: default_backoff_base_ms(),
            backoff_max_ms: default_backoff_max_ms(),
            jitter_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        let bad = |m: &str| Err(LlmError::InvalidEndpoint(m.to_string()));
        if self.max_concurrent == 0 {
            return bad("max_concurrent must be at least 1");
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return bad("timeout_secs must be positive");
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad("temperature must be in [0, 2]");
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return bad("base_url must be an http(s) URL");
        }
        Ok(())
    }

    pub fn url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }

    /// Backoff delays before retries 1, 2, … for request stream `stream`.
    pub fn backoff(&self, stream: u64) -> Backoff {
        Backoff::new(
            Duration::from_millis(self.backoff_base_ms),
            Duration::from_millis(self.backoff_max_ms),
            self.jitter_seed,
            stream,
        )
    }
}

/// Exponential backoff with "equal jitter": the n-th delay is drawn
/// uniformly from `[d/2, d]` where `d = min(max, base * 2^n)`.
#[derive(Debug, Clone)]
pub struct Backoff {
    base: Duration,
    max: Duration,
    retry: u32,
    rng: ChaCha8Rng,
}

impl Backoff {
    pub fn new(base: Duration, max: Duration, seed: u64, stream: u64) -> Backoff {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Backoff { base, max, retry: 0, rng }
    }
}

impl Iterator for Backoff {
    type Item = Duration;

    fn next(&mut self) -> Option<Duration> {
        let ceiling = self.base.saturating_mul(1u32 << self.retry.min(20)).min(self.max);
        self.retry += 1;
        let frac: f64 = self.rng.random_range(0.5..=1.0);
        Some(ceiling.mul_f64(frac))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResponse {
    pub text: String,
    #[serde(with = "millis")]
    pub latency: Duration,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub attempts: u32,
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64() * 1000.0)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)? / 1000.0))
    }
}

/// Blocking client; cheap to share across threads.
pub struct LlmClient {
    endpoint: ModelEndpoint,
    api_key: String,
    agent: ureq::Agent,
}

impl fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmClient").field("endpoint", &self.endpoint).field("api_key", &"<redacted>").finish()
    }
}

enum Attempt {
    Done(RawResponse),
    Retry(LlmError),
    Fatal(LlmError),
}

impl LlmClient {
    /// Build a client, reading the key from `endpoint.api_key_env`.
    pub fn from_env(endpoint: ModelEndpoint) -> Result<LlmClient, LlmError> {
        let key = std::env::var(&endpoint.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| LlmError::Auth(format!("environment variable {} is not set", endpoint.api_key_env)))?;
        LlmClient::with_api_key(endpoint, key)
    }

    pub fn with_api_key(endpoint: ModelEndpoint, api_key: String) -> Result<LlmClient, LlmError> {
        endpoint.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs_f64(endpoint.timeout_secs)))
            .build()
            .into();
        Ok(LlmClient { endpoint, api_key, agent })
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    pub fn request_body(&self, prompt: &str) -> serde_json::Value {
        let mut body = json!({
            "model": self.endpoint.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.endpoint.temperature,
        });
        if let Some(n) = self.endpoint.max_tokens {
            body["max_tokens"] = json!(n);
        }
        body
    }

    /// Send one prompt, retrying transport errors, 429 and 5xx.
    pub fn complete(&self, prompt: &str) -> Result<RawResponse, LlmError> {
        self.complete_stream(prompt, 0)
    }

    /// As [`complete`](Self::complete), drawing backoff jitter from `stream`.
    pub fn complete_stream(&self, prompt: &str, stream: u64) -> Result<RawResponse, LlmError> {
        let body = self.request_body(prompt).to_string();
        let mut backoff = self.endpoint.backoff(stream);
        let start = Instant::now();
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body, attempts, start) {
                Attempt::Done(r) => return Ok(r),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) if attempts > self.endpoint.max_retries => return Err(e),
                Attempt::Retry(e) => {
                    let delay = backoff.next().unwrap_or_default();
                    log::debug!("attempt {attempts} failed ({e}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                }
            }
        }
    }

    fn attempt(&self, body: &str, attempts: u32, start: Instant) -> Attempt {
        let sent = self
            .agent
            .post(&self.endpoint.url())
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .header("Content-Type", "application/json")
            .send(body);
        let mut resp = match sent {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Attempt::Retry(LlmError::Timeout { attempts }),
            Err(e) => return Attempt::Retry(LlmError::Transport { attempts, message: e.to_string() }),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(ureq::Error::Timeout(_)) => return Attempt::Retry(LlmError::Timeout { attempts }),
            Err(e) => return Attempt::Retry(LlmError::Transport { attempts, message: e.to_string() }),
        };
        match status {
            200..=299 => match parse_completion(&text) {
                Ok((content, prompt_tokens, completion_tokens)) => Attempt::Done(RawResponse {
                    text: content,
                    latency: start.elapsed(),
                    prompt_tokens,
                    completion_tokens,
                    attempts,
                }),
                Err(e) => Attempt::Fatal(e),
            },
            401 | 403 => Attempt::Fatal(LlmError::Auth(format!("HTTP {status}"))),
            429 => Attempt::Retry(LlmError::RateLimited { attempts }),
            500..=599 => Attempt::Retry(LlmError::Http { status, attempts, body: snippet(&text) }),
            _ => Attempt::Fatal(LlmError::Http { status, attempts, body: snippet(&text) }),
        }
    }
}

fn snippet(text: &str) -> String {
    text.chars().take(200).collect()
}

/// Extract `choices[0].message.content` and usage counts.
pub fn parse_completion(body: &str) -> Result<(String, Option<u64>, Option<u64>), LlmError> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| LlmError::MalformedResponse(format!("not JSON: {e}")))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .ok_or_else(|| LlmError::MalformedResponse("missing choices[0].message.content".into()))?;
    let usage = |k: &str| v.pointer(&format!("/usage/{k}")).and_then(|n| n.as_u64());
    Ok((content.to_string(), usage("prompt_tokens"), usage("completion_tokens")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Ok,
    /// The response did not name a label.
    Oov,
    /// The request failed.
    Error,
}

/// One query's result in a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub query: Query,
    pub label: Option<IntentLabel>,
    pub status: ItemStatus,
    pub response: Option<RawResponse>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: String,
    pub scenario: Scenario,
    pub queries: usize,
    pub parsed: usize,
    pub oov_count: usize,
    pub error_count: usize,
    pub max_concurrent: usize,
    pub total_attempts: u64,
    pub total_latency_ms: f64,
    pub mean_latency_ms: f64,
    pub max_latency_ms: f64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_clock_ms: f64,
    /// Distinct error messages with counts.
    pub errors: std::collections::BTreeMap<String, usize>,
}

/// Render, send and parse every query with at most `max_concurrent` requests
/// in flight. Results keep the input order; failures are recorded per item.
pub fn classify_batch(
    client: &LlmClient,
    scenario: Scenario,
    queries: &[Query],
    bank: Option<&FewShotBank>,
    assets: &PromptAssets,
) -> Result<(Vec<BatchItem>, RunReport), intent_core::Error> {
    // render everything up front so prompt errors surface before any request
    let prompts = queries
        .iter()
        .map(|q| prompt::render(scenario, q, bank, assets))
        .collect::<Result<Vec<_>, _>>()?;
    let started = Instant::now();
    let slots: Vec<Mutex<Option<BatchItem>>> = queries.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = client.endpoint.max_concurrent.min(queries.len()).max(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= queries.len() {
                    break;
                }
                let item = classify_one(client, &queries[i], &prompts[i], i as u64);
                *slots[i].lock().unwrap() = Some(item);
            });
        }
    });
    let items: Vec<BatchItem> = slots.into_iter().map(|m| m.into_inner().unwrap().expect("every slot filled")).collect();
    let report = summarize(client, scenario, &items, started.elapsed());
    Ok((items, report))
}

fn classify_one(client: &LlmClient, query: &Query, prompt: &str, stream: u64) -> BatchItem {
    match client.complete_stream(prompt, stream) {
        Ok(resp) => match prompt::parse_response(&resp.text) {
            Ok(label) => BatchItem { query: query.clone(), label: Some(label), status: ItemStatus::Ok, response: Some(resp), error: None },
            Err(e) => BatchItem {
                query: query.clone(),
                label: None,
                status: ItemStatus::Oov,
                response: Some(resp),
                error: Some(e.to_string()),
            },
        },
        Err(e) => {
            log::warn!("query {}: {e}", query.key());
            BatchItem { query: query.clone(), label: None, status: ItemStatus::Error, response: None, error: Some(e.to_string()) }
        }
    }
}

fn summarize(client: &LlmClient, scenario: Scenario, items: &[BatchItem], wall: Duration) -> RunReport {
    let ms = |d: Duration| d.as_secs_f64() * 1000.0;
    let responses: Vec<&RawResponse> = items.iter().filter_map(|i| i.response.as_ref()).collect();
    let total_latency_ms: f64 = responses.iter().map(|r| ms(r.latency)).sum();
    let mut errors = std::collections::BTreeMap::new();
    for item in items.iter().filter(|i| i.status == ItemStatus::Error) {
        *errors.entry(item.error.clone().unwrap_or_default()).or_insert(0) += 1;
    }
    let count = |s: ItemStatus| items.iter().filter(|i| i.status == s).count();
    RunReport {
        model: client.endpoint.model.clone(),
        scenario,
        queries: items.len(),
        parsed: count(ItemStatus::Ok),
        oov_count: count(ItemStatus::Oov),
        error_count: count(ItemStatus::Error),
        max_concurrent: client.endpoint.max_concurrent,
        total_attempts: responses.iter().map(|r| r.attempts as u64).sum(),
        total_latency_ms,
        mean_latency_ms: if responses.is_empty() { 0.0 } else { total_latency_ms / responses.len() as f64 },
        max_latency_ms: responses.iter().map(|r| ms(r.latency)).fold(0.0, f64::max),
        prompt_tokens: responses.iter().filter_map(|r| r.prompt_tokens).sum(),
        completion_tokens: responses.iter().filter_map(|r| r.completion_tokens).sum(),
        wall_clock_ms: ms(wall),
        errors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_defaults_and_validation() {
        let ep: ModelEndpoint =
            serde_json::from_str(r#"{"base_url":"http://localhost:1/v1/","model":"m"}"#).unwrap();
        assert_eq!(ep.temperature, 0.0);
        assert_eq!(ep.url(), "http://localhost:1/v1/chat/completions");
        assert!(ep.validate().is_ok());
        let mut bad = ep.clone();
        bad.max_concurrent = 0;
        assert!(bad.validate().is_err());
        assert!(serde_json::from_str::<ModelEndpoint>(r#"{"base_url":"http://x","model":"m","api_key":"s"}"#).is_err());
    }

    #[test]
    fn backoff_is_seeded_exponential_with_jitter() {
        let ep = ModelEndpoint { backoff_base_ms: 100, backoff_max_ms: 1000, ..ModelEndpoint::new("http://x", "m") };
        let a: Vec<_> = ep.backoff(3).take(6).collect();
        let b: Vec<_> = ep.backoff(3).take(6).collect();
        assert_eq!(a, b);
        assert_ne!(a, ep.backoff(4).take(6).collect::<Vec<_>>());
        for (n, d) in a.iter().enumerate() {
            let ceiling = Duration::from_millis((100u64 << n).min(1000));
            assert!(*d >= ceiling / 2 && *d <= ceiling, "{n}: {d:?}");
        }
    }

    #[test]
    fn completion_parsing() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"Navigational"}}],"usage":{"prompt_tokens":12,"completion_tokens":2}}"#;
        assert_eq!(parse_completion(body).unwrap(), ("Navigational".to_string(), Some(12), Some(2)));
        assert!(matches!(parse_completion("{}"), Err(LlmError::MalformedResponse(_))));
        assert!(matches!(parse_completion("<html>"), Err(LlmError::MalformedResponse(_))));
    }

    #[test]
    fn key_is_not_in_debug_or_body() {
        let c = LlmClient::with_api_key(ModelEndpoint::new("http://x", "m"), "sk-secret".into()).unwrap();
        assert!(!format!("{c:?}").contains("sk-secret"));
        assert!(!c.request_body("q").to_string().contains("sk-secret"));
        assert_eq!(c.request_body("q")["messages"][0]["role"], "user");
    }
}
