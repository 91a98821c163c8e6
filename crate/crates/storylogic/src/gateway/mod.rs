//! Transport to a chat-completion backend: message types, generation
//! settings, retry with exponential backoff, a global concurrency cap and an
//! optional request rate gate.
//!
//! The prompt side (template catalog, shot handling) lives in [`templates`];
//! concrete transports are [`http::HttpTransport`] and
//! [`mock::MockTransport`].

pub mod http;
pub mod mock;
pub mod templates;

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{Mutex, Semaphore};

pub use http::HttpTransport;
pub use mock::MockTransport;
pub use templates::{
    Exemplar, ExemplarSet, PromptRequest, ShotMode, Stage, StageTemplates, TemplateCatalog,
    TemplateError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

/// Sampling and retry settings for one completion call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub retries: u32,
    pub timeout: Duration,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            temperature: 0.1,
            top_p: 0.4,
            max_tokens: 256,
            retries: 3,
            timeout: Duration::from_secs(60),
            seed: None,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if !self.top_p.is_finite() || self.top_p <= 0.0 || self.top_p > 1.0 {
            return Err(GatewayError::Config(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::Config("max_tokens must be positive".into()));
        }
        if self.timeout.is_zero() {
            return Err(GatewayError::Config("timeout must be positive".into()));
        }
        Ok(())
    }
}

/// Token counts reported by the backend (or estimated by the mock).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Usage {
    pub fn merge(&mut self, other: Usage) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
    }
}

/// A successful completion, with how many retries it took.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
    pub retries_used: u32,
}

/// A single transport attempt's failure. `is_retryable` decides whether the
/// gateway may try again.
#[derive(Debug, Clone, Error)]
pub enum TransportError {
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("malformed response body: {0}")]
    Malformed(String),
    #[error("mock backend: {0}")]
    Mock(String),
}

impl TransportError {
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Auth(_) | TransportError::Malformed(_) | TransportError::Mock(_) => {
                false
            }
            TransportError::Status { status, .. } => {
                *status == 408 || *status == 429 || (500..=599).contains(status)
            }
            TransportError::Timeout(_) | TransportError::Connect(_) => true,
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("gave up after {attempts} attempts: {source}")]
    Exhausted {
        attempts: u32,
        #[source]
        source: TransportError,
    },
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// One backend capable of answering a chat completion request.
#[async_trait]
pub trait ChatTransport: Send + Sync {
    async fn complete(
        &self,
        model: &str,
        messages: &[ChatMessage],
        config: &GenerationConfig,
    ) -> Result<(String, Usage), TransportError>;

    /// Short label for logs and run headers, e.g. `http:https://...` or
    /// `mock:fixtures/x`.
    fn describe(&self) -> String;
}

/// Exponential backoff between retries: `base * factor^attempt`, with a
/// uniform jitter of `+-jitter` (as a fraction of the delay).
#[derive(Debug, Clone, Copy)]
pub struct BackoffPolicy {
    pub base: Duration,
    pub factor: f64,
    pub jitter: f64,
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        BackoffPolicy { base: Duration::from_millis(500), factor: 2.0, jitter: 0.2 }
    }
}

impl BackoffPolicy {
    pub fn delay(&self, attempt: u32, rng: &mut impl Rng) -> Duration {
        let scale = self.factor.powi(attempt as i32);
        let jitter = if self.jitter > 0.0 {
            1.0 + rng.gen_range(-self.jitter..=self.jitter)
        } else {
            1.0
        };
        self.base.mul_f64(scale * jitter.max(0.0))
    }
}

/// Retry, concurrency and rate-limit wrapper around a [`ChatTransport`].
///
/// The concurrency permit is held across retries of one request, so a
/// flapping endpoint is never hit by more than `jobs` requests at once.
pub struct Gateway {
    transport: Arc<dyn ChatTransport>,
    model: String,
    config: GenerationConfig,
    backoff: BackoffPolicy,
    permits: Semaphore,
    min_interval: Option<Duration>,
    next_slot: Mutex<Option<tokio::time::Instant>>,
    jitter_rng: std::sync::Mutex<ChaCha8Rng>,
}

impl Gateway {
    pub fn new(
        transport: Arc<dyn ChatTransport>,
        model: impl Into<String>,
        config: GenerationConfig,
    ) -> Result<Self, GatewayError> {
        config.validate()?;
        let seed = config.seed.unwrap_or(0);
        Ok(Gateway {
            transport,
            model: model.into(),
            config,
            backoff: BackoffPolicy::default(),
            permits: Semaphore::new(4),
            min_interval: None,
            next_slot: Mutex::new(None),
            jitter_rng: std::sync::Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        })
    }

    pub fn with_concurrency(mut self, jobs: usize) -> Self {
        self.permits = Semaphore::new(jobs.max(1));
        self
    }

    pub fn with_backoff(mut self, backoff: BackoffPolicy) -> Self {
        self.backoff = backoff;
        self
    }

    /// Minimum spacing between request starts (a simple rate limit).
    pub fn with_min_interval(mut self, interval: Option<Duration>) -> Self {
        self.min_interval = interval.filter(|d| !d.is_zero());
        self
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn config(&self) -> &GenerationConfig {
        &self.config
    }

    pub fn transport_label(&self) -> String {
        self.transport.describe()
    }

    pub async fn complete(&self, messages: &[ChatMessage]) -> Result<Completion, GatewayError> {
        self.complete_with(messages, &self.config).await
    }

    /// Like [`Gateway::complete`] with per-call settings (per-stage sampling
    /// overrides).
    pub async fn complete_with(
        &self,
        messages: &[ChatMessage],
        config: &GenerationConfig,
    ) -> Result<Completion, GatewayError> {
        config.validate()?;
        let _permit = self.permits.acquire().await.expect("semaphore never closed");
        let mut attempt = 0u32;
        loop {
            self.wait_for_slot().await;
            let outcome = tokio::time::timeout(
                config.timeout,
                self.transport.complete(&self.model, messages, config),
            )
            .await
            .unwrap_or(Err(TransportError::Timeout(config.timeout)));
            match outcome {
                Ok((text, usage)) => {
                    return Ok(Completion { text, usage, retries_used: attempt })
                }
                Err(source) if source.is_retryable() && attempt < config.retries => {
                    let delay = {
                        let mut rng = self.jitter_rng.lock().expect("rng lock");
                        self.backoff.delay(attempt, &mut *rng)
                    };
                    log::warn!(
                        "attempt {} failed ({source}); retrying in {delay:?}",
                        attempt + 1
                    );
                    tokio::time::sleep(delay).await;
                    attempt += 1;
                }
                Err(source) if source.is_retryable() => {
                    return Err(GatewayError::Exhausted { attempts: attempt + 1, source })
                }
                Err(source) => return Err(GatewayError::Transport(source)),
            }
        }
    }

    /// Reserve the next start slot when a minimum interval is configured.
    async fn wait_for_slot(&self) {
        let Some(interval) = self.min_interval else { return };
        let now = tokio::time::Instant::now();
        let start = {
            let mut next = self.next_slot.lock().await;
            let start = next.map_or(now, |slot| slot.max(now));
            *next = Some(start + interval);
            start
        };
        if start > now {
            tokio::time::sleep_until(start).await;
        }
    }
}

/// Test transport that replays a queue of scripted outcomes.
#[doc(hidden)]
pub struct ScriptedTransport {
    script: std::sync::Mutex<VecDeque<Result<String, TransportError>>>,
    calls: std::sync::atomic::AtomicU32,
}

impl ScriptedTransport {
    pub fn new(script: Vec<Result<String, TransportError>>) -> Self {
        ScriptedTransport {
            script: std::sync::Mutex::new(script.into()),
            calls: std::sync::atomic::AtomicU32::new(0),
        }
    }

    pub fn calls(&self) -> u32 {
        self.calls.load(std::sync::atomic::Ordering::SeqCst)
    }
}

#[async_trait]
impl ChatTransport for ScriptedTransport {
    async fn complete(
        &self,
        _model: &str,
        _messages: &[ChatMessage],
        _config: &GenerationConfig,
    ) -> Result<(String, Usage), TransportError> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        let next = self
            .script
            .lock()
            .expect("script lock")
            .pop_front()
            .unwrap_or(Err(TransportError::Mock("script exhausted".into())));
        next.map(|text| {
            let tokens = text.split_whitespace().count() as u64;
            (text, Usage { prompt_tokens: 0, completion_tokens: tokens })
        })
    }

    fn describe(&self) -> String {
        "scripted".to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn status(code: u16) -> TransportError {
        TransportError::Status { status: code, body: "busy".into() }
    }

    fn fast_gateway(transport: Arc<dyn ChatTransport>, retries: u32) -> Gateway {
        let config = GenerationConfig { retries, ..GenerationConfig::default() };
        Gateway::new(transport, "test-model", config)
            .unwrap()
            .with_backoff(BackoffPolicy {
                base: Duration::from_millis(1),
                factor: 2.0,
                jitter: 0.0,
            })
    }

    #[tokio::test]
    async fn retries_through_transient_statuses() {
        let transport = Arc::new(ScriptedTransport::new(vec![
            Err(status(429)),
            Err(status(429)),
            Ok("Insert before sentence [**3**]".into()),
        ]));
        let gateway = fast_gateway(transport.clone(), 3);
        let done = gateway.complete(&[ChatMessage::user("hi")]).await.unwrap();
        assert_eq!(done.retries_used, 2);
        assert_eq!(done.text, "Insert before sentence [**3**]");
        assert_eq!(transport.calls(), 3);
    }

    #[tokio::test]
    async fn exhausts_after_configured_retries() {
        let transport = Arc::new(ScriptedTransport::new(vec![
            Err(status(503)),
            Err(status(503)),
            Err(status(503)),
        ]));
        let gateway = fast_gateway(transport.clone(), 2);
        let err = gateway.complete(&[ChatMessage::user("hi")]).await.unwrap_err();
        match err {
            GatewayError::Exhausted { attempts, .. } => assert_eq!(attempts, 3),
            other => panic!("expected exhaustion, got {other}"),
        }
        assert_eq!(transport.calls(), 3);
    }

    #[tokio::test]
    async fn auth_failures_do_not_retry() {
        let transport = Arc::new(ScriptedTransport::new(vec![
            Err(TransportError::Auth("bad key".into())),
            Ok("never reached".into()),
        ]));
        let gateway = fast_gateway(transport.clone(), 3);
        let err = gateway.complete(&[ChatMessage::user("hi")]).await.unwrap_err();
        assert!(matches!(err, GatewayError::Transport(TransportError::Auth(_))));
        assert_eq!(transport.calls(), 1);
    }

    #[tokio::test]
    async fn slow_transport_times_out_and_counts_as_retryable() {
        struct Stalled;
        #[async_trait]
        impl ChatTransport for Stalled {
            async fn complete(
                &self,
                _: &str,
                _: &[ChatMessage],
                _: &GenerationConfig,
            ) -> Result<(String, Usage), TransportError> {
                tokio::time::sleep(Duration::from_secs(60)).await;
                Ok((String::new(), Usage::default()))
            }
            fn describe(&self) -> String {
                "stalled".into()
            }
        }
        let config = GenerationConfig {
            retries: 1,
            timeout: Duration::from_millis(20),
            ..GenerationConfig::default()
        };
        let gateway = Gateway::new(Arc::new(Stalled), "m", config).unwrap().with_backoff(
            BackoffPolicy { base: Duration::from_millis(1), factor: 1.0, jitter: 0.0 },
        );
        let err = gateway.complete(&[ChatMessage::user("hi")]).await.unwrap_err();
        match err {
            GatewayError::Exhausted { attempts, source } => {
                assert_eq!(attempts, 2);
                assert!(matches!(source, TransportError::Timeout(_)));
            }
            other => panic!("expected timeout exhaustion, got {other}"),
        }
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 4)]
    async fn concurrency_cap_is_enforced() {
        struct Counting {
            in_flight: AtomicUsize,
            peak: AtomicUsize,
        }
        #[async_trait]
        impl ChatTransport for Counting {
            async fn complete(
                &self,
                _: &str,
                _: &[ChatMessage],
                _: &GenerationConfig,
            ) -> Result<(String, Usage), TransportError> {
                let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(now, Ordering::SeqCst);
                tokio::time::sleep(Duration::from_millis(10)).await;
                self.in_flight.fetch_sub(1, Ordering::SeqCst);
                Ok(("ok".into(), Usage::default()))
            }
            fn describe(&self) -> String {
                "counting".into()
            }
        }
        let transport = Arc::new(Counting {
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let gateway =
            Arc::new(fast_gateway(transport.clone(), 0).with_concurrency(2));
        let mut handles = Vec::new();
        for _ in 0..8 {
            let gw = gateway.clone();
            handles.push(tokio::spawn(async move {
                gw.complete(&[ChatMessage::user("hi")]).await.unwrap();
            }));
        }
        for handle in handles {
            handle.await.unwrap();
        }
        assert!(transport.peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn backoff_grows_exponentially_within_jitter() {
        let policy = BackoffPolicy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for attempt in 0..4u32 {
            let nominal = 500.0 * 2f64.powi(attempt as i32);
            let delay = policy.delay(attempt, &mut rng).as_secs_f64() * 1000.0;
            assert!(delay >= nominal * 0.8 - 1e-6 && delay <= nominal * 1.2 + 1e-6);
        }
    }

    #[test]
    fn config_defaults_and_validation() {
        let config = GenerationConfig::default();
        assert_eq!(config.temperature, 0.1);
        assert_eq!(config.top_p, 0.4);
        config.validate().unwrap();

        let bad = GenerationConfig { top_p: 0.0, ..GenerationConfig::default() };
        assert!(bad.validate().is_err());
        let bad = GenerationConfig { top_p: 1.5, ..GenerationConfig::default() };
        assert!(bad.validate().is_err());
        let bad = GenerationConfig { temperature: -0.1, ..GenerationConfig::default() };
        assert!(bad.validate().is_err());
        let bad = GenerationConfig { max_tokens: 0, ..GenerationConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[tokio::test]
    async fn min_interval_spaces_request_starts() {
        let transport = Arc::new(ScriptedTransport::new(vec![
            Ok("a".into()),
            Ok("b".into()),
            Ok("c".into()),
        ]));
        let gateway = fast_gateway(transport, 0)
            .with_min_interval(Some(Duration::from_millis(15)));
        let begin = std::time::Instant::now();
        for _ in 0..3 {
            gateway.complete(&[ChatMessage::user("hi")]).await.unwrap();
        }
        assert!(begin.elapsed() >= Duration::from_millis(30));
    }
}
