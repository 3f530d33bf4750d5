//! Completion providers: an HTTP chat-completions client and a scripted
//! mock, wrapped in shared plumbing for caching, retries, rate limiting,
//! and bounded per-endpoint concurrency.

mod cache;
mod http;
mod limiter;
mod mock;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use cache::{CacheKey, CacheRecord, CacheStats, ResponseCache};
pub use http::HttpBackend;
pub use limiter::{Clock, ManualClock, RateLimiter, Semaphore, SystemClock};
pub use mock::{mock_provider, MockBackend, MockResponse, MockRule};

use crate::config::{ModelEndpoint, SamplingParams};
use crate::conversation::{Conversation, Message};
use crate::methods::ToolDefinition;

/// One completion to perform: the full conversation plus sampling settings
/// and which of the K samples this is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub endpoint: ModelEndpoint,
    pub conversation: Conversation,
    pub params: SamplingParams,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tools: Vec<ToolDefinition>,
    pub sample_index: u32,
}

/// How a completion ended: a message, a provider-side content block, or a
/// failure after the retry budget was spent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CompletionOutcome {
    Ok { message: Message },
    Blocked { reason: String },
    Failed { reason: String, attempts: u32 },
}

impl CompletionOutcome {
    pub fn message(&self) -> Option<&Message> {
        match self {
            CompletionOutcome::Ok { message } => Some(message),
            _ => None,
        }
    }

    pub fn is_failed(&self) -> bool {
        matches!(self, CompletionOutcome::Failed { .. })
    }
}

/// Why a single call attempt did not produce an outcome.
#[derive(Debug, Clone)]
pub enum CallError {
    /// Worth retrying: timeouts, rate limits, 5xx, transport errors.
    Transient(String),
    /// Retrying cannot help: auth errors, bad requests, decode errors.
    Permanent(String),
}

/// A backend performs one raw call attempt; the [`Provider`] wraps it with
/// cache, retry, and throttling policy.
pub trait CompletionBackend: Send + Sync {
    fn call(&self, req: &CompletionRequest) -> Result<CompletionOutcome, CallError>;
}

/// Exponential backoff schedule. `max_attempts` counts the first try.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay_ms: 250,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    fn delay_before(&self, attempt: u32) -> Duration {
        let exponent = attempt.saturating_sub(1).min(16);
        let ms = self
            .base_delay_ms
            .saturating_mul(1u64 << exponent)
            .min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

struct EndpointControls {
    limiter: Option<RateLimiter>,
    semaphore: Semaphore,
}

/// The shared completion service. Thread-safe; cheap to share via `Arc`.
pub struct Provider {
    backend: Box<dyn CompletionBackend>,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
    clock: Arc<dyn Clock>,
    controls: Mutex<HashMap<String, Arc<EndpointControls>>>,
    backend_calls: std::sync::atomic::AtomicU64,
}

impl Provider {
    pub fn new(backend: Box<dyn CompletionBackend>) -> Provider {
        Provider {
            backend,
            cache: None,
            retry: RetryPolicy::default(),
            clock: Arc::new(SystemClock),
            controls: Mutex::new(HashMap::new()),
            backend_calls: std::sync::atomic::AtomicU64::new(0),
        }
    }

    /// Live HTTP backend speaking the chat-completions protocol.
    pub fn http() -> Provider {
        Provider::new(Box::new(HttpBackend::new()))
    }

    /// Scripted deterministic backend for tests and offline runs.
    pub fn mock(rules: Vec<MockRule>) -> Result<Provider, ProviderError> {
        Ok(Provider::new(Box::new(mock_provider(rules)?)))
    }

    pub fn with_cache_dir(mut self, dir: impl Into<std::path::PathBuf>) -> std::io::Result<Self> {
        self.cache = Some(ResponseCache::open(dir)?);
        Ok(self)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn cache_stats(&self) -> CacheStats {
        self.cache.as_ref().map(ResponseCache::stats).unwrap_or_default()
    }

    /// Raw backend invocations so far (cache hits never count).
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(std::sync::atomic::Ordering::Relaxed)
    }

    fn controls_for(&self, endpoint: &ModelEndpoint) -> Arc<EndpointControls> {
        let mut controls = self.controls.lock().unwrap();
        controls
            .entry(endpoint.name.clone())
            .or_insert_with(|| {
                Arc::new(EndpointControls {
                    limiter: endpoint
                        .requests_per_minute
                        .map(|cap| RateLimiter::per_minute(cap, self.clock.clone())),
                    semaphore: Semaphore::new(endpoint.max_parallel),
                })
            })
            .clone()
    }

    /// Completes a request: cache hit returns the stored outcome with no
    /// backend traffic; otherwise the call runs under the endpoint's
    /// concurrency bound and rate cap, with exponential backoff on
    /// transient failures, and the outcome (including failures) is cached.
    pub fn complete(&self, req: &CompletionRequest) -> CompletionOutcome {
        let key = CacheKey::for_request(req);
        if let Some(cache) = &self.cache {
            if let Some(outcome) = cache.get(&key) {
                return outcome;
            }
        }

        let controls = self.controls_for(&req.endpoint);
        let outcome = {
            let _slot = controls.semaphore.acquire();
            let mut last_reason = String::new();
            let mut result = None;
            for attempt in 1..=self.retry.max_attempts.max(1) {
                if attempt > 1 {
                    self.clock.sleep(self.retry.delay_before(attempt - 1));
                }
                if let Some(limiter) = &controls.limiter {
                    limiter.acquire();
                }
                self.backend_calls
                    .fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                match self.backend.call(req) {
                    Ok(outcome) => {
                        result = Some(outcome);
                        break;
                    }
                    Err(CallError::Permanent(reason)) => {
                        result = Some(CompletionOutcome::Failed {
                            reason,
                            attempts: attempt,
                        });
                        break;
                    }
                    Err(CallError::Transient(reason)) => last_reason = reason,
                }
            }
            result.unwrap_or(CompletionOutcome::Failed {
                reason: last_reason,
                attempts: self.retry.max_attempts.max(1),
            })
        };

        if let Some(cache) = &self.cache {
            cache.put(&key, req, &outcome);
        }
        outcome
    }

    /// K independent samples of the same conversation, ordered by
    /// sample_index. Slots fail independently; the endpoint's concurrency
    /// bound still applies through the shared semaphore.
    pub fn sample_n(
        &self,
        conversation: &Conversation,
        endpoint: &ModelEndpoint,
        params: &SamplingParams,
        tools: &[ToolDefinition],
    ) -> Vec<CompletionOutcome> {
        let request_for = |sample_index: u32| CompletionRequest {
            endpoint: endpoint.clone(),
            conversation: conversation.clone(),
            params: *params,
            tools: tools.to_vec(),
            sample_index,
        };
        let indices: Vec<u32> = (0..params.samples_per_prompt).collect();
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            indices
                .par_iter()
                .map(|&i| self.complete(&request_for(i)))
                .collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            indices
                .iter()
                .map(|&i| self.complete(&request_for(i)))
                .collect()
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("mock rules must end with an unconditional default rule")]
    MissingDefaultRule,
    #[error("failed to read mock rules: {0}")]
    BadRuleFile(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ModelEndpoint, SamplingParams};
    use crate::conversation::{Conversation, Message};

    fn endpoint() -> ModelEndpoint {
        ModelEndpoint::new("mock", "mock://", "mock-model")
    }

    fn conv(text: &str) -> Conversation {
        Conversation::with_messages("c", vec![Message::user(text)])
    }

    fn default_rules() -> Vec<MockRule> {
        vec![MockRule {
            contains: None,
            context_contains: None,
            requires_tools: None,
            respond: MockResponse::Text {
                text: "Sure, here you go.".to_string(),
            },
        }]
    }

    #[test]
    fn mock_provider_answers_with_the_default_rule() {
        let provider = Provider::mock(default_rules()).unwrap();
        let outcome = provider.complete(&CompletionRequest {
            endpoint: endpoint(),
            conversation: conv("hello"),
            params: SamplingParams::default(),
            tools: Vec::new(),
            sample_index: 0,
        });
        assert_eq!(
            outcome.message().unwrap().content,
            "Sure, here you go."
        );
    }

    #[test]
    fn sample_n_returns_one_outcome_per_sample_index() {
        let provider = Provider::mock(default_rules()).unwrap();
        let params = SamplingParams {
            samples_per_prompt: 10,
            ..SamplingParams::default()
        };
        let outcomes = provider.sample_n(&conv("hi"), &endpoint(), &params, &[]);
        assert_eq!(outcomes.len(), 10);
        assert!(outcomes.iter().all(|o| o.message().is_some()));
    }

    #[test]
    fn warm_cache_skips_the_backend() {
        let dir = tempfile::tempdir().unwrap();
        let provider = Provider::mock(default_rules())
            .unwrap()
            .with_cache_dir(dir.path())
            .unwrap();
        let req = CompletionRequest {
            endpoint: endpoint(),
            conversation: conv("hello"),
            params: SamplingParams::default(),
            tools: Vec::new(),
            sample_index: 0,
        };
        let first = provider.complete(&req);
        assert_eq!(provider.backend_calls(), 1);
        let second = provider.complete(&req);
        assert_eq!(provider.backend_calls(), 1, "second call must be a cache hit");
        assert_eq!(first, second);

        // A fresh provider over the same directory sees the entry too.
        let rewarmed = Provider::mock(default_rules())
            .unwrap()
            .with_cache_dir(dir.path())
            .unwrap();
        assert_eq!(rewarmed.complete(&req), first);
        assert_eq!(rewarmed.backend_calls(), 0);
    }

    #[test]
    fn failed_outcomes_are_cached_for_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let rules = vec![MockRule {
            contains: None,
            context_contains: None,
            requires_tools: None,
            respond: MockResponse::Fail {
                reason: "scripted-failure".to_string(),
            },
        }];
        let provider = Provider::mock(rules.clone())
            .unwrap()
            .with_cache_dir(dir.path())
            .unwrap();
        let req = CompletionRequest {
            endpoint: endpoint(),
            conversation: conv("x"),
            params: SamplingParams::default(),
            tools: Vec::new(),
            sample_index: 3,
        };
        let first = provider.complete(&req);
        assert!(first.is_failed());
        let second = provider.complete(&req);
        assert_eq!(first, second);
        assert_eq!(provider.backend_calls(), 1);
    }

    #[test]
    fn retry_policy_delays_grow_and_saturate() {
        let retry = RetryPolicy::default();
        assert_eq!(retry.delay_before(1), Duration::from_millis(250));
        assert_eq!(retry.delay_before(2), Duration::from_millis(500));
        assert_eq!(retry.delay_before(3), Duration::from_millis(1000));
        assert_eq!(retry.delay_before(10), Duration::from_millis(8000));
    }
}
