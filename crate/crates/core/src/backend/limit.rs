//! Request pacing, in-flight bounds and retry with backoff.

use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use tokio::sync::{Mutex, Semaphore, SemaphorePermit};
use tokio::time::Instant;
use tracing::debug;

/// Token bucket refilled at `requests_per_minute / 60` tokens per second.
#[derive(Debug)]
pub struct RateLimiter {
    capacity: f64,
    per_second: f64,
    state: Mutex<Bucket>,
}

#[derive(Debug)]
struct Bucket {
    tokens: f64,
    last: Instant,
}

impl RateLimiter {
    /// `burst` is the bucket capacity (at least 1).
    pub fn new(requests_per_minute: f64, burst: u32) -> Self {
        let capacity = f64::from(burst.max(1));
        RateLimiter {
            capacity,
            per_second: requests_per_minute / 60.0,
            state: Mutex::new(Bucket {
                tokens: capacity,
                last: Instant::now(),
            }),
        }
    }

    pub async fn acquire(&self) {
        loop {
            let wait = {
                let mut bucket = self.state.lock().await;
                let now = Instant::now();
                let elapsed = now.duration_since(bucket.last).as_secs_f64();
                bucket.tokens = (bucket.tokens + elapsed * self.per_second).min(self.capacity);
                bucket.last = now;
                if bucket.tokens >= 1.0 {
                    bucket.tokens -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - bucket.tokens) / self.per_second)
            };
            tokio::time::sleep(wait).await;
        }
    }
}

/// Concurrency and pacing shared by every caller of one remote service.
#[derive(Debug, Clone)]
pub struct Limits {
    in_flight: Arc<Semaphore>,
    max_concurrency: usize,
    rate: Option<Arc<RateLimiter>>,
}

impl Limits {
    /// `requests_per_minute` of `None` (or non-positive) disables pacing.
    pub fn new(max_concurrency: usize, requests_per_minute: Option<f64>) -> Self {
        let max_concurrency = max_concurrency.max(1);
        let rate = requests_per_minute
            .filter(|r| r.is_finite() && *r > 0.0)
            .map(|rpm| Arc::new(RateLimiter::new(rpm, max_concurrency as u32)));
        Limits {
            in_flight: Arc::new(Semaphore::new(max_concurrency)),
            max_concurrency,
            rate,
        }
    }

    pub fn unlimited() -> Self {
        Limits::new(Semaphore::MAX_PERMITS, None)
    }

    pub fn max_concurrency(&self) -> usize {
        self.max_concurrency
    }

    /// Waits for an in-flight slot, then for a rate token.
    pub async fn acquire(&self) -> SemaphorePermit<'_> {
        let permit = self.in_flight.acquire().await.expect("semaphore never closed");
        if let Some(rate) = &self.rate {
            rate.acquire().await;
        }
        permit
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (0-based): exponential with equal
    /// jitter, i.e. uniformly in `[d/2, d]` for `d = min(base·2^attempt, max)`.
    pub fn delay(&self, attempt: u32) -> Duration {
        let exp = self
            .base_delay
            .saturating_mul(1u32.checked_shl(attempt.min(31)).unwrap_or(u32::MAX));
        let capped = exp.min(self.max_delay);
        let half = capped / 2;
        let jitter = rand::rng().random_range(0.0..=1.0);
        half + half.mul_f64(jitter)
    }
}

/// One failed attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttemptError {
    pub retryable: bool,
    pub message: String,
}

impl AttemptError {
    pub fn retryable(message: impl Into<String>) -> Self {
        AttemptError {
            retryable: true,
            message: message.into(),
        }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        AttemptError {
            retryable: false,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RetryError {
    #[error("gave up after {attempts} attempt(s): {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("{0}")]
    Fatal(String),
}

/// Runs `op` until it succeeds, fails fatally, or `policy.max_retries`
/// retries have been spent.
pub async fn with_retries<T, F, Fut>(policy: &RetryPolicy, mut op: F) -> Result<T, RetryError>
where
    F: FnMut() -> Fut,
    Fut: Future<Output = Result<T, AttemptError>>,
{
    let mut attempt = 0u32;
    loop {
        match op().await {
            Ok(v) => return Ok(v),
            Err(e) if !e.retryable => return Err(RetryError::Fatal(e.message)),
            Err(e) => {
                if attempt >= policy.max_retries {
                    return Err(RetryError::Exhausted {
                        attempts: attempt + 1,
                        last: e.message,
                    });
                }
                let delay = policy.delay(attempt);
                debug!(attempt, ?delay, error = %e.message, "retrying");
                tokio::time::sleep(delay).await;
                attempt += 1;
            }
        }
    }
}
