//! Blocking JSON-over-HTTP transport shared by the remote embedder and the
//! completion client: exponential-backoff retry and a sliding-window rate limiter.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

const BODY_EXCERPT: usize = 512;

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            initial_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(30),
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn no_retry() -> Self {
        Self {
            max_attempts: 1,
            ..Self::default()
        }
    }

    /// Delay before retry number `attempt` (1-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = self.multiplier.powi(attempt.saturating_sub(1) as i32);
        let delay = self.initial_backoff.as_secs_f64() * factor;
        Duration::from_secs_f64(delay.min(self.max_backoff.as_secs_f64()))
    }
}

/// Allows at most `max_requests` request starts in any window of `interval`.
#[derive(Debug)]
pub struct RateLimiter {
    max_requests: usize,
    interval: Duration,
    starts: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    pub fn new(max_requests: usize, interval: Duration) -> Self {
        Self {
            max_requests: max_requests.max(1),
            interval,
            starts: Mutex::new(VecDeque::new()),
        }
    }

    pub fn unlimited() -> Self {
        Self::new(usize::MAX, Duration::ZERO)
    }

    /// Blocks until a request may start, then records the start.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut starts = self.starts.lock().expect("rate limiter poisoned");
                let now = Instant::now();
                while starts
                    .front()
                    .is_some_and(|t| now.duration_since(*t) >= self.interval)
                {
                    starts.pop_front();
                }
                if starts.len() < self.max_requests {
                    starts.push_back(now);
                    return;
                }
                self.interval - now.duration_since(*starts.front().expect("non-empty"))
            };
            std::thread::sleep(wait);
        }
    }
}

#[derive(Debug)]
pub struct JsonTransport {
    client: reqwest::blocking::Client,
    url: String,
    bearer: Option<String>,
    pub retry: RetryPolicy,
    pub limiter: RateLimiter,
}

impl JsonTransport {
    pub fn new(url: impl Into<String>, bearer: Option<String>, timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(Self {
            client,
            url: url.into(),
            bearer,
            retry: RetryPolicy::default(),
            limiter: RateLimiter::unlimited(),
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// POSTs `body` and decodes the JSON response. 5xx, 429 and connection
    /// failures are retried; other 4xx statuses fail immediately.
    pub fn post<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R> {
        let mut last_error = String::new();
        let attempts = self.retry.max_attempts.max(1);
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(self.retry.backoff(attempt - 1));
            }
            self.limiter.acquire();
            let mut request = self.client.post(&self.url).json(body);
            if let Some(token) = &self.bearer {
                request = request.bearer_auth(token);
            }
            let response = match request.send() {
                Ok(r) => r,
                Err(e) => {
                    last_error = e.to_string();
                    log::debug!("attempt {attempt} to {} failed: {last_error}", self.url);
                    continue;
                }
            };
            let status = response.status();
            if status.is_success() {
                let text = response.text().map_err(|e| Error::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                })?;
                return serde_json::from_str(&text).map_err(|e| {
                    Error::Format(format!("unexpected response body from {}: {e}", self.url))
                });
            }
            let body = response.text().unwrap_or_default();
            let excerpt: String = body.chars().take(BODY_EXCERPT).collect();
            if status.is_server_error() || status.as_u16() == 429 {
                last_error = format!("status {status}: {excerpt}");
                log::debug!("attempt {attempt} to {} failed: {last_error}", self.url);
                continue;
            }
            return Err(Error::Request {
                status: status.as_u16(),
                body: excerpt,
            });
        }
        Err(Error::Transport {
            attempts,
            message: last_error,
        })
    }
}
