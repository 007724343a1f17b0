//! Blocking HTTP plumbing shared by the remote LLM, search and reranker
//! clients: retry with exponential backoff and a token-bucket limiter.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use reqwest::blocking::{RequestBuilder, Response};
use reqwest::StatusCode;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HttpError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("rate limited (retry after {retry_after_secs:?}s)")]
    RateLimited { retry_after_secs: Option<u64> },
    #[error("request rejected (HTTP {status}): {body}")]
    BadRequest { status: u16, body: String },
    #[error("malformed response: {0}")]
    Protocol(String),
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
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            max_retries: 0,
            ..Self::default()
        }
    }

    /// Delay before retry number `retry` (0-based).
    pub fn backoff(&self, retry: u32, retry_after: Option<u64>) -> Duration {
        let exp = self
            .base_delay
            .saturating_mul(1u32.checked_shl(retry).unwrap_or(u32::MAX));
        let hinted = retry_after.map(Duration::from_secs).unwrap_or_default();
        exp.max(hinted).min(self.max_delay)
    }
}

/// Token bucket: `rate` tokens per second, bursts up to `burst`.
#[derive(Debug)]
pub struct RateLimiter {
    rate: f64,
    burst: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(rate_per_sec: f64, burst: u32) -> Self {
        let burst = f64::from(burst.max(1));
        Self {
            rate: rate_per_sec.max(f64::MIN_POSITIVE),
            burst,
            state: Mutex::new((burst, Instant::now())),
        }
    }

    /// Block until a token is available.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
                let now = Instant::now();
                let elapsed = now.duration_since(state.1).as_secs_f64();
                state.0 = (state.0 + elapsed * self.rate).min(self.burst);
                state.1 = now;
                if state.0 >= 1.0 {
                    state.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - state.0) / self.rate)
            };
            std::thread::sleep(wait);
        }
    }
}

pub(crate) enum Attempt {
    Retry { error: HttpError, retry_after: Option<u64> },
    Fatal(HttpError),
}

fn retry_after(resp: &Response) -> Option<u64> {
    resp.headers()
        .get(reqwest::header::RETRY_AFTER)?
        .to_str()
        .ok()?
        .trim()
        .parse()
        .ok()
}

pub(crate) fn classify(resp: Response) -> Result<Response, Attempt> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let code = status.as_u16();
    match status {
        StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => {
            Err(Attempt::Fatal(HttpError::Auth { status: code }))
        }
        StatusCode::TOO_MANY_REQUESTS => {
            let after = retry_after(&resp);
            Err(Attempt::Retry {
                error: HttpError::RateLimited {
                    retry_after_secs: after,
                },
                retry_after: after,
            })
        }
        s if s.is_server_error() => Err(Attempt::Retry {
            error: HttpError::Transport {
                message: format!("HTTP {code}"),
                attempts: 0,
            },
            retry_after: retry_after(&resp),
        }),
        _ => {
            let body = resp.text().unwrap_or_default();
            Err(Attempt::Fatal(HttpError::BadRequest { status: code, body }))
        }
    }
}

/// Outcome of a successful exchange.
pub(crate) struct Delivered {
    pub body: String,
    pub retries: u32,
}

/// Send a request built by `build`, retrying transient failures.
pub(crate) fn send_with_retry(
    policy: &RetryPolicy,
    limiter: Option<&RateLimiter>,
    build: impl Fn() -> RequestBuilder,
) -> Result<Delivered, HttpError> {
    let mut retries = 0u32;
    loop {
        if let Some(limiter) = limiter {
            limiter.acquire();
        }
        let attempt = match build().send() {
            Ok(resp) => match classify(resp) {
                Ok(resp) => match resp.text() {
                    Ok(body) => return Ok(Delivered { body, retries }),
                    Err(e) => Attempt::Retry {
                        error: HttpError::Transport {
                            message: e.to_string(),
                            attempts: 0,
                        },
                        retry_after: None,
                    },
                },
                Err(attempt) => attempt,
            },
            Err(e) => Attempt::Retry {
                error: HttpError::Transport {
                    message: e.to_string(),
                    attempts: 0,
                },
                retry_after: None,
            },
        };
        match attempt {
            Attempt::Fatal(error) => return Err(error),
            Attempt::Retry { error, retry_after } => {
                if retries >= policy.max_retries {
                    return Err(match error {
                        HttpError::Transport { message, .. } => HttpError::Transport {
                            message,
                            attempts: retries + 1,
                        },
                        other => other,
                    });
                }
                let delay = policy.backoff(retries, retry_after);
                log::warn!(
                    "attempt {} failed ({error}); retrying in {delay:?}",
                    retries + 1
                );
                std::thread::sleep(delay);
                retries += 1;
            }
        }
    }
}

pub(crate) fn client(timeout: Duration) -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .unwrap_or_else(|_| reqwest::blocking::Client::new())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_retries: 5,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(350),
        };
        assert_eq!(p.backoff(0, None), Duration::from_millis(100));
        assert_eq!(p.backoff(1, None), Duration::from_millis(200));
        assert_eq!(p.backoff(2, None), Duration::from_millis(350));
        assert_eq!(p.backoff(40, None), Duration::from_millis(350));
        assert_eq!(p.backoff(0, Some(1)), Duration::from_millis(350));
    }

    #[test]
    fn limiter_spaces_requests() {
        let limiter = RateLimiter::new(50.0, 1);
        let start = Instant::now();
        for _ in 0..4 {
            limiter.acquire();
        }
        // one burst token, then three refills at 20ms each
        assert!(start.elapsed() >= Duration::from_millis(55));
    }
}
