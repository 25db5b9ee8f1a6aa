//! Network gate and retry helpers shared by the HTTP-backed clients.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::Duration;

use thiserror::Error;

static REAL_REQUESTS: AtomicUsize = AtomicUsize::new(0);

/// Number of real network requests attempted by this process.
pub fn real_request_count() -> usize {
    REAL_REQUESTS.load(Ordering::SeqCst)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetError {
    #[error("offline mode forbids network access ({0})")]
    Offline(String),
    #[error("http client: {0}")]
    Client(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkPolicy {
    pub offline: bool,
}

impl NetworkPolicy {
    pub fn online() -> Self {
        Self { offline: false }
    }

    pub fn offline() -> Self {
        Self { offline: true }
    }
}

/// The only way to reach the network. Refuses to exist in offline mode.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(policy: NetworkPolicy, purpose: &str, timeout: Duration) -> Result<Self, NetError> {
        if policy.offline {
            return Err(NetError::Offline(purpose.to_string()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .user_agent(concat!("vps/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| NetError::Client(e.to_string()))?;
        Ok(Self { client })
    }

    /// Client for one request; counts the attempt.
    pub fn client(&self) -> &reqwest::blocking::Client {
        REAL_REQUESTS.fetch_add(1, Ordering::SeqCst);
        &self.client
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts; for tests and stubs.
    pub fn immediate(attempts: u32) -> Self {
        Self {
            attempts,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    /// Delay before attempt `n` (1-based, so attempt 2 waits `base_delay`).
    pub fn delay_before(&self, attempt: u32) -> Duration {
        if attempt <= 1 {
            return Duration::ZERO;
        }
        let factor = 2u32.saturating_pow(attempt - 2);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Runs `op` until it succeeds, fails with a non-retryable error, or attempts run out.
/// Returns the final result and the number of attempts made.
pub fn with_retry<T, E>(
    policy: &RetryPolicy,
    retryable: impl Fn(&E) -> bool,
    mut op: impl FnMut(u32) -> Result<T, E>,
) -> (Result<T, E>, u32) {
    let attempts = policy.attempts.max(1);
    let mut attempt = 1;
    loop {
        let result = op(attempt);
        match &result {
            Err(e) if attempt < attempts && retryable(e) => {
                let wait = policy.delay_before(attempt + 1);
                if !wait.is_zero() {
                    thread::sleep(wait);
                }
                attempt += 1;
            }
            _ => return (result, attempt),
        }
    }
}
