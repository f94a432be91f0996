use std::thread;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Token bucket; `None` rate means unlimited.
#[derive(Debug)]
pub struct RateLimiter {
    bucket: Option<Mutex<Bucket>>,
}

#[derive(Debug)]
struct Bucket {
    rate: f64,
    capacity: f64,
    tokens: f64,
    last: Instant,
}

impl RateLimiter {
    pub fn new(rate_per_sec: Option<f64>) -> Self {
        let bucket = rate_per_sec.filter(|r| *r > 0.0 && r.is_finite()).map(|rate| {
            let capacity = rate.max(1.0);
            Mutex::new(Bucket { rate, capacity, tokens: capacity, last: Instant::now() })
        });
        RateLimiter { bucket }
    }

    pub fn unlimited() -> Self {
        RateLimiter { bucket: None }
    }

    /// Blocks until a request may be sent.
    pub fn acquire(&self) {
        let Some(bucket) = &self.bucket else { return };
        loop {
            let wait = {
                let mut b = bucket.lock();
                let now = Instant::now();
                let refill = now.duration_since(b.last).as_secs_f64() * b.rate;
                b.tokens = (b.tokens + refill).min(b.capacity);
                b.last = now;
                if b.tokens >= 1.0 {
                    b.tokens -= 1.0;
                    return;
                }
                (1.0 - b.tokens) / b.rate
            };
            thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

/// Exponential backoff between failed backend calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub base_ms: u64,
    pub factor: f64,
    pub max_ms: u64,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { base_ms: 1000, factor: 2.0, max_ms: 60_000, jitter: true }
    }
}

impl RetryPolicy {
    pub fn immediate() -> Self {
        RetryPolicy { base_ms: 0, factor: 2.0, max_ms: 0, jitter: false }
    }

    /// Delay before retry number `retry` (0-based). Jitter scales it into [50%, 100%].
    pub fn delay(&self, retry: u32) -> Duration {
        let raw = self.base_ms as f64 * self.factor.powi(retry as i32);
        let capped = raw.min(self.max_ms as f64);
        let scaled = if self.jitter { capped * rand::rng().random_range(0.5..=1.0) } else { capped };
        Duration::from_secs_f64(scaled / 1000.0)
    }
}
