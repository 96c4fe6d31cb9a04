use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exponential backoff for transient backend failures and rate limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackoffPolicy {
    #[serde(with = "secs_f64")]
    pub base_delay: Duration,
    pub multiplier: f64,
    pub max_retries: u32,
    pub jitter: f64,
}

mod secs_f64 {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        Self {
            base_delay: Duration::from_secs(1),
            multiplier: 2.0,
            max_retries: 5,
            jitter: 0.2,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackoffError {
    #[error("retries exhausted after {0} attempts")]
    Exhausted(u32),
    #[error("invalid backoff policy: {0}")]
    Invalid(&'static str),
}

impl BackoffPolicy {
    pub fn validate(&self) -> Result<(), BackoffError> {
        if self.base_delay.is_zero() {
            return Err(BackoffError::Invalid("base_delay must be positive"));
        }
        if self.multiplier.is_nan() || self.multiplier < 1.0 {
            return Err(BackoffError::Invalid("multiplier must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.jitter) {
            return Err(BackoffError::Invalid("jitter must lie in [0, 1]"));
        }
        Ok(())
    }

    /// `base × multiplier^attempt`, scaled by a uniform factor in
    /// `[1 − jitter, 1 + jitter]`. Deterministic when jitter is zero.
    pub fn next_delay<R: Rng + ?Sized>(
        &self,
        attempt: u32,
        rng: &mut R,
    ) -> Result<Duration, BackoffError> {
        if attempt > self.max_retries {
            return Err(BackoffError::Exhausted(attempt));
        }
        let nominal = self.base_delay.as_secs_f64() * self.multiplier.powi(attempt as i32);
        let factor = if self.jitter > 0.0 {
            rng.gen_range(1.0 - self.jitter..=1.0 + self.jitter)
        } else {
            1.0
        };
        Ok(Duration::from_secs_f64((nominal * factor).max(0.0)))
    }
}
