//! Injectable time source.
//!
//! Budget enforcement, ledger timestamps and backoff sleeps all go through a
//! [`Clock`], so tests can drive a run through simulated time.

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use chrono::{DateTime, TimeZone, Utc};

pub type Timestamp = DateTime<Utc>;

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;

    /// Block for `duration`. Simulated clocks advance instead of sleeping.
    fn sleep(&self, duration: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Utc::now()
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// A manually advanced clock. Clones share the same instant.
#[derive(Debug, Clone)]
pub struct ManualClock {
    now: Arc<Mutex<Timestamp>>,
    /// When set, real elapsed time since this instant is added on top.
    drift_from: Option<Instant>,
}

impl ManualClock {
    pub fn new(start: Timestamp) -> Self {
        Self {
            now: Arc::new(Mutex::new(start)),
            drift_from: None,
        }
    }

    /// Starts at wall time and keeps pace with it; `advance` adds simulated
    /// time on top. Lets scripted runs skip ahead while human waits still
    /// take real time.
    pub fn following_wall() -> Self {
        Self {
            now: Arc::new(Mutex::new(Utc::now())),
            drift_from: Some(Instant::now()),
        }
    }

    /// A fixed, arbitrary epoch used by fixtures.
    pub fn at_epoch() -> Self {
        Self::new(Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap())
    }

    pub fn advance(&self, by: Duration) {
        let mut now = self.now.lock().unwrap();
        *now += chrono::Duration::from_std(by).expect("duration in range");
    }

    pub fn advance_minutes(&self, minutes: u64) {
        self.advance(Duration::from_secs(minutes * 60));
    }

    pub fn set(&self, at: Timestamp) {
        *self.now.lock().unwrap() = at;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        let base = *self.now.lock().unwrap();
        match self.drift_from {
            Some(t0) => base + chrono::Duration::from_std(t0.elapsed()).unwrap_or_default(),
            None => base,
        }
    }

    fn sleep(&self, duration: Duration) {
        self.advance(duration);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manual_clock_clones_share_time() {
        let a = ManualClock::at_epoch();
        let b = a.clone();
        a.advance_minutes(5);
        assert_eq!(b.now() - a.now(), chrono::Duration::zero());
        let start = ManualClock::at_epoch().now();
        assert_eq!((b.now() - start).num_minutes(), 5);
    }

    #[test]
    fn wall_following_clock_adds_simulated_time() {
        let c = ManualClock::following_wall();
        let t0 = c.now();
        c.advance_minutes(41);
        let gained = (c.now() - t0).num_seconds();
        assert!((41 * 60..41 * 60 + 5).contains(&gained), "{gained}");
        let wall = (c.now() - Utc::now()).num_seconds();
        assert!((41 * 60 - 5..=41 * 60).contains(&wall), "{wall}");
    }

    #[test]
    fn sleep_advances_simulated_time() {
        let c = ManualClock::at_epoch();
        let t0 = c.now();
        c.sleep(Duration::from_secs(90));
        assert_eq!((c.now() - t0).num_seconds(), 90);
    }
}
