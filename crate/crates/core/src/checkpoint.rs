//! Hand-off of plan-review decisions from operators to waiting runs.

use std::collections::HashMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, Timestamp};
use crate::workflow::Decision;

/// Real-time polling step while a run waits; the deadline itself is read
/// from the run's clock, so simulated clocks can expire it.
const POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointDecision {
    pub run_id: String,
    pub decision: Decision,
    pub decided_by: String,
    pub decided_at: Timestamp,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("no live run `{0}`")]
    NotFound(String),
    #[error("run `{0}` has no pending checkpoint")]
    Conflict(String),
}

#[derive(Debug, Clone)]
enum Slot {
    Live,
    Pending { since: Timestamp },
    Decided(CheckpointDecision),
}

#[derive(Debug, Default)]
pub struct CheckpointBroker {
    slots: Mutex<HashMap<String, Slot>>,
    changed: Condvar,
}

impl CheckpointBroker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, run_id: &str) {
        self.slots
            .lock()
            .unwrap()
            .insert(run_id.to_string(), Slot::Live);
    }

    pub fn unregister(&self, run_id: &str) {
        self.slots.lock().unwrap().remove(run_id);
        self.changed.notify_all();
    }

    pub fn is_live(&self, run_id: &str) -> bool {
        self.slots.lock().unwrap().contains_key(run_id)
    }

    pub fn is_pending(&self, run_id: &str) -> bool {
        matches!(
            self.slots.lock().unwrap().get(run_id),
            Some(Slot::Pending { .. })
        )
    }

    pub fn open(&self, run_id: &str, since: Timestamp) {
        self.slots
            .lock()
            .unwrap()
            .insert(run_id.to_string(), Slot::Pending { since });
    }

    /// Accepts exactly one decision per pending checkpoint.
    pub fn decide(&self, decision: CheckpointDecision) -> Result<(), CheckpointError> {
        let mut slots = self.slots.lock().unwrap();
        match slots.get(&decision.run_id) {
            None => Err(CheckpointError::NotFound(decision.run_id)),
            Some(Slot::Pending { .. }) => {
                slots.insert(decision.run_id.clone(), Slot::Decided(decision));
                self.changed.notify_all();
                Ok(())
            }
            Some(_) => Err(CheckpointError::Conflict(decision.run_id)),
        }
    }

    /// Blocks until a decision arrives or more than `timeout` has passed on
    /// `clock` since the checkpoint opened. `None` means timed out.
    pub fn wait(
        &self,
        run_id: &str,
        clock: &dyn Clock,
        timeout: Duration,
    ) -> Option<CheckpointDecision> {
        let mut slots = self.slots.lock().unwrap();
        loop {
            match slots.get(run_id).cloned() {
                Some(Slot::Decided(d)) => {
                    slots.insert(run_id.to_string(), Slot::Live);
                    return Some(d);
                }
                Some(Slot::Pending { since }) => {
                    let waited = (clock.now() - since).to_std().unwrap_or(Duration::ZERO);
                    if waited > timeout {
                        slots.insert(run_id.to_string(), Slot::Live);
                        return None;
                    }
                }
                _ => return None,
            }
            slots = self.changed.wait_timeout(slots, POLL).unwrap().0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use std::sync::Arc;

    fn decision(run: &str, d: Decision) -> CheckpointDecision {
        CheckpointDecision {
            run_id: run.into(),
            decision: d,
            decided_by: "op".into(),
            decided_at: ManualClock::at_epoch().now(),
        }
    }

    #[test]
    fn decisions_need_a_pending_checkpoint() {
        let b = CheckpointBroker::new();
        assert_eq!(
            b.decide(decision("r", Decision::Approve)),
            Err(CheckpointError::NotFound("r".into()))
        );
        b.register("r");
        assert_eq!(
            b.decide(decision("r", Decision::Approve)),
            Err(CheckpointError::Conflict("r".into()))
        );
        b.open("r", ManualClock::at_epoch().now());
        assert!(b.is_pending("r"));
        b.decide(decision("r", Decision::Reject)).unwrap();
        assert_eq!(
            b.decide(decision("r", Decision::Approve)),
            Err(CheckpointError::Conflict("r".into()))
        );
    }

    #[test]
    fn waiter_receives_decision_from_another_thread() {
        let b = Arc::new(CheckpointBroker::new());
        let clock = ManualClock::at_epoch();
        b.register("r");
        b.open("r", clock.now());
        let b2 = b.clone();
        let t = std::thread::spawn(move || {
            std::thread::sleep(Duration::from_millis(30));
            b2.decide(decision("r", Decision::Approve)).unwrap();
        });
        let got = b.wait("r", &clock, Duration::from_secs(600)).unwrap();
        t.join().unwrap();
        assert_eq!(got.decision, Decision::Approve);
        assert!(!b.is_pending("r"));
    }

    #[test]
    fn simulated_time_expires_the_wait() {
        let b = Arc::new(CheckpointBroker::new());
        let clock = ManualClock::at_epoch();
        b.register("r");
        b.open("r", clock.now());
        let c2 = clock.clone();
        let t = std::thread::spawn(move || {
            std::thread::sleep(Duration::from_millis(30));
            c2.advance_minutes(10);
            std::thread::sleep(Duration::from_millis(60));
            c2.advance(Duration::from_secs(1));
        });
        assert!(b.wait("r", &clock, Duration::from_secs(600)).is_none());
        t.join().unwrap();
        assert_eq!(
            b.decide(decision("r", Decision::Approve)),
            Err(CheckpointError::Conflict("r".into()))
        );
    }
}
