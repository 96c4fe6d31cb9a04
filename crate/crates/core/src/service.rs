//! Read-only projections of the run ledger plus the checkpoint write path,
//! independent of any HTTP transport.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{CheckpointBroker, CheckpointDecision, CheckpointError};
use crate::clock::{Clock, Timestamp};
use crate::ledger::{
    FsStore, LedgerError, Outcome, RunEvent, RunEventKind, RunFilter, RunRecord, RunStore,
};
use crate::report::ValidationReport;
use crate::workflow::{
    CheckpointState, ConfigurationKind, Decision, PhaseId, ReviewMode, RunStatus,
};

pub const ARTIFACT_NAMES: [&str; 4] = ["spec", "plan", "tasks", "patch"];

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// One row of `GET /runs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub task_id: String,
    pub repo_id: String,
    pub config: ConfigurationKind,
    pub review_mode: ReviewMode,
    pub status: RunStatus,
    pub checkpoint: CheckpointState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_phase: Option<PhaseId>,
    pub started_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ended_at: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<f64>,
}

/// Snapshot of a run that has not written its record yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveRun {
    pub run_id: String,
    pub task_id: String,
    pub repo_id: String,
    pub config: ConfigurationKind,
    pub review_mode: ReviewMode,
    pub status: RunStatus,
    pub checkpoint: CheckpointState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_phase: Option<PhaseId>,
    pub phases_completed: Vec<PhaseId>,
    pub started_at: Timestamp,
    pub last_seq: u64,
}

impl LiveRun {
    /// Folds a run's events; `None` until the start event is written.
    pub fn from_events(run_id: &str, events: &[RunEvent]) -> Option<Self> {
        let first = events.first()?;
        let RunEventKind::RunStarted {
            task_id,
            repo_id,
            config,
            review_mode,
        } = &first.kind
        else {
            return None;
        };
        let mut live = LiveRun {
            run_id: run_id.to_string(),
            task_id: task_id.clone(),
            repo_id: repo_id.clone(),
            config: *config,
            review_mode: *review_mode,
            status: RunStatus::Running,
            checkpoint: CheckpointState::None,
            current_phase: None,
            phases_completed: Vec::new(),
            started_at: first.at,
            last_seq: first.seq,
        };
        for ev in &events[1..] {
            live.last_seq = ev.seq;
            match &ev.kind {
                RunEventKind::PhaseStarted { phase } => live.current_phase = Some(*phase),
                RunEventKind::PhaseCompleted { phase } => live.phases_completed.push(*phase),
                RunEventKind::CheckpointChanged { state } => live.checkpoint = *state,
                RunEventKind::RunFinished { status, .. } => live.status = *status,
                _ => {}
            }
        }
        Some(live)
    }

    fn summary(&self) -> RunSummary {
        RunSummary {
            run_id: self.run_id.clone(),
            task_id: self.task_id.clone(),
            repo_id: self.repo_id.clone(),
            config: self.config,
            review_mode: self.review_mode,
            status: self.status,
            checkpoint: self.checkpoint,
            current_phase: self.current_phase,
            started_at: self.started_at,
            ended_at: None,
            outcome: None,
            quality: None,
        }
    }
}

/// `GET /runs/{id}`: the sealed record, or a live snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RunView {
    Finished(Box<RunRecord>),
    Live(LiveRun),
}

impl RunView {
    pub fn status(&self) -> RunStatus {
        match self {
            RunView::Finished(r) => r.status,
            RunView::Live(l) => l.status,
        }
    }
}

fn summarize(r: &RunRecord) -> RunSummary {
    RunSummary {
        run_id: r.run_id.clone(),
        task_id: r.task_id.clone(),
        repo_id: r.repo_id.clone(),
        config: r.config,
        review_mode: r.review_mode,
        status: r.status,
        checkpoint: r.checkpoint,
        current_phase: r.phase_traces.last().map(|t| t.phase),
        started_at: r.started_at,
        ended_at: Some(r.ended_at),
        outcome: Some(r.outcome),
        quality: r.judge.as_ref().map(|j| j.composite),
    }
}

/// An event with its position in the stream it was read from. Clients
/// resume with `since = cursor + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub cursor: u64,
    #[serde(flatten)]
    pub event: RunEvent,
}

/// Interleaves every run's events into one append-only stream with a
/// process-wide cursor. Per-run order and gap-freedom are preserved.
#[derive(Debug, Default)]
struct EventBus {
    state: Mutex<BusState>,
}

#[derive(Debug, Default)]
struct BusState {
    events: Vec<RunEvent>,
    next_seq: HashMap<String, u64>,
}

impl EventBus {
    fn sync(&self, store: &FsStore) -> Result<(), LedgerError> {
        let mut st = self.state.lock().unwrap();
        for id in store.run_ids()? {
            let from = st.next_seq.get(&id).copied().unwrap_or(0);
            let fresh: Vec<RunEvent> = store
                .events(&id)?
                .into_iter()
                .filter(|e| e.seq >= from)
                .collect();
            if let Some(last) = fresh.last() {
                st.next_seq.insert(id, last.seq + 1);
            }
            st.events.extend(fresh);
        }
        Ok(())
    }

    fn since(&self, since: u64) -> Vec<StreamEvent> {
        let st = self.state.lock().unwrap();
        st.events
            .iter()
            .enumerate()
            .skip(usize::try_from(since).unwrap_or(usize::MAX))
            .map(|(i, e)| StreamEvent {
                cursor: i as u64,
                event: e.clone(),
            })
            .collect()
    }
}

pub struct Service {
    store: Arc<FsStore>,
    broker: Arc<CheckpointBroker>,
    clock: Arc<dyn Clock>,
    bus: EventBus,
}

impl Service {
    pub fn new(store: Arc<FsStore>, broker: Arc<CheckpointBroker>, clock: Arc<dyn Clock>) -> Self {
        Self {
            store,
            broker,
            clock,
            bus: EventBus::default(),
        }
    }

    pub fn store(&self) -> &FsStore {
        &self.store
    }

    fn require(&self, run_id: &str) -> Result<(), ServiceError> {
        if self.store.contains(run_id) {
            Ok(())
        } else {
            Err(ServiceError::NotFound(format!("run `{run_id}` not found")))
        }
    }

    /// Finished and live runs, ordered by run id.
    pub fn list_runs(&self, filter: &RunFilter) -> Result<Vec<RunSummary>, ServiceError> {
        let mut out = Vec::new();
        for id in self.store.run_ids()? {
            let summary = match self.store.get(&id)? {
                Some(r) => summarize(&r),
                None => match LiveRun::from_events(&id, &self.store.events(&id)?) {
                    Some(l) => l.summary(),
                    None => continue,
                },
            };
            let keep = filter
                .task_id
                .as_ref()
                .is_none_or(|t| *t == summary.task_id)
                && filter.config.is_none_or(|c| c == summary.config)
                && filter
                    .repo_id
                    .as_ref()
                    .is_none_or(|r| *r == summary.repo_id);
            if keep {
                out.push(summary);
            }
        }
        Ok(out)
    }

    pub fn get_run(&self, run_id: &str) -> Result<RunView, ServiceError> {
        self.require(run_id)?;
        if let Some(r) = self.store.get(run_id)? {
            return Ok(RunView::Finished(Box::new(r)));
        }
        LiveRun::from_events(run_id, &self.store.events(run_id)?)
            .map(RunView::Live)
            .ok_or_else(|| ServiceError::NotFound(format!("run `{run_id}` has not started")))
    }

    /// Artifact text verbatim; `name` is one of [`ARTIFACT_NAMES`].
    pub fn get_artifact(&self, run_id: &str, name: &str) -> Result<String, ServiceError> {
        if !ARTIFACT_NAMES.contains(&name) {
            return Err(ServiceError::BadRequest(format!(
                "unknown artifact `{name}`"
            )));
        }
        self.require(run_id)?;
        self.store
            .artifact_text(run_id, name)
            .ok_or_else(|| ServiceError::NotFound(format!("run `{run_id}` has no {name} artifact")))
    }

    pub fn get_report(&self, run_id: &str, phase: &str) -> Result<ValidationReport, ServiceError> {
        let phase: PhaseId = phase
            .parse()
            .map_err(|_| ServiceError::BadRequest(format!("unknown phase `{phase}`")))?;
        self.require(run_id)?;
        self.store.report(run_id, phase).ok_or_else(|| {
            ServiceError::NotFound(format!("run `{run_id}` has no {} report", phase.as_str()))
        })
    }

    /// Delivers a decision to a run waiting at plan review.
    pub fn post_checkpoint(
        &self,
        run_id: &str,
        decision: Decision,
        decided_by: &str,
    ) -> Result<CheckpointDecision, ServiceError> {
        let d = CheckpointDecision {
            run_id: run_id.to_string(),
            decision,
            decided_by: decided_by.to_string(),
            decided_at: self.clock.now(),
        };
        match self.broker.decide(d.clone()) {
            Ok(()) => Ok(d),
            Err(CheckpointError::Conflict(_)) => Err(ServiceError::Conflict(format!(
                "run `{run_id}` has no pending checkpoint"
            ))),
            Err(CheckpointError::NotFound(_)) if self.store.contains(run_id) => {
                Err(ServiceError::Conflict(format!(
                    "run `{run_id}` is not awaiting a decision in this process"
                )))
            }
            Err(CheckpointError::NotFound(_)) => {
                Err(ServiceError::NotFound(format!("run `{run_id}` not found")))
            }
        }
    }

    /// With `run`, cursors are that run's event sequence numbers; without,
    /// they index the interleaved stream of all runs.
    pub fn events(&self, run: Option<&str>, since: u64) -> Result<Vec<StreamEvent>, ServiceError> {
        match run {
            Some(id) => {
                self.require(id)?;
                Ok(self
                    .store
                    .events(id)?
                    .into_iter()
                    .filter(|e| e.seq >= since)
                    .map(|e| StreamEvent {
                        cursor: e.seq,
                        event: e,
                    })
                    .collect())
            }
            None => {
                self.bus.sync(&self.store)?;
                Ok(self.bus.since(since))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artifact::ArtifactKind;
    use crate::clock::ManualClock;
    use crate::ledger::fixtures::record;
    use crate::ledger::EventSink;

    fn service() -> (tempfile::TempDir, Service, Arc<CheckpointBroker>) {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(FsStore::open(dir.path()).unwrap());
        let broker = Arc::new(CheckpointBroker::new());
        let svc = Service::new(store, broker.clone(), Arc::new(ManualClock::at_epoch()));
        (dir, svc, broker)
    }

    fn ev(run: &str, seq: u64, kind: RunEventKind) -> RunEvent {
        RunEvent {
            run_id: run.into(),
            seq,
            at: ManualClock::at_epoch().now(),
            kind,
        }
    }

    fn started(run: &str) -> RunEvent {
        ev(
            run,
            0,
            RunEventKind::RunStarted {
                task_id: "dex-01".into(),
                repo_id: "dex".into(),
                config: ConfigurationKind::Full,
                review_mode: ReviewMode::Interactive,
            },
        )
    }

    #[test]
    fn empty_ledger_lists_nothing() {
        let (_d, svc, _) = service();
        assert!(svc.list_runs(&RunFilter::default()).unwrap().is_empty());
        assert!(svc.events(None, 0).unwrap().is_empty());
        assert!(matches!(
            svc.get_run("nope"),
            Err(ServiceError::NotFound(_))
        ));
    }

    #[test]
    fn baseline_run_has_no_spec_but_has_patch() {
        let (_d, svc, _) = service();
        let w = svc.store().begin("b1").unwrap();
        w.write_patch("diff --git a/x b/x\n").unwrap();
        w.finish(&record("b1")).unwrap();
        assert!(matches!(
            svc.get_artifact("b1", "spec"),
            Err(ServiceError::NotFound(_))
        ));
        assert_eq!(
            svc.get_artifact("b1", "patch").unwrap(),
            "diff --git a/x b/x\n"
        );
        assert!(matches!(
            svc.get_artifact("b1", "bogus"),
            Err(ServiceError::BadRequest(_))
        ));
        assert!(matches!(
            svc.get_report("b1", "plan"),
            Err(ServiceError::NotFound(_))
        ));
        assert!(matches!(
            svc.get_report("b1", "review"),
            Err(ServiceError::BadRequest(_))
        ));
        let rows = svc.list_runs(&RunFilter::default()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].status, RunStatus::Completed);
    }

    #[test]
    fn live_run_snapshot_reports_running() {
        let (_d, svc, _) = service();
        let w = svc.store().begin("live").unwrap();
        w.emit(&started("live"));
        w.emit(&ev(
            "live",
            1,
            RunEventKind::PhaseStarted {
                phase: PhaseId::Specify,
            },
        ));
        w.write_artifact(ArtifactKind::Spec, "# Spec\n").unwrap();
        let view = svc.get_run("live").unwrap();
        assert_eq!(view.status(), RunStatus::Running);
        let RunView::Live(l) = view else { panic!() };
        assert_eq!(l.current_phase, Some(PhaseId::Specify));
        assert_eq!(l.last_seq, 1);
        assert_eq!(svc.get_artifact("live", "spec").unwrap(), "# Spec\n");
        assert_eq!(
            svc.list_runs(&RunFilter::default()).unwrap()[0].status,
            RunStatus::Running
        );
    }

    #[test]
    fn checkpoint_posts_follow_the_broker() {
        let (_d, svc, broker) = service();
        assert!(matches!(
            svc.post_checkpoint("ghost", Decision::Approve, "op"),
            Err(ServiceError::NotFound(_))
        ));
        drop(svc.store().begin("r").unwrap());
        assert!(matches!(
            svc.post_checkpoint("r", Decision::Approve, "op"),
            Err(ServiceError::Conflict(_))
        ));
        broker.register("r");
        assert!(matches!(
            svc.post_checkpoint("r", Decision::Approve, "op"),
            Err(ServiceError::Conflict(_))
        ));
        broker.open("r", ManualClock::at_epoch().now());
        let d = svc.post_checkpoint("r", Decision::Approve, "op").unwrap();
        assert_eq!(d.decision, Decision::Approve);
        assert!(matches!(
            svc.post_checkpoint("r", Decision::Reject, "op"),
            Err(ServiceError::Conflict(_))
        ));
    }

    #[test]
    fn streams_replay_and_agree_across_subscribers() {
        let (_d, svc, _) = service();
        let a = svc.store().begin("a").unwrap();
        a.emit(&started("a"));
        a.emit(&ev(
            "a",
            1,
            RunEventKind::PhaseStarted {
                phase: PhaseId::Specify,
            },
        ));
        let b = svc.store().begin("b").unwrap();
        b.emit(&started("b"));
        let first = svc.events(None, 0).unwrap();
        assert_eq!(first.len(), 3);
        a.emit(&ev(
            "a",
            2,
            RunEventKind::PhaseCompleted {
                phase: PhaseId::Specify,
            },
        ));
        let all = svc.events(None, 0).unwrap();
        assert_eq!(&all[..3], &first[..]);
        assert_eq!(all.len(), 4);
        assert_eq!(all, svc.events(None, 0).unwrap());
        assert_eq!(svc.events(None, 3).unwrap(), all[3..].to_vec());
        let cursors: Vec<u64> = all.iter().map(|e| e.cursor).collect();
        assert_eq!(cursors, vec![0, 1, 2, 3]);
        let run_a: Vec<u64> = svc
            .events(Some("a"), 0)
            .unwrap()
            .iter()
            .map(|e| e.event.seq)
            .collect();
        assert_eq!(run_a, vec![0, 1, 2]);
        assert_eq!(svc.events(Some("a"), 2).unwrap().len(), 1);
        assert!(matches!(
            svc.events(Some("zz"), 0),
            Err(ServiceError::NotFound(_))
        ));
    }
}
