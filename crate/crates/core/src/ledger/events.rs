use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Outcome;
use crate::agent::Principal;
use crate::clock::Timestamp;
use crate::report::Verdict;
use crate::workflow::{CheckpointState, ConfigurationKind, PhaseId, ReviewMode, RunStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HookSlot {
    Pre,
    Post,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RunEventKind {
    RunStarted {
        task_id: String,
        repo_id: String,
        config: ConfigurationKind,
        review_mode: ReviewMode,
    },
    PhaseStarted {
        phase: PhaseId,
    },
    HookCompleted {
        phase: PhaseId,
        slot: HookSlot,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        verdict: Option<Verdict>,
    },
    AgentTurnCompleted {
        phase: PhaseId,
        principal: Principal,
        tool_calls: usize,
        repair: bool,
    },
    PhaseCompleted {
        phase: PhaseId,
    },
    CheckpointChanged {
        state: CheckpointState,
    },
    RunFinished {
        status: RunStatus,
        outcome: Outcome,
    },
}

/// `seq` counts from 0 per run, without gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEvent {
    pub run_id: String,
    pub seq: u64,
    pub at: Timestamp,
    pub kind: RunEventKind,
}

pub trait EventSink: Send + Sync {
    fn emit(&self, event: &RunEvent);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&self, _event: &RunEvent) {}
}

/// Forwards every event to each sink in order.
#[derive(Clone, Default)]
pub struct Tee(pub Vec<Arc<dyn EventSink>>);

impl EventSink for Tee {
    fn emit(&self, event: &RunEvent) {
        for s in &self.0 {
            s.emit(event);
        }
    }
}
