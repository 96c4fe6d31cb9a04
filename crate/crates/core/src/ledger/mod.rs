//! Append-only run records, outcome evaluation and failure classification.

mod events;
mod store;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use events::{EventSink, HookSlot, NullSink, RunEvent, RunEventKind, Tee};
pub use store::{FsStore, LedgerError, LedgerLine, MemoryStore, RunFilter, RunStore, RunWriter};

use crate::agent::{AgentTurn, ToolCallRecord};
use crate::clock::Timestamp;
use crate::hooks::CheckResult;
use crate::judge::{JudgeOutcome, JudgeVerdict};
use crate::report::Verdict;
use crate::workflow::{
    CheckpointState, ConfigurationKind, PhaseId, ReviewMode, RunStatus, UnknownName,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCategory {
    BudgetTimeout,
    HumanCheckpointTimeout,
    ArtifactValidationFailure,
    ExecutionOrEnvironmentFailure,
    RepositoryCheckFailure,
    IncompleteImplementation,
    RateLimitedOrInterrupted,
}

impl FailureCategory {
    pub const ALL: [FailureCategory; 7] = [
        FailureCategory::BudgetTimeout,
        FailureCategory::HumanCheckpointTimeout,
        FailureCategory::ArtifactValidationFailure,
        FailureCategory::ExecutionOrEnvironmentFailure,
        FailureCategory::RepositoryCheckFailure,
        FailureCategory::IncompleteImplementation,
        FailureCategory::RateLimitedOrInterrupted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureCategory::BudgetTimeout => "budget_timeout",
            FailureCategory::HumanCheckpointTimeout => "human_checkpoint_timeout",
            FailureCategory::ArtifactValidationFailure => "artifact_validation_failure",
            FailureCategory::ExecutionOrEnvironmentFailure => "execution_or_environment_failure",
            FailureCategory::RepositoryCheckFailure => "repository_check_failure",
            FailureCategory::IncompleteImplementation => "incomplete_implementation",
            FailureCategory::RateLimitedOrInterrupted => "rate_limited_or_interrupted",
        }
    }
}

impl fmt::Display for FailureCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FailureCategory {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FailureCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| UnknownName {
                what: "failure category",
                name: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Success,
    Failure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub status: OutcomeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<FailureCategory>,
}

impl Outcome {
    pub fn success() -> Self {
        Self {
            status: OutcomeStatus::Success,
            category: None,
        }
    }

    pub fn failure(category: FailureCategory) -> Self {
        Self {
            status: OutcomeStatus::Failure,
            category: Some(category),
        }
    }

    pub fn is_success(&self) -> bool {
        self.status == OutcomeStatus::Success
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalKind {
    Authentication,
    ToolPermissionViolation,
    BackendExhausted,
    OrchestratorPanic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticalError {
    pub kind: CriticalKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<PhaseId>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreHookEntry {
    /// Relative path of the stored bundle, e.g. `evidence/plan.json`.
    pub evidence_ref: String,
    pub relevant_files: usize,
    pub tool_calls: Vec<ToolCallRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostHookRun {
    pub verdict: Verdict,
    pub errors: usize,
    pub tool_calls: Vec<ToolCallRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostHookEntry {
    /// Relative path of the final report, e.g. `reports/plan.json`.
    pub report_ref: String,
    pub verdict: Verdict,
    /// One entry per validation pass; more than one means repairs happened.
    pub runs: Vec<PostHookRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTrace {
    pub phase: PhaseId,
    pub started_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ended_at: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_hook: Option<PreHookEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_hook: Option<PostHookEntry>,
    pub agent_turns: Vec<AgentTurn>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRef {
    pub branch_name: String,
    pub files_changed: usize,
    pub diff_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub task_id: String,
    pub repo_id: String,
    pub config: ConfigurationKind,
    pub review_mode: ReviewMode,
    pub backend_id: String,
    pub started_at: Timestamp,
    pub ended_at: Timestamp,
    pub status: RunStatus,
    pub checkpoint: CheckpointState,
    pub phase_traces: Vec<PhaseTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch: Option<PatchRef>,
    pub checks: Vec<CheckResult>,
    pub rate_limited: bool,
    /// The run stopped early because of an external interruption or a
    /// rate limit that outlasted the retry policy.
    pub interrupted: bool,
    pub critical_errors: Vec<CriticalError>,
    /// Non-critical execution problems (workspace setup, malformed backend replies).
    pub execution_errors: Vec<String>,
    /// Phase whose post-hook still failed after the repair budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_failure: Option<PhaseId>,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<JudgeVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_unavailable: Option<String>,
}

impl RunRecord {
    pub fn phases(&self) -> Vec<PhaseId> {
        self.phase_traces.iter().map(|t| t.phase).collect()
    }

    pub fn duration_minutes(&self) -> f64 {
        (self.ended_at - self.started_at).num_milliseconds() as f64 / 60_000.0
    }

    pub fn checks_passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn apply_judge(&mut self, outcome: JudgeOutcome) {
        match outcome {
            JudgeOutcome::Scored(v) => {
                self.judge = Some(v);
                self.judge_unavailable = None;
            }
            JudgeOutcome::Unavailable { reason } => {
                self.judge = None;
                self.judge_unavailable = Some(reason);
            }
        }
    }

    /// Recomputes `outcome` from the other fields.
    pub fn seal(&mut self) {
        self.outcome = evaluate_success(self);
    }
}

/// Success needs a completed run with a non-empty patch, no critical
/// errors, no persistent validation failure and passing repository checks.
pub fn evaluate_success(record: &RunRecord) -> Outcome {
    let patched = record.patch.as_ref().is_some_and(|p| p.files_changed >= 1);
    let clean = record.status == RunStatus::Completed
        && record.critical_errors.is_empty()
        && record.execution_errors.is_empty()
        && !record.interrupted
        && record.validation_failure.is_none()
        && record.checks_passed();
    if patched && clean {
        Outcome::success()
    } else {
        Outcome::failure(classify_failure(record))
    }
}

/// First match wins; total over all records.
pub fn classify_failure(record: &RunRecord) -> FailureCategory {
    if record.status == RunStatus::TerminatedBudget {
        FailureCategory::BudgetTimeout
    } else if record.checkpoint == CheckpointState::TimedOut {
        FailureCategory::HumanCheckpointTimeout
    } else if record.interrupted {
        FailureCategory::RateLimitedOrInterrupted
    } else if !record.critical_errors.is_empty()
        || !record.execution_errors.is_empty()
        || record.status == RunStatus::Failed
    {
        FailureCategory::ExecutionOrEnvironmentFailure
    } else if record.validation_failure.is_some() {
        FailureCategory::ArtifactValidationFailure
    } else if !record.checks_passed() {
        FailureCategory::RepositoryCheckFailure
    } else {
        FailureCategory::IncompleteImplementation
    }
}

pub fn latency_eligible(record: &RunRecord) -> bool {
    record.outcome.is_success() && !record.rate_limited
}

/// Quality aggregation keeps every judged run that produced a patch,
/// rate-limited or not.
pub fn quality_eligible(record: &RunRecord) -> bool {
    record.judge.is_some() && record.patch.as_ref().is_some_and(|p| p.files_changed >= 1)
}

#[cfg(test)]
pub(crate) mod fixtures {
    pub use crate::fixture::record;
}
