//! The orchestrator state machine: phase sequencing per configuration, hook
//! attachment points, plan-review checkpoint gating and budget enforcement.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseId {
    Specify,
    Plan,
    Tasks,
    Implement,
}

impl PhaseId {
    pub const ALL: [PhaseId; 4] = [
        PhaseId::Specify,
        PhaseId::Plan,
        PhaseId::Tasks,
        PhaseId::Implement,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PhaseId::Specify => "specify",
            PhaseId::Plan => "plan",
            PhaseId::Tasks => "tasks",
            PhaseId::Implement => "implement",
        }
    }
}

impl fmt::Display for PhaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PhaseId {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "specify" => Ok(PhaseId::Specify),
            "plan" => Ok(PhaseId::Plan),
            "tasks" => Ok(PhaseId::Tasks),
            "implement" => Ok(PhaseId::Implement),
            _ => Err(UnknownName {
                what: "phase",
                name: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("unknown {what} `{name}`")]
pub struct UnknownName {
    pub what: &'static str,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigurationKind {
    Baseline,
    Augmented,
    Full,
    FullAugmented,
    DiscoveryOnly,
    ValidationOnly,
}

/// Budget family. Latency is only comparable within one family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    FortyMinute,
    NinetyMinute,
}

impl ConfigurationKind {
    pub const ALL: [ConfigurationKind; 6] = [
        ConfigurationKind::Baseline,
        ConfigurationKind::Augmented,
        ConfigurationKind::Full,
        ConfigurationKind::FullAugmented,
        ConfigurationKind::DiscoveryOnly,
        ConfigurationKind::ValidationOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConfigurationKind::Baseline => "baseline",
            ConfigurationKind::Augmented => "augmented",
            ConfigurationKind::Full => "full",
            ConfigurationKind::FullAugmented => "full_augmented",
            ConfigurationKind::DiscoveryOnly => "discovery_only",
            ConfigurationKind::ValidationOnly => "validation_only",
        }
    }

    pub fn family(self) -> Family {
        match self {
            ConfigurationKind::Baseline | ConfigurationKind::Augmented => Family::FortyMinute,
            _ => Family::NinetyMinute,
        }
    }
}

impl fmt::Display for ConfigurationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConfigurationKind {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        ConfigurationKind::ALL
            .into_iter()
            .find(|c| c.as_str() == norm)
            .ok_or_else(|| UnknownName {
                what: "configuration",
                name: s.to_string(),
            })
    }
}

pub fn phases_for(config: ConfigurationKind) -> Vec<PhaseId> {
    match config.family() {
        Family::FortyMinute => vec![PhaseId::Implement],
        Family::NinetyMinute => PhaseId::ALL.to_vec(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HookSlots {
    pub pre: bool,
    pub post: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HookSchedule(pub BTreeMap<PhaseId, HookSlots>);

impl HookSchedule {
    pub fn at(&self, phase: PhaseId) -> HookSlots {
        self.0.get(&phase).copied().unwrap_or_default()
    }

    pub fn pre(&self, phase: PhaseId) -> bool {
        self.at(phase).pre
    }

    pub fn post(&self, phase: PhaseId) -> bool {
        self.at(phase).post
    }
}

pub fn hook_schedule_for(config: ConfigurationKind) -> HookSchedule {
    let slots = |phase: PhaseId| -> HookSlots {
        use ConfigurationKind::*;
        match config {
            Baseline | Full => HookSlots::default(),
            Augmented => HookSlots {
                pre: phase == PhaseId::Implement,
                post: phase == PhaseId::Implement,
            },
            FullAugmented => HookSlots {
                pre: true,
                post: true,
            },
            DiscoveryOnly => HookSlots {
                pre: true,
                post: false,
            },
            ValidationOnly => HookSlots {
                pre: false,
                post: true,
            },
        }
    };
    HookSchedule(PhaseId::ALL.into_iter().map(|p| (p, slots(p))).collect())
}

/// Minutes allotted to one budget family.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyBudget {
    pub total_minutes: u64,
    pub phase_minutes: BTreeMap<PhaseId, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetSettings {
    pub forty_minute: FamilyBudget,
    pub ninety_minute: FamilyBudget,
}

impl Default for BudgetSettings {
    fn default() -> Self {
        Self {
            forty_minute: FamilyBudget {
                total_minutes: 40,
                phase_minutes: [(PhaseId::Implement, 40)].into_iter().collect(),
            },
            ninety_minute: FamilyBudget {
                total_minutes: 90,
                phase_minutes: [
                    (PhaseId::Specify, 10),
                    (PhaseId::Plan, 15),
                    (PhaseId::Tasks, 10),
                    (PhaseId::Implement, 55),
                ]
                .into_iter()
                .collect(),
            },
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BudgetError {
    #[error("budget durations must be positive ({0})")]
    NonPositive(String),
    #[error("per-phase limits sum to {sum} min, over the {total} min total")]
    OverTotal { sum: u64, total: u64 },
    #[error("no per-phase limit for {0}")]
    MissingPhase(PhaseId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub total_limit: Duration,
    pub per_phase_limit: BTreeMap<PhaseId, Duration>,
}

impl Budget {
    pub fn phase_limit(&self, phase: PhaseId) -> Duration {
        self.per_phase_limit
            .get(&phase)
            .copied()
            .unwrap_or(self.total_limit)
    }
}

impl BudgetSettings {
    pub fn family(&self, family: Family) -> &FamilyBudget {
        match family {
            Family::FortyMinute => &self.forty_minute,
            Family::NinetyMinute => &self.ninety_minute,
        }
    }

    pub fn family_mut(&mut self, family: Family) -> &mut FamilyBudget {
        match family {
            Family::FortyMinute => &mut self.forty_minute,
            Family::NinetyMinute => &mut self.ninety_minute,
        }
    }

    /// Checks the per-family invariants for every configuration.
    pub fn validate(&self) -> Result<(), BudgetError> {
        for config in ConfigurationKind::ALL {
            let fam = self.family(config.family());
            if fam.total_minutes == 0 {
                return Err(BudgetError::NonPositive("total".into()));
            }
            let mut sum = 0;
            for phase in phases_for(config) {
                let m = *fam
                    .phase_minutes
                    .get(&phase)
                    .ok_or(BudgetError::MissingPhase(phase))?;
                if m == 0 {
                    return Err(BudgetError::NonPositive(phase.to_string()));
                }
                sum += m;
            }
            if sum > fam.total_minutes {
                return Err(BudgetError::OverTotal {
                    sum,
                    total: fam.total_minutes,
                });
            }
        }
        Ok(())
    }

    pub fn budget_for(&self, config: ConfigurationKind) -> Budget {
        let fam = self.family(config.family());
        let minutes = |m: u64| Duration::from_secs(m * 60);
        Budget {
            total_limit: minutes(fam.total_minutes),
            per_phase_limit: phases_for(config)
                .into_iter()
                .filter_map(|p| fam.phase_minutes.get(&p).map(|&m| (p, minutes(m))))
                .collect(),
        }
    }
}

/// Budget with the built-in per-phase defaults.
pub fn budget_for(config: ConfigurationKind) -> Budget {
    BudgetSettings::default().budget_for(config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointState {
    None,
    PendingPlanReview,
    Approved,
    Rejected,
    TimedOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    TerminatedBudget,
    TerminatedCheckpoint,
    Failed,
}

impl RunStatus {
    pub fn is_terminal(self) -> bool {
        self != RunStatus::Running
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewMode {
    AutoApprove,
    Interactive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Approve,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "event", content = "decision")]
pub enum WorkflowEvent {
    PhaseCompleted,
    CheckpointDecision(Decision),
    CheckpointTimeout,
    BudgetExceeded,
    FatalError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowState {
    pub config: ConfigurationKind,
    pub review: ReviewMode,
    pub phase: PhaseId,
    pub started_at: Timestamp,
    pub phase_started_at: Timestamp,
    pub checkpoint: CheckpointState,
    pub status: RunStatus,
}

/// An event that the current state cannot accept. This is an orchestrator
/// bug, never a run failure.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error(
    "contract violation: {event:?} is illegal in {status:?} at {phase} (checkpoint {checkpoint:?})"
)]
pub struct ContractViolation {
    pub event: WorkflowEvent,
    pub status: RunStatus,
    pub phase: PhaseId,
    pub checkpoint: CheckpointState,
}

impl WorkflowState {
    pub fn start(config: ConfigurationKind, review: ReviewMode, now: Timestamp) -> Self {
        let first = phases_for(config)[0];
        Self {
            config,
            review,
            phase: first,
            started_at: now,
            phase_started_at: now,
            checkpoint: CheckpointState::None,
            status: RunStatus::Running,
        }
    }

    fn plan_review_enabled(&self) -> bool {
        self.config.family() == Family::NinetyMinute
    }

    fn violation(&self, event: WorkflowEvent) -> ContractViolation {
        ContractViolation {
            event,
            status: self.status,
            phase: self.phase,
            checkpoint: self.checkpoint,
        }
    }

    fn next_phase(&self) -> Option<PhaseId> {
        let phases = phases_for(self.config);
        let idx = phases.iter().position(|&p| p == self.phase)?;
        phases.get(idx + 1).copied()
    }

    fn enter_next(mut self, now: Timestamp) -> Self {
        match self.next_phase() {
            Some(next) => {
                self.phase = next;
                self.phase_started_at = now;
            }
            None => self.status = RunStatus::Completed,
        }
        self
    }
}

/// Pure transition function. `now` is injected so identical inputs yield
/// identical successors.
pub fn advance(
    state: &WorkflowState,
    event: WorkflowEvent,
    now: Timestamp,
) -> Result<WorkflowState, ContractViolation> {
    if state.status.is_terminal() {
        // Watchdog and failure signals may race with termination.
        return match event {
            WorkflowEvent::BudgetExceeded | WorkflowEvent::FatalError => Ok(state.clone()),
            _ => Err(state.violation(event)),
        };
    }
    let mut next = state.clone();
    match event {
        WorkflowEvent::BudgetExceeded => next.status = RunStatus::TerminatedBudget,
        WorkflowEvent::FatalError => next.status = RunStatus::Failed,
        WorkflowEvent::PhaseCompleted => {
            if state.checkpoint == CheckpointState::PendingPlanReview {
                return Err(state.violation(event));
            }
            if state.phase == PhaseId::Plan && state.plan_review_enabled() {
                match state.review {
                    ReviewMode::AutoApprove => {
                        next.checkpoint = CheckpointState::Approved;
                        next = next.enter_next(now);
                    }
                    ReviewMode::Interactive => {
                        next.checkpoint = CheckpointState::PendingPlanReview;
                    }
                }
            } else {
                next = next.enter_next(now);
            }
        }
        WorkflowEvent::CheckpointDecision(decision) => {
            if state.checkpoint != CheckpointState::PendingPlanReview {
                return Err(state.violation(event));
            }
            match decision {
                Decision::Approve => {
                    next.checkpoint = CheckpointState::Approved;
                    next = next.enter_next(now);
                }
                Decision::Reject => {
                    next.checkpoint = CheckpointState::Rejected;
                    next.status = RunStatus::TerminatedCheckpoint;
                }
            }
        }
        WorkflowEvent::CheckpointTimeout => {
            if state.checkpoint != CheckpointState::PendingPlanReview {
                return Err(state.violation(event));
            }
            next.checkpoint = CheckpointState::TimedOut;
            next.status = RunStatus::TerminatedCheckpoint;
        }
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetCheck {
    Ok,
    PhaseExceeded,
    TotalExceeded,
}

pub fn check_budget(state: &WorkflowState, budget: &Budget, now: Timestamp) -> BudgetCheck {
    let elapsed = |since: Timestamp| (now - since).to_std().unwrap_or(Duration::ZERO);
    if elapsed(state.started_at) > budget.total_limit {
        BudgetCheck::TotalExceeded
    } else if elapsed(state.phase_started_at) > budget.phase_limit(state.phase) {
        BudgetCheck::PhaseExceeded
    } else {
        BudgetCheck::Ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{Clock, ManualClock};
    use proptest::prelude::*;

    fn t0() -> Timestamp {
        ManualClock::at_epoch().now()
    }

    fn mins(m: i64) -> chrono::Duration {
        chrono::Duration::minutes(m)
    }

    #[test]
    fn phase_lists() {
        assert_eq!(
            phases_for(ConfigurationKind::Full),
            vec![
                PhaseId::Specify,
                PhaseId::Plan,
                PhaseId::Tasks,
                PhaseId::Implement
            ]
        );
        assert_eq!(
            phases_for(ConfigurationKind::Baseline),
            vec![PhaseId::Implement]
        );
        assert_eq!(
            phases_for(ConfigurationKind::Augmented),
            vec![PhaseId::Implement]
        );
        assert_eq!(
            phases_for(ConfigurationKind::DiscoveryOnly),
            PhaseId::ALL.to_vec()
        );
    }

    #[test]
    fn hook_schedules() {
        let v = hook_schedule_for(ConfigurationKind::ValidationOnly);
        assert!(PhaseId::ALL.iter().all(|&p| !v.pre(p) && v.post(p)));
        let full = hook_schedule_for(ConfigurationKind::Full);
        assert!(PhaseId::ALL.iter().all(|&p| !full.pre(p) && !full.post(p)));
        let aug = hook_schedule_for(ConfigurationKind::Augmented);
        assert!(aug.pre(PhaseId::Implement) && aug.post(PhaseId::Implement));
        assert!(!aug.pre(PhaseId::Plan) && !aug.post(PhaseId::Specify));
        let d = hook_schedule_for(ConfigurationKind::DiscoveryOnly);
        assert!(PhaseId::ALL.iter().all(|&p| d.pre(p) && !d.post(p)));
        let fa = hook_schedule_for(ConfigurationKind::FullAugmented);
        assert!(PhaseId::ALL.iter().all(|&p| fa.pre(p) && fa.post(p)));
        let b = hook_schedule_for(ConfigurationKind::Baseline);
        assert!(PhaseId::ALL
            .iter()
            .all(|&p| b.at(p) == HookSlots::default()));
    }

    #[test]
    fn budgets() {
        let base = budget_for(ConfigurationKind::Baseline);
        assert_eq!(base.total_limit, Duration::from_secs(40 * 60));
        let fa = budget_for(ConfigurationKind::FullAugmented);
        assert_eq!(fa.total_limit, Duration::from_secs(90 * 60));
        for c in ConfigurationKind::ALL {
            let b = budget_for(c);
            let sum: Duration = b.per_phase_limit.values().sum();
            assert!(sum <= b.total_limit, "{c}");
            assert_eq!(b.per_phase_limit.len(), phases_for(c).len());
        }
        BudgetSettings::default().validate().unwrap();
    }

    #[test]
    fn budget_settings_reject_overcommit() {
        let mut s = BudgetSettings::default();
        s.ninety_minute.phase_minutes.insert(PhaseId::Implement, 80);
        assert!(matches!(s.validate(), Err(BudgetError::OverTotal { .. })));
        let mut s = BudgetSettings::default();
        s.forty_minute.phase_minutes.insert(PhaseId::Implement, 0);
        assert!(matches!(s.validate(), Err(BudgetError::NonPositive(_))));
    }

    #[test]
    fn config_names_parse() {
        assert_eq!(
            "full-augmented".parse::<ConfigurationKind>().unwrap(),
            ConfigurationKind::FullAugmented
        );
        assert!("turbo".parse::<ConfigurationKind>().is_err());
        for c in ConfigurationKind::ALL {
            assert_eq!(c.as_str().parse::<ConfigurationKind>().unwrap(), c);
        }
    }

    #[test]
    fn last_phase_completes() {
        let mut s = WorkflowState::start(ConfigurationKind::Full, ReviewMode::AutoApprove, t0());
        s.phase = PhaseId::Implement;
        let n = advance(&s, WorkflowEvent::PhaseCompleted, t0()).unwrap();
        assert_eq!(n.status, RunStatus::Completed);
    }

    #[test]
    fn plan_auto_approved() {
        let mut s = WorkflowState::start(ConfigurationKind::Full, ReviewMode::AutoApprove, t0());
        s.phase = PhaseId::Plan;
        let now = t0() + mins(7);
        let n = advance(&s, WorkflowEvent::PhaseCompleted, now).unwrap();
        assert_eq!(n.checkpoint, CheckpointState::Approved);
        assert_eq!(n.phase, PhaseId::Tasks);
        assert_eq!(n.phase_started_at, now);
    }

    #[test]
    fn interactive_review_pends_then_decides() {
        let mut s = WorkflowState::start(ConfigurationKind::Full, ReviewMode::Interactive, t0());
        s.phase = PhaseId::Plan;
        let p = advance(&s, WorkflowEvent::PhaseCompleted, t0()).unwrap();
        assert_eq!(p.checkpoint, CheckpointState::PendingPlanReview);
        assert_eq!(p.phase, PhaseId::Plan);
        assert!(advance(&p, WorkflowEvent::PhaseCompleted, t0()).is_err());

        let a = advance(
            &p,
            WorkflowEvent::CheckpointDecision(Decision::Approve),
            t0(),
        )
        .unwrap();
        assert_eq!(
            (a.phase, a.checkpoint),
            (PhaseId::Tasks, CheckpointState::Approved)
        );
        let r = advance(
            &p,
            WorkflowEvent::CheckpointDecision(Decision::Reject),
            t0(),
        )
        .unwrap();
        assert_eq!(r.status, RunStatus::TerminatedCheckpoint);
        let to = advance(&p, WorkflowEvent::CheckpointTimeout, t0()).unwrap();
        assert_eq!(to.checkpoint, CheckpointState::TimedOut);
        assert_eq!(to.status, RunStatus::TerminatedCheckpoint);

        // second decision is illegal
        assert!(advance(
            &a,
            WorkflowEvent::CheckpointDecision(Decision::Reject),
            t0()
        )
        .is_err());
    }

    #[test]
    fn forty_minute_family_never_pends() {
        let s = WorkflowState::start(ConfigurationKind::Augmented, ReviewMode::Interactive, t0());
        let n = advance(&s, WorkflowEvent::PhaseCompleted, t0()).unwrap();
        assert_eq!(n.status, RunStatus::Completed);
        assert_eq!(n.checkpoint, CheckpointState::None);
    }

    #[test]
    fn terminal_events() {
        for c in ConfigurationKind::ALL {
            let s = WorkflowState::start(c, ReviewMode::AutoApprove, t0());
            let b = advance(&s, WorkflowEvent::BudgetExceeded, t0()).unwrap();
            assert_eq!(b.status, RunStatus::TerminatedBudget);
            // idempotent on terminal
            assert_eq!(advance(&b, WorkflowEvent::FatalError, t0()).unwrap(), b);
            assert!(advance(&b, WorkflowEvent::PhaseCompleted, t0()).is_err());
            let f = advance(&s, WorkflowEvent::FatalError, t0()).unwrap();
            assert_eq!(f.status, RunStatus::Failed);
        }
    }

    #[test]
    fn budget_checks() {
        let s = WorkflowState::start(ConfigurationKind::Baseline, ReviewMode::AutoApprove, t0());
        let b = budget_for(ConfigurationKind::Baseline);
        assert_eq!(check_budget(&s, &b, t0()), BudgetCheck::Ok);
        assert_eq!(
            check_budget(&s, &b, t0() + mins(41)),
            BudgetCheck::TotalExceeded
        );
        assert_eq!(check_budget(&s, &b, t0() + mins(40)), BudgetCheck::Ok);

        let mut f = WorkflowState::start(ConfigurationKind::Full, ReviewMode::AutoApprove, t0());
        let fb = budget_for(ConfigurationKind::Full);
        assert_eq!(
            check_budget(&f, &fb, t0() + mins(11)),
            BudgetCheck::PhaseExceeded
        );
        f.phase_started_at = t0() + mins(80);
        f.phase = PhaseId::Implement;
        // both hold: total wins
        assert_eq!(
            check_budget(&f, &fb, t0() + mins(91)),
            BudgetCheck::TotalExceeded
        );
    }

    fn event_strategy() -> impl Strategy<Value = WorkflowEvent> {
        prop_oneof![
            4 => Just(WorkflowEvent::PhaseCompleted),
            1 => Just(WorkflowEvent::CheckpointDecision(Decision::Approve)),
            1 => Just(WorkflowEvent::CheckpointDecision(Decision::Reject)),
            1 => Just(WorkflowEvent::BudgetExceeded),
            1 => Just(WorkflowEvent::FatalError),
        ]
    }

    proptest! {
        #[test]
        fn executed_phases_are_a_prefix(
            cfg in 0usize..6,
            interactive in any::<bool>(),
            events in proptest::collection::vec(event_strategy(), 0..20),
        ) {
            let config = ConfigurationKind::ALL[cfg];
            let review = if interactive { ReviewMode::Interactive } else { ReviewMode::AutoApprove };
            let mut s = WorkflowState::start(config, review, t0());
            let mut visited = vec![s.phase];
            for e in events {
                let before = s.status;
                if let Ok(n) = advance(&s, e, t0()) {
                    // deterministic
                    prop_assert_eq!(&advance(&s, e, t0()).unwrap(), &n);
                    if before.is_terminal() { prop_assert_eq!(&n, &s); }
                    if n.phase != *visited.last().unwrap() { visited.push(n.phase); }
                    s = n;
                }
            }
            let phases = phases_for(config);
            prop_assert_eq!(&phases[..visited.len()], &visited[..]);
            if s.status == RunStatus::Completed {
                prop_assert_eq!(visited, phases);
            }
        }
    }
}
