//! Drives one run through its configured phases on a private working copy.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    invoke_agent, AgentBackend, AgentTurn, BackendError, InvokeFailureKind, InvokeOptions,
    PermissionMatrix, Principal, PromptContext, PromptLibrary, ToolContext,
};
use crate::artifact::{ArtifactKind, ArtifactSet};
use crate::checkpoint::CheckpointBroker;
use crate::clock::{Clock, Timestamp};
use crate::config::Config;
use crate::experiment::FeatureTask;
use crate::hooks::{run_post_hook, run_pre_hook, run_repo_checks, CheckResult, CheckSpec};
use crate::judge::{ensure_distinct_backends, judge_run, JudgeOutcome};
use crate::ledger::{
    CriticalError, CriticalKind, EventSink, FsStore, HookSlot, LedgerError, Outcome, PatchRef,
    PhaseTrace, PostHookEntry, PostHookRun, PreHookEntry, RunEvent, RunEventKind, RunRecord,
    RunWriter,
};
use crate::probe::{DiscoveryContext, EvidenceBundle, EvidenceCaps};
use crate::repo::{sha256_hex, WorkingCopy};
use crate::report::ValidationReport;
use crate::workflow::{
    advance, check_budget, hook_schedule_for, Budget, BudgetCheck, BudgetSettings, CheckpointState,
    ConfigurationKind, PhaseId, ReviewMode, RunStatus, WorkflowEvent, WorkflowState,
};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Debug, Clone)]
pub struct RunSettings {
    pub budgets: BudgetSettings,
    pub repair_turns: u32,
    pub invoke: InvokeOptions,
    pub exec_timeout: Duration,
    pub tail_bytes: usize,
    pub developer_exec: Vec<String>,
    pub evidence: EvidenceCaps,
    pub checkpoint_timeout: Duration,
    pub seed: u64,
    /// Keep the working copy after the patch is captured.
    pub keep_workspace: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self::from_config(&Config::default())
    }
}

impl RunSettings {
    pub fn from_config(cfg: &Config) -> Self {
        let prompts = match &cfg.prompts_dir {
            Some(d) => PromptLibrary::from_dir(d),
            None => PromptLibrary::builtin(),
        };
        Self {
            budgets: cfg.budgets.clone(),
            repair_turns: cfg.repair_turns,
            invoke: InvokeOptions {
                prompts,
                backoff: cfg.backoff,
                max_tool_calls: cfg.tools.max_tool_calls,
                ..InvokeOptions::default()
            },
            exec_timeout: Duration::from_secs(cfg.tools.exec_timeout_seconds),
            tail_bytes: cfg.tools.output_tail_bytes,
            developer_exec: cfg.tools.developer_exec.clone(),
            evidence: cfg.evidence,
            checkpoint_timeout: cfg.checkpoint_timeout(),
            seed: cfg.seed,
            keep_workspace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRequest {
    pub run_id: String,
    pub task: FeatureTask,
    pub config: ConfigurationKind,
    pub review: ReviewMode,
    pub repo_path: PathBuf,
    pub checks: Vec<CheckSpec>,
}

/// `<task>-<config>-<utc stamp>-<4 hex>`; unique enough for one runs dir,
/// and a collision is caught when the run directory is claimed.
pub fn new_run_id(task_id: &str, config: ConfigurationKind, now: Timestamp) -> String {
    let suffix: u16 = rand::thread_rng().gen();
    format!(
        "{task_id}-{config}-{}-{suffix:04x}",
        now.format("%Y%m%dT%H%M%S")
    )
}

pub fn principal_for(phase: PhaseId) -> Principal {
    match phase {
        PhaseId::Specify => Principal::PmAgent,
        _ => Principal::DeveloperAgent,
    }
}

pub struct Orchestrator {
    pub settings: RunSettings,
    pub clock: Arc<dyn Clock>,
    pub store: Arc<FsStore>,
    pub workspace_root: PathBuf,
    pub sink: Arc<dyn EventSink>,
    pub broker: Arc<CheckpointBroker>,
}

struct Emitter<'a> {
    run_id: &'a str,
    seq: u64,
    writer: &'a RunWriter,
    sink: &'a dyn EventSink,
    clock: &'a dyn Clock,
}

impl Emitter<'_> {
    fn emit(&mut self, kind: RunEventKind) {
        let ev = RunEvent {
            run_id: self.run_id.to_string(),
            seq: self.seq,
            at: self.clock.now(),
            kind,
        };
        self.seq += 1;
        self.writer.emit(&ev);
        self.sink.emit(&ev);
    }
}

/// Mutable state of one run, folded into the record at the end.
struct Progress {
    state: WorkflowState,
    traces: Vec<PhaseTrace>,
    artifacts: ArtifactSet,
    checks: Option<Vec<CheckResult>>,
    rate_limited: bool,
    interrupted: bool,
    critical: Vec<CriticalError>,
    execution_errors: Vec<String>,
    validation_failure: Option<PhaseId>,
}

impl Progress {
    fn apply(&mut self, event: WorkflowEvent, now: Timestamp) {
        match advance(&self.state, event, now) {
            Ok(s) => self.state = s,
            Err(v) => {
                self.execution_errors.push(v.to_string());
                if let Ok(s) = advance(&self.state, WorkflowEvent::FatalError, now) {
                    self.state = s;
                }
            }
        }
    }

    fn note_validation_failure(&mut self, phase: PhaseId) {
        self.validation_failure.get_or_insert(phase);
    }
}

impl Orchestrator {
    fn over_budget(&self, state: &WorkflowState, budget: &Budget) -> bool {
        check_budget(state, budget, self.clock.now()) != BudgetCheck::Ok
    }

    /// Executes the run end-to-end and appends its record. Only ledger
    /// failures before the run directory exists are returned as errors;
    /// everything else becomes part of the record.
    pub fn run(
        &self,
        req: &RunRequest,
        backend: &mut dyn AgentBackend,
        judge: Option<&mut dyn AgentBackend>,
    ) -> Result<RunRecord, OrchestratorError> {
        let writer = self.store.begin(&req.run_id)?;
        self.broker.register(&req.run_id);
        let started_at = self.clock.now();
        let mut emitter = Emitter {
            run_id: &req.run_id,
            seq: 0,
            writer: &writer,
            sink: self.sink.as_ref(),
            clock: self.clock.as_ref(),
        };
        emitter.emit(RunEventKind::RunStarted {
            task_id: req.task.task_id.clone(),
            repo_id: req.task.repo_id.clone(),
            config: req.config,
            review_mode: req.review,
        });
        let mut progress = Progress {
            state: WorkflowState::start(req.config, req.review, started_at),
            traces: Vec::new(),
            artifacts: ArtifactSet::default(),
            checks: None,
            rate_limited: false,
            interrupted: false,
            critical: Vec::new(),
            execution_errors: Vec::new(),
            validation_failure: None,
        };

        let workspace = self.workspace_root.join(&req.run_id);
        let patch = match WorkingCopy::create(&req.repo_path, &workspace) {
            Ok(wc) => {
                let driven = catch_unwind(AssertUnwindSafe(|| {
                    self.drive(req, &wc, backend, &writer, &mut emitter, &mut progress)
                }));
                if let Err(panic) = driven {
                    let message = panic
                        .downcast_ref::<String>()
                        .cloned()
                        .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_else(|| "panic".into());
                    progress.critical.push(CriticalError {
                        kind: CriticalKind::OrchestratorPanic,
                        phase: Some(progress.state.phase),
                        message,
                    });
                    progress.apply(WorkflowEvent::FatalError, self.clock.now());
                }
                let patch = self.capture_patch(req, &wc, &writer, &mut progress);
                if !self.settings.keep_workspace {
                    let _ = std::fs::remove_dir_all(&workspace);
                }
                patch
            }
            Err(e) => {
                progress.execution_errors.push(format!("working copy: {e}"));
                progress.apply(WorkflowEvent::FatalError, self.clock.now());
                None
            }
        };

        let mut record = RunRecord {
            run_id: req.run_id.clone(),
            task_id: req.task.task_id.clone(),
            repo_id: req.task.repo_id.clone(),
            config: req.config,
            review_mode: req.review,
            backend_id: backend.id().to_string(),
            started_at,
            ended_at: self.clock.now(),
            status: progress.state.status,
            checkpoint: progress.state.checkpoint,
            phase_traces: progress.traces,
            patch: patch.as_ref().map(|(p, _)| p.clone()),
            checks: progress.checks.unwrap_or_default(),
            rate_limited: progress.rate_limited,
            interrupted: progress.interrupted,
            critical_errors: progress.critical,
            execution_errors: progress.execution_errors,
            validation_failure: progress.validation_failure,
            outcome: Outcome::success(),
            judge: None,
            judge_unavailable: None,
        };
        record.seal();
        if let (Some(j), Some((_, diff))) = (judge, &patch) {
            let outcome = match ensure_distinct_backends(&record.backend_id, j.id()) {
                Ok(()) => judge_run(
                    j,
                    &self.settings.invoke.prompts,
                    &req.task.description,
                    diff,
                    self.clock.now(),
                ),
                Err(e) => JudgeOutcome::Unavailable {
                    reason: e.to_string(),
                },
            };
            record.apply_judge(outcome);
        }
        emitter.emit(RunEventKind::RunFinished {
            status: record.status,
            outcome: record.outcome,
        });
        self.broker.unregister(&req.run_id);
        writer.finish(&record)?;
        Ok(record)
    }

    fn capture_patch(
        &self,
        req: &RunRequest,
        wc: &WorkingCopy,
        writer: &RunWriter,
        progress: &mut Progress,
    ) -> Option<(PatchRef, String)> {
        let branch = format!("groundwork/{}", req.run_id);
        match wc.finalize_patch(&branch) {
            Ok(p) if p.files_changed > 0 => {
                if let Err(e) = writer.write_patch(&p.diff) {
                    progress.execution_errors.push(e.to_string());
                }
                let r = PatchRef {
                    branch_name: p.branch_name,
                    files_changed: p.files_changed,
                    diff_digest: sha256_hex(p.diff.as_bytes()),
                };
                Some((r, p.diff))
            }
            Ok(_) => None,
            Err(e) => {
                progress.execution_errors.push(format!("patch: {e}"));
                None
            }
        }
    }

    fn drive(
        &self,
        req: &RunRequest,
        wc: &WorkingCopy,
        backend: &mut dyn AgentBackend,
        writer: &RunWriter,
        emitter: &mut Emitter<'_>,
        progress: &mut Progress,
    ) {
        let budget = self.settings.budgets.budget_for(req.config);
        let schedule = hook_schedule_for(req.config);
        let check_commands: Vec<String> = req.checks.iter().map(|c| c.command.clone()).collect();
        let matrix = PermissionMatrix::standard(&check_commands, &self.settings.developer_exec);
        let tools = ToolContext {
            matrix: &matrix,
            repo: &wc.repo,
            clock: self.clock.as_ref(),
            exec_timeout: self.settings.exec_timeout,
            tail_bytes: self.settings.tail_bytes,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.settings.seed
                ^ u64::from_str_radix(&sha256_hex(req.run_id.as_bytes())[..16], 16).unwrap_or(0),
        );
        let mut implement_post_ran = false;

        while progress.state.status == RunStatus::Running {
            let phase = progress.state.phase;
            if self.over_budget(&progress.state, &budget) {
                progress.apply(WorkflowEvent::BudgetExceeded, self.clock.now());
                break;
            }
            emitter.emit(RunEventKind::PhaseStarted { phase });
            let mut trace = PhaseTrace {
                phase,
                started_at: self.clock.now(),
                ended_at: None,
                pre_hook: None,
                post_hook: None,
                agent_turns: Vec::new(),
            };

            let mut evidence: Option<EvidenceBundle> = None;
            if schedule.pre(phase) {
                let out = run_pre_hook(
                    &tools,
                    phase,
                    DiscoveryContext {
                        task_description: &req.task.description,
                        artifacts: &progress.artifacts,
                    },
                    &self.settings.evidence,
                );
                let evidence_ref = writer
                    .write_evidence(phase, &out.bundle)
                    .unwrap_or_else(|e| {
                        progress.execution_errors.push(e.to_string());
                        String::new()
                    });
                trace.pre_hook = Some(PreHookEntry {
                    evidence_ref,
                    relevant_files: out.bundle.relevant_files.len(),
                    tool_calls: out.tool_calls,
                });
                evidence = Some(out.bundle);
                emitter.emit(RunEventKind::HookCompleted {
                    phase,
                    slot: HookSlot::Pre,
                    verdict: None,
                });
            }

            let turn_ok = self.agent_turn(
                req,
                backend,
                &tools,
                &mut rng,
                &budget,
                evidence.as_ref(),
                None,
                &mut trace,
                emitter,
                progress,
            );
            if turn_ok && self.over_budget(&progress.state, &budget) {
                progress.apply(WorkflowEvent::BudgetExceeded, self.clock.now());
            }
            if progress.state.status != RunStatus::Running {
                trace.ended_at = Some(self.clock.now());
                progress.traces.push(trace);
                break;
            }

            if schedule.post(phase) {
                if phase == PhaseId::Implement {
                    implement_post_ran = true;
                }
                self.post_hook_with_repairs(
                    req,
                    backend,
                    &tools,
                    &mut rng,
                    &budget,
                    evidence.as_ref(),
                    &mut trace,
                    writer,
                    emitter,
                    progress,
                );
                if progress.state.status != RunStatus::Running {
                    trace.ended_at = Some(self.clock.now());
                    progress.traces.push(trace);
                    break;
                }
            } else if let Some(kind) = ArtifactKind::for_phase(phase) {
                if !progress.artifacts.has(kind) {
                    progress.note_validation_failure(phase);
                }
            }
            if let Some(a) = ArtifactKind::for_phase(phase).and_then(|k| progress.artifacts.get(k))
            {
                match a.serialize() {
                    Ok(text) => {
                        if let Err(e) = writer.write_artifact(a.kind(), &text) {
                            progress.execution_errors.push(e.to_string());
                        }
                    }
                    Err(e) => progress.execution_errors.push(e.to_string()),
                }
            }

            trace.ended_at = Some(self.clock.now());
            progress.traces.push(trace);
            emitter.emit(RunEventKind::PhaseCompleted { phase });
            progress.apply(WorkflowEvent::PhaseCompleted, self.clock.now());
            self.checkpoint(req, emitter, progress, phase);
        }

        if progress.state.status == RunStatus::Completed && !implement_post_ran {
            let mut calls = Vec::new();
            match run_repo_checks(&tools, &req.checks, &mut calls) {
                Ok(results) => progress.checks = Some(results),
                Err(v) => progress.execution_errors.push(v.to_string()),
            }
        }
    }

    fn checkpoint(
        &self,
        req: &RunRequest,
        emitter: &mut Emitter<'_>,
        progress: &mut Progress,
        phase: PhaseId,
    ) {
        match progress.state.checkpoint {
            CheckpointState::PendingPlanReview => {
                emitter.emit(RunEventKind::CheckpointChanged {
                    state: CheckpointState::PendingPlanReview,
                });
                self.broker.open(&req.run_id, self.clock.now());
                let event = match self.broker.wait(
                    &req.run_id,
                    self.clock.as_ref(),
                    self.settings.checkpoint_timeout,
                ) {
                    Some(d) => WorkflowEvent::CheckpointDecision(d.decision),
                    None => WorkflowEvent::CheckpointTimeout,
                };
                progress.apply(event, self.clock.now());
                emitter.emit(RunEventKind::CheckpointChanged {
                    state: progress.state.checkpoint,
                });
            }
            CheckpointState::Approved
                if phase == PhaseId::Plan && req.review == ReviewMode::AutoApprove =>
            {
                emitter.emit(RunEventKind::CheckpointChanged {
                    state: CheckpointState::Approved,
                });
            }
            _ => {}
        }
    }

    /// One agent invocation; failures are folded into `progress`. Returns
    /// whether the turn completed.
    #[allow(clippy::too_many_arguments)]
    fn agent_turn(
        &self,
        req: &RunRequest,
        backend: &mut dyn AgentBackend,
        tools: &ToolContext<'_>,
        rng: &mut ChaCha8Rng,
        budget: &Budget,
        evidence: Option<&EvidenceBundle>,
        findings: Option<&ValidationReport>,
        trace: &mut PhaseTrace,
        emitter: &mut Emitter<'_>,
        progress: &mut Progress,
    ) -> bool {
        let phase = progress.state.phase;
        let principal = principal_for(phase);
        let result = {
            let ctx = PromptContext {
                task: &req.task.description,
                phase,
                config: req.config,
                artifacts: &progress.artifacts,
                evidence,
                findings,
            };
            let state = progress.state.clone();
            let within = || !self.over_budget(&state, budget);
            invoke_agent(
                backend,
                tools,
                principal,
                &ctx,
                &self.settings.invoke,
                rng,
                &within,
            )
        };
        let record_turn = |turn: AgentTurn, trace: &mut PhaseTrace, progress: &mut Progress| {
            progress.rate_limited |= turn.rate_limited;
            trace.agent_turns.push(turn);
        };
        match result {
            Ok(turn) => {
                if let Some(a) = turn.produced_artifact.clone() {
                    progress.artifacts.insert(a);
                }
                let tool_calls = turn.tool_calls.len();
                record_turn(turn, trace, progress);
                emitter.emit(RunEventKind::AgentTurnCompleted {
                    phase,
                    principal,
                    tool_calls,
                    repair: findings.is_some(),
                });
                true
            }
            Err(f) => {
                let last_rate_limited = matches!(
                    f.turn.retries.last().map(|r| &r.error),
                    Some(BackendError::RateLimited(_))
                );
                record_turn(*f.turn, trace, progress);
                let now = self.clock.now();
                let critical = |kind| CriticalError {
                    kind,
                    phase: Some(phase),
                    message: f.message.clone(),
                };
                match f.kind {
                    InvokeFailureKind::BudgetExceeded => {
                        progress.apply(WorkflowEvent::BudgetExceeded, now);
                        return false;
                    }
                    InvokeFailureKind::PermissionViolation => progress
                        .critical
                        .push(critical(CriticalKind::ToolPermissionViolation)),
                    InvokeFailureKind::Authentication => progress
                        .critical
                        .push(critical(CriticalKind::Authentication)),
                    InvokeFailureKind::BackendExhausted => {
                        progress
                            .critical
                            .push(critical(CriticalKind::BackendExhausted));
                        progress.interrupted |= last_rate_limited;
                    }
                    InvokeFailureKind::Protocol | InvokeFailureKind::Prompt => progress
                        .execution_errors
                        .push(format!("{phase}: {}", f.message)),
                }
                progress.apply(WorkflowEvent::FatalError, now);
                false
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn post_hook_with_repairs(
        &self,
        req: &RunRequest,
        backend: &mut dyn AgentBackend,
        tools: &ToolContext<'_>,
        rng: &mut ChaCha8Rng,
        budget: &Budget,
        evidence: Option<&EvidenceBundle>,
        trace: &mut PhaseTrace,
        writer: &RunWriter,
        emitter: &mut Emitter<'_>,
        progress: &mut Progress,
    ) {
        let phase = progress.state.phase;
        let mut runs = Vec::new();
        let mut attempt = 0;
        let final_report = loop {
            let out = match run_post_hook(tools, phase, &progress.artifacts, &req.checks) {
                Ok(o) => o,
                Err(v) => {
                    progress.critical.push(CriticalError {
                        kind: CriticalKind::ToolPermissionViolation,
                        phase: Some(phase),
                        message: v.to_string(),
                    });
                    runs.push(PostHookRun {
                        verdict: crate::report::Verdict::Fail,
                        errors: 1,
                        tool_calls: v.tool_calls,
                    });
                    progress.apply(WorkflowEvent::FatalError, self.clock.now());
                    break None;
                }
            };
            if phase == PhaseId::Implement {
                progress.checks = Some(out.checks.clone());
            }
            runs.push(PostHookRun {
                verdict: out.report.verdict,
                errors: out.report.errors().count(),
                tool_calls: out.tool_calls,
            });
            if out.report.passed() {
                break Some(out.report);
            }
            if attempt >= self.settings.repair_turns {
                progress.note_validation_failure(phase);
                break Some(out.report);
            }
            if self.over_budget(&progress.state, budget) {
                progress.apply(WorkflowEvent::BudgetExceeded, self.clock.now());
                break Some(out.report);
            }
            attempt += 1;
            if !self.agent_turn(
                req,
                backend,
                tools,
                rng,
                budget,
                evidence,
                Some(&out.report),
                trace,
                emitter,
                progress,
            ) {
                break Some(out.report);
            }
        };
        let verdict = runs.last().map(|r| r.verdict);
        if let Some(report) = &final_report {
            let report_ref = writer.write_report(phase, report).unwrap_or_else(|e| {
                progress.execution_errors.push(e.to_string());
                String::new()
            });
            trace.post_hook = Some(PostHookEntry {
                report_ref,
                verdict: report.verdict,
                runs,
            });
        }
        emitter.emit(RunEventKind::HookCompleted {
            phase,
            slot: HookSlot::Post,
            verdict,
        });
    }
}
