//! Pre-phase discovery and post-phase validation hooks.

mod validate;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

pub use validate::{referenced_paths, validate_plan, validate_spec, validate_tasks};

use crate::agent::{
    dispatch_tool, Principal, ScopedProber, ToolCallRecord, ToolContext, ToolFailure, ToolId,
    ToolOutput, ToolRequest,
};
use crate::artifact::{ArtifactKind, ArtifactSet};
use crate::exec::ExecResult;
use crate::probe::{discover, DiscoveryContext, EvidenceBundle, EvidenceCaps, Prober};
use crate::report::{Finding, FindingCategory, ValidationReport};
use crate::workflow::PhaseId;

/// Revision turns granted after a failed post-hook.
pub const DEFAULT_REPAIR_TURNS: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Test,
    Lint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckSpec {
    pub command: String,
    pub kind: CheckKind,
    #[serde(default = "default_check_timeout")]
    pub timeout_seconds: u64,
}

fn default_check_timeout() -> u64 {
    600
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub command: String,
    pub kind: CheckKind,
    pub exit_status: i32,
    pub timed_out: bool,
    pub duration_secs: f64,
    pub stdout_tail: String,
    pub stderr_tail: String,
}

impl CheckResult {
    fn from_exec(kind: CheckKind, r: ExecResult) -> Self {
        Self {
            command: r.command,
            kind,
            exit_status: r.exit_status,
            timed_out: r.timed_out,
            duration_secs: r.duration_secs,
            stdout_tail: r.stdout_tail,
            stderr_tail: r.stderr_tail,
        }
    }

    pub fn passed(&self) -> bool {
        self.exit_status == 0 && !self.timed_out
    }
}

/// A hook tried something its privilege forbids.
#[derive(Debug, Clone, Error)]
#[error("{principal} denied: {reason}")]
pub struct HookViolation {
    pub principal: Principal,
    pub reason: String,
    pub tool_calls: Vec<ToolCallRecord>,
}

#[derive(Debug, Clone)]
pub struct PreHookOutcome {
    pub bundle: EvidenceBundle,
    pub tool_calls: Vec<ToolCallRecord>,
}

#[derive(Debug, Clone)]
pub struct PostHookOutcome {
    pub report: ValidationReport,
    pub checks: Vec<CheckResult>,
    pub tool_calls: Vec<ToolCallRecord>,
}

/// Discovery at discovery privilege; every probe is an audited tool call.
pub fn run_pre_hook(
    tools: &ToolContext<'_>,
    phase: PhaseId,
    context: DiscoveryContext<'_>,
    caps: &EvidenceCaps,
) -> PreHookOutcome {
    let mut tool_calls = Vec::new();
    let now = tools.clock.now();
    let bundle = {
        let mut prober = ScopedProber {
            ctx: *tools,
            principal: Principal::DiscoveryHook,
            records: &mut tool_calls,
        };
        discover(&mut prober, phase, context, caps, now)
    };
    PreHookOutcome { bundle, tool_calls }
}

/// Runs each configured check in order at validation privilege.
pub fn run_repo_checks(
    tools: &ToolContext<'_>,
    checks: &[CheckSpec],
    tool_calls: &mut Vec<ToolCallRecord>,
) -> Result<Vec<CheckResult>, HookViolation> {
    let mut results = Vec::new();
    for check in checks {
        let req = ToolRequest::new(
            ToolId::ExecCommand,
            json!({ "command": check.command, "timeout_seconds": check.timeout_seconds }),
        );
        let d = dispatch_tool(tools, Principal::ValidationHook, &req);
        tool_calls.push(d.record);
        match d.output {
            Ok(ToolOutput::Exec(r)) => results.push(CheckResult::from_exec(check.kind, r)),
            Ok(other) => unreachable!("exec_command returned {other:?}"),
            Err(ToolFailure::Denied(reason)) => {
                return Err(HookViolation {
                    principal: Principal::ValidationHook,
                    reason,
                    tool_calls: std::mem::take(tool_calls),
                })
            }
            Err(ToolFailure::Error(e)) => results.push(CheckResult {
                command: check.command.clone(),
                kind: check.kind,
                exit_status: -1,
                timed_out: false,
                duration_secs: 0.0,
                stdout_tail: String::new(),
                stderr_tail: e,
            }),
        }
    }
    Ok(results)
}

fn check_findings(results: &[CheckResult]) -> Vec<Finding> {
    results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| {
            let why = if r.timed_out {
                "timed out".to_string()
            } else {
                format!("exited with status {}", r.exit_status)
            };
            let tail = r.stderr_tail.trim();
            let tail = if tail.is_empty() {
                r.stdout_tail.trim()
            } else {
                tail
            };
            Finding::error(
                FindingCategory::CheckFailed,
                format!("`{}` {why}\n{tail}", r.command),
            )
        })
        .collect()
}

fn missing(phase: PhaseId, kind: ArtifactKind) -> ValidationReport {
    ValidationReport::new(
        phase,
        vec![Finding::error(
            FindingCategory::Structural,
            format!("no parseable {} was produced", kind.file_name()),
        )],
    )
}

/// Validates the artifact a phase just produced; at implement, runs the
/// repository checks and folds failures into the report.
pub fn run_post_hook(
    tools: &ToolContext<'_>,
    phase: PhaseId,
    artifacts: &ArtifactSet,
    checks: &[CheckSpec],
) -> Result<PostHookOutcome, HookViolation> {
    let mut tool_calls = Vec::new();
    let mut check_results = Vec::new();
    let report = match phase {
        PhaseId::Specify => match &artifacts.spec {
            Some(s) => validate_spec(s),
            None => missing(phase, ArtifactKind::Spec),
        },
        PhaseId::Plan => match &artifacts.plan {
            Some(p) => {
                let mut prober = ScopedProber {
                    ctx: *tools,
                    principal: Principal::ValidationHook,
                    records: &mut tool_calls,
                };
                let manifests = prober.manifests().map(|m| m.items).unwrap_or_default();
                validate_plan(p, tools.repo, &manifests)
            }
            None => missing(phase, ArtifactKind::Plan),
        },
        PhaseId::Tasks => match &artifacts.tasks {
            Some(t) => validate_tasks(t, artifacts.plan.as_ref()),
            None => missing(phase, ArtifactKind::Tasks),
        },
        PhaseId::Implement => {
            check_results = run_repo_checks(tools, checks, &mut tool_calls)?;
            ValidationReport::new(phase, check_findings(&check_results))
        }
    };
    Ok(PostHookOutcome {
        report,
        checks: check_results,
        tool_calls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{PermissionMatrix, ToolOutcome};
    use crate::clock::ManualClock;
    use crate::repo::Repo;
    use std::time::Duration;

    struct Fx {
        _d: tempfile::TempDir,
        repo: Repo,
        matrix: PermissionMatrix,
        clock: ManualClock,
    }

    fn fx(allow: &[&str]) -> Fx {
        let d = tempfile::tempdir().unwrap();
        std::fs::write(
            d.path().join("app.py"),
            "import logging\nlog = logging.getLogger(__name__)\n",
        )
        .unwrap();
        Fx {
            repo: Repo::open(d.path()),
            _d: d,
            matrix: PermissionMatrix::standard(
                &allow.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
                &[],
            ),
            clock: ManualClock::at_epoch(),
        }
    }

    impl Fx {
        fn tools(&self) -> ToolContext<'_> {
            ToolContext {
                matrix: &self.matrix,
                repo: &self.repo,
                clock: &self.clock,
                exec_timeout: Duration::from_secs(10),
                tail_bytes: 256,
            }
        }
    }

    fn check(cmd: &str, kind: CheckKind) -> CheckSpec {
        CheckSpec {
            command: cmd.into(),
            kind,
            timeout_seconds: 10,
        }
    }

    #[test]
    fn checks_run_and_fold_into_findings() {
        let f = fx(&["true", "false", "sleep 5"]);
        let mut calls = Vec::new();
        assert!(run_repo_checks(&f.tools(), &[], &mut calls)
            .unwrap()
            .is_empty());
        let checks = [
            check("true", CheckKind::Test),
            check("false", CheckKind::Lint),
        ];
        let out = run_post_hook(
            &f.tools(),
            PhaseId::Implement,
            &ArtifactSet::default(),
            &checks,
        )
        .unwrap();
        assert_eq!(out.checks.len(), 2);
        assert_eq!(out.checks[0].kind, CheckKind::Test);
        assert!(!out.report.passed());
        assert_eq!(out.report.findings.len(), 1);
        assert_eq!(
            out.report.findings[0].category,
            FindingCategory::CheckFailed
        );
        assert!(out
            .tool_calls
            .iter()
            .all(|c| c.principal == Principal::ValidationHook));

        let slow = CheckSpec {
            command: "sleep 5".into(),
            kind: CheckKind::Test,
            timeout_seconds: 0,
        };
        let r = run_repo_checks(&f.tools(), &[slow], &mut calls).unwrap();
        assert!(r[0].timed_out && !r[0].passed());
    }

    #[test]
    fn unlisted_check_is_a_violation() {
        let f = fx(&["true"]);
        let err = run_post_hook(
            &f.tools(),
            PhaseId::Implement,
            &ArtifactSet::default(),
            &[check("rm -rf .", CheckKind::Lint)],
        )
        .unwrap_err();
        assert_eq!(err.principal, Principal::ValidationHook);
        assert_eq!(err.tool_calls[0].outcome, ToolOutcome::Denied);
        assert!(f.repo.exists("app.py"));
    }

    #[test]
    fn missing_artifact_fails_structurally() {
        let f = fx(&[]);
        for phase in [PhaseId::Specify, PhaseId::Plan, PhaseId::Tasks] {
            let out = run_post_hook(&f.tools(), phase, &ArtifactSet::default(), &[]).unwrap();
            assert!(!out.report.passed());
            assert_eq!(out.report.phase, phase);
        }
    }

    #[test]
    fn pre_hook_is_read_only_and_audited() {
        let f = fx(&[]);
        let before = f.repo.tree_hash();
        let artifacts = ArtifactSet::default();
        let out = run_pre_hook(
            &f.tools(),
            PhaseId::Specify,
            DiscoveryContext {
                task_description: "persist logging of user sessions",
                artifacts: &artifacts,
            },
            &EvidenceCaps::default(),
        );
        assert_eq!(before, f.repo.tree_hash());
        assert!(!out.tool_calls.is_empty());
        assert!(out
            .tool_calls
            .iter()
            .all(|c| c.principal == Principal::DiscoveryHook && c.outcome != ToolOutcome::Denied));
        assert!(out
            .bundle
            .conventions
            .iter()
            .any(|c| c.evidence_path == "app.py"));
    }
}
