use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::backend::{
    AgentBackend, BackendError, BackendMessage, BackendRequest, TranscriptEntry, TranscriptRole,
};
use super::backoff::BackoffPolicy;
use super::permission::{Principal, ToolId};
use super::prompt::{compose_prompt, PromptContext, PromptLibrary};
use super::tools::{dispatch_tool, ToolCallRecord, ToolContext, ToolFailure, ToolRequest};
use crate::artifact::{Artifact, ArtifactKind};
use crate::clock::Timestamp;
use crate::repo::sha256_hex;
use crate::workflow::PhaseId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryRecord {
    pub at: Timestamp,
    pub error: BackendError,
    pub delay_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTurn {
    pub principal: Principal,
    pub phase: PhaseId,
    pub prompt_digest: String,
    pub response_text: String,
    pub tool_calls: Vec<ToolCallRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub produced_artifact: Option<Artifact>,
    /// Why the final response did not yield an artifact or patch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact_error: Option<String>,
    pub retries: Vec<RetryRecord>,
    pub rate_limited: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvokeFailureKind {
    PermissionViolation,
    BackendExhausted,
    Authentication,
    Protocol,
    BudgetExceeded,
    Prompt,
}

impl InvokeFailureKind {
    /// Failures that make a run unsuccessful regardless of its patch.
    pub fn is_critical(self) -> bool {
        matches!(
            self,
            InvokeFailureKind::PermissionViolation
                | InvokeFailureKind::BackendExhausted
                | InvokeFailureKind::Authentication
        )
    }
}

/// A failed invocation, with everything recorded up to the failure.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{kind:?}: {message}")]
pub struct InvokeFailure {
    pub kind: InvokeFailureKind,
    pub message: String,
    pub turn: Box<AgentTurn>,
}

#[derive(Debug, Clone)]
pub struct InvokeOptions {
    pub prompts: PromptLibrary,
    pub backoff: BackoffPolicy,
    pub max_tool_calls: usize,
    /// Bytes of tool output echoed back into the transcript.
    pub tool_output_limit: usize,
}

impl Default for InvokeOptions {
    fn default() -> Self {
        Self {
            prompts: PromptLibrary::builtin(),
            backoff: BackoffPolicy::default(),
            max_tool_calls: 200,
            tool_output_limit: 8 * 1024,
        }
    }
}

/// Strips a single wrapping ```/```markdown fence, if the whole reply is one.
pub fn unwrap_fence(text: &str) -> &str {
    let t = text.trim();
    let Some(first_nl) = t.find('\n') else {
        return t;
    };
    let opener = &t[..first_nl];
    if !opener.starts_with("```") || !t.ends_with("```") || t.len() < first_nl + 4 {
        return t;
    }
    let lang = opener.trim_start_matches('`').trim();
    if !lang.is_empty() && lang != "markdown" && lang != "md" {
        return t;
    }
    t[first_nl + 1..t.len() - 3].trim_end()
}

/// Bodies of every ```diff / ```patch block in `text`.
pub fn diff_blocks(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        let l = line.trim();
        if l == "```diff" || l == "```patch" {
            let mut body: Vec<&str> = lines.by_ref().take_while(|l| l.trim() != "```").collect();
            body.push("");
            out.push(body.join("\n"));
        }
    }
    out
}

fn fail(kind: InvokeFailureKind, message: impl Into<String>, turn: AgentTurn) -> InvokeFailure {
    InvokeFailure {
        kind,
        message: message.into(),
        turn: Box::new(turn),
    }
}

/// Runs one agent turn: render the prompt, loop over tool requests, then
/// extract the phase artifact (or apply the patch) from the final reply.
/// `within_budget` is consulted before every backend request.
pub fn invoke_agent(
    backend: &mut dyn AgentBackend,
    tools: &ToolContext<'_>,
    principal: Principal,
    ctx: &PromptContext<'_>,
    opts: &InvokeOptions,
    rng: &mut dyn RngCore,
    within_budget: &dyn Fn() -> bool,
) -> Result<AgentTurn, InvokeFailure> {
    let phase = ctx.phase;
    let mut turn = AgentTurn {
        principal,
        phase,
        prompt_digest: String::new(),
        response_text: String::new(),
        tool_calls: Vec::new(),
        produced_artifact: None,
        artifact_error: None,
        retries: Vec::new(),
        rate_limited: false,
    };
    let prompt = match compose_prompt(&opts.prompts, ctx) {
        Ok(p) => p,
        Err(e) => return Err(fail(InvokeFailureKind::Prompt, e.to_string(), turn)),
    };
    turn.prompt_digest = sha256_hex(prompt.as_bytes());
    let mut request = BackendRequest {
        key: phase.as_str().to_string(),
        turn: 0,
        prompt,
        transcript: Vec::new(),
    };
    let mut consecutive_failures = 0u32;
    let final_text = loop {
        if !within_budget() {
            return Err(fail(
                InvokeFailureKind::BudgetExceeded,
                "budget exhausted",
                turn,
            ));
        }
        let reply = backend.respond(&request);
        request.turn += 1;
        match reply {
            Err(e) => {
                if matches!(e, BackendError::RateLimited(_)) {
                    turn.rate_limited = true;
                }
                match &e {
                    BackendError::Auth(m) => {
                        return Err(fail(InvokeFailureKind::Authentication, m.clone(), turn));
                    }
                    BackendError::Protocol(m) => {
                        return Err(fail(InvokeFailureKind::Protocol, m.clone(), turn));
                    }
                    _ => {}
                }
                if consecutive_failures >= opts.backoff.max_retries {
                    let msg = format!("{e} (after {consecutive_failures} retries)");
                    return Err(fail(InvokeFailureKind::BackendExhausted, msg, turn));
                }
                let delay = match opts.backoff.next_delay(consecutive_failures, rng) {
                    Ok(d) => d,
                    Err(b) => {
                        return Err(fail(
                            InvokeFailureKind::BackendExhausted,
                            b.to_string(),
                            turn,
                        ))
                    }
                };
                turn.retries.push(RetryRecord {
                    at: tools.clock.now(),
                    error: e,
                    delay_secs: delay.as_secs_f64(),
                });
                consecutive_failures += 1;
                tools.clock.sleep(delay);
            }
            Ok(BackendMessage::Final(text)) => break text,
            Ok(BackendMessage::ToolRequest(req)) => {
                consecutive_failures = 0;
                if turn.tool_calls.len() >= opts.max_tool_calls {
                    let msg = format!("more than {} tool calls in one turn", opts.max_tool_calls);
                    return Err(fail(InvokeFailureKind::Protocol, msg, turn));
                }
                let d = dispatch_tool(tools, principal, &req);
                turn.tool_calls.push(d.record);
                let result = match d.output {
                    Ok(o) => o.render(opts.tool_output_limit),
                    Err(ToolFailure::Denied(reason)) => {
                        return Err(fail(InvokeFailureKind::PermissionViolation, reason, turn));
                    }
                    Err(f) => f.to_string(),
                };
                request.transcript.push(TranscriptEntry {
                    role: TranscriptRole::Assistant,
                    content: serde_json::to_string(&req).unwrap_or_default(),
                });
                request.transcript.push(TranscriptEntry {
                    role: TranscriptRole::Tool,
                    content: result,
                });
            }
        }
    };
    turn.response_text = final_text;
    match ArtifactKind::for_phase(phase) {
        Some(kind) => match Artifact::parse(kind, unwrap_fence(&turn.response_text)) {
            Ok(a) => turn.produced_artifact = Some(a),
            Err(e) => turn.artifact_error = Some(e.to_string()),
        },
        None => {
            for patch in diff_blocks(&turn.response_text) {
                let req = ToolRequest::new(ToolId::ApplyPatch, json!({ "patch": patch }));
                let d = dispatch_tool(tools, principal, &req);
                turn.tool_calls.push(d.record);
                match d.output {
                    Ok(_) => {}
                    Err(ToolFailure::Denied(reason)) => {
                        return Err(fail(InvokeFailureKind::PermissionViolation, reason, turn));
                    }
                    Err(f) => turn.artifact_error = Some(f.to_string()),
                }
            }
        }
    }
    Ok(turn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::backend::{ScriptStep, ScriptedBackend, ScriptedFailure};
    use crate::agent::permission::PermissionMatrix;
    use crate::agent::tools::ToolOutcome;
    use crate::artifact::ArtifactSet;
    use crate::clock::{Clock, ManualClock};
    use crate::repo::Repo;
    use crate::workflow::ConfigurationKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::time::Duration;

    const SPEC: &str =
        "# Spec: greet\n## Requirements\n- say hi\n## Acceptance Criteria\n- prints hi\n";

    struct Fixture {
        _dir: tempfile::TempDir,
        repo: Repo,
        matrix: PermissionMatrix,
        clock: ManualClock,
    }

    fn fixture() -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("app.py"), "print('hi')\n").unwrap();
        Fixture {
            repo: Repo::open(dir.path()),
            _dir: dir,
            matrix: PermissionMatrix::standard(&[], &[]),
            clock: ManualClock::at_epoch(),
        }
    }

    fn run(
        f: &Fixture,
        steps: Vec<ScriptStep>,
        phase: PhaseId,
        principal: Principal,
        opts: &InvokeOptions,
    ) -> Result<AgentTurn, InvokeFailure> {
        let mut script = crate::agent::backend::Script::new();
        script.insert(phase.as_str().to_string(), steps);
        let mut backend = ScriptedBackend::new("scripted", script);
        let tools = ToolContext {
            matrix: &f.matrix,
            repo: &f.repo,
            clock: &f.clock,
            exec_timeout: Duration::from_secs(5),
            tail_bytes: 1024,
        };
        let artifacts = ArtifactSet::default();
        let ctx = PromptContext {
            task: "say hi",
            phase,
            config: ConfigurationKind::Full,
            artifacts: &artifacts,
            evidence: None,
            findings: None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        invoke_agent(
            &mut backend,
            &tools,
            principal,
            &ctx,
            opts,
            &mut rng,
            &|| true,
        )
    }

    #[test]
    fn canned_spec_becomes_artifact() {
        let f = fixture();
        let steps = vec![
            ScriptStep::tool(ToolId::ReadFile, json!({"path": "app.py"})),
            ScriptStep::final_text(format!("```markdown\n{SPEC}```")),
        ];
        let turn = run(
            &f,
            steps,
            PhaseId::Specify,
            Principal::PmAgent,
            &InvokeOptions::default(),
        )
        .unwrap();
        assert!(matches!(turn.produced_artifact, Some(Artifact::Spec(_))));
        assert_eq!(turn.tool_calls.len(), 1);
        assert_eq!(turn.prompt_digest.len(), 64);
    }

    #[test]
    fn forbidden_tool_is_a_permission_violation() {
        let f = fixture();
        let before = f.repo.tree_hash();
        let steps = vec![ScriptStep::tool(
            ToolId::WriteFile,
            json!({"path": "x.py", "content": "x"}),
        )];
        let err = run(
            &f,
            steps,
            PhaseId::Specify,
            Principal::PmAgent,
            &InvokeOptions::default(),
        )
        .unwrap_err();
        assert_eq!(err.kind, InvokeFailureKind::PermissionViolation);
        assert!(err.kind.is_critical());
        assert_eq!(err.turn.tool_calls[0].outcome, ToolOutcome::Denied);
        assert_eq!(before, f.repo.tree_hash());
    }

    #[test]
    fn transient_failures_are_retried() {
        let f = fixture();
        let opts = InvokeOptions {
            backoff: BackoffPolicy {
                base_delay: Duration::from_secs(1),
                multiplier: 2.0,
                max_retries: 3,
                jitter: 0.0,
            },
            ..InvokeOptions::default()
        };
        let t0 = f.clock.now();
        let steps = vec![
            ScriptStep::error(ScriptedFailure::Transport),
            ScriptStep::error(ScriptedFailure::RateLimited),
            ScriptStep::final_text(SPEC),
        ];
        let turn = run(&f, steps, PhaseId::Specify, Principal::PmAgent, &opts).unwrap();
        assert_eq!(turn.retries.len(), 2);
        assert!(turn.rate_limited);
        assert_eq!((f.clock.now() - t0).num_seconds(), 3);

        let steps = vec![ScriptStep::error(ScriptedFailure::Transport); 4];
        let err = run(&f, steps, PhaseId::Specify, Principal::PmAgent, &opts).unwrap_err();
        assert_eq!(err.kind, InvokeFailureKind::BackendExhausted);
        assert_eq!(err.turn.retries.len(), 3);
    }

    #[test]
    fn auth_failure_is_not_retried() {
        let f = fixture();
        let steps = vec![
            ScriptStep::error(ScriptedFailure::Auth),
            ScriptStep::final_text(SPEC),
        ];
        let err = run(
            &f,
            steps,
            PhaseId::Specify,
            Principal::PmAgent,
            &InvokeOptions::default(),
        )
        .unwrap_err();
        assert_eq!(err.kind, InvokeFailureKind::Authentication);
        assert!(err.turn.retries.is_empty());
    }

    #[test]
    fn implement_applies_diff_blocks() {
        let f = fixture();
        f.repo.git(&["init", "-q"]).unwrap();
        let reply = "Done.\n```diff\n--- a/app.py\n+++ b/app.py\n@@ -1 +1 @@\n-print('hi')\n+print('hello')\n```\n";
        let turn = run(
            &f,
            vec![ScriptStep::final_text(reply)],
            PhaseId::Implement,
            Principal::DeveloperAgent,
            &InvokeOptions::default(),
        )
        .unwrap();
        assert_eq!(turn.artifact_error, None);
        assert_eq!(
            std::fs::read_to_string(f.repo.root().join("app.py")).unwrap(),
            "print('hello')\n"
        );
    }

    #[test]
    fn malformed_artifact_is_reported_not_fatal() {
        let f = fixture();
        let turn = run(
            &f,
            vec![ScriptStep::final_text("no headings")],
            PhaseId::Plan,
            Principal::DeveloperAgent,
            &InvokeOptions::default(),
        )
        .unwrap();
        assert!(turn.produced_artifact.is_none());
        assert!(turn.artifact_error.is_some());
    }

    #[test]
    fn fence_unwrapping() {
        assert_eq!(unwrap_fence("```markdown\n# Plan\n```"), "# Plan");
        assert_eq!(unwrap_fence("```\n# Plan\n```"), "# Plan");
        assert_eq!(unwrap_fence("```python\nx\n```"), "```python\nx\n```");
        assert_eq!(unwrap_fence("# Plan"), "# Plan");
    }
}
