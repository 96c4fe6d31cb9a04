use std::io::Write as _;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::permission::{Permission, PermissionMatrix, Principal, ToolId};
use crate::clock::{Clock, Timestamp};
use crate::exec::{run_shell, ExecResult};
use crate::paths::normalize_repo_path;
use crate::probe::{self, CommitEntry, DependencyRecord, GrepMatch, ProbeError, Probed, Prober};
use crate::repo::{sha256_hex, Repo, VCS_DIRS};

/// File contents above this size are stored as a digest in the ledger.
pub const REDACTION_THRESHOLD: usize = 16 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolRequest {
    pub tool: ToolId,
    #[serde(default)]
    pub arguments: Value,
}

impl ToolRequest {
    pub fn new(tool: ToolId, arguments: Value) -> Self {
        Self { tool, arguments }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolOutcome {
    Ok,
    Error,
    Denied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallRecord {
    pub principal: Principal,
    pub tool: ToolId,
    pub arguments: Value,
    pub started_at: Timestamp,
    pub duration_secs: f64,
    pub outcome: ToolOutcome,
    pub output_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "value")]
pub enum ToolOutput {
    Text(String),
    Paths(Vec<String>),
    Matches(Vec<GrepMatch>),
    History(Probed<Vec<CommitEntry>>),
    Manifests(Probed<Vec<DependencyRecord>>),
    Written { path: String, bytes: usize },
    Patched { files: Vec<String> },
    Exec(ExecResult),
}

impl ToolOutput {
    /// Transcript rendering, truncated for prompt hygiene.
    pub fn render(&self, limit: usize) -> String {
        let s = match self {
            ToolOutput::Text(t) => t.clone(),
            other => serde_json::to_string_pretty(other).unwrap_or_default(),
        };
        if s.len() <= limit {
            s
        } else {
            let mut cut = limit;
            while !s.is_char_boundary(cut) {
                cut -= 1;
            }
            format!("{}\n[truncated {} bytes]", &s[..cut], s.len() - cut)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ToolFailure {
    Denied(String),
    Error(String),
}

impl std::fmt::Display for ToolFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ToolFailure::Denied(r) => write!(f, "denied: {r}"),
            ToolFailure::Error(e) => write!(f, "error: {e}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dispatched {
    pub record: ToolCallRecord,
    pub output: Result<ToolOutput, ToolFailure>,
}

/// Everything a tool call needs: the working copy, the permission matrix
/// and the run's clock.
#[derive(Clone, Copy)]
pub struct ToolContext<'a> {
    pub matrix: &'a PermissionMatrix,
    pub repo: &'a Repo,
    pub clock: &'a dyn Clock,
    pub exec_timeout: Duration,
    pub tail_bytes: usize,
}

fn redact(arguments: &Value) -> Value {
    let mut v = arguments.clone();
    if let Some(obj) = v.as_object_mut() {
        for key in ["content", "patch"] {
            if let Some(Value::String(s)) = obj.get(key) {
                if s.len() > REDACTION_THRESHOLD {
                    let replacement =
                        json!({ "sha256": sha256_hex(s.as_bytes()), "bytes": s.len() });
                    obj.insert(key.to_string(), replacement);
                }
            }
        }
    }
    v
}

fn str_arg<'v>(args: &'v Value, key: &str) -> Result<&'v str, ToolFailure> {
    args.get(key)
        .and_then(|v| v.as_str())
        .ok_or_else(|| ToolFailure::Error(format!("missing string argument `{key}`")))
}

fn probe_err(e: ProbeError) -> ToolFailure {
    ToolFailure::Error(e.to_string())
}

fn writable_path(raw: &str) -> Result<String, ToolFailure> {
    let p = normalize_repo_path(raw).map_err(|e| ToolFailure::Error(e.to_string()))?;
    if VCS_DIRS
        .iter()
        .any(|d| p == *d || p.starts_with(&format!("{d}/")))
    {
        return Err(ToolFailure::Error(format!(
            "refusing to write VCS metadata `{p}`"
        )));
    }
    Ok(p)
}

fn apply_patch(repo: &Repo, patch: &str) -> Result<ToolOutput, ToolFailure> {
    let run = |extra: &[&str]| -> Result<String, ToolFailure> {
        let mut child = Command::new("git")
            .arg("-C")
            .arg(repo.root())
            .args(["apply", "--whitespace=nowarn"])
            .args(extra)
            .arg("-")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| ToolFailure::Error(format!("git apply: {e}")))?;
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(patch.as_bytes())
            .map_err(|e| ToolFailure::Error(format!("git apply: {e}")))?;
        let out = child
            .wait_with_output()
            .map_err(|e| ToolFailure::Error(format!("git apply: {e}")))?;
        if !out.status.success() {
            return Err(ToolFailure::Error(format!(
                "patch does not apply: {}",
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    };
    let files = run(&["--check", "--numstat"])?
        .lines()
        .filter_map(|l| l.split('\t').nth(2).map(String::from))
        .collect::<Vec<_>>();
    for f in &files {
        writable_path(f)?;
    }
    run(&[])?;
    Ok(ToolOutput::Patched { files })
}

fn execute(ctx: &ToolContext<'_>, req: &ToolRequest) -> Result<ToolOutput, ToolFailure> {
    let args = &req.arguments;
    let repo = ctx.repo;
    match req.tool {
        ToolId::ReadFile => {
            let path = str_arg(args, "path")?;
            let full = repo
                .resolve(path)
                .map_err(|e| ToolFailure::Error(e.to_string()))?;
            std::fs::read(&full)
                .map(|b| ToolOutput::Text(String::from_utf8_lossy(&b).into_owned()))
                .map_err(|e| ToolFailure::Error(format!("{path}: {e}")))
        }
        ToolId::Glob => probe::glob_files(repo, str_arg(args, "pattern")?)
            .map(ToolOutput::Paths)
            .map_err(probe_err),
        ToolId::Grep => {
            let scope = args.get("scope").and_then(|s| s.as_str());
            probe::grep(repo, str_arg(args, "pattern")?, scope)
                .map(ToolOutput::Matches)
                .map_err(probe_err)
        }
        ToolId::GitInspect => {
            let path = args.get("path").and_then(|s| s.as_str());
            let limit = args.get("limit").and_then(|l| l.as_u64()).unwrap_or(20) as usize;
            Ok(ToolOutput::History(probe::history(repo, path, limit)))
        }
        ToolId::ReadManifest => Ok(ToolOutput::Manifests(probe::read_manifests(repo))),
        ToolId::WriteFile => {
            let path = writable_path(str_arg(args, "path")?)?;
            let content = str_arg(args, "content")?;
            let full = repo.root().join(&path);
            if let Some(parent) = full.parent() {
                std::fs::create_dir_all(parent).map_err(|e| ToolFailure::Error(e.to_string()))?;
            }
            std::fs::write(&full, content)
                .map_err(|e| ToolFailure::Error(format!("{path}: {e}")))?;
            Ok(ToolOutput::Written {
                path,
                bytes: content.len(),
            })
        }
        ToolId::ApplyPatch => apply_patch(repo, str_arg(args, "patch")?),
        ToolId::ExecCommand => {
            let command = str_arg(args, "command")?;
            let timeout = args
                .get("timeout_seconds")
                .and_then(|t| t.as_f64())
                .map(Duration::from_secs_f64)
                .unwrap_or(ctx.exec_timeout);
            Ok(ToolOutput::Exec(run_shell(
                command,
                repo.root(),
                timeout,
                ctx.tail_bytes,
            )))
        }
    }
}

/// Permission check first; only allowed calls touch the working copy.
pub fn dispatch_tool(
    ctx: &ToolContext<'_>,
    principal: Principal,
    request: &ToolRequest,
) -> Dispatched {
    let started_at = ctx.clock.now();
    let wall = Instant::now();
    let permission = ctx
        .matrix
        .check(principal, request.tool, &request.arguments);
    let output = match permission {
        Permission::Deny(reason) => Err(ToolFailure::Denied(reason)),
        Permission::Allow => execute(ctx, request),
    };
    let (outcome, digest, message) = match &output {
        Ok(o) => (
            ToolOutcome::Ok,
            sha256_hex(serde_json::to_string(o).unwrap_or_default().as_bytes()),
            None,
        ),
        Err(ToolFailure::Denied(r)) => (ToolOutcome::Denied, String::new(), Some(r.clone())),
        Err(ToolFailure::Error(e)) => (ToolOutcome::Error, String::new(), Some(e.clone())),
    };
    Dispatched {
        record: ToolCallRecord {
            principal,
            tool: request.tool,
            arguments: redact(&request.arguments),
            started_at,
            duration_secs: wall.elapsed().as_secs_f64(),
            outcome,
            output_digest: digest,
            message,
        },
        output,
    }
}

/// A [`Prober`] whose every call is a permission-checked, audited tool call.
pub struct ScopedProber<'a, 'r> {
    pub ctx: ToolContext<'a>,
    pub principal: Principal,
    pub records: &'r mut Vec<ToolCallRecord>,
}

impl ScopedProber<'_, '_> {
    fn call(&mut self, tool: ToolId, arguments: Value) -> Result<ToolOutput, ProbeError> {
        let d = dispatch_tool(
            &self.ctx,
            self.principal,
            &ToolRequest::new(tool, arguments),
        );
        self.records.push(d.record);
        d.output.map_err(|f| match f {
            ToolFailure::Denied(r) => ProbeError::Denied(r),
            ToolFailure::Error(e) => ProbeError::Io(e),
        })
    }
}

fn unexpected(o: ToolOutput) -> ProbeError {
    ProbeError::Io(format!("unexpected tool output {o:?}"))
}

impl Prober for ScopedProber<'_, '_> {
    fn glob(&mut self, pattern: &str) -> Result<Vec<String>, ProbeError> {
        match self.call(ToolId::Glob, json!({ "pattern": pattern }))? {
            ToolOutput::Paths(p) => Ok(p),
            o => Err(unexpected(o)),
        }
    }

    fn grep(&mut self, pattern: &str, scope: Option<&str>) -> Result<Vec<GrepMatch>, ProbeError> {
        match self.call(ToolId::Grep, json!({ "pattern": pattern, "scope": scope }))? {
            ToolOutput::Matches(m) => Ok(m),
            o => Err(unexpected(o)),
        }
    }

    fn history(
        &mut self,
        path: Option<&str>,
        limit: usize,
    ) -> Result<Probed<Vec<CommitEntry>>, ProbeError> {
        match self.call(ToolId::GitInspect, json!({ "path": path, "limit": limit }))? {
            ToolOutput::History(h) => Ok(h),
            o => Err(unexpected(o)),
        }
    }

    fn manifests(&mut self) -> Result<Probed<Vec<DependencyRecord>>, ProbeError> {
        match self.call(ToolId::ReadManifest, json!({}))? {
            ToolOutput::Manifests(m) => Ok(m),
            o => Err(unexpected(o)),
        }
    }

    fn read_file(&mut self, path: &str) -> Result<String, ProbeError> {
        match self.call(ToolId::ReadFile, json!({ "path": path }))? {
            ToolOutput::Text(t) => Ok(t),
            o => Err(unexpected(o)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;

    fn setup() -> (tempfile::TempDir, Repo, PermissionMatrix, ManualClock) {
        let d = tempfile::tempdir().unwrap();
        std::fs::write(d.path().join("app.py"), "print('hi')\n").unwrap();
        let repo = Repo::open(d.path());
        let m = PermissionMatrix::standard(&["true".into()], &[]);
        (d, repo, m, ManualClock::at_epoch())
    }

    fn ctx<'a>(repo: &'a Repo, m: &'a PermissionMatrix, c: &'a ManualClock) -> ToolContext<'a> {
        ToolContext {
            matrix: m,
            repo,
            clock: c,
            exec_timeout: Duration::from_secs(10),
            tail_bytes: 1024,
        }
    }

    #[test]
    fn denied_call_has_no_side_effects() {
        let (_d, repo, m, c) = setup();
        let before = repo.tree_hash();
        let req = ToolRequest::new(
            ToolId::WriteFile,
            json!({"path": "x.py", "content": "boom"}),
        );
        let d = dispatch_tool(&ctx(&repo, &m, &c), Principal::PmAgent, &req);
        assert_eq!(d.record.outcome, ToolOutcome::Denied);
        assert_eq!(before, repo.tree_hash());
    }

    #[test]
    fn read_file_digest() {
        let (_d, repo, m, c) = setup();
        let req = ToolRequest::new(ToolId::ReadFile, json!({"path": "app.py"}));
        let d = dispatch_tool(&ctx(&repo, &m, &c), Principal::PmAgent, &req);
        assert_eq!(d.record.outcome, ToolOutcome::Ok);
        assert_eq!(d.record.output_digest.len(), 64);
        assert_eq!(d.output.unwrap(), ToolOutput::Text("print('hi')\n".into()));
        let missing = ToolRequest::new(ToolId::ReadFile, json!({"path": "nope.py"}));
        let d = dispatch_tool(&ctx(&repo, &m, &c), Principal::PmAgent, &missing);
        assert_eq!(d.record.outcome, ToolOutcome::Error);
    }

    #[test]
    fn developer_patch_changes_tree() {
        let (_d, repo, m, c) = setup();
        repo.git(&["init", "-q"]).unwrap();
        let before = repo.tree_hash();
        let patch = "--- a/app.py\n+++ b/app.py\n@@ -1 +1 @@\n-print('hi')\n+print('bye')\n";
        let req = ToolRequest::new(ToolId::ApplyPatch, json!({ "patch": patch }));
        let d = dispatch_tool(&ctx(&repo, &m, &c), Principal::DeveloperAgent, &req);
        assert_eq!(d.record.outcome, ToolOutcome::Ok, "{:?}", d.record.message);
        assert_ne!(before, repo.tree_hash());
        assert_eq!(
            d.output.unwrap(),
            ToolOutput::Patched {
                files: vec!["app.py".into()]
            }
        );
    }

    #[test]
    fn writes_are_confined() {
        let (_d, repo, m, c) = setup();
        for path in ["../escape.py", "/tmp/abs.py", ".git/config"] {
            let req = ToolRequest::new(ToolId::WriteFile, json!({"path": path, "content": "x"}));
            let d = dispatch_tool(&ctx(&repo, &m, &c), Principal::DeveloperAgent, &req);
            assert_eq!(d.record.outcome, ToolOutcome::Error, "{path}");
        }
    }

    #[test]
    fn large_content_is_redacted() {
        let (_d, repo, m, c) = setup();
        let big = "x".repeat(REDACTION_THRESHOLD + 1);
        let req = ToolRequest::new(
            ToolId::WriteFile,
            json!({"path": "big.txt", "content": big}),
        );
        let d = dispatch_tool(&ctx(&repo, &m, &c), Principal::DeveloperAgent, &req);
        assert_eq!(
            d.record.arguments["content"]["bytes"],
            REDACTION_THRESHOLD + 1
        );
        let small = ToolRequest::new(ToolId::WriteFile, json!({"path": "s.txt", "content": "ok"}));
        let d = dispatch_tool(&ctx(&repo, &m, &c), Principal::DeveloperAgent, &small);
        assert_eq!(d.record.arguments["content"], "ok");
    }

    #[test]
    fn scoped_prober_records_every_call() {
        let (_d, repo, m, c) = setup();
        let mut records = Vec::new();
        let mut p = ScopedProber {
            ctx: ctx(&repo, &m, &c),
            principal: Principal::DiscoveryHook,
            records: &mut records,
        };
        assert_eq!(p.glob("*.py").unwrap(), vec!["app.py"]);
        assert_eq!(p.grep("print", None).unwrap().len(), 1);
        assert_eq!(records.len(), 2);
        assert!(records
            .iter()
            .all(|r| r.principal == Principal::DiscoveryHook));
    }
}
