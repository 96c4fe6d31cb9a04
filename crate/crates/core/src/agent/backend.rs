use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::permission::ToolId;
use super::tools::ToolRequest;
use crate::clock::ManualClock;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendMessage {
    ToolRequest(ToolRequest),
    Final(String),
}

#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "message")]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("authentication failure: {0}")]
    Auth(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            BackendError::Transport(_) | BackendError::RateLimited(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranscriptRole {
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub role: TranscriptRole,
    pub content: String,
}

/// One backend round trip. `key` is the phase name, or `judge`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackendRequest {
    pub key: String,
    pub turn: usize,
    pub prompt: String,
    pub transcript: Vec<TranscriptEntry>,
}

pub trait AgentBackend: Send {
    /// Stable identifier; the judge backend must differ from the generation one.
    fn id(&self) -> &str;

    fn respond(&mut self, request: &BackendRequest) -> Result<BackendMessage, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedFailure {
    Transport,
    RateLimited,
    Auth,
    Protocol,
}

/// One canned backend message. Exactly one of `tool`, `final` or `error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptStep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<ToolId>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub arguments: Value,
    #[serde(default, rename = "final", skip_serializing_if = "Option::is_none")]
    pub final_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ScriptedFailure>,
    /// Simulated time the step takes, applied to the attached clock.
    #[serde(default)]
    pub elapsed_secs: f64,
}

impl ScriptStep {
    pub fn tool(tool: ToolId, arguments: Value) -> Self {
        Self {
            tool: Some(tool),
            arguments,
            final_text: None,
            error: None,
            elapsed_secs: 0.0,
        }
    }

    pub fn final_text(text: impl Into<String>) -> Self {
        Self {
            tool: None,
            arguments: Value::Null,
            final_text: Some(text.into()),
            error: None,
            elapsed_secs: 0.0,
        }
    }

    pub fn error(kind: ScriptedFailure) -> Self {
        Self {
            tool: None,
            arguments: Value::Null,
            final_text: None,
            error: Some(kind),
            elapsed_secs: 0.0,
        }
    }

    pub fn taking(mut self, secs: f64) -> Self {
        self.elapsed_secs = secs;
        self
    }

    fn check(&self) -> Result<(), String> {
        let set = [
            self.tool.is_some(),
            self.final_text.is_some(),
            self.error.is_some(),
        ]
        .iter()
        .filter(|b| **b)
        .count();
        if set != 1 {
            return Err("each step needs exactly one of tool, final, error".into());
        }
        if !(self.elapsed_secs >= 0.0 && self.elapsed_secs.is_finite()) {
            return Err("elapsed_secs must be a non-negative number".into());
        }
        Ok(())
    }
}

/// Canned messages keyed by phase name (or `judge`), consumed in order.
pub type Script = BTreeMap<String, Vec<ScriptStep>>;

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("script yaml: {0}")]
    Yaml(#[from] serde_yaml::Error),
    #[error("script step {key}[{index}]: {message}")]
    Step {
        key: String,
        index: usize,
        message: String,
    },
}

pub fn parse_script(yaml: &str) -> Result<Script, ScriptError> {
    let script: Script = serde_yaml::from_str(yaml)?;
    for (key, steps) in &script {
        for (index, step) in steps.iter().enumerate() {
            step.check().map_err(|message| ScriptError::Step {
                key: key.clone(),
                index,
                message,
            })?;
        }
    }
    Ok(script)
}

/// Replays a [`Script`]. Each key keeps its own cursor, so repair turns
/// continue where the previous invocation of the same phase stopped.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    id: String,
    script: Script,
    cursors: BTreeMap<String, usize>,
    clock: Option<ManualClock>,
}

impl ScriptedBackend {
    pub fn new(id: impl Into<String>, script: Script) -> Self {
        Self {
            id: id.into(),
            script,
            cursors: BTreeMap::new(),
            clock: None,
        }
    }

    pub fn with_clock(mut self, clock: ManualClock) -> Self {
        self.clock = Some(clock);
        self
    }

    pub fn remaining(&self, key: &str) -> usize {
        let total = self.script.get(key).map_or(0, Vec::len);
        total.saturating_sub(self.cursors.get(key).copied().unwrap_or(0))
    }
}

impl AgentBackend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn respond(&mut self, request: &BackendRequest) -> Result<BackendMessage, BackendError> {
        let cursor = self.cursors.entry(request.key.clone()).or_insert(0);
        let step = self
            .script
            .get(&request.key)
            .and_then(|s| s.get(*cursor))
            .ok_or_else(|| {
                BackendError::Protocol(format!("script exhausted for `{}`", request.key))
            })?;
        *cursor += 1;
        if let Some(clock) = &self.clock {
            clock.advance(Duration::from_secs_f64(step.elapsed_secs));
        }
        if let Some(kind) = step.error {
            let msg = format!("scripted failure at {}[{}]", request.key, *cursor - 1);
            return Err(match kind {
                ScriptedFailure::Transport => BackendError::Transport(msg),
                ScriptedFailure::RateLimited => BackendError::RateLimited(msg),
                ScriptedFailure::Auth => BackendError::Auth(msg),
                ScriptedFailure::Protocol => BackendError::Protocol(msg),
            });
        }
        if let Some(tool) = step.tool {
            return Ok(BackendMessage::ToolRequest(ToolRequest::new(
                tool,
                step.arguments.clone(),
            )));
        }
        Ok(BackendMessage::Final(
            step.final_text.clone().unwrap_or_default(),
        ))
    }
}

pub const ENV_API_BASE: &str = "GROUNDWORK_API_BASE";
pub const ENV_API_KEY: &str = "GROUNDWORK_API_KEY";
pub const ENV_MODEL: &str = "GROUNDWORK_MODEL";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteSettings {
    pub base_url: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    300
}

impl RemoteSettings {
    /// Reads the three environment variables; `None` when base or model is unset.
    pub fn from_env() -> Option<Self> {
        let base_url = std::env::var(ENV_API_BASE).ok()?;
        let model = std::env::var(ENV_MODEL).ok()?;
        Some(Self {
            base_url,
            api_key: std::env::var(ENV_API_KEY).ok(),
            model,
            timeout_secs: default_timeout(),
        })
    }
}

/// Chat-completion style HTTP backend. Tool requests are encoded by the
/// model as a fenced ```tool block holding `{"tool": .., "arguments": ..}`.
pub struct RemoteBackend {
    id: String,
    settings: RemoteSettings,
    client: reqwest::blocking::Client,
}

impl RemoteBackend {
    pub fn new(id: impl Into<String>, settings: RemoteSettings) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(settings.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self {
            id: id.into(),
            settings,
            client,
        })
    }

    fn messages(request: &BackendRequest) -> Vec<Value> {
        let mut out = vec![json!({ "role": "user", "content": request.prompt })];
        for entry in &request.transcript {
            let role = match entry.role {
                TranscriptRole::Assistant => "assistant",
                TranscriptRole::Tool => "user",
            };
            out.push(json!({ "role": role, "content": entry.content }));
        }
        out
    }
}

/// Splits a model reply into a tool request or a final answer.
pub fn parse_reply(content: &str) -> Result<BackendMessage, BackendError> {
    let mut lines = content.lines();
    while let Some(line) = lines.next() {
        if line.trim() == "```tool" {
            let body: Vec<&str> = lines.by_ref().take_while(|l| l.trim() != "```").collect();
            let req: ToolRequest = serde_json::from_str(&body.join("\n"))
                .map_err(|e| BackendError::Protocol(format!("bad tool block: {e}")))?;
            return Ok(BackendMessage::ToolRequest(req));
        }
    }
    Ok(BackendMessage::Final(content.to_string()))
}

impl AgentBackend for RemoteBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn respond(&mut self, request: &BackendRequest) -> Result<BackendMessage, BackendError> {
        let url = format!(
            "{}/v1/chat/completions",
            self.settings.base_url.trim_end_matches('/')
        );
        let body = json!({
            "model": self.settings.model,
            "messages": Self::messages(request),
        });
        let mut http = self.client.post(url).json(&body);
        if let Some(key) = &self.settings.api_key {
            http = http.bearer_auth(key);
        }
        let resp = http
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        match status.as_u16() {
            200..=299 => {}
            429 => return Err(BackendError::RateLimited(text)),
            401 | 403 => return Err(BackendError::Auth(format!("HTTP {status}"))),
            500..=599 | 408 => {
                return Err(BackendError::Transport(format!("HTTP {status}: {text}")))
            }
            _ => return Err(BackendError::Protocol(format!("HTTP {status}: {text}"))),
        }
        let v: Value =
            serde_json::from_str(&text).map_err(|e| BackendError::Protocol(e.to_string()))?;
        let content = v
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Protocol("response has no message content".into()))?;
        parse_reply(content)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(key: &str) -> BackendRequest {
        BackendRequest {
            key: key.into(),
            turn: 0,
            prompt: String::new(),
            transcript: Vec::new(),
        }
    }

    const SCRIPT: &str = r##"
specify:
  - tool: read_file
    arguments: {path: app.py}
  - error: transport
    elapsed_secs: 30
  - final: "# Spec"
"##;

    #[test]
    fn replays_in_order_and_advances_clock() {
        let clock = ManualClock::at_epoch();
        let t0 = crate::clock::Clock::now(&clock);
        let mut b =
            ScriptedBackend::new("s", parse_script(SCRIPT).unwrap()).with_clock(clock.clone());
        assert!(
            matches!(b.respond(&req("specify")), Ok(BackendMessage::ToolRequest(r)) if r.tool == ToolId::ReadFile)
        );
        assert!(matches!(
            b.respond(&req("specify")),
            Err(BackendError::Transport(_))
        ));
        assert_eq!((crate::clock::Clock::now(&clock) - t0).num_seconds(), 30);
        assert_eq!(
            b.respond(&req("specify")).unwrap(),
            BackendMessage::Final("# Spec".into())
        );
        assert!(matches!(
            b.respond(&req("specify")),
            Err(BackendError::Protocol(_))
        ));
        assert!(matches!(
            b.respond(&req("plan")),
            Err(BackendError::Protocol(_))
        ));
    }

    #[test]
    fn rejects_ambiguous_steps() {
        let bad = "plan:\n  - final: x\n    error: auth\n";
        assert!(matches!(
            parse_script(bad),
            Err(ScriptError::Step { index: 0, .. })
        ));
        assert!(parse_script("plan:\n  - bogus: 1\n").is_err());
    }

    #[test]
    fn reply_parsing() {
        let t = "I will look.\n```tool\n{\"tool\": \"glob\", \"arguments\": {\"pattern\": \"*.py\"}}\n```\n";
        assert_eq!(
            parse_reply(t).unwrap(),
            BackendMessage::ToolRequest(ToolRequest::new(ToolId::Glob, json!({"pattern": "*.py"})))
        );
        assert_eq!(
            parse_reply("# Plan").unwrap(),
            BackendMessage::Final("# Plan".into())
        );
        assert!(parse_reply("```tool\n{nope}\n```").is_err());
    }

    #[test]
    fn remote_maps_status_codes() {
        use std::io::{Read, Write};
        use std::net::TcpListener;
        for (code, check) in [
            (
                429u16,
                (|e: &BackendError| matches!(e, BackendError::RateLimited(_)))
                    as fn(&BackendError) -> bool,
            ),
            (401, |e| matches!(e, BackendError::Auth(_))),
            (503, |e| matches!(e, BackendError::Transport(_))),
        ] {
            let listener = TcpListener::bind("127.0.0.1:0").unwrap();
            let addr = listener.local_addr().unwrap();
            let server = std::thread::spawn(move || {
                let (mut s, _) = listener.accept().unwrap();
                let mut buf = [0u8; 4096];
                let _ = s.read(&mut buf);
                let resp = format!(
                    "HTTP/1.1 {code} X\r\ncontent-length: 2\r\nconnection: close\r\n\r\n{{}}"
                );
                s.write_all(resp.as_bytes()).unwrap();
            });
            let mut b = RemoteBackend::new(
                "r",
                RemoteSettings {
                    base_url: format!("http://{addr}"),
                    api_key: Some("k".into()),
                    model: "m".into(),
                    timeout_secs: 5,
                },
            )
            .unwrap();
            let err = b.respond(&req("plan")).unwrap_err();
            assert!(check(&err), "{code}: {err:?}");
            server.join().unwrap();
        }
    }
}
