//! Agent principals, tool dispatch and backend invocation.

pub mod backend;
pub mod backoff;
pub mod invoke;
pub mod permission;
pub mod prompt;
pub mod tools;

pub use backend::{
    parse_script, AgentBackend, BackendError, BackendMessage, BackendRequest, RemoteBackend,
    RemoteSettings, Script, ScriptStep, ScriptedBackend, ScriptedFailure,
};
pub use backoff::{BackoffError, BackoffPolicy};
pub use invoke::{
    invoke_agent, AgentTurn, InvokeFailure, InvokeFailureKind, InvokeOptions, RetryRecord,
};
pub use permission::{check_permission, Permission, PermissionMatrix, Principal, ToolId};
pub use prompt::{compose_prompt, render, PromptContext, PromptLibrary};
pub use tools::{
    dispatch_tool, Dispatched, ScopedProber, ToolCallRecord, ToolContext, ToolFailure, ToolOutcome,
    ToolOutput, ToolRequest,
};
