use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Principal {
    PmAgent,
    DeveloperAgent,
    DiscoveryHook,
    ValidationHook,
}

impl Principal {
    pub const ALL: [Principal; 4] = [
        Principal::PmAgent,
        Principal::DeveloperAgent,
        Principal::DiscoveryHook,
        Principal::ValidationHook,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Principal::PmAgent => "pm_agent",
            Principal::DeveloperAgent => "developer_agent",
            Principal::DiscoveryHook => "discovery_hook",
            Principal::ValidationHook => "validation_hook",
        }
    }

    pub fn is_agent(self) -> bool {
        matches!(self, Principal::PmAgent | Principal::DeveloperAgent)
    }
}

impl fmt::Display for Principal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolId {
    ReadFile,
    Glob,
    Grep,
    GitInspect,
    ReadManifest,
    WriteFile,
    ApplyPatch,
    ExecCommand,
}

impl ToolId {
    pub const ALL: [ToolId; 8] = [
        ToolId::ReadFile,
        ToolId::Glob,
        ToolId::Grep,
        ToolId::GitInspect,
        ToolId::ReadManifest,
        ToolId::WriteFile,
        ToolId::ApplyPatch,
        ToolId::ExecCommand,
    ];

    pub fn is_write(self) -> bool {
        matches!(self, ToolId::WriteFile | ToolId::ApplyPatch)
    }

    /// Tools with effects beyond reading the working copy.
    pub fn is_effectful(self) -> bool {
        self.is_write() || self == ToolId::ExecCommand
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "decision", content = "reason")]
pub enum Permission {
    Allow,
    Deny(String),
}

impl Permission {
    pub fn is_allowed(&self) -> bool {
        matches!(self, Permission::Allow)
    }
}

/// Immutable after startup; shared freely between runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermissionMatrix {
    rules: BTreeMap<Principal, BTreeMap<ToolId, bool>>,
    exec_allowlist: BTreeMap<Principal, Vec<String>>,
}

const SHELL_CONTROL: [&str; 9] = [";", "&", "|", "`", "$(", ">", "<", "\n", "\r"];

fn matches_prefix(command: &str, prefix: &str) -> bool {
    let command = command.trim();
    let prefix = prefix.trim();
    if prefix.is_empty() {
        return false;
    }
    if command == prefix {
        return true;
    }
    // an allowlisted prefix never licenses chained or redirected commands
    command.starts_with(prefix)
        && command[prefix.len()..].starts_with(' ')
        && !SHELL_CONTROL.iter().any(|c| command.contains(c))
}

impl PermissionMatrix {
    /// The built-in matrix: read-only PM agent and discovery hooks,
    /// exec-for-checks validation hooks, full developer access with exec
    /// restricted to `developer_exec`.
    pub fn standard(check_commands: &[String], developer_exec: &[String]) -> Self {
        let mut rules = BTreeMap::new();
        for p in Principal::ALL {
            let row = ToolId::ALL
                .into_iter()
                .map(|t| {
                    let allowed = match p {
                        Principal::PmAgent | Principal::DiscoveryHook => !t.is_effectful(),
                        Principal::ValidationHook => !t.is_write(),
                        Principal::DeveloperAgent => true,
                    };
                    (t, allowed)
                })
                .collect();
            rules.insert(p, row);
        }
        let mut exec_allowlist = BTreeMap::new();
        exec_allowlist.insert(Principal::ValidationHook, check_commands.to_vec());
        let mut dev: Vec<String> = check_commands.to_vec();
        dev.extend(developer_exec.iter().cloned());
        exec_allowlist.insert(Principal::DeveloperAgent, dev);
        Self {
            rules,
            exec_allowlist,
        }
    }

    pub fn allows_tool(&self, principal: Principal, tool: ToolId) -> bool {
        self.rules
            .get(&principal)
            .and_then(|r| r.get(&tool))
            .copied()
            .unwrap_or(false)
    }

    pub fn exec_allowlist(&self, principal: Principal) -> &[String] {
        self.exec_allowlist
            .get(&principal)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Pure lookup plus exec-allowlist prefix match.
    pub fn check(
        &self,
        principal: Principal,
        tool: ToolId,
        arguments: &serde_json::Value,
    ) -> Permission {
        if !self.allows_tool(principal, tool) {
            return Permission::Deny(format!("{principal} may not use {tool:?}"));
        }
        if tool == ToolId::ExecCommand {
            let Some(command) = arguments.get("command").and_then(|c| c.as_str()) else {
                return Permission::Deny("exec_command without a command string".into());
            };
            if !self
                .exec_allowlist(principal)
                .iter()
                .any(|p| matches_prefix(command, p))
            {
                return Permission::Deny(format!(
                    "command `{command}` is not on the {principal} exec allowlist"
                ));
            }
        }
        Permission::Allow
    }
}

pub fn check_permission(
    matrix: &PermissionMatrix,
    principal: Principal,
    tool: ToolId,
    arguments: &serde_json::Value,
) -> Permission {
    matrix.check(principal, tool, arguments)
}
