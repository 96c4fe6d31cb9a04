//! Validation findings shared by the artifact model and the grounding hooks.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::workflow::PhaseId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
    Info,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingCategory {
    PathMissing,
    DependencyMissing,
    TaskInfeasible,
    OrderingViolation,
    CheckFailed,
    Structural,
}

impl Severity {
    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
            Severity::Info => "info",
        }
    }
}

impl FindingCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            FindingCategory::PathMissing => "path_missing",
            FindingCategory::DependencyMissing => "dependency_missing",
            FindingCategory::TaskInfeasible => "task_infeasible",
            FindingCategory::OrderingViolation => "ordering_violation",
            FindingCategory::CheckFailed => "check_failed",
            FindingCategory::Structural => "structural",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub category: FindingCategory,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<Location>,
}

impl Finding {
    pub fn new(severity: Severity, category: FindingCategory, message: impl Into<String>) -> Self {
        Self {
            severity,
            category,
            message: message.into(),
            location: None,
        }
    }

    pub fn error(category: FindingCategory, message: impl Into<String>) -> Self {
        Self::new(Severity::Error, category, message)
    }

    pub fn warning(category: FindingCategory, message: impl Into<String>) -> Self {
        Self::new(Severity::Warning, category, message)
    }

    pub fn info(category: FindingCategory, message: impl Into<String>) -> Self {
        Self::new(Severity::Info, category, message)
    }

    pub fn at(mut self, path: impl Into<String>, line: Option<usize>) -> Self {
        self.location = Some(Location {
            path: path.into(),
            line,
        });
        self
    }
}

/// `error[path_missing] message (at src/x.py:3)`
impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}[{}] {}",
            self.severity.as_str(),
            self.category.as_str(),
            self.message
        )?;
        match &self.location {
            Some(Location {
                path,
                line: Some(l),
            }) => write!(f, " (at {path}:{l})"),
            Some(Location { path, line: None }) => write!(f, " (at {path})"),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

/// Post-phase findings. The verdict is derived, never stored independently
/// of the findings, so `fail` holds exactly when an error finding exists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub phase: PhaseId,
    pub findings: Vec<Finding>,
    pub verdict: Verdict,
}

impl ValidationReport {
    pub fn new(phase: PhaseId, findings: Vec<Finding>) -> Self {
        let verdict = if findings.iter().any(|f| f.severity == Severity::Error) {
            Verdict::Fail
        } else {
            Verdict::Pass
        };
        Self {
            phase,
            findings,
            verdict,
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(|f| f.severity == Severity::Error)
    }

    pub fn merge(self, other: ValidationReport) -> ValidationReport {
        let mut findings = self.findings;
        findings.extend(other.findings);
        ValidationReport::new(self.phase, findings)
    }

    /// Plain-text rendering used in repair prompts and CLI output.
    pub fn render(&self) -> String {
        let verdict = match self.verdict {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
        };
        let mut out = format!("{} validation: {verdict}\n", self.phase);
        for f in &self.findings {
            out.push_str(&format!("- {f}\n"));
        }
        out
    }
}
