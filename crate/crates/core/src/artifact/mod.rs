//! SPEC.md, PLAN.md and TASKS.md: typed documents, a heading-based
//! markdown grammar, deterministic serialisation and structural checks.

mod markdown;
pub mod plan;
pub mod spec;
pub mod tasks;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use markdown::Section;
pub use plan::{ChangeKind, Ecosystem, PlanDoc, PlannedDependency, Touchpoint};
pub use spec::SpecDoc;
pub use tasks::{Task, TaskList, TaskStatus};

use crate::report::{Finding, FindingCategory, ValidationReport};
use crate::workflow::{phases_for, ConfigurationKind, PhaseId};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ArtifactError {
    #[error("missing mandatory heading `{0}`")]
    MissingHeading(&'static str),
    #[error("line {line}: heading `{heading}` is out of order")]
    OutOfOrder { heading: &'static str, line: usize },
    #[error("duplicate task id `{0}`")]
    DuplicateTaskId(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {reason}")]
    InvalidPath { line: usize, reason: String },
    #[error("refusing to serialize: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Spec,
    Plan,
    Tasks,
}

impl ArtifactKind {
    pub fn file_name(self) -> &'static str {
        match self {
            ArtifactKind::Spec => "SPEC.md",
            ArtifactKind::Plan => "PLAN.md",
            ArtifactKind::Tasks => "TASKS.md",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::Spec => "spec",
            ArtifactKind::Plan => "plan",
            ArtifactKind::Tasks => "tasks",
        }
    }

    /// The artifact a phase produces; implement produces a patch instead.
    pub fn for_phase(phase: PhaseId) -> Option<ArtifactKind> {
        match phase {
            PhaseId::Specify => Some(ArtifactKind::Spec),
            PhaseId::Plan => Some(ArtifactKind::Plan),
            PhaseId::Tasks => Some(ArtifactKind::Tasks),
            PhaseId::Implement => None,
        }
    }
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArtifactKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spec" => Ok(ArtifactKind::Spec),
            "plan" => Ok(ArtifactKind::Plan),
            "tasks" => Ok(ArtifactKind::Tasks),
            other => Err(format!("unknown artifact kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "doc", rename_all = "snake_case")]
pub enum Artifact {
    Spec(SpecDoc),
    Plan(PlanDoc),
    Tasks(TaskList),
}

impl Artifact {
    pub fn parse(kind: ArtifactKind, text: &str) -> Result<Artifact, ArtifactError> {
        Ok(match kind {
            ArtifactKind::Spec => Artifact::Spec(SpecDoc::parse(text)?),
            ArtifactKind::Plan => Artifact::Plan(PlanDoc::parse(text)?),
            ArtifactKind::Tasks => Artifact::Tasks(TaskList::parse(text)?),
        })
    }

    pub fn kind(&self) -> ArtifactKind {
        match self {
            Artifact::Spec(_) => ArtifactKind::Spec,
            Artifact::Plan(_) => ArtifactKind::Plan,
            Artifact::Tasks(_) => ArtifactKind::Tasks,
        }
    }

    pub fn serialize(&self) -> Result<String, ArtifactError> {
        match self {
            Artifact::Spec(d) => d.serialize(),
            Artifact::Plan(d) => d.serialize(),
            Artifact::Tasks(d) => d.serialize(),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        match self {
            Artifact::Spec(d) => d.violations(),
            Artifact::Plan(d) => d.violations(),
            Artifact::Tasks(d) => d.violations(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ArtifactSet {
    pub spec: Option<SpecDoc>,
    pub plan: Option<PlanDoc>,
    pub tasks: Option<TaskList>,
}

impl ArtifactSet {
    pub fn insert(&mut self, artifact: Artifact) {
        match artifact {
            Artifact::Spec(d) => self.spec = Some(d),
            Artifact::Plan(d) => self.plan = Some(d),
            Artifact::Tasks(d) => self.tasks = Some(d),
        }
    }

    pub fn get(&self, kind: ArtifactKind) -> Option<Artifact> {
        match kind {
            ArtifactKind::Spec => self.spec.clone().map(Artifact::Spec),
            ArtifactKind::Plan => self.plan.clone().map(Artifact::Plan),
            ArtifactKind::Tasks => self.tasks.clone().map(Artifact::Tasks),
        }
    }

    pub fn has(&self, kind: ArtifactKind) -> bool {
        match kind {
            ArtifactKind::Spec => self.spec.is_some(),
            ArtifactKind::Plan => self.plan.is_some(),
            ArtifactKind::Tasks => self.tasks.is_some(),
        }
    }
}

/// Structure-only check of an artifact set against the phases a run has
/// completed. Repository-referential checks live in the hooks.
pub fn validate_structure(
    set: &ArtifactSet,
    config: ConfigurationKind,
    completed_phases: &[PhaseId],
) -> ValidationReport {
    let report_phase = completed_phases
        .iter()
        .max()
        .copied()
        .unwrap_or(phases_for(config)[0]);
    let mut findings = Vec::new();
    let configured = phases_for(config);

    for kind in [ArtifactKind::Spec, ArtifactKind::Plan, ArtifactKind::Tasks] {
        let phase = match kind {
            ArtifactKind::Spec => PhaseId::Specify,
            ArtifactKind::Plan => PhaseId::Plan,
            ArtifactKind::Tasks => PhaseId::Tasks,
        };
        let required = configured.contains(&phase) && completed_phases.contains(&phase);
        match (required, set.get(kind)) {
            (true, None) => findings.push(
                Finding::error(
                    FindingCategory::Structural,
                    format!("{} missing after completed {phase} phase", kind.file_name()),
                )
                .at(kind.file_name(), None),
            ),
            (false, Some(_)) => findings.push(
                Finding::error(
                    FindingCategory::Structural,
                    format!(
                        "{} present but {phase} has not run under {config}",
                        kind.file_name()
                    ),
                )
                .at(kind.file_name(), None),
            ),
            (_, Some(doc)) => {
                for v in doc.violations() {
                    findings.push(
                        Finding::error(FindingCategory::Structural, v).at(kind.file_name(), None),
                    );
                }
            }
            (false, None) => {}
        }
    }
    ValidationReport::new(report_phase, findings)
}
