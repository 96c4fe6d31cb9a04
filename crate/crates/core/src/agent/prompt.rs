use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::artifact::{ArtifactKind, ArtifactSet};
use crate::probe::EvidenceBundle;
use crate::report::ValidationReport;
use crate::workflow::{ConfigurationKind, PhaseId};

const BUILTIN: [(&str, &str); 13] = [
    ("specify", include_str!("../../prompts/specify.md")),
    ("plan", include_str!("../../prompts/plan.md")),
    ("tasks", include_str!("../../prompts/tasks.md")),
    ("implement", include_str!("../../prompts/implement.md")),
    ("judge", include_str!("../../prompts/judge.md")),
    (
        "hooks/specify_discovery",
        include_str!("../../prompts/hooks/specify_discovery.md"),
    ),
    (
        "hooks/plan_discovery",
        include_str!("../../prompts/hooks/plan_discovery.md"),
    ),
    (
        "hooks/tasks_discovery",
        include_str!("../../prompts/hooks/tasks_discovery.md"),
    ),
    (
        "hooks/implement_discovery",
        include_str!("../../prompts/hooks/implement_discovery.md"),
    ),
    (
        "hooks/specify_validation",
        include_str!("../../prompts/hooks/specify_validation.md"),
    ),
    (
        "hooks/plan_validation",
        include_str!("../../prompts/hooks/plan_validation.md"),
    ),
    (
        "hooks/tasks_validation",
        include_str!("../../prompts/hooks/tasks_validation.md"),
    ),
    (
        "hooks/implement_validation",
        include_str!("../../prompts/hooks/implement_validation.md"),
    ),
];

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("no prompt template `{0}`")]
    Missing(String),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Templates from `dir` when present, falling back to the built-in set.
#[derive(Debug, Clone, Default)]
pub struct PromptLibrary {
    dir: Option<PathBuf>,
}

impl PromptLibrary {
    pub fn builtin() -> Self {
        Self { dir: None }
    }

    pub fn from_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// `name` is relative and extensionless, e.g. `plan` or `hooks/plan_discovery`.
    pub fn template(&self, name: &str) -> Result<String, PromptError> {
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{name}.md"));
            match std::fs::read_to_string(&path) {
                Ok(t) => return Ok(t),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(source) => return Err(PromptError::Io { path, source }),
            }
        }
        BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| t.to_string())
            .ok_or_else(|| PromptError::Missing(name.to_string()))
    }
}

fn placeholder() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{\s*([a-z_]+(?::[a-z_]+)?)\s*\}\}").unwrap())
}

/// Substitutes `{{name}}` placeholders. Unknown names are left untouched.
pub fn render(template: &str, vars: &BTreeMap<String, String>) -> String {
    placeholder()
        .replace_all(template, |c: &regex::Captures<'_>| {
            vars.get(&c[1]).cloned().unwrap_or_else(|| c[0].to_string())
        })
        .into_owned()
}

pub struct PromptContext<'a> {
    pub task: &'a str,
    pub phase: PhaseId,
    pub config: ConfigurationKind,
    pub artifacts: &'a ArtifactSet,
    pub evidence: Option<&'a EvidenceBundle>,
    pub findings: Option<&'a ValidationReport>,
}

impl PromptContext<'_> {
    pub fn vars(&self) -> BTreeMap<String, String> {
        let mut v = BTreeMap::new();
        v.insert("task".into(), self.task.trim().to_string());
        v.insert("phase".into(), self.phase.as_str().to_string());
        v.insert("config".into(), self.config.as_str().to_string());
        for kind in [ArtifactKind::Spec, ArtifactKind::Plan, ArtifactKind::Tasks] {
            let text = self
                .artifacts
                .get(kind)
                .and_then(|a| a.serialize().ok())
                .unwrap_or_default();
            v.insert(format!("artifact:{}", kind.as_str()), text);
        }
        v.insert(
            "evidence".into(),
            self.evidence
                .map(EvidenceBundle::render)
                .unwrap_or_default(),
        );
        v.insert(
            "findings".into(),
            self.findings
                .map(ValidationReport::render)
                .unwrap_or_default(),
        );
        v
    }
}

/// Phase prompt, then the discovery section when evidence exists, then the
/// validation section on repair turns. Evidence is injected verbatim.
pub fn compose_prompt(lib: &PromptLibrary, ctx: &PromptContext<'_>) -> Result<String, PromptError> {
    let vars = ctx.vars();
    let phase = ctx.phase.as_str();
    let mut out = render(&lib.template(phase)?, &vars);
    if ctx.evidence.is_some() {
        out.push_str("\n\n");
        out.push_str(&render(
            &lib.template(&format!("hooks/{phase}_discovery"))?,
            &vars,
        ));
    }
    if ctx.findings.is_some() {
        out.push_str("\n\n");
        out.push_str(&render(
            &lib.template(&format!("hooks/{phase}_validation"))?,
            &vars,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_substitutes_known_and_keeps_unknown() {
        let mut vars = BTreeMap::new();
        vars.insert("task".to_string(), "add logging".to_string());
        vars.insert("artifact:plan".to_string(), "# Plan".to_string());
        assert_eq!(
            render("T={{task}} P={{ artifact:plan }} X={{nope}}", &vars),
            "T=add logging P=# Plan X={{nope}}"
        );
    }

    #[test]
    fn builtins_cover_every_phase() {
        let lib = PromptLibrary::builtin();
        for p in PhaseId::ALL {
            for name in [
                p.as_str().to_string(),
                format!("hooks/{}_discovery", p.as_str()),
                format!("hooks/{}_validation", p.as_str()),
            ] {
                assert!(lib.template(&name).is_ok(), "{name}");
            }
        }
        assert!(lib.template("judge").unwrap().contains("{{diff}}"));
    }

    #[test]
    fn directory_overrides_builtin() {
        let d = tempfile::tempdir().unwrap();
        std::fs::write(d.path().join("plan.md"), "custom {{phase}}").unwrap();
        let lib = PromptLibrary::from_dir(d.path());
        let artifacts = ArtifactSet::default();
        let ctx = PromptContext {
            task: "t",
            phase: PhaseId::Plan,
            config: ConfigurationKind::Full,
            artifacts: &artifacts,
            evidence: None,
            findings: None,
        };
        assert_eq!(compose_prompt(&lib, &ctx).unwrap(), "custom plan");
        assert!(lib.template("tasks").unwrap().starts_with("You are"));
    }
}
