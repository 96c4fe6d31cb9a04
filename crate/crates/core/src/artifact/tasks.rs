use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::markdown::{self, Section};
use super::ArtifactError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub description: String,
    #[serde(default)]
    pub depends_on: Vec<String>,
    pub status: TaskStatus,
}

/// TASKS.md: an ordered, executable checklist.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TaskList {
    pub tasks: Vec<Task>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra: Vec<Section>,
}

fn checklist_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*[-*]\s+\[( |x|X)\]\s+([A-Za-z0-9][A-Za-z0-9_.-]*)\s*:\s*(.*)$").unwrap()
    })
}

fn depends_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(.*?)\s*\(depends:\s*([^()]*)\)\s*$").unwrap())
}

pub fn is_task_id(s: &str) -> bool {
    !s.is_empty()
        && s.chars().next().is_some_and(|c| c.is_ascii_alphanumeric())
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

fn parse_line(line: &str) -> Option<Task> {
    let caps = checklist_re().captures(line)?;
    let status = if &caps[1] == " " {
        TaskStatus::Pending
    } else {
        TaskStatus::Done
    };
    let id = caps[2].to_string();
    let rest = caps[3].trim();
    let (description, depends_on) = match depends_re().captures(rest) {
        Some(d) => (
            d[1].trim().to_string(),
            d[2].split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
        ),
        None => (rest.to_string(), Vec::new()),
    };
    Some(Task {
        id,
        description,
        depends_on,
        status,
    })
}

impl TaskList {
    pub fn parse(text: &str) -> Result<Self, ArtifactError> {
        let outline = markdown::outline(text, "# Tasks")?;
        markdown::title_suffix(&outline.title, "tasks")
            .ok_or(ArtifactError::MissingHeading("# Tasks"))?;

        let mut list = TaskList::default();
        let mut ids = HashSet::new();
        let mut push = |task: Task, list: &mut TaskList| -> Result<(), ArtifactError> {
            if !ids.insert(task.id.clone()) {
                return Err(ArtifactError::DuplicateTaskId(task.id));
            }
            list.tasks.push(task);
            Ok(())
        };
        for (_, line) in &outline.preamble {
            if let Some(t) = parse_line(line) {
                push(t, &mut list)?;
            }
        }
        for raw in &outline.sections {
            let mut any = false;
            for (_, line) in &raw.lines {
                if let Some(t) = parse_line(line) {
                    push(t, &mut list)?;
                    any = true;
                }
            }
            // grouping headings carry tasks; everything else is free prose
            if !any {
                list.extra.push(markdown::extra_section(raw));
            }
        }
        Ok(list)
    }

    pub fn get(&self, id: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut ids = HashSet::new();
        for t in &self.tasks {
            if !is_task_id(&t.id) {
                v.push(format!("invalid task id {:?}", t.id));
            }
            if !ids.insert(t.id.as_str()) {
                v.push(format!("duplicate task id `{}`", t.id));
            }
            if !markdown::is_clean_line(&t.description) || depends_re().is_match(&t.description) {
                v.push(format!(
                    "task `{}` has an unrepresentable description",
                    t.id
                ));
            }
        }
        v.extend(markdown::extra_violations(&self.extra, &[]));
        for s in &self.extra {
            if s.body.lines().any(|l| parse_line(l).is_some()) {
                v.push(format!("section `{}` contains checklist lines", s.heading));
            }
        }
        for t in &self.tasks {
            for d in &t.depends_on {
                if !ids.contains(d.as_str()) {
                    v.push(format!("task `{}` depends on unknown task `{d}`", t.id));
                }
            }
        }
        v
    }

    pub fn serialize(&self) -> Result<String, ArtifactError> {
        let v = self.violations();
        if !v.is_empty() {
            return Err(ArtifactError::Invariant(v.join("; ")));
        }
        let mut out = "# Tasks\n\n".to_string();
        for t in &self.tasks {
            let mark = match t.status {
                TaskStatus::Pending => ' ',
                TaskStatus::Done => 'x',
            };
            out.push_str(&format!("- [{mark}] {}: {}", t.id, t.description));
            if !t.depends_on.is_empty() {
                out.push_str(&format!(" (depends: {})", t.depends_on.join(", ")));
            }
            out.push('\n');
        }
        markdown::write_extras(&mut out, &self.extra);
        Ok(out)
    }
}
