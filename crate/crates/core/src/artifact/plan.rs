use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::markdown::{self, Section};
use super::ArtifactError;
use crate::paths::normalize_repo_path;

const KNOWN: [&str; 3] = ["Overview", "Touchpoints", "Dependencies"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    Modify,
    Create,
    Delete,
}

impl ChangeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ChangeKind::Modify => "modify",
            ChangeKind::Create => "create",
            ChangeKind::Delete => "delete",
        }
    }
}

impl FromStr for ChangeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "modify" => Ok(ChangeKind::Modify),
            "create" => Ok(ChangeKind::Create),
            "delete" => Ok(ChangeKind::Delete),
            other => Err(format!("unknown change kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ecosystem {
    Python,
    Javascript,
    Other,
}

impl Ecosystem {
    pub fn as_str(self) -> &'static str {
        match self {
            Ecosystem::Python => "python",
            Ecosystem::Javascript => "javascript",
            Ecosystem::Other => "other",
        }
    }

    /// Lenient mapping from the names agents tend to write.
    pub fn from_label(s: &str) -> Ecosystem {
        match s.trim().to_ascii_lowercase().as_str() {
            "python" | "py" | "pip" | "pypi" => Ecosystem::Python,
            "javascript" | "js" | "typescript" | "ts" | "node" | "npm" => Ecosystem::Javascript,
            _ => Ecosystem::Other,
        }
    }
}

impl fmt::Display for Ecosystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Touchpoint {
    pub path: String,
    pub change_kind: ChangeKind,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedDependency {
    pub name: String,
    pub ecosystem: Ecosystem,
}

/// PLAN.md: implementation plan with file-level touchpoints.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PlanDoc {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub title: String,
    pub overview: String,
    pub touchpoints: Vec<Touchpoint>,
    pub dependencies: Vec<PlannedDependency>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra: Vec<Section>,
}

fn split_row(line: &str) -> Vec<String> {
    let inner = line.trim();
    let inner = inner.strip_prefix('|').unwrap_or(inner);
    let inner = inner
        .strip_suffix('|')
        .filter(|s| !s.ends_with('\\'))
        .unwrap_or(inner);
    let mut cells = Vec::new();
    let mut cur = String::new();
    let mut chars = inner.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\\' if chars.peek() == Some(&'|') => {
                cur.push('|');
                chars.next();
            }
            '|' => cells.push(std::mem::take(&mut cur).trim().to_string()),
            c => cur.push(c),
        }
    }
    cells.push(cur.trim().to_string());
    cells
}

fn is_separator(cells: &[String]) -> bool {
    cells
        .iter()
        .all(|c| !c.is_empty() && c.chars().all(|ch| matches!(ch, '-' | ':' | ' ')))
}

fn parse_touchpoints(raw: &markdown::RawSection<'_>) -> Result<Vec<Touchpoint>, ArtifactError> {
    let mut out = Vec::new();
    let mut header_seen = false;
    for &(line, text) in &raw.lines {
        let t = text.trim();
        if !t.starts_with('|') {
            continue;
        }
        let cells = split_row(t);
        if !header_seen {
            let names: Vec<String> = cells.iter().map(|c| c.to_ascii_lowercase()).collect();
            if names.len() >= 3
                && names[0] == "path"
                && names[1] == "change"
                && names[2] == "rationale"
            {
                header_seen = true;
                continue;
            }
            return Err(ArtifactError::Malformed {
                line,
                message: "touchpoint table must start with `| Path | Change | Rationale |`".into(),
            });
        }
        if is_separator(&cells) {
            continue;
        }
        if cells.len() != 3 {
            return Err(ArtifactError::Malformed {
                line,
                message: format!("expected 3 cells, found {}", cells.len()),
            });
        }
        let path = normalize_repo_path(&cells[0]).map_err(|e| ArtifactError::InvalidPath {
            line,
            reason: e.to_string(),
        })?;
        let change_kind = cells[1]
            .trim_matches('`')
            .parse()
            .map_err(|message| ArtifactError::Malformed { line, message })?;
        out.push(Touchpoint {
            path,
            change_kind,
            rationale: cells[2].clone(),
        });
    }
    Ok(out)
}

fn parse_dependencies(
    raw: &markdown::RawSection<'_>,
) -> Result<Vec<PlannedDependency>, ArtifactError> {
    let mut out = Vec::new();
    for item in markdown::bullets(&raw.lines) {
        let item = item.trim();
        if item.eq_ignore_ascii_case("none") {
            continue;
        }
        let (name, eco) = match (item.rfind('('), item.ends_with(')')) {
            (Some(open), true) => (item[..open].trim(), &item[open + 1..item.len() - 1]),
            _ => {
                return Err(ArtifactError::Malformed {
                    line: raw.line,
                    message: format!("dependency `{item}` must read `name (ecosystem)`"),
                })
            }
        };
        out.push(PlannedDependency {
            name: name.trim_matches('`').to_string(),
            ecosystem: Ecosystem::from_label(eco),
        });
    }
    Ok(out)
}

impl PlanDoc {
    pub fn parse(text: &str) -> Result<Self, ArtifactError> {
        let outline = markdown::outline(text, "# Plan")?;
        let title = markdown::title_suffix(&outline.title, "plan")
            .ok_or(ArtifactError::MissingHeading("# Plan"))?;
        let kinds = markdown::classify_sections(&outline.sections, &KNOWN)?;
        let mut doc = PlanDoc {
            title,
            ..Default::default()
        };
        let mut seen = [false; 3];
        for (raw, kind) in outline.sections.iter().zip(kinds) {
            match kind {
                Some(0) => doc.overview = markdown::join_body(&raw.lines),
                Some(1) => doc.touchpoints = parse_touchpoints(raw)?,
                Some(2) => doc.dependencies = parse_dependencies(raw)?,
                _ => doc.extra.push(markdown::extra_section(raw)),
            }
            if let Some(k) = kind {
                seen[k] = true;
            }
        }
        if !seen[0] {
            return Err(ArtifactError::MissingHeading("## Overview"));
        }
        if !seen[1] {
            return Err(ArtifactError::MissingHeading("## Touchpoints"));
        }
        Ok(doc)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.touchpoints.is_empty() {
            v.push("touchpoints list is empty".to_string());
        }
        let mut pairs = HashSet::new();
        for t in &self.touchpoints {
            match normalize_repo_path(&t.path) {
                Ok(p) if p == t.path => {}
                Ok(_) => v.push(format!("path `{}` is not normalized", t.path)),
                Err(e) => v.push(e.to_string()),
            }
            if !pairs.insert((t.path.as_str(), t.change_kind)) {
                v.push(format!(
                    "duplicate touchpoint ({}, {})",
                    t.path,
                    t.change_kind.as_str()
                ));
            }
            if t.rationale.contains(['\n', '\r']) || t.rationale.trim() != t.rationale {
                v.push(format!(
                    "rationale for `{}` must be one trimmed line",
                    t.path
                ));
            }
        }
        for d in &self.dependencies {
            if !markdown::is_clean_line(&d.name)
                || d.name.contains(['(', ')'])
                || d.name.starts_with('`')
                || d.name.ends_with('`')
                || d.name.eq_ignore_ascii_case("none")
            {
                v.push(format!("invalid dependency name {:?}", d.name));
            }
        }
        if !self.overview.is_empty() && !markdown::is_clean_block(&self.overview) {
            v.push("overview would not read back unchanged".to_string());
        }
        if !markdown::is_clean_title(&self.title) {
            v.push(format!("title {:?} is not one trimmed line", self.title));
        }
        v.extend(markdown::extra_violations(&self.extra, &KNOWN));
        v
    }

    pub fn serialize(&self) -> Result<String, ArtifactError> {
        let v = self.violations();
        if !v.is_empty() {
            return Err(ArtifactError::Invariant(v.join("; ")));
        }
        let mut out = if self.title.is_empty() {
            "# Plan\n".to_string()
        } else {
            format!("# Plan: {}\n", self.title)
        };
        out.push_str("\n## Overview\n");
        if !self.overview.is_empty() {
            out.push('\n');
            out.push_str(&self.overview);
            out.push('\n');
        }
        out.push_str(
            "\n## Touchpoints\n\n| Path | Change | Rationale |\n|------|--------|-----------|\n",
        );
        for t in &self.touchpoints {
            out.push_str(&format!(
                "| {} | {} | {} |\n",
                t.path.replace('|', "\\|"),
                t.change_kind.as_str(),
                t.rationale.replace('|', "\\|")
            ));
        }
        out.push_str("\n## Dependencies\n\n");
        for d in &self.dependencies {
            out.push_str(&format!("- {} ({})\n", d.name, d.ecosystem));
        }
        markdown::write_extras(&mut out, &self.extra);
        Ok(out)
    }

    pub fn touchpoint_paths(&self) -> impl Iterator<Item = &str> {
        self.touchpoints.iter().map(|t| t.path.as_str())
    }
}
