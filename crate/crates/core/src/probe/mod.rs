//! Read-only repository inspection and evidence assembly.

mod discover;
mod manifest;

use globset::{GlobBuilder, GlobMatcher};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use discover::{
    discover, extract_keywords, DiscoveryContext, EvidenceCaps, Prober, RepoProber,
};
pub use manifest::{normalize_package_name, read_manifests, DependencyRecord};

use crate::clock::Timestamp;
use crate::repo::Repo;
use crate::workflow::PhaseId;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ProbeError {
    #[error("invalid pattern `{pattern}`: {message}")]
    Pattern { pattern: String, message: String },
    #[error("permission denied: {0}")]
    Denied(String),
    #[error("{0}")]
    Io(String),
}

/// A probe result plus non-fatal notes (missing VCS, malformed manifests).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Probed<T> {
    pub items: T,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrepMatch {
    pub path: String,
    pub line_number: usize,
    pub line_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitEntry {
    pub commit_id: String,
    pub summary: String,
    pub touched_paths: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevantFile {
    pub path: String,
    pub excerpt: String,
    pub match_reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConventionKind {
    Logging,
    Testing,
    Layout,
    Style,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Convention {
    pub kind: ConventionKind,
    pub evidence_path: String,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub phase: PhaseId,
    pub generated_at: Timestamp,
    pub keywords: Vec<String>,
    pub relevant_files: Vec<RelevantFile>,
    pub conventions: Vec<Convention>,
    pub dependencies: Vec<DependencyRecord>,
    pub history: Vec<CommitEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl EvidenceBundle {
    /// Every repository path the bundle mentions.
    pub fn paths(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self
            .relevant_files
            .iter()
            .map(|f| f.path.as_str())
            .chain(self.conventions.iter().map(|c| c.evidence_path.as_str()))
            .chain(self.dependencies.iter().map(|d| d.manifest_path.as_str()))
            .collect();
        v.sort();
        v.dedup();
        v
    }

    /// Text injected verbatim into the next agent prompt.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("Keywords: {}\n", self.keywords.join(", ")));
        if !self.relevant_files.is_empty() {
            out.push_str("\nRelevant files:\n");
            for f in &self.relevant_files {
                out.push_str(&format!(
                    "### {} ({})\n```\n{}\n```\n",
                    f.path, f.match_reason, f.excerpt
                ));
            }
        }
        if !self.conventions.is_empty() {
            out.push_str("\nConventions:\n");
            for c in &self.conventions {
                out.push_str(&format!(
                    "- {:?}: {} ({})\n",
                    c.kind, c.note, c.evidence_path
                ));
            }
        }
        if !self.dependencies.is_empty() {
            out.push_str("\nDeclared dependencies:\n");
            for d in &self.dependencies {
                let v = d.version_constraint.as_deref().unwrap_or("");
                out.push_str(&format!(
                    "- {}{} [{}] in {}\n",
                    d.name, v, d.ecosystem, d.manifest_path
                ));
            }
        }
        if !self.history.is_empty() {
            out.push_str("\nRecent history:\n");
            for h in &self.history {
                let short = &h.commit_id[..h.commit_id.len().min(8)];
                out.push_str(&format!(
                    "- {short} {} [{}]\n",
                    h.summary,
                    h.touched_paths.join(", ")
                ));
            }
        }
        out
    }
}

fn compile_glob(pattern: &str) -> Result<GlobMatcher, ProbeError> {
    GlobBuilder::new(pattern)
        .literal_separator(true)
        .build()
        .map(|g| g.compile_matcher())
        .map_err(|e| ProbeError::Pattern {
            pattern: pattern.to_string(),
            message: e.to_string(),
        })
}

/// Files matching `pattern`, lexicographic, VCS metadata excluded.
/// `*` does not cross directory separators; `**` does.
pub fn glob_files(repo: &Repo, pattern: &str) -> Result<Vec<String>, ProbeError> {
    let m = compile_glob(pattern)?;
    Ok(repo.files().into_iter().filter(|p| m.is_match(p)).collect())
}

fn looks_binary(bytes: &[u8]) -> bool {
    bytes[..bytes.len().min(8192)].contains(&0)
}

pub fn grep(repo: &Repo, pattern: &str, scope: Option<&str>) -> Result<Vec<GrepMatch>, ProbeError> {
    let re = Regex::new(pattern).map_err(|e| ProbeError::Pattern {
        pattern: pattern.to_string(),
        message: e.to_string(),
    })?;
    let files = match scope {
        Some(s) => glob_files(repo, s)?,
        None => repo.files(),
    };
    let mut out = Vec::new();
    for rel in files {
        let Ok(bytes) = std::fs::read(repo.root().join(&rel)) else {
            continue;
        };
        if looks_binary(&bytes) {
            continue;
        }
        let text = String::from_utf8_lossy(&bytes);
        for (i, line) in text.lines().enumerate() {
            if re.is_match(line) {
                out.push(GrepMatch {
                    path: rel.clone(),
                    line_number: i + 1,
                    line_text: line.to_string(),
                });
            }
        }
    }
    Ok(out)
}

/// Newest-first commit log, optionally restricted to one path.
pub fn history(repo: &Repo, path: Option<&str>, limit: usize) -> Probed<Vec<CommitEntry>> {
    if limit == 0 {
        return Probed::default();
    }
    if !repo.has_vcs() {
        return Probed {
            items: Vec::new(),
            notes: vec!["repository has no version-control history".into()],
        };
    }
    let n = format!("-n{limit}");
    let mut args = vec![
        "log",
        n.as_str(),
        "--name-only",
        "--no-renames",
        "--format=%x1e%H%x1f%s",
    ];
    if let Some(p) = path {
        args.push("--");
        args.push(p);
    }
    let raw = match repo.git_stdout(&args) {
        Ok(s) => s,
        Err(e) => {
            return Probed {
                items: Vec::new(),
                notes: vec![format!("history unavailable: {e}")],
            }
        }
    };
    let items = raw
        .split('\x1e')
        .filter(|chunk| !chunk.trim().is_empty())
        .filter_map(|chunk| {
            let mut lines = chunk.lines();
            let (id, summary) = lines.next()?.split_once('\x1f')?;
            let mut touched: Vec<String> = lines
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect();
            touched.sort();
            Some(CommitEntry {
                commit_id: id.to_string(),
                summary: summary.to_string(),
                touched_paths: touched,
            })
        })
        .collect();
    Probed {
        items,
        notes: Vec::new(),
    }
}
