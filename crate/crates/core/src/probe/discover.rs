use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{
    glob_files, grep, history, read_manifests, CommitEntry, Convention, ConventionKind,
    DependencyRecord, EvidenceBundle, GrepMatch, ProbeError, Probed, RelevantFile,
};
use crate::artifact::ArtifactSet;
use crate::clock::Timestamp;
use crate::repo::Repo;
use crate::workflow::PhaseId;

/// The inspection surface discovery is allowed to use. The orchestrator
/// supplies an implementation that routes every call through the
/// permission layer.
pub trait Prober {
    fn glob(&mut self, pattern: &str) -> Result<Vec<String>, ProbeError>;
    fn grep(&mut self, pattern: &str, scope: Option<&str>) -> Result<Vec<GrepMatch>, ProbeError>;
    fn history(
        &mut self,
        path: Option<&str>,
        limit: usize,
    ) -> Result<Probed<Vec<CommitEntry>>, ProbeError>;
    fn manifests(&mut self) -> Result<Probed<Vec<DependencyRecord>>, ProbeError>;
    fn read_file(&mut self, path: &str) -> Result<String, ProbeError>;
}

/// Unmediated prober over a repository snapshot.
pub struct RepoProber<'a>(pub &'a Repo);

impl Prober for RepoProber<'_> {
    fn glob(&mut self, pattern: &str) -> Result<Vec<String>, ProbeError> {
        glob_files(self.0, pattern)
    }

    fn grep(&mut self, pattern: &str, scope: Option<&str>) -> Result<Vec<GrepMatch>, ProbeError> {
        grep(self.0, pattern, scope)
    }

    fn history(
        &mut self,
        path: Option<&str>,
        limit: usize,
    ) -> Result<Probed<Vec<CommitEntry>>, ProbeError> {
        Ok(history(self.0, path, limit))
    }

    fn manifests(&mut self) -> Result<Probed<Vec<DependencyRecord>>, ProbeError> {
        Ok(read_manifests(self.0))
    }

    fn read_file(&mut self, path: &str) -> Result<String, ProbeError> {
        let full = self
            .0
            .resolve(path)
            .map_err(|e| ProbeError::Io(e.to_string()))?;
        std::fs::read(&full)
            .map(|b| String::from_utf8_lossy(&b).into_owned())
            .map_err(|e| ProbeError::Io(format!("{path}: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceCaps {
    pub max_files: usize,
    pub excerpt_lines: usize,
    pub max_history: usize,
}

impl Default for EvidenceCaps {
    fn default() -> Self {
        Self {
            max_files: 30,
            excerpt_lines: 40,
            max_history: 20,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DiscoveryContext<'a> {
    pub task_description: &'a str,
    pub artifacts: &'a ArtifactSet,
}

const MAX_KEYWORDS: usize = 12;
const MAX_CONVENTIONS_PER_KIND: usize = 3;

const STOPWORDS: &[&str] = &[
    "a",
    "about",
    "add",
    "adds",
    "after",
    "all",
    "also",
    "an",
    "and",
    "any",
    "are",
    "as",
    "at",
    "be",
    "been",
    "before",
    "being",
    "both",
    "but",
    "by",
    "can",
    "could",
    "did",
    "does",
    "each",
    "for",
    "from",
    "had",
    "has",
    "have",
    "how",
    "if",
    "implement",
    "improve",
    "improvements",
    "in",
    "into",
    "is",
    "it",
    "its",
    "make",
    "may",
    "more",
    "new",
    "not",
    "of",
    "on",
    "or",
    "our",
    "out",
    "over",
    "should",
    "so",
    "some",
    "support",
    "than",
    "that",
    "the",
    "their",
    "them",
    "then",
    "there",
    "these",
    "they",
    "this",
    "those",
    "to",
    "under",
    "up",
    "use",
    "using",
    "via",
    "was",
    "we",
    "were",
    "what",
    "when",
    "which",
    "while",
    "who",
    "will",
    "with",
    "would",
    "you",
    "your",
];

fn backtick_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"`([^`]+)`").unwrap())
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .map(|t| t.trim_matches('_').to_ascii_lowercase())
        .filter(|t| {
            t.len() >= 3
                && !t.chars().all(|c| c.is_ascii_digit())
                && !STOPWORDS.contains(&t.as_str())
        })
}

/// Lowercased task tokens minus stopwords, then identifiers named in prior
/// artifacts. Order of first appearance, deduplicated, capped.
pub fn extract_keywords(task: &str, artifacts: &ArtifactSet) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let push = |t: String, out: &mut Vec<String>| {
        if !out.contains(&t) {
            out.push(t);
        }
    };
    for t in tokens(task) {
        push(t, &mut out);
    }
    let mut artifact_text = Vec::new();
    if let Some(spec) = &artifacts.spec {
        artifact_text.extend(
            spec.requirements
                .iter()
                .chain(&spec.acceptance_criteria)
                .cloned(),
        );
    }
    if let Some(tasks) = &artifacts.tasks {
        artifact_text.extend(tasks.tasks.iter().map(|t| t.description.clone()));
    }
    for text in &artifact_text {
        for cap in backtick_re().captures_iter(text) {
            for t in tokens(&cap[1]) {
                push(t, &mut out);
            }
        }
    }
    if let Some(plan) = &artifacts.plan {
        for p in plan.touchpoint_paths() {
            let stem = p.rsplit('/').next().unwrap_or(p);
            let stem = stem.split('.').next().unwrap_or(stem);
            for t in tokens(stem) {
                push(t, &mut out);
            }
        }
    }
    out.truncate(MAX_KEYWORDS);
    out
}

fn logging_name_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)(^|[/_.-])(log|logs|logger|loggers|logging)([/_.-]|$)").unwrap()
    })
}

const LOGGING_CONTENT: &str = r#"getLogger\(|^\s*import logging|^\s*from logging|require\(['"](winston|pino|bunyan)['"]\)|from ['"](winston|pino|bunyan)['"]|Logger\.(info|warn|error)|structlog"#;

const TEST_GLOBS: &[&str] = &[
    "**/test_*.py",
    "**/*_test.py",
    "**/conftest.py",
    "pytest.ini",
    "**/*.test.{js,ts,jsx,tsx}",
    "**/*.spec.{js,ts,jsx,tsx}",
    "{jest,vitest}.config.*",
    "**/*_test.exs",
];

const STYLE_GLOBS: &[&str] = &[
    ".editorconfig",
    "{ruff,.ruff}.toml",
    ".flake8",
    "setup.cfg",
    ".eslintrc*",
    "eslint.config.*",
    ".prettierrc*",
    "biome.json",
    ".formatter.exs",
];

fn find_conventions(prober: &mut dyn Prober, notes: &mut Vec<String>) -> Vec<Convention> {
    let mut out: Vec<Convention> = Vec::new();
    let all = prober.glob("**/*").unwrap_or_else(|e| {
        notes.push(format!("file listing unavailable: {e}"));
        Vec::new()
    });

    // logging: modules named after logging, then files configuring a logger
    let mut logging: BTreeSet<String> = all
        .iter()
        .filter(|p| {
            logging_name_re().is_match(p)
                && [".py", ".js", ".ts", ".ex", ".exs", ".rb", ".go"]
                    .iter()
                    .any(|ext| p.ends_with(ext))
        })
        .cloned()
        .collect();
    let named = logging.clone();
    match prober.grep(LOGGING_CONTENT, None) {
        Ok(hits) => logging.extend(hits.into_iter().map(|m| m.path)),
        Err(e) => notes.push(format!("logging scan failed: {e}")),
    }
    let mut logging: Vec<String> = logging.into_iter().collect();
    logging.sort_by_key(|p| (!named.contains(p), p.clone()));
    for p in logging.into_iter().take(MAX_CONVENTIONS_PER_KIND) {
        let note = if named.contains(&p) {
            "existing logging module; reuse its format instead of adding a new logger"
        } else {
            "configures a logger; follow its logging format"
        };
        out.push(Convention {
            kind: ConventionKind::Logging,
            evidence_path: p,
            note: note.to_string(),
        });
    }

    let mut tests = BTreeSet::new();
    for g in TEST_GLOBS {
        if let Ok(found) = prober.glob(g) {
            tests.extend(found);
        }
    }
    for p in tests.into_iter().take(MAX_CONVENTIONS_PER_KIND) {
        out.push(Convention {
            kind: ConventionKind::Testing,
            evidence_path: p,
            note: "existing test layout; add tests alongside".into(),
        });
    }

    let mut roots: BTreeMap<&str, &String> = BTreeMap::new();
    for p in &all {
        if let Some((top, _)) = p.split_once('/') {
            if !top.starts_with('.') {
                roots.entry(top).or_insert(p);
            }
        }
    }
    for (dir, first) in roots
        .iter()
        .filter(|(d, _)| matches!(**d, "src" | "lib" | "app" | "packages" | "tests" | "test"))
        .take(MAX_CONVENTIONS_PER_KIND)
    {
        out.push(Convention {
            kind: ConventionKind::Layout,
            evidence_path: (*first).clone(),
            note: format!("code lives under `{dir}/`"),
        });
    }

    let mut style = BTreeSet::new();
    for g in STYLE_GLOBS {
        if let Ok(found) = prober.glob(g) {
            style.extend(found);
        }
    }
    if let Ok(hits) = prober.grep(r"^\[tool\.(ruff|black|isort)", Some("pyproject.toml")) {
        style.extend(hits.into_iter().map(|m| m.path));
    }
    for p in style.into_iter().take(MAX_CONVENTIONS_PER_KIND) {
        out.push(Convention {
            kind: ConventionKind::Style,
            evidence_path: p,
            note: "style/lint configuration in force".into(),
        });
    }
    out
}

fn relevant_files(
    prober: &mut dyn Prober,
    keywords: &[String],
    caps: &EvidenceCaps,
    notes: &mut Vec<String>,
) -> Vec<RelevantFile> {
    if keywords.is_empty() || caps.max_files == 0 {
        return Vec::new();
    }
    let all = prober.glob("**/*").unwrap_or_default();
    let alternation = keywords
        .iter()
        .map(|k| regex::escape(k))
        .collect::<Vec<_>>()
        .join("|");
    let hits = match prober.grep(&format!("(?i)({alternation})"), None) {
        Ok(h) => h,
        Err(e) => {
            notes.push(format!("keyword scan failed: {e}"));
            Vec::new()
        }
    };

    #[derive(Default)]
    struct Score {
        path_kw: BTreeSet<usize>,
        content_kw: BTreeSet<usize>,
        first_line: Option<usize>,
    }
    let mut scores: BTreeMap<String, Score> = BTreeMap::new();
    for p in &all {
        let lower = p.to_ascii_lowercase();
        for (i, k) in keywords.iter().enumerate() {
            if lower.contains(k.as_str()) {
                scores.entry(p.clone()).or_default().path_kw.insert(i);
            }
        }
    }
    for m in &hits {
        let lower = m.line_text.to_ascii_lowercase();
        let s = scores.entry(m.path.clone()).or_default();
        for (i, k) in keywords.iter().enumerate() {
            if lower.contains(k.as_str()) {
                s.content_kw.insert(i);
            }
        }
        s.first_line.get_or_insert(m.line_number);
    }

    let mut ranked: Vec<(usize, String, Score)> = scores
        .into_iter()
        .map(|(p, s)| (2 * s.path_kw.len() + s.content_kw.len(), p, s))
        .collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    ranked.truncate(caps.max_files);

    ranked
        .into_iter()
        .filter_map(|(_, path, s)| {
            let text = match prober.read_file(&path) {
                Ok(t) => t,
                Err(e) => {
                    notes.push(format!("excerpt unavailable for {path}: {e}"));
                    return None;
                }
            };
            let start = s
                .first_line
                .map(|l| l.saturating_sub(3).max(1))
                .unwrap_or(1);
            let excerpt = text
                .lines()
                .skip(start - 1)
                .take(caps.excerpt_lines)
                .collect::<Vec<_>>()
                .join("\n");
            let mut reasons = Vec::new();
            if !s.path_kw.is_empty() {
                let ks: Vec<&str> = s.path_kw.iter().map(|&i| keywords[i].as_str()).collect();
                reasons.push(format!("path matches {}", ks.join(", ")));
            }
            if !s.content_kw.is_empty() {
                let ks: Vec<&str> = s.content_kw.iter().map(|&i| keywords[i].as_str()).collect();
                reasons.push(format!(
                    "content matches {} from line {}",
                    ks.join(", "),
                    start
                ));
            }
            Some(RelevantFile {
                path,
                excerpt,
                match_reason: reasons.join("; "),
            })
        })
        .collect()
}

/// Assembles phase-scoped evidence. Probe failures degrade the bundle but
/// never fail discovery.
pub fn discover(
    prober: &mut dyn Prober,
    phase: PhaseId,
    context: DiscoveryContext<'_>,
    caps: &EvidenceCaps,
    now: Timestamp,
) -> EvidenceBundle {
    let mut notes = Vec::new();
    let keywords = extract_keywords(context.task_description, context.artifacts);
    let relevant_files = relevant_files(prober, &keywords, caps, &mut notes);
    let conventions = find_conventions(prober, &mut notes);
    let dependencies = match prober.manifests() {
        Ok(p) => {
            notes.extend(p.notes);
            p.items
        }
        Err(e) => {
            notes.push(format!("manifests unavailable: {e}"));
            Vec::new()
        }
    };
    let history = match prober.history(None, caps.max_history) {
        Ok(p) => {
            notes.extend(p.notes);
            p.items
        }
        Err(e) => {
            notes.push(format!("history unavailable: {e}"));
            Vec::new()
        }
    };
    EvidenceBundle {
        phase,
        generated_at: now,
        keywords,
        relevant_files,
        conventions,
        dependencies,
        history,
        notes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artifact::PlanDoc;

    #[test]
    fn keywords_drop_stopwords_and_include_artifact_identifiers() {
        let set = ArtifactSet {
            plan: Some(
            PlanDoc::parse("# Plan\n## Overview\nx\n## Touchpoints\n| Path | Change | Rationale |\n|-|-|-|\n| src/session_store.py | create | r |\n")
                .unwrap(),
            ),
            ..ArtifactSet::default()
        };
        let k = extract_keywords("Session persistence with the --session flag", &set);
        assert_eq!(k, vec!["session", "persistence", "flag", "session_store"]);
    }

    #[test]
    fn empty_repo_gives_empty_bundle() {
        let d = tempfile::tempdir().unwrap();
        let repo = Repo::open(d.path());
        let set = ArtifactSet::default();
        let b = discover(
            &mut RepoProber(&repo),
            PhaseId::Specify,
            DiscoveryContext {
                task_description: "Add caching",
                artifacts: &set,
            },
            &EvidenceCaps::default(),
            chrono::Utc::now(),
        );
        assert!(b.relevant_files.is_empty());
        assert!(b.conventions.is_empty());
        assert!(b.dependencies.is_empty());
        assert!(b.history.is_empty());
    }
}
