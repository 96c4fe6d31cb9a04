//! Dependency manifests: pip requirement lists, `pyproject.toml` and
//! `package.json`.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::Probed;
use crate::artifact::Ecosystem;
use crate::repo::Repo;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyRecord {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version_constraint: Option<String>,
    pub ecosystem: Ecosystem,
    pub manifest_path: String,
}

/// Directories never scanned for manifests.
const VENDORED: [&str; 5] = ["node_modules", ".venv", "venv", "site-packages", "dist"];

/// Recognised but unparsed manifests.
const UNKNOWN_MANIFESTS: [&str; 6] = [
    "mix.exs",
    "Cargo.toml",
    "go.mod",
    "Gemfile",
    "pom.xml",
    "composer.json",
];

/// Name comparison key: PEP 503 normalisation for Python, lowercase
/// otherwise.
pub fn normalize_package_name(name: &str, ecosystem: Ecosystem) -> String {
    let lower = name.trim().to_ascii_lowercase();
    match ecosystem {
        Ecosystem::Python => lower.replace(['_', '.'], "-"),
        _ => lower,
    }
}

fn requirement_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^([A-Za-z0-9][A-Za-z0-9._-]*)\s*(\[[^\]]*\])?\s*(.*)$").unwrap())
}

/// Splits a PEP 508 requirement into (name, constraint).
fn parse_requirement(spec: &str) -> Option<(String, Option<String>)> {
    let spec = spec.split(';').next()?.trim();
    let caps = requirement_re().captures(spec)?;
    let rest = caps[3]
        .trim()
        .trim_start_matches('(')
        .trim_end_matches(')')
        .trim();
    let constraint = (!rest.is_empty()).then(|| rest.to_string());
    Some((caps[1].to_string(), constraint))
}

fn parse_requirements_txt(text: &str, path: &str, out: &mut Probed<Vec<DependencyRecord>>) {
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split(" #").next().unwrap_or("").trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('-') {
            continue;
        }
        if line.contains("://") {
            out.notes
                .push(format!("{path}:{}: skipped URL requirement", i + 1));
            continue;
        }
        match parse_requirement(line) {
            Some((name, version_constraint)) => out.items.push(DependencyRecord {
                name,
                version_constraint,
                ecosystem: Ecosystem::Python,
                manifest_path: path.to_string(),
            }),
            None => out.notes.push(format!(
                "{path}:{}: unparseable requirement `{line}`",
                i + 1
            )),
        }
    }
}

fn parse_pyproject(text: &str, path: &str, out: &mut Probed<Vec<DependencyRecord>>) {
    let doc: toml::Table = match toml::from_str(text) {
        Ok(d) => d,
        Err(e) => {
            out.notes
                .push(format!("{path}: malformed TOML: {}", e.message()));
            return;
        }
    };
    let mut push = |spec: &str| {
        if let Some((name, version_constraint)) = parse_requirement(spec) {
            out.items.push(DependencyRecord {
                name,
                version_constraint,
                ecosystem: Ecosystem::Python,
                manifest_path: path.to_string(),
            });
        }
    };
    if let Some(project) = doc.get("project").and_then(|p| p.as_table()) {
        for dep in project
            .get("dependencies")
            .and_then(|d| d.as_array())
            .into_iter()
            .flatten()
        {
            if let Some(s) = dep.as_str() {
                push(s);
            }
        }
        if let Some(groups) = project
            .get("optional-dependencies")
            .and_then(|g| g.as_table())
        {
            for deps in groups.values().filter_map(|v| v.as_array()) {
                for s in deps.iter().filter_map(|d| d.as_str()) {
                    push(s);
                }
            }
        }
    }
    let poetry = doc
        .get("tool")
        .and_then(|t| t.get("poetry"))
        .and_then(|p| p.as_table());
    if let Some(poetry) = poetry {
        let mut tables: Vec<&toml::Table> = ["dependencies", "dev-dependencies"]
            .iter()
            .filter_map(|k| poetry.get(*k).and_then(|t| t.as_table()))
            .collect();
        if let Some(groups) = poetry.get("group").and_then(|g| g.as_table()) {
            tables.extend(
                groups
                    .values()
                    .filter_map(|g| g.get("dependencies").and_then(|d| d.as_table())),
            );
        }
        for table in tables {
            for (name, v) in table {
                if name.eq_ignore_ascii_case("python") {
                    continue;
                }
                let version_constraint = match v {
                    toml::Value::String(s) => Some(s.clone()),
                    toml::Value::Table(t) => {
                        t.get("version").and_then(|v| v.as_str()).map(String::from)
                    }
                    _ => None,
                };
                out.items.push(DependencyRecord {
                    name: name.clone(),
                    version_constraint,
                    ecosystem: Ecosystem::Python,
                    manifest_path: path.to_string(),
                });
            }
        }
    }
}

fn parse_package_json(text: &str, path: &str, out: &mut Probed<Vec<DependencyRecord>>) {
    let doc: serde_json::Value = match serde_json::from_str(text) {
        Ok(d) => d,
        Err(e) => {
            out.notes.push(format!("{path}: malformed JSON: {e}"));
            return;
        }
    };
    for key in [
        "dependencies",
        "devDependencies",
        "optionalDependencies",
        "peerDependencies",
    ] {
        let Some(map) = doc.get(key).and_then(|m| m.as_object()) else {
            continue;
        };
        for (name, v) in map {
            out.items.push(DependencyRecord {
                name: name.clone(),
                version_constraint: v.as_str().map(String::from),
                ecosystem: Ecosystem::Javascript,
                manifest_path: path.to_string(),
            });
        }
    }
}

fn is_requirements_file(name: &str) -> bool {
    name.starts_with("requirements") && name.ends_with(".txt")
}

/// Reads every recognised manifest. Malformed manifests yield notes and
/// partial results rather than errors.
pub fn read_manifests(repo: &Repo) -> Probed<Vec<DependencyRecord>> {
    let mut out = Probed::<Vec<DependencyRecord>>::default();
    for rel in repo.files() {
        if rel.split('/').any(|seg| VENDORED.contains(&seg)) {
            continue;
        }
        let name = rel.rsplit('/').next().unwrap_or(&rel);
        let parser: fn(&str, &str, &mut Probed<Vec<DependencyRecord>>) =
            if is_requirements_file(name) {
                parse_requirements_txt
            } else if name == "pyproject.toml" {
                parse_pyproject
            } else if name == "package.json" {
                parse_package_json
            } else {
                if UNKNOWN_MANIFESTS.contains(&name) {
                    out.notes
                        .push(format!("{rel}: unsupported manifest format, ignored"));
                }
                continue;
            };
        match std::fs::read_to_string(repo.root().join(&rel)) {
            Ok(text) => parser(&text, &rel, &mut out),
            Err(e) => out.notes.push(format!("{rel}: unreadable: {e}")),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn repo_with(files: &[(&str, &str)]) -> (tempfile::TempDir, Repo) {
        let d = tempfile::tempdir().unwrap();
        for (p, c) in files {
            let full = d.path().join(p);
            fs::create_dir_all(full.parent().unwrap()).unwrap();
            fs::write(full, c).unwrap();
        }
        let r = Repo::open(d.path());
        (d, r)
    }

    #[test]
    fn requirements_line() {
        let (_d, r) = repo_with(&[(
            "requirements.txt",
            "fastapi>=0.100\n# comment\n-r other.txt\n",
        )]);
        let m = read_manifests(&r);
        assert_eq!(m.items.len(), 1);
        assert_eq!(m.items[0].name, "fastapi");
        assert_eq!(m.items[0].version_constraint.as_deref(), Some(">=0.100"));
        assert_eq!(m.items[0].ecosystem, Ecosystem::Python);
    }

    #[test]
    fn no_manifests() {
        let (_d, r) = repo_with(&[("README.md", "hi")]);
        assert!(read_manifests(&r).items.is_empty());
    }

    #[test]
    fn package_json_runtime_and_dev() {
        let (_d, r) = repo_with(&[(
            "package.json",
            r#"{"dependencies": {"express": "^4", "zod": "3"}, "devDependencies": {"vitest": "1"}}"#,
        )]);
        let m = read_manifests(&r);
        assert_eq!(m.items.len(), 3);
        assert!(m.items.iter().all(|d| d.ecosystem == Ecosystem::Javascript));
    }

    #[test]
    fn pyproject_pep621_and_poetry() {
        let (_d, r) = repo_with(&[(
            "pyproject.toml",
            "[project]\nname='x'\ndependencies = ['pydantic>=2', 'httpx']\n[project.optional-dependencies]\ndev = ['pytest']\n[tool.poetry.dependencies]\npython = '^3.11'\nrich = '^13'\n",
        )]);
        let m = read_manifests(&r);
        let names: Vec<&str> = m.items.iter().map(|d| d.name.as_str()).collect();
        assert_eq!(names, vec!["pydantic", "httpx", "pytest", "rich"]);
    }

    #[test]
    fn malformed_manifest_is_a_note_with_partial_results() {
        let (_d, r) = repo_with(&[
            ("package.json", "{not json"),
            ("requirements.txt", "flask\n"),
            ("mix.exs", "defmodule X do end"),
            (
                "node_modules/x/package.json",
                r#"{"dependencies":{"y":"1"}}"#,
            ),
        ]);
        let m = read_manifests(&r);
        assert_eq!(m.items.len(), 1);
        assert_eq!(m.notes.len(), 2);
    }

    #[test]
    fn name_normalization() {
        assert_eq!(
            normalize_package_name("Typing_Extensions", Ecosystem::Python),
            "typing-extensions"
        );
        assert_eq!(
            normalize_package_name("@types/Node", Ecosystem::Javascript),
            "@types/node"
        );
    }
}
