use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::OnceLock;

use regex::Regex;

use crate::artifact::{ChangeKind, Ecosystem, PlanDoc, SpecDoc, TaskList};
use crate::paths::{normalize_repo_path, parent_of};
use crate::probe::{normalize_package_name, DependencyRecord};
use crate::repo::Repo;
use crate::report::{Finding, FindingCategory, ValidationReport};
use crate::workflow::PhaseId;

const STOPWORDS: [&str; 24] = [
    "the", "and", "for", "with", "that", "this", "from", "into", "when", "then", "must", "should",
    "shall", "will", "are", "not", "all", "any", "each", "has", "have", "its", "via", "can",
];

fn words(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.len() >= 3)
        .map(str::to_lowercase)
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .collect()
}

/// Structural errors for empty lists; an info finding for every requirement
/// sharing no word with any acceptance criterion.
pub fn validate_spec(spec: &SpecDoc) -> ValidationReport {
    let mut findings = Vec::new();
    if spec.requirements.is_empty() {
        findings.push(
            Finding::error(FindingCategory::Structural, "spec has no requirements")
                .at("SPEC.md", None),
        );
    }
    if spec.acceptance_criteria.is_empty() {
        findings.push(
            Finding::error(
                FindingCategory::Structural,
                "spec has no acceptance criteria",
            )
            .at("SPEC.md", None),
        );
    }
    let criteria: BTreeSet<String> = spec
        .acceptance_criteria
        .iter()
        .flat_map(|c| words(c))
        .collect();
    if !criteria.is_empty() {
        for (i, req) in spec.requirements.iter().enumerate() {
            if words(req).is_disjoint(&criteria) {
                findings.push(
                    Finding::info(
                        FindingCategory::Structural,
                        format!(
                            "requirement {} has no matching acceptance criterion: {req}",
                            i + 1
                        ),
                    )
                    .at("SPEC.md", None),
                );
            }
        }
    }
    ValidationReport::new(PhaseId::Specify, findings)
}

/// Touchpoints against the working copy, dependencies against manifests.
pub fn validate_plan(
    plan: &PlanDoc,
    repo: &Repo,
    manifests: &[DependencyRecord],
) -> ValidationReport {
    let mut findings = Vec::new();
    let mut created: Vec<&str> = Vec::new();
    for tp in &plan.touchpoints {
        let path = tp.path.as_str();
        match tp.change_kind {
            ChangeKind::Modify | ChangeKind::Delete => {
                if !repo.exists(path) {
                    findings.push(
                        Finding::error(
                            FindingCategory::PathMissing,
                            format!("{} target `{path}` does not exist", tp.change_kind.as_str()),
                        )
                        .at(path, None),
                    );
                }
            }
            ChangeKind::Create => {
                if repo.exists(path) {
                    findings.push(
                        Finding::warning(
                            FindingCategory::PathMissing,
                            format!("create target `{path}` already exists"),
                        )
                        .at(path, None),
                    );
                }
                if let Some(parent) = parent_of(path) {
                    let made_earlier = created
                        .iter()
                        .any(|c| *c == parent || c.starts_with(&format!("{parent}/")));
                    if !repo.is_dir(parent) && !made_earlier {
                        findings.push(
                            Finding::error(
                                FindingCategory::PathMissing,
                                format!("parent directory `{parent}` of `{path}` does not exist"),
                            )
                            .at(path, None),
                        );
                    }
                }
                created.push(path);
            }
        }
    }
    let mut declared: HashMap<Ecosystem, BTreeSet<String>> = HashMap::new();
    for m in manifests {
        declared
            .entry(m.ecosystem)
            .or_default()
            .insert(normalize_package_name(&m.name, m.ecosystem));
    }
    for dep in &plan.dependencies {
        if dep.ecosystem == Ecosystem::Other {
            findings.push(Finding::warning(
                FindingCategory::DependencyMissing,
                format!(
                    "cannot verify dependency `{}` of unknown ecosystem",
                    dep.name
                ),
            ));
            continue;
        }
        let name = normalize_package_name(&dep.name, dep.ecosystem);
        if !declared
            .get(&dep.ecosystem)
            .is_some_and(|s| s.contains(&name))
        {
            findings.push(Finding::error(
                FindingCategory::DependencyMissing,
                format!(
                    "dependency `{}` ({}) is not declared in any manifest",
                    dep.name, dep.ecosystem
                ),
            ));
        }
    }
    ValidationReport::new(PhaseId::Plan, findings)
}

fn path_token() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[A-Za-z0-9_.\-]*(?:/[A-Za-z0-9_.\-]+)*\.[A-Za-z0-9]{1,8}\b|[A-Za-z0-9_.\-]+(?:/[A-Za-z0-9_.\-]+)+").unwrap())
}

/// File paths mentioned in a task description.
pub fn referenced_paths(text: &str) -> Vec<String> {
    path_token()
        .find_iter(text)
        .map(|m| m.as_str().trim_end_matches('.'))
        .filter(|s| {
            s.contains('/')
                || s.rsplit_once('.').is_some_and(|(stem, ext)| {
                    !stem.is_empty()
                        && ext.len() >= 2
                        && ext.chars().any(|c| c.is_ascii_alphabetic())
                })
        })
        .filter_map(|s| normalize_repo_path(s).ok())
        .collect()
}

/// Tasks on a dependency cycle, via iterative DFS colouring.
fn cycle_members(tasks: &TaskList) -> BTreeSet<String> {
    let index: HashMap<&str, usize> = tasks
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| (t.id.as_str(), i))
        .collect();
    let adj: Vec<Vec<usize>> = tasks
        .tasks
        .iter()
        .map(|t| {
            t.depends_on
                .iter()
                .filter_map(|d| index.get(d.as_str()).copied())
                .collect()
        })
        .collect();
    let n = adj.len();
    // 0 unvisited, 1 on stack, 2 done
    let mut colour = vec![0u8; n];
    let mut on_cycle = BTreeSet::new();
    for root in 0..n {
        if colour[root] != 0 {
            continue;
        }
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        colour[root] = 1;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if *next < adj[node].len() {
                let child = adj[node][*next];
                *next += 1;
                match colour[child] {
                    0 => {
                        colour[child] = 1;
                        stack.push((child, 0));
                    }
                    1 => {
                        let from = stack.iter().position(|(v, _)| *v == child).unwrap_or(0);
                        for (v, _) in &stack[from..] {
                            on_cycle.insert(tasks.tasks[*v].id.clone());
                        }
                    }
                    _ => {}
                }
            } else {
                colour[node] = 2;
                stack.pop();
            }
        }
    }
    on_cycle
}

/// Cycles and dangling dependencies are infeasible; a dependency on a task
/// listed later is an ordering violation; paths outside the plan warn.
pub fn validate_tasks(tasks: &TaskList, plan: Option<&PlanDoc>) -> ValidationReport {
    let mut findings = Vec::new();
    let position: BTreeMap<&str, usize> = tasks
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| (t.id.as_str(), i))
        .collect();
    let cyclic = cycle_members(tasks);
    if !cyclic.is_empty() {
        let ids: Vec<&str> = cyclic.iter().map(String::as_str).collect();
        findings.push(
            Finding::error(
                FindingCategory::TaskInfeasible,
                format!("dependency cycle among {}", ids.join(", ")),
            )
            .at("TASKS.md", None),
        );
    }
    for (i, task) in tasks.tasks.iter().enumerate() {
        for dep in &task.depends_on {
            match position.get(dep.as_str()) {
                None => findings.push(
                    Finding::error(
                        FindingCategory::TaskInfeasible,
                        format!("{} depends on unknown task {dep}", task.id),
                    )
                    .at("TASKS.md", None),
                ),
                Some(&j) if j >= i && !(cyclic.contains(&task.id) && cyclic.contains(dep)) => {
                    findings.push(
                        Finding::error(
                            FindingCategory::OrderingViolation,
                            format!("{} depends on {dep}, which is listed after it", task.id),
                        )
                        .at("TASKS.md", None),
                    )
                }
                _ => {}
            }
        }
    }
    if let Some(plan) = plan {
        let known: BTreeSet<&str> = plan.touchpoint_paths().collect();
        for task in &tasks.tasks {
            for p in referenced_paths(&task.description) {
                if !known.contains(p.as_str()) {
                    findings.push(
                        Finding::warning(
                            FindingCategory::PathMissing,
                            format!(
                                "{} references `{p}`, which is not a plan touchpoint",
                                task.id
                            ),
                        )
                        .at("TASKS.md", None),
                    );
                }
            }
        }
    }
    ValidationReport::new(PhaseId::Tasks, findings)
}
