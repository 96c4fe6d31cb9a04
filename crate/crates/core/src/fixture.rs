//! A tiny sample repository and canned backend scripts that walk it
//! through every phase. Used by tests, benches and the CLI demo.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::agent::{Script, ScriptStep, ToolId};
use crate::clock::{Clock, ManualClock};
use crate::config::{BackendConfig, Config, RepoConfig};
use crate::experiment::{FeatureCategory, FeatureTask};
use crate::hooks::{CheckKind, CheckSpec};
use crate::judge::{JudgeVerdict, RubricScore};
use crate::ledger::{Outcome, PatchRef, RunRecord};
use crate::workflow::{CheckpointState, ConfigurationKind, ReviewMode, RunStatus};

pub const CHECK_COMMAND: &str = "python3 -m py_compile app.py cli.py";

pub const SPEC: &str = "# Spec: JSON output\n\n## Requirements\n- Add a --json flag that prints the greeting as JSON\n\n## Acceptance Criteria\n- `cli.py --json` prints a JSON object with the greeting\n";

pub const PLAN: &str = "# Plan\n\n## Overview\nAdd a json flag to the greeting command.\n\n## Touchpoints\n| Path | Change | Rationale |\n|---|---|---|\n| app.py | modify | expose the greeting as data |\n| cli.py | create | parse the --json flag |\n\n## Dependencies\n- pytest (python)\n";

/// A plan pointing at a file that does not exist.
pub const BAD_PLAN: &str = "# Plan\n\n## Overview\nAdd a json flag.\n\n## Touchpoints\n| Path | Change | Rationale |\n|---|---|---|\n| src/missing.py | modify | wrong file |\n";

pub const TASKS: &str = "# Tasks\n\n- [ ] T1: Return the greeting as a dict in app.py\n- [ ] T2: Add cli.py with a --json flag (depends: T1)\n";

pub const APP_AFTER: &str = "def greet():\n    return {\"greeting\": \"hi\"}\n";

pub const CLI_AFTER: &str = "import json\nimport sys\n\nfrom app import greet\n\nif __name__ == \"__main__\":\n    g = greet()\n    print(json.dumps(g) if \"--json\" in sys.argv else g[\"greeting\"])\n";

pub fn seed_repo(dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir.join("tests"))?;
    std::fs::write(dir.join("app.py"), "def greet():\n    return \"hi\"\n")?;
    std::fs::write(
        dir.join("cli.py"),
        "from app import greet\n\nprint(greet())\n",
    )?;
    std::fs::write(
        dir.join("tests/test_app.py"),
        "from app import greet\n\n\ndef test_greet():\n    assert greet()\n",
    )?;
    std::fs::write(dir.join("requirements.txt"), "pytest>=7\n")?;
    std::fs::write(dir.join("README.md"), "# greeter\n\nPrints a greeting.\n")?;
    std::fs::write(dir.join(".gitignore"), "__pycache__/\n")?;
    Ok(())
}

pub fn checks() -> Vec<CheckSpec> {
    vec![CheckSpec {
        command: CHECK_COMMAND.into(),
        kind: CheckKind::Test,
        timeout_seconds: 60,
    }]
}

pub fn task() -> FeatureTask {
    FeatureTask {
        task_id: "dex-01".into(),
        repo_id: "greeter".into(),
        category: FeatureCategory::ConfigChange,
        description: "Add --json flag for JSON output".into(),
    }
}

pub fn implement_steps() -> Vec<ScriptStep> {
    vec![
        ScriptStep::tool(ToolId::ReadFile, json!({"path": "app.py"})),
        ScriptStep::tool(
            ToolId::WriteFile,
            json!({"path": "app.py", "content": APP_AFTER}),
        ),
        ScriptStep::tool(
            ToolId::WriteFile,
            json!({"path": "cli.py", "content": CLI_AFTER}),
        ),
        ScriptStep::final_text("Implemented T1 and T2."),
    ]
}

/// Every phase succeeds on its first turn.
pub fn happy_script() -> Script {
    let mut s = Script::new();
    s.insert(
        "specify".into(),
        vec![
            ScriptStep::tool(ToolId::ReadFile, json!({"path": "README.md"})),
            ScriptStep::final_text(format!("```markdown\n{SPEC}```")),
        ],
    );
    s.insert("plan".into(), vec![ScriptStep::final_text(PLAN)]);
    s.insert("tasks".into(), vec![ScriptStep::final_text(TASKS)]);
    s.insert("implement".into(), implement_steps());
    s
}

/// Like [`happy_script`], but implementation takes `minutes` of simulated time.
pub fn slow_script(minutes: f64) -> Script {
    let mut s = happy_script();
    let steps = s.get_mut("implement").expect("implement steps");
    let last = steps.pop().expect("final step");
    steps.push(last.taking(minutes * 60.0));
    s
}

/// A second task whose script overruns every budget.
pub const SLOW_TASK_ID: &str = "dex-slow";

pub fn slow_task() -> FeatureTask {
    FeatureTask {
        task_id: SLOW_TASK_ID.into(),
        description: "Add --json flag, slowly".into(),
        ..task()
    }
}

fn yaml(value: &impl serde::Serialize) -> String {
    serde_yaml::to_string(value).expect("fixture data serializes")
}

/// Lays out a self-contained scripted workspace under `dir`: the sample
/// repo, a feature file, generator and judge scripts and `config.yaml`.
/// Returns the config path.
pub fn write_workspace(dir: &Path) -> std::io::Result<PathBuf> {
    seed_repo(&dir.join("greeter"))?;
    std::fs::create_dir_all(dir.join("scripts"))?;
    std::fs::write(dir.join("scripts/default.yaml"), yaml(&happy_script()))?;
    std::fs::write(
        dir.join(format!("scripts/{SLOW_TASK_ID}.yaml")),
        yaml(&slow_script(95.0)),
    )?;
    std::fs::write(dir.join("judge.yaml"), yaml(&judge_script(4.0)))?;
    std::fs::write(
        dir.join("features.yaml"),
        yaml(&BTreeMap::from([("tasks", vec![task(), slow_task()])])),
    )?;
    let cfg = Config {
        runs_dir: "runs".into(),
        features: "features.yaml".into(),
        backend: Some(BackendConfig::Scripted {
            script: "scripts".into(),
            id: None,
        }),
        judge: Some(BackendConfig::Scripted {
            script: "judge.yaml".into(),
            id: Some("judge".into()),
        }),
        repos: BTreeMap::from([(
            "greeter".to_string(),
            RepoConfig {
                path: "greeter".into(),
                checks: checks(),
            },
        )]),
        ..Config::default()
    };
    let path = dir.join("config.yaml");
    std::fs::write(&path, yaml(&cfg))?;
    Ok(path)
}

pub fn judge_script(value: f64) -> Script {
    let mut s = Script::new();
    s.insert(
        "judge".into(),
        vec![ScriptStep::final_text(format!(
            "Reasonable change.\n```score\ncompleteness: {value}\ncorrectness: {value}\nstyle: {value}\nmaintainability: {value}\n```\n"
        ))],
    );
    s
}

/// A successful, unjudged baseline record of twelve minutes with a one-file patch.
pub fn record(run_id: &str) -> RunRecord {
    let t = ManualClock::at_epoch().now();
    let mut r = RunRecord {
        run_id: run_id.into(),
        task_id: "dex-01".into(),
        repo_id: "dex".into(),
        config: ConfigurationKind::Baseline,
        review_mode: ReviewMode::AutoApprove,
        backend_id: "scripted".into(),
        started_at: t,
        ended_at: t + chrono::Duration::minutes(12),
        status: RunStatus::Completed,
        checkpoint: CheckpointState::None,
        phase_traces: Vec::new(),
        patch: Some(PatchRef {
            branch_name: format!("groundwork/{run_id}"),
            files_changed: 1,
            diff_digest: "0".repeat(64),
        }),
        checks: Vec::new(),
        rate_limited: false,
        interrupted: false,
        critical_errors: Vec::new(),
        execution_errors: Vec::new(),
        validation_failure: None,
        outcome: Outcome::success(),
        judge: None,
        judge_unavailable: None,
    };
    r.seal();
    r
}

/// A judged, successful record whose four rubric values are all `q`
/// (so the composite is `q`) and whose wall time is `minutes`.
pub fn judged_record(
    task: &str,
    repo: &str,
    config: ConfigurationKind,
    q: f64,
    minutes: f64,
) -> RunRecord {
    let mut r = record(&format!("{task}-{config}"));
    r.task_id = task.into();
    r.repo_id = repo.into();
    r.config = config;
    r.ended_at = r.started_at + chrono::Duration::milliseconds((minutes * 60_000.0).round() as i64);
    let score = RubricScore {
        completeness: q,
        correctness: q,
        style: q,
        maintainability: q,
    };
    r.judge = Some(JudgeVerdict::new(
        score,
        String::new(),
        "judge".into(),
        ManualClock::at_epoch().now(),
    ));
    r.seal();
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artifact::{PlanDoc, SpecDoc, TaskList};

    #[test]
    fn canned_artifacts_parse() {
        SpecDoc::parse(SPEC).unwrap();
        assert!(PlanDoc::parse(PLAN).unwrap().violations().is_empty());
        assert_eq!(TaskList::parse(TASKS).unwrap().tasks.len(), 2);
        PlanDoc::parse(BAD_PLAN).unwrap();
    }

    #[test]
    fn workspace_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_workspace(dir.path()).unwrap();
        let cfg = Config::load(&path).unwrap();
        assert_eq!(cfg.runs_dir, dir.path().join("runs"));
        let tasks = crate::experiment::load_features(&cfg.features).unwrap();
        assert_eq!(tasks, vec![task(), slow_task()]);
        let backend = cfg.backend.as_ref().unwrap();
        assert!(backend
            .script_for("dex-01")
            .unwrap()
            .ends_with("default.yaml"));
        let slow = backend.script_for(SLOW_TASK_ID).unwrap();
        let parsed = crate::agent::parse_script(&std::fs::read_to_string(slow).unwrap()).unwrap();
        assert_eq!(parsed, slow_script(95.0));
        assert_eq!(cfg.repo("greeter").unwrap().checks, checks());
    }
}
