use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use groundwork_core::fixture;

struct Ws {
    dir: tempfile::TempDir,
    config: PathBuf,
}

fn workspace() -> Ws {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture::write_workspace(dir.path()).unwrap();
    Ws { dir, config }
}

impl Ws {
    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn cmd(&self, args: &[&str]) -> Command {
        let mut c = Command::new(env!("CARGO_BIN_EXE_groundwork"));
        c.current_dir(self.path())
            .arg("--config")
            .arg(&self.config)
            .args(args);
        for (k, _) in std::env::vars() {
            if k.starts_with("GROUNDWORK_") {
                c.env_remove(k);
            }
        }
        c
    }

    fn run(&self, args: &[&str]) -> Output {
        self.cmd(args).output().unwrap()
    }

    fn run_dirs(&self, runs: &str) -> Vec<PathBuf> {
        let mut v: Vec<PathBuf> = std::fs::read_dir(self.path().join(runs))
            .map(|rd| {
                rd.map(|e| e.unwrap().path())
                    .filter(|p| p.join("record.jsonl").is_file())
                    .collect()
            })
            .unwrap_or_default();
        v.sort();
        v
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn describe(o: &Output) -> String {
    format!(
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        stdout(o),
        String::from_utf8_lossy(&o.stderr)
    )
}

#[test]
fn scripted_full_augmented_run_succeeds() {
    let ws = workspace();
    let o = ws.run(&["--json", "run", "dex-01", "full_augmented"]);
    assert_eq!(o.status.code(), Some(0), "{}", describe(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["outcome"]["status"], "success");
    let dir = PathBuf::from(v["run_dir"].as_str().unwrap());
    for f in [
        "record.jsonl",
        "patch.diff",
        "artifacts/SPEC.md",
        "artifacts/PLAN.md",
        "artifacts/TASKS.md",
    ] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    assert!(dir.join("reports/plan.json").is_file());
    assert!(dir.join("evidence/plan.json").is_file());
}

#[test]
fn unknown_configuration_is_a_usage_error() {
    let ws = workspace();
    let o = ws.run(&["run", "dex-01", "turbo"]);
    assert_eq!(o.status.code(), Some(2), "{}", describe(&o));
    assert!(ws.run_dirs("runs").is_empty());
}

#[test]
fn unknown_task_is_a_usage_error() {
    let ws = workspace();
    let o = ws.run(&["run", "dex-99", "baseline"]);
    assert_eq!(o.status.code(), Some(2), "{}", describe(&o));
}

#[test]
fn missing_config_file_is_a_usage_error() {
    let ws = workspace();
    let o = Command::new(env!("CARGO_BIN_EXE_groundwork"))
        .current_dir(ws.path())
        .args(["--config", "nope.yaml", "report"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2), "{}", describe(&o));
}

#[test]
fn budget_overrun_exits_one_with_category() {
    let ws = workspace();
    for config in ["baseline", "full"] {
        let o = ws.run(&["run", fixture::SLOW_TASK_ID, config]);
        assert_eq!(o.status.code(), Some(1), "{}", describe(&o));
        assert!(stdout(&o).contains("budget_timeout"), "{}", describe(&o));
    }
}

#[test]
fn validate_plan_with_missing_touchpoint_fails() {
    let ws = workspace();
    std::fs::write(ws.path().join("bad.md"), fixture::BAD_PLAN).unwrap();
    std::fs::write(ws.path().join("good.md"), fixture::PLAN).unwrap();
    let o = ws.run(&["validate-artifact", "plan", "bad.md", "--repo", "greeter"]);
    assert_eq!(o.status.code(), Some(1), "{}", describe(&o));
    assert!(stdout(&o).contains("src/missing.py"), "{}", describe(&o));
    let o = ws.run(&["validate-artifact", "plan", "good.md", "--repo", "greeter"]);
    assert_eq!(o.status.code(), Some(0), "{}", describe(&o));
    let o = ws.run(&[
        "validate-artifact",
        "plan",
        "absent.md",
        "--repo",
        "greeter",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", describe(&o));
}

#[test]
fn validate_spec_and_tasks() {
    let ws = workspace();
    std::fs::write(ws.path().join("draft-spec.md"), fixture::SPEC).unwrap();
    std::fs::write(ws.path().join("tasks.md"), fixture::TASKS).unwrap();
    std::fs::write(ws.path().join("empty.md"), "# Spec\n").unwrap();
    assert_eq!(
        ws.run(&["validate-artifact", "spec", "draft-spec.md"])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        ws.run(&["validate-artifact", "tasks", "tasks.md"])
            .status
            .code(),
        Some(0)
    );
    let o = ws.run(&["--json", "validate-artifact", "spec", "empty.md"]);
    assert_eq!(o.status.code(), Some(1), "{}", describe(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["verdict"], "fail");
}

#[test]
fn report_over_empty_runs_dir() {
    let ws = workspace();
    let o = ws.run(&["--json", "report"]);
    assert_eq!(o.status.code(), Some(0), "{}", describe(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["n_runs"], 0);
    assert!(!v["gaps"].as_array().unwrap().is_empty());
    assert!(ws.path().join("runs/report.json").is_file());
    assert!(ws.path().join("runs/report.md").is_file());
}

#[test]
fn two_by_two_experiment_writes_four_runs() {
    let ws = workspace();
    let o = ws.run(&[
        "experiment",
        "--configs",
        "baseline,full",
        "--parallelism",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", describe(&o));
    assert_eq!(ws.run_dirs("runs").len(), 4);
    let o = ws.run(&["experiment", "--configs", "baseline,full", "--resume"]);
    assert_eq!(o.status.code(), Some(0), "{}", describe(&o));
    assert_eq!(ws.run_dirs("runs").len(), 4);
    let o = ws.run(&["--json", "report"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["n_runs"], 4);
    assert_eq!(v["failures"]["budget_timeout"], 2);
}

#[test]
fn flags_override_environment_which_overrides_file() {
    let ws = workspace();
    let o = ws
        .cmd(&["run", "dex-01", "baseline"])
        .env("GROUNDWORK_RUNS_DIR", ws.path().join("env-runs"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", describe(&o));
    assert_eq!(ws.run_dirs("env-runs").len(), 1);
    let flag_dir = ws.path().join("flag-runs");
    let o = ws
        .cmd(&[
            "run",
            "dex-01",
            "baseline",
            "--runs-dir",
            flag_dir.to_str().unwrap(),
        ])
        .env("GROUNDWORK_RUNS_DIR", ws.path().join("env-runs"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", describe(&o));
    assert_eq!(ws.run_dirs("flag-runs").len(), 1);
    assert_eq!(ws.run_dirs("env-runs").len(), 1);
    assert!(ws.run_dirs("runs").is_empty());
}

#[test]
fn serve_refuses_non_loopback() {
    let ws = workspace();
    let o = ws.run(&["serve", "--addr", "0.0.0.0:0"]);
    assert_eq!(o.status.code(), Some(2), "{}", describe(&o));
}
