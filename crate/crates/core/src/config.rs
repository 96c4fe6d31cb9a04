//! System configuration: `config.yaml`, overridden by environment, then flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{BackoffError, BackoffPolicy, PermissionMatrix, RemoteSettings};
use crate::hooks::{CheckSpec, DEFAULT_REPAIR_TURNS};
use crate::probe::EvidenceCaps;
use crate::workflow::{BudgetError, BudgetSettings, ReviewMode};

pub const DEFAULT_CONFIG_FILE: &str = "config.yaml";
pub const DEFAULT_CHECKPOINT_TIMEOUT_MINUTES: u64 = 10;

pub const ENV_RUNS_DIR: &str = "GROUNDWORK_RUNS_DIR";
pub const ENV_FEATURES: &str = "GROUNDWORK_FEATURES";
pub const ENV_PARALLELISM: &str = "GROUNDWORK_PARALLELISM";
pub const ENV_SEED: &str = "GROUNDWORK_SEED";
pub const ENV_AUTO_APPROVE: &str = "GROUNDWORK_AUTO_APPROVE";
pub const ENV_JUDGE_API_BASE: &str = "GROUNDWORK_JUDGE_API_BASE";
pub const ENV_JUDGE_API_KEY: &str = "GROUNDWORK_JUDGE_API_KEY";
pub const ENV_JUDGE_MODEL: &str = "GROUNDWORK_JUDGE_MODEL";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config does not parse: {0}")]
    Yaml(#[from] serde_yaml::Error),
    #[error("{name}: `{value}` is not valid")]
    BadValue { name: String, value: String },
    #[error(transparent)]
    Budget(#[from] BudgetError),
    #[error(transparent)]
    Backoff(#[from] BackoffError),
    #[error("unknown repository `{0}`")]
    UnknownRepo(String),
    #[error("remote backend needs {0}")]
    MissingRemote(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    /// A script file, or a directory holding `<task_id>.yaml` files with an
    /// optional `default.yaml` fallback.
    Scripted {
        script: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<String>,
    },
    Remote {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        base_url: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_secs: Option<u64>,
    },
}

impl BackendConfig {
    /// Resolves a script path for one task.
    pub fn script_for(&self, task_id: &str) -> Option<PathBuf> {
        let BackendConfig::Scripted { script, .. } = self else {
            return None;
        };
        if !script.is_dir() {
            return Some(script.clone());
        }
        [format!("{task_id}.yaml"), "default.yaml".to_string()]
            .into_iter()
            .map(|f| script.join(f))
            .find(|p| p.is_file())
    }

    /// Remote settings with environment fallbacks for the missing pieces.
    pub fn remote_settings(&self, judge: bool) -> Result<Option<RemoteSettings>, ConfigError> {
        let BackendConfig::Remote {
            base_url,
            model,
            timeout_secs,
        } = self
        else {
            return Ok(None);
        };
        let env = RemoteSettings::from_env();
        let var = |k: &str| std::env::var(k).ok();
        let (env_base, env_model, env_key) = if judge {
            (
                var(ENV_JUDGE_API_BASE),
                var(ENV_JUDGE_MODEL),
                var(ENV_JUDGE_API_KEY),
            )
        } else {
            (None, None, None)
        };
        let base_url = base_url
            .clone()
            .or(env_base)
            .or_else(|| env.as_ref().map(|e| e.base_url.clone()))
            .ok_or(ConfigError::MissingRemote("a base URL"))?;
        let model = model
            .clone()
            .or(env_model)
            .or_else(|| env.as_ref().map(|e| e.model.clone()))
            .ok_or(ConfigError::MissingRemote("a model name"))?;
        let api_key = env_key
            .or_else(|| env.as_ref().and_then(|e| e.api_key.clone()))
            .or_else(|| var(crate::agent::backend::ENV_API_KEY));
        Ok(Some(RemoteSettings {
            base_url,
            api_key,
            model,
            timeout_secs: timeout_secs.unwrap_or(300),
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepoConfig {
    pub path: PathBuf,
    #[serde(default)]
    pub checks: Vec<CheckSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReviewConfig {
    pub auto_approve: bool,
    pub checkpoint_timeout_minutes: u64,
}

impl Default for ReviewConfig {
    fn default() -> Self {
        Self {
            auto_approve: true,
            checkpoint_timeout_minutes: DEFAULT_CHECKPOINT_TIMEOUT_MINUTES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolsConfig {
    /// Extra command prefixes the developer agent may execute.
    pub developer_exec: Vec<String>,
    pub exec_timeout_seconds: u64,
    pub output_tail_bytes: usize,
    pub max_tool_calls: usize,
}

impl Default for ToolsConfig {
    fn default() -> Self {
        Self {
            developer_exec: Vec::new(),
            exec_timeout_seconds: 600,
            output_tail_bytes: 4096,
            max_tool_calls: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub runs_dir: PathBuf,
    pub features: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompts_dir: Option<PathBuf>,
    pub workspace_dir: Option<PathBuf>,
    pub seed: u64,
    pub parallelism: usize,
    pub review: ReviewConfig,
    pub budgets: BudgetSettings,
    pub repair_turns: u32,
    pub backoff: BackoffPolicy,
    pub tools: ToolsConfig,
    pub evidence: EvidenceCaps,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge: Option<BackendConfig>,
    pub repos: BTreeMap<String, RepoConfig>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            runs_dir: PathBuf::from("runs"),
            features: PathBuf::from("experiments/features.yaml"),
            prompts_dir: None,
            workspace_dir: None,
            seed: 0,
            parallelism: 1,
            review: ReviewConfig::default(),
            budgets: BudgetSettings::default(),
            repair_turns: DEFAULT_REPAIR_TURNS,
            backoff: BackoffPolicy::default(),
            tools: ToolsConfig::default(),
            evidence: EvidenceCaps::default(),
            backend: None,
            judge: None,
            repos: BTreeMap::new(),
        }
    }
}

/// Command-line overrides; `None` leaves the lower layers in place.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub runs_dir: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub parallelism: Option<usize>,
    pub seed: Option<u64>,
    pub auto_approve: Option<bool>,
}

fn parse_bool(name: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(ConfigError::BadValue {
            name: name.into(),
            value: value.into(),
        }),
    }
}

fn parse_num<T: std::str::FromStr>(name: &str, value: &str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::BadValue {
        name: name.into(),
        value: value.into(),
    })
}

fn anchor(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        if text.trim().is_empty() {
            return Ok(Config::default());
        }
        Ok(serde_yaml::from_str(text)?)
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.anchor_paths(&base);
        Ok(cfg)
    }

    fn anchor_paths(&mut self, base: &Path) {
        anchor(base, &mut self.runs_dir);
        anchor(base, &mut self.features);
        for p in [&mut self.prompts_dir, &mut self.workspace_dir]
            .into_iter()
            .flatten()
        {
            anchor(base, p);
        }
        for b in [&mut self.backend, &mut self.judge].into_iter().flatten() {
            if let BackendConfig::Scripted { script, .. } = b {
                anchor(base, script);
            }
        }
        for r in self.repos.values_mut() {
            anchor(base, &mut r.path);
        }
    }

    /// Applies environment values, then flags.
    pub fn layered(
        mut self,
        env: impl Fn(&str) -> Option<String>,
        flags: &Overrides,
    ) -> Result<Self, ConfigError> {
        if let Some(v) = env(ENV_RUNS_DIR) {
            self.runs_dir = v.into();
        }
        if let Some(v) = env(ENV_FEATURES) {
            self.features = v.into();
        }
        if let Some(v) = env(ENV_PARALLELISM) {
            self.parallelism = parse_num(ENV_PARALLELISM, &v)?;
        }
        if let Some(v) = env(ENV_SEED) {
            self.seed = parse_num(ENV_SEED, &v)?;
        }
        if let Some(v) = env(ENV_AUTO_APPROVE) {
            self.review.auto_approve = parse_bool(ENV_AUTO_APPROVE, &v)?;
        }
        if let Some(v) = &flags.runs_dir {
            self.runs_dir = v.clone();
        }
        if let Some(v) = &flags.features {
            self.features = v.clone();
        }
        if let Some(v) = flags.parallelism {
            self.parallelism = v;
        }
        if let Some(v) = flags.seed {
            self.seed = v;
        }
        if let Some(v) = flags.auto_approve {
            self.review.auto_approve = v;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.budgets.validate()?;
        self.backoff.validate()?;
        if self.parallelism == 0 {
            return Err(ConfigError::BadValue {
                name: "parallelism".into(),
                value: "0".into(),
            });
        }
        if self.review.checkpoint_timeout_minutes == 0 {
            return Err(ConfigError::BadValue {
                name: "review.checkpoint_timeout_minutes".into(),
                value: "0".into(),
            });
        }
        Ok(())
    }

    pub fn review_mode(&self) -> ReviewMode {
        if self.review.auto_approve {
            ReviewMode::AutoApprove
        } else {
            ReviewMode::Interactive
        }
    }

    pub fn checkpoint_timeout(&self) -> Duration {
        Duration::from_secs(self.review.checkpoint_timeout_minutes * 60)
    }

    pub fn repo(&self, repo_id: &str) -> Result<&RepoConfig, ConfigError> {
        self.repos
            .get(repo_id)
            .ok_or_else(|| ConfigError::UnknownRepo(repo_id.into()))
    }

    /// Standard matrix with the repo's check commands allowlisted.
    pub fn permissions_for(&self, repo: &RepoConfig) -> PermissionMatrix {
        let checks: Vec<String> = repo.checks.iter().map(|c| c.command.clone()).collect();
        PermissionMatrix::standard(&checks, &self.tools.developer_exec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workflow::{ConfigurationKind, PhaseId};

    const SAMPLE: &str = r#"
runs_dir: out/runs
seed: 3
parallelism: 2
review:
  auto_approve: false
budgets:
  forty_minute: {total_minutes: 40, phase_minutes: {implement: 40}}
  ninety_minute: {total_minutes: 90, phase_minutes: {specify: 5, plan: 15, tasks: 10, implement: 60}}
backend: {kind: scripted, script: scripts}
judge: {kind: remote, model: judge-model, base_url: "http://127.0.0.1:9"}
repos:
  dexter:
    path: repos/dexter
    checks:
      - {command: pytest -q, kind: test}
      - {command: ruff check ., kind: lint, timeout_seconds: 60}
"#;

    #[test]
    fn parses_and_anchors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.yaml");
        std::fs::write(&path, SAMPLE).unwrap();
        let cfg = Config::load(&path).unwrap();
        assert_eq!(cfg.runs_dir, dir.path().join("out/runs"));
        assert_eq!(cfg.repos["dexter"].path, dir.path().join("repos/dexter"));
        assert_eq!(cfg.repos["dexter"].checks[0].timeout_seconds, 600);
        assert_eq!(cfg.review_mode(), ReviewMode::Interactive);
        assert_eq!(cfg.checkpoint_timeout(), Duration::from_secs(600));
        let b = cfg.budgets.budget_for(ConfigurationKind::Full);
        assert_eq!(b.phase_limit(PhaseId::Specify), Duration::from_secs(300));
        let m = cfg.permissions_for(&cfg.repos["dexter"]);
        assert!(m
            .exec_allowlist(crate::agent::Principal::ValidationHook)
            .contains(&"pytest -q".to_string()));
    }

    #[test]
    fn empty_is_default() {
        let cfg = Config::parse("").unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.review_mode(), ReviewMode::AutoApprove);
        assert_eq!(cfg.repair_turns, 2);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Config::parse("parallel: 3\n").is_err());
    }

    #[test]
    fn flags_beat_env_beat_file() {
        let file = Config::parse("seed: 1\nparallelism: 1\nruns_dir: file\n").unwrap();
        let env = |k: &str| match k {
            ENV_SEED => Some("2".to_string()),
            ENV_RUNS_DIR => Some("env".to_string()),
            ENV_AUTO_APPROVE => Some("false".to_string()),
            _ => None,
        };
        let flags = Overrides {
            seed: Some(3),
            ..Default::default()
        };
        let cfg = file.layered(env, &flags).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.runs_dir, PathBuf::from("env"));
        assert_eq!(cfg.parallelism, 1);
        assert!(!cfg.review.auto_approve);
        let flags = Overrides {
            auto_approve: Some(true),
            ..Default::default()
        };
        assert!(
            Config::default()
                .layered(env, &flags)
                .unwrap()
                .review
                .auto_approve
        );
    }

    #[test]
    fn bad_env_value_rejected() {
        let env = |k: &str| (k == ENV_PARALLELISM).then(|| "many".to_string());
        assert!(Config::default()
            .layered(env, &Overrides::default())
            .is_err());
        let zero = |k: &str| (k == ENV_PARALLELISM).then(|| "0".to_string());
        assert!(Config::default()
            .layered(zero, &Overrides::default())
            .is_err());
    }

    #[test]
    fn over_budget_phases_rejected() {
        let text = "budgets:\n  forty_minute: {total_minutes: 40, phase_minutes: {implement: 41}}\n  ninety_minute: {total_minutes: 90, phase_minutes: {specify: 10, plan: 15, tasks: 10, implement: 55}}\n";
        let cfg = Config::parse(text).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn script_directory_resolution() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("default.yaml"), "{}").unwrap();
        std::fs::write(dir.path().join("dex-01.yaml"), "{}").unwrap();
        let b = BackendConfig::Scripted {
            script: dir.path().to_path_buf(),
            id: None,
        };
        assert_eq!(b.script_for("dex-01"), Some(dir.path().join("dex-01.yaml")));
        assert_eq!(b.script_for("other"), Some(dir.path().join("default.yaml")));
    }

    #[test]
    fn remote_settings_from_config() {
        let b = BackendConfig::Remote {
            base_url: Some("http://x".into()),
            model: Some("m".into()),
            timeout_secs: None,
        };
        let s = b.remote_settings(true).unwrap().unwrap();
        assert_eq!(s.model, "m");
        assert_eq!(s.timeout_secs, 300);
    }
}
