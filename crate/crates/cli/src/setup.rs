//! Configuration resolution and per-run wiring of backends and clocks.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use groundwork_core::agent::{parse_script, AgentBackend, RemoteBackend, ScriptedBackend};
use groundwork_core::checkpoint::CheckpointBroker;
use groundwork_core::clock::{Clock, ManualClock, SystemClock};
use groundwork_core::config::{
    BackendConfig, Config, Overrides, DEFAULT_CONFIG_FILE, ENV_FEATURES,
};
use groundwork_core::experiment::{load_features, FeatureTask};
use groundwork_core::ledger::{EventSink, FsStore, RunEvent, RunRecord};
use groundwork_core::orchestrator::{new_run_id, Orchestrator, RunRequest, RunSettings};
use groundwork_core::workflow::ConfigurationKind;
use thiserror::Error;

use crate::args::GlobalArgs;

pub const DEFAULT_SCRIPTED_ID: &str = "scripted";
pub const DEFAULT_SCRIPTED_JUDGE_ID: &str = "scripted-judge";

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad invocation or unresolvable input; exit status 2.
    #[error("{0}")]
    Usage(String),
    /// The command ran and failed; exit status 1.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// File, then environment, then flags.
pub fn load_config(
    global: &GlobalArgs,
    env: impl Fn(&str) -> Option<String>,
) -> Result<Config, CliError> {
    let base = match &global.config {
        Some(p) if !p.is_file() => {
            return Err(CliError::Usage(format!(
                "config file {} not found",
                p.display()
            )))
        }
        Some(p) => Config::load(p).map_err(usage)?,
        None if Path::new(DEFAULT_CONFIG_FILE).is_file() => {
            Config::load(Path::new(DEFAULT_CONFIG_FILE)).map_err(usage)?
        }
        None => Config::default(),
    };
    let overrides = Overrides {
        runs_dir: global.runs_dir.clone(),
        features: global.features.clone(),
        parallelism: global.parallelism,
        seed: global.seed,
        auto_approve: global.auto_approve_override(),
    };
    base.layered(env, &overrides).map_err(usage)
}

/// Loads the feature file. When `required` is false a missing file that
/// nobody asked for explicitly yields an empty list.
pub fn features(
    cfg: &Config,
    global: &GlobalArgs,
    required: bool,
) -> Result<Vec<FeatureTask>, CliError> {
    let explicit = global.features.is_some() || std::env::var_os(ENV_FEATURES).is_some();
    if !cfg.features.is_file() {
        if required || explicit {
            return Err(CliError::Usage(format!(
                "features file {} not found",
                cfg.features.display()
            )));
        }
        return Ok(Vec::new());
    }
    load_features(&cfg.features).map_err(usage)
}

/// Logs run events at debug level.
struct LogSink;

impl EventSink for LogSink {
    fn emit(&self, event: &RunEvent) {
        tracing::debug!(run = %event.run_id, seq = event.seq, kind = ?event.kind, "event");
    }
}

/// Shared ledger, broker and settings for every run in this process.
pub struct Runner {
    pub cfg: Config,
    pub store: Arc<FsStore>,
    pub broker: Arc<CheckpointBroker>,
    settings: RunSettings,
    workspace_root: PathBuf,
}

struct Backends {
    clock: Arc<dyn Clock>,
    generator: Box<dyn AgentBackend>,
    judge: Option<Box<dyn AgentBackend>>,
}

fn scripted(
    config: &BackendConfig,
    task_id: &str,
    default_id: &str,
) -> Result<ScriptedBackend, String> {
    let BackendConfig::Scripted { script, id } = config else {
        unreachable!("caller matched a scripted backend");
    };
    let path = config
        .script_for(task_id)
        .ok_or_else(|| format!("no script for task `{task_id}` under {}", script.display()))?;
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let parsed = parse_script(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(ScriptedBackend::new(
        id.clone().unwrap_or_else(|| default_id.into()),
        parsed,
    ))
}

fn remote(config: &BackendConfig, judge: bool) -> Result<RemoteBackend, String> {
    let settings = config
        .remote_settings(judge)
        .map_err(|e| e.to_string())?
        .expect("caller matched a remote backend");
    RemoteBackend::new(format!("remote:{}", settings.model), settings).map_err(|e| e.to_string())
}

impl Runner {
    pub fn new(cfg: Config) -> Result<Self, CliError> {
        let store = Arc::new(FsStore::open(&cfg.runs_dir).map_err(usage)?);
        let workspace_root = cfg
            .workspace_dir
            .clone()
            .unwrap_or_else(|| cfg.runs_dir.join(".work"));
        Ok(Self {
            settings: RunSettings::from_config(&cfg),
            cfg,
            store,
            broker: Arc::new(CheckpointBroker::new()),
            workspace_root,
        })
    }

    /// The repository a task runs against, checked to exist.
    pub fn repo_for(
        &self,
        task: &FeatureTask,
        repo_override: Option<&Path>,
    ) -> Result<PathBuf, CliError> {
        let repo_path = match (repo_override, self.cfg.repos.get(&task.repo_id)) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(r)) => r.path.clone(),
            (None, None) => {
                return Err(CliError::Usage(format!(
                    "no repository configured for `{}`; pass --repo",
                    task.repo_id
                )))
            }
        };
        if !repo_path.is_dir() {
            return Err(CliError::Usage(format!(
                "repository {} not found",
                repo_path.display()
            )));
        }
        Ok(repo_path)
    }

    pub fn request(
        &self,
        task: &FeatureTask,
        config: ConfigurationKind,
        repo_override: Option<&Path>,
        run_id: Option<String>,
    ) -> Result<RunRequest, CliError> {
        Ok(RunRequest {
            run_id: run_id.unwrap_or_else(|| new_run_id(&task.task_id, config, SystemClock.now())),
            task: task.clone(),
            config,
            review: self.cfg.review_mode(),
            repo_path: self.repo_for(task, repo_override)?,
            checks: self
                .cfg
                .repos
                .get(&task.repo_id)
                .map(|r| r.checks.clone())
                .unwrap_or_default(),
        })
    }

    /// Scripted generators run on simulated time that keeps pace with the
    /// wall clock; remote generators run on the system clock.
    fn backends(&self, task_id: &str) -> Result<Backends, String> {
        let (clock, generator): (Arc<dyn Clock>, Box<dyn AgentBackend>) = match &self.cfg.backend {
            None => return Err("no backend configured".into()),
            Some(b @ BackendConfig::Scripted { .. }) => {
                let clock = ManualClock::following_wall();
                let backend = scripted(b, task_id, DEFAULT_SCRIPTED_ID)?.with_clock(clock.clone());
                (Arc::new(clock), Box::new(backend))
            }
            Some(b @ BackendConfig::Remote { .. }) => {
                (Arc::new(SystemClock), Box::new(remote(b, false)?))
            }
        };
        let judge: Option<Box<dyn AgentBackend>> = match &self.cfg.judge {
            None => None,
            Some(b @ BackendConfig::Scripted { .. }) => {
                Some(Box::new(scripted(b, task_id, DEFAULT_SCRIPTED_JUDGE_ID)?))
            }
            Some(b @ BackendConfig::Remote { .. }) => Some(Box::new(remote(b, true)?)),
        };
        Ok(Backends {
            clock,
            generator,
            judge,
        })
    }

    /// Fails before any run starts when the backend cannot be built.
    pub fn check_backends(&self, task_id: &str) -> Result<(), CliError> {
        self.backends(task_id).map(|_| ()).map_err(CliError::Usage)
    }

    pub fn execute(&self, req: &RunRequest) -> Result<RunRecord, String> {
        let mut b = self.backends(&req.task.task_id)?;
        let orch = Orchestrator {
            settings: self.settings.clone(),
            clock: b.clock,
            store: self.store.clone(),
            workspace_root: self.workspace_root.clone(),
            sink: Arc::new(LogSink),
            broker: self.broker.clone(),
        };
        let judge = b
            .judge
            .as_mut()
            .map(|j| j.as_mut() as &mut dyn AgentBackend);
        orch.run(req, b.generator.as_mut(), judge)
            .map_err(|e| e.to_string())
    }
}
