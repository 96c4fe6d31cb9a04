use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use groundwork_core::artifact::ArtifactKind;
use groundwork_core::workflow::ConfigurationKind;

#[derive(Debug, Parser)]
#[command(
    name = "groundwork",
    version,
    about = "Spec-driven feature runs on existing repositories"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub features: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub runs_dir: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub parallelism: Option<usize>,
    /// Approve plan checkpoints automatically.
    #[arg(long, global = true, conflicts_with = "interactive")]
    pub auto_approve: bool,
    /// Wait for plan-review decisions posted to the API.
    #[arg(long, global = true)]
    pub interactive: bool,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute one task under one configuration.
    Run(RunArgs),
    /// Execute the task by configuration matrix.
    Experiment(ExperimentArgs),
    /// Aggregate the ledger into report.json and report.md.
    Report(ReportArgs),
    /// Serve the HTTP API and dashboard assets.
    Serve(ServeArgs),
    /// Validate one artifact file standalone.
    ValidateArtifact(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub task_id: String,
    /// One of baseline, augmented, full, full_augmented, discovery_only, validation_only.
    #[arg(value_name = "CONFIGURATION")]
    pub configuration: ConfigurationKind,
    /// Repository to work on; defaults to the configured path for the task's repo.
    #[arg(long, value_name = "PATH")]
    pub repo: Option<PathBuf>,
    #[arg(long, value_name = "ID")]
    pub run_id: Option<String>,
    /// Serve the API while the run executes, for interactive checkpoints.
    #[arg(long, value_name = "ADDR")]
    pub serve: Option<SocketAddr>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Comma-separated configurations; all six by default.
    #[arg(long, value_delimiter = ',')]
    pub configs: Vec<ConfigurationKind>,
    /// Comma-separated task ids; every task in the features file by default.
    #[arg(long, value_delimiter = ',')]
    pub tasks: Vec<String>,
    /// Skip cells that already have a record.
    #[arg(long)]
    pub resume: bool,
    #[arg(long, value_name = "ADDR")]
    pub serve: Option<SocketAddr>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directory; the runs directory by default.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub addr: SocketAddr,
    /// Static dashboard build to serve at `/`.
    #[arg(long, value_name = "DIR")]
    pub assets: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub kind: ArtifactKind,
    pub file: PathBuf,
    /// Repository the plan's touchpoints refer to.
    #[arg(long, value_name = "PATH", default_value = ".")]
    pub repo: PathBuf,
    /// Plan used to check a task list's coverage.
    #[arg(long, value_name = "PATH")]
    pub plan: Option<PathBuf>,
}

impl GlobalArgs {
    pub fn auto_approve_override(&self) -> Option<bool> {
        match (self.auto_approve, self.interactive) {
            (true, _) => Some(true),
            (_, true) => Some(false),
            _ => None,
        }
    }
}
