//! One function per subcommand. Each returns the process exit status.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use groundwork_core::artifact::{ArtifactKind, PlanDoc, SpecDoc, TaskList};
use groundwork_core::clock::SystemClock;
use groundwork_core::config::Config;
use groundwork_core::experiment::{
    build_report, render_markdown, run_matrix, write_report, Comparison, ExperimentPlan,
    MatrixOptions,
};
use groundwork_core::hooks::{validate_plan, validate_spec, validate_tasks};
use groundwork_core::ledger::{RunFilter, RunRecord, RunStore};
use groundwork_core::probe::read_manifests;
use groundwork_core::repo::Repo;
use groundwork_core::report::{Finding, FindingCategory, ValidationReport};
use groundwork_core::service::Service;
use groundwork_core::workflow::{ConfigurationKind, PhaseId, ReviewMode};
use serde::Serialize;
use serde_json::json;

use crate::args::{
    Cli, Command, ExperimentArgs, GlobalArgs, ReportArgs, RunArgs, ServeArgs, ValidateArgs,
};
use crate::server;
use crate::setup::{features, load_config, CliError, Runner};

fn env_var(name: &str) -> Option<String> {
    std::env::var(name).ok()
}

fn print_json(value: &impl Serialize) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("output serializes")
    );
}

pub fn dispatch(cli: Cli) -> Result<i32, CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::Run(a) => cmd_run(g, a),
        Command::Experiment(a) => cmd_experiment(g, a),
        Command::Report(a) => cmd_report(g, a),
        Command::Serve(a) => cmd_serve(g, a),
        Command::ValidateArtifact(a) => cmd_validate_artifact(g, a),
    }
}

fn run_summary(runner: &Runner, r: &RunRecord) -> serde_json::Value {
    json!({
        "run_id": r.run_id,
        "task_id": r.task_id,
        "config": r.config,
        "run_dir": runner.store.run_dir(&r.run_id),
        "status": r.status,
        "outcome": r.outcome,
        "duration_minutes": r.duration_minutes(),
        "patch": r.patch,
    })
}

fn outcome_line(r: &RunRecord) -> String {
    match r.outcome.category {
        None => format!("{} {} {}: success", r.task_id, r.config, r.run_id),
        Some(c) => format!("{} {} {}: failure {c}", r.task_id, r.config, r.run_id),
    }
}

/// Starts the API next to in-process runs so checkpoint posts reach them.
fn start_side_server(runner: &Runner, addr: SocketAddr) -> Result<(), CliError> {
    let listener = server::bind(addr)?;
    let (token, generated) = server::resolve_token(env_var);
    let svc = Arc::new(Service::new(
        runner.store.clone(),
        runner.broker.clone(),
        Arc::new(SystemClock),
    ));
    announce(addr, &token, generated);
    server::serve_in_background(listener, server::router(svc, Some(token), None));
    Ok(())
}

fn announce(addr: SocketAddr, token: &str, generated: bool) {
    eprintln!("api listening on http://{addr}");
    if generated {
        eprintln!("api token: {token}");
    }
}

fn warn_unreachable_review(cfg: &Config, serve: Option<SocketAddr>) {
    if cfg.review_mode() == ReviewMode::Interactive && serve.is_none() {
        eprintln!(
            "warning: interactive review without --serve; plan checkpoints will time out after {} minutes",
            cfg.review.checkpoint_timeout_minutes
        );
    }
}

pub fn cmd_run(g: &GlobalArgs, a: &RunArgs) -> Result<i32, CliError> {
    let cfg = load_config(g, env_var)?;
    let tasks = features(&cfg, g, true)?;
    let task = tasks
        .iter()
        .find(|t| t.task_id == a.task_id)
        .ok_or_else(|| CliError::Usage(format!("unknown task `{}`", a.task_id)))?;
    warn_unreachable_review(&cfg, a.serve);
    let runner = Runner::new(cfg)?;
    let req = runner.request(task, a.configuration, a.repo.as_deref(), a.run_id.clone())?;
    runner.check_backends(&task.task_id)?;
    if let Some(addr) = a.serve {
        start_side_server(&runner, addr)?;
    }
    let record = runner.execute(&req).map_err(CliError::Failed)?;
    if g.json {
        print_json(&run_summary(&runner, &record));
    } else {
        println!("{}", outcome_line(&record));
        println!(
            "run directory: {}",
            runner.store.run_dir(&record.run_id).display()
        );
    }
    Ok(if record.outcome.is_success() { 0 } else { 1 })
}

pub fn cmd_experiment(g: &GlobalArgs, a: &ExperimentArgs) -> Result<i32, CliError> {
    let cfg = load_config(g, env_var)?;
    let all = features(&cfg, g, true)?;
    let tasks: Vec<_> = if a.tasks.is_empty() {
        all
    } else {
        let known: BTreeSet<&str> = all.iter().map(|t| t.task_id.as_str()).collect();
        if let Some(missing) = a.tasks.iter().find(|t| !known.contains(t.as_str())) {
            return Err(CliError::Usage(format!("unknown task `{missing}`")));
        }
        all.into_iter()
            .filter(|t| a.tasks.contains(&t.task_id))
            .collect()
    };
    let configs = if a.configs.is_empty() {
        ConfigurationKind::ALL.to_vec()
    } else {
        a.configs.clone()
    };
    warn_unreachable_review(&cfg, a.serve);
    let plan = ExperimentPlan {
        tasks,
        configs,
        seed: cfg.seed,
    };
    let runner = Runner::new(cfg)?;
    for t in &plan.tasks {
        runner.repo_for(t, None)?;
        runner.check_backends(&t.task_id)?;
    }
    let existing = if a.resume {
        runner
            .store
            .query(&RunFilter::default())
            .map_err(|e| CliError::Failed(e.to_string()))?
            .into_iter()
            .map(|r| (r.task_id, r.config))
            .collect()
    } else {
        BTreeSet::new()
    };
    if let Some(addr) = a.serve {
        start_side_server(&runner, addr)?;
    }
    let options = MatrixOptions {
        parallelism: runner.cfg.parallelism,
        existing,
        resume: a.resume,
    };
    let outcome = run_matrix(&plan, &options, |task, config| {
        let req = runner
            .request(task, config, None, None)
            .map_err(|e| e.to_string())?;
        let r = runner.execute(&req);
        if let Ok(rec) = &r {
            if !g.json {
                eprintln!("{}", outcome_line(rec));
            }
        }
        r
    });
    if g.json {
        print_json(&json!({
            "runs": outcome.records.iter().map(|r| run_summary(&runner, r)).collect::<Vec<_>>(),
            "skipped": outcome.skipped,
            "errors": outcome.errors,
        }));
    } else {
        let ok = outcome
            .records
            .iter()
            .filter(|r| r.outcome.is_success())
            .count();
        println!(
            "{} runs ({} successful), {} skipped, {} errors",
            outcome.records.len(),
            ok,
            outcome.skipped.len(),
            outcome.errors.len()
        );
        for e in &outcome.errors {
            println!("error: {} {}: {}", e.task_id, e.config, e.message);
        }
    }
    Ok(if outcome.errors.is_empty() { 0 } else { 1 })
}

pub fn cmd_report(g: &GlobalArgs, a: &ReportArgs) -> Result<i32, CliError> {
    let cfg = load_config(g, env_var)?;
    let feats = features(&cfg, g, false)?;
    let runner = Runner::new(cfg)?;
    let records = runner
        .store
        .query(&RunFilter::default())
        .map_err(|e| CliError::Failed(e.to_string()))?;
    let report = build_report(&records, &feats, &Comparison::defaults());
    let out = a.out.clone().unwrap_or_else(|| runner.cfg.runs_dir.clone());
    write_report(&out, &report).map_err(|e| CliError::Failed(e.to_string()))?;
    if g.json {
        print_json(&report);
    } else {
        print!("{}", render_markdown(&report));
    }
    Ok(0)
}

pub fn cmd_serve(g: &GlobalArgs, a: &ServeArgs) -> Result<i32, CliError> {
    let cfg = load_config(g, env_var)?;
    let runner = Runner::new(cfg)?;
    let assets = a.assets.clone().or_else(|| {
        let default = Path::new("dashboard/dist");
        default.is_dir().then(|| default.to_path_buf())
    });
    if let Some(dir) = &assets {
        if !dir.is_dir() {
            return Err(CliError::Usage(format!(
                "assets directory {} not found",
                dir.display()
            )));
        }
    }
    let listener = server::bind(a.addr)?;
    let (token, generated) = server::resolve_token(env_var);
    let svc = Arc::new(Service::new(
        runner.store.clone(),
        runner.broker.clone(),
        Arc::new(SystemClock),
    ));
    announce(a.addr, &token, generated);
    server::serve_blocking(listener, server::router(svc, Some(token), assets))?;
    Ok(0)
}

fn parse_failure(phase: PhaseId, file: &str, message: String) -> ValidationReport {
    ValidationReport::new(
        phase,
        vec![Finding::error(FindingCategory::Structural, message).at(file, None)],
    )
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn validate_text(
    kind: ArtifactKind,
    text: &str,
    repo: &Path,
    plan: Option<&str>,
) -> ValidationReport {
    let file = kind.file_name();
    match kind {
        ArtifactKind::Spec => match SpecDoc::parse(text) {
            Ok(s) => validate_spec(&s),
            Err(e) => parse_failure(PhaseId::Specify, file, e.to_string()),
        },
        ArtifactKind::Plan => match PlanDoc::parse(text) {
            Ok(p) => {
                let repo = Repo::open(repo);
                let manifests = read_manifests(&repo).items;
                validate_plan(&p, &repo, &manifests)
            }
            Err(e) => parse_failure(PhaseId::Plan, file, e.to_string()),
        },
        ArtifactKind::Tasks => match TaskList::parse(text) {
            Ok(t) => {
                let plan = plan.and_then(|p| PlanDoc::parse(p).ok());
                validate_tasks(&t, plan.as_ref())
            }
            Err(e) => parse_failure(PhaseId::Tasks, file, e.to_string()),
        },
    }
}

pub fn cmd_validate_artifact(g: &GlobalArgs, a: &ValidateArgs) -> Result<i32, CliError> {
    let text = read(&a.file)?;
    if a.kind == ArtifactKind::Plan && !a.repo.is_dir() {
        return Err(CliError::Usage(format!(
            "repository {} not found",
            a.repo.display()
        )));
    }
    let plan = a.plan.as_deref().map(read).transpose()?;
    let report = validate_text(a.kind, &text, &a.repo, plan.as_deref());
    if g.json {
        print_json(&report);
    } else {
        print!("{}", report.render());
    }
    Ok(if report.passed() { 0 } else { 1 })
}
