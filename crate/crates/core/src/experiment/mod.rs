//! Feature tasks, the paired run matrix and its aggregation.

pub mod aggregate;
pub mod features;
pub mod stats;

use std::collections::{BTreeSet, VecDeque};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use aggregate::{
    build_report, compare_latency, render_markdown, write_report, AggregateReport, Comparison,
    ConfigQuality, LatencyComparison, QualityDelta, RepoQuality, ReportError,
};
pub use features::{load_features, parse_features, FeatureCategory, FeatureError, FeatureTask};
pub use stats::{
    delta_pct, latency_delta, round2, weighted_overall, wilcoxon_signed_rank, LatencyDelta, Pair,
    PairedSample, StatsError, WilcoxonMethod, WilcoxonMode, WilcoxonResult,
};

use crate::ledger::RunRecord;
use crate::workflow::ConfigurationKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub tasks: Vec<FeatureTask>,
    pub configs: Vec<ConfigurationKind>,
    pub seed: u64,
}

impl ExperimentPlan {
    /// tasks × configs, in declaration order, duplicates removed.
    pub fn cells(&self) -> Vec<(FeatureTask, ConfigurationKind)> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for t in &self.tasks {
            for &c in &self.configs {
                if seen.insert((t.task_id.clone(), c)) {
                    out.push((t.clone(), c));
                }
            }
        }
        out
    }

    /// The cells in seeded shuffled order.
    pub fn schedule(&self) -> Vec<(FeatureTask, ConfigurationKind)> {
        let mut cells = self.cells();
        cells.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed));
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub task_id: String,
    pub config: ConfigurationKind,
    pub message: String,
}

#[derive(Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixOutcome {
    pub records: Vec<RunRecord>,
    pub skipped: Vec<(String, ConfigurationKind)>,
    pub errors: Vec<CellError>,
}

#[derive(Debug, Clone, Default)]
pub struct MatrixOptions {
    pub parallelism: usize,
    /// Cells already present in the ledger; skipped when `resume` is set.
    pub existing: BTreeSet<(String, ConfigurationKind)>,
    pub resume: bool,
}

/// Runs every cell of the plan on at most `parallelism` threads. A cell
/// error is recorded and the matrix continues. Records come back sorted by
/// (task, config) whatever order the cells finished in.
pub fn run_matrix<F>(plan: &ExperimentPlan, options: &MatrixOptions, run_cell: F) -> MatrixOutcome
where
    F: Fn(&FeatureTask, ConfigurationKind) -> Result<RunRecord, String> + Sync,
{
    let mut outcome = MatrixOutcome::default();
    let mut queue = VecDeque::new();
    for (task, config) in plan.schedule() {
        if options.resume && options.existing.contains(&(task.task_id.clone(), config)) {
            outcome.skipped.push((task.task_id.clone(), config));
        } else {
            queue.push_back((task, config));
        }
    }
    outcome.skipped.sort();
    let queue = Mutex::new(queue);
    let results = Mutex::new(Vec::new());
    let workers = options
        .parallelism
        .max(1)
        .min(queue.lock().unwrap().len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let Some((task, config)) = queue.lock().unwrap().pop_front() else {
                    break;
                };
                let result = run_cell(&task, config);
                results
                    .lock()
                    .unwrap()
                    .push((task.task_id.clone(), config, result));
            });
        }
    });
    let mut results = results.into_inner().unwrap();
    results.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
    for (task_id, config, r) in results {
        match r {
            Ok(rec) => outcome.records.push(rec),
            Err(message) => outcome.errors.push(CellError {
                task_id,
                config,
                message,
            }),
        }
    }
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::fixtures::record;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use ConfigurationKind::*;

    fn tasks(n: usize) -> Vec<FeatureTask> {
        (0..n)
            .map(|i| FeatureTask {
                task_id: format!("t{i:02}"),
                repo_id: format!("r{}", i % 4),
                category: FeatureCategory::Test,
                description: "d".into(),
            })
            .collect()
    }

    fn fake(task: &FeatureTask, config: ConfigurationKind) -> Result<RunRecord, String> {
        let mut r = record(&format!("{}-{config}", task.task_id));
        r.task_id = task.task_id.clone();
        r.config = config;
        Ok(r)
    }

    fn plan(n: usize) -> ExperimentPlan {
        ExperimentPlan {
            tasks: tasks(n),
            configs: vec![Baseline, Augmented, Full, FullAugmented],
            seed: 7,
        }
    }

    #[test]
    fn matrix_sizes() {
        let opts = MatrixOptions {
            parallelism: 3,
            ..Default::default()
        };
        assert_eq!(run_matrix(&plan(2), &opts, fake).records.len(), 8);
        assert_eq!(run_matrix(&plan(32), &opts, fake).records.len(), 128);
    }

    #[test]
    fn resume_skips_existing() {
        let p = plan(2);
        let mut opts = MatrixOptions {
            parallelism: 2,
            resume: true,
            ..Default::default()
        };
        opts.existing.insert(("t00".into(), Full));
        let out = run_matrix(&p, &opts, fake);
        assert_eq!(out.records.len(), 7);
        assert_eq!(out.skipped, vec![("t00".to_string(), Full)]);
        opts.resume = false;
        assert_eq!(run_matrix(&p, &opts, fake).records.len(), 8);
    }

    #[test]
    fn errors_do_not_abort() {
        let out = run_matrix(&plan(3), &MatrixOptions::default(), |t, c| {
            if t.task_id == "t01" {
                Err("boom".into())
            } else {
                fake(t, c)
            }
        });
        assert_eq!(out.records.len(), 8);
        assert_eq!(out.errors.len(), 4);
    }

    #[test]
    fn parallelism_is_bounded() {
        let live = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        let opts = MatrixOptions {
            parallelism: 3,
            ..Default::default()
        };
        let out = run_matrix(&plan(6), &opts, |t, c| {
            let now = live.fetch_add(1, Ordering::SeqCst) + 1;
            peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(std::time::Duration::from_millis(5));
            live.fetch_sub(1, Ordering::SeqCst);
            fake(t, c)
        });
        assert_eq!(out.records.len(), 24);
        assert!(peak.load(Ordering::SeqCst) <= 3);
    }

    #[test]
    fn schedule_is_seeded_and_output_sorted() {
        let p = plan(5);
        assert_eq!(p.schedule(), p.schedule());
        let mut other = p.clone();
        other.seed = 8;
        assert_ne!(p.schedule(), other.schedule());
        let a = run_matrix(&p, &MatrixOptions::default(), fake);
        let b = run_matrix(
            &other,
            &MatrixOptions {
                parallelism: 4,
                ..Default::default()
            },
            fake,
        );
        assert_eq!(a, b);
    }
}
