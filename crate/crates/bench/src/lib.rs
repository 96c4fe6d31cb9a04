//! Seeded inputs for the criterion benches.

use groundwork_core::artifact::{
    ChangeKind, Ecosystem, PlanDoc, PlannedDependency, Task, TaskList, TaskStatus, Touchpoint,
};
use groundwork_core::experiment::PairedSample;
use groundwork_core::fixture;
use groundwork_core::ledger::RunRecord;
use groundwork_core::workflow::ConfigurationKind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` paired values on a half-point grid, so ties occur.
pub fn paired_sample(n: usize, seed: u64) -> PairedSample {
    let mut r = rng(seed);
    let a: Vec<f64> = (0..n)
        .map(|_| f64::from(r.gen_range(2..=10u32)) / 2.0)
        .collect();
    let b: Vec<f64> = (0..n)
        .map(|_| f64::from(r.gen_range(2..=10u32)) / 2.0)
        .collect();
    PairedSample::from_values(&a, &b)
}

/// A chain-plus-random-edges DAG of `n` tasks, listed in dependency order.
pub fn task_dag(n: usize, seed: u64) -> TaskList {
    let mut r = rng(seed);
    let tasks = (0..n)
        .map(|i| Task {
            id: format!("T{i}"),
            description: format!("implement step {i} in src/mod{i}.py"),
            depends_on: (0..i)
                .filter(|j| *j + 1 == i || r.gen_bool(0.05))
                .map(|j| format!("T{j}"))
                .collect(),
            status: TaskStatus::Pending,
        })
        .collect();
    TaskList {
        tasks,
        extra: Vec::new(),
    }
}

/// A plan with `n` touchpoints and a few dependencies.
pub fn plan(n: usize) -> PlanDoc {
    PlanDoc {
        title: "Bench plan".into(),
        overview: "Touch many files.\n\nKeep behaviour unchanged.".into(),
        touchpoints: (0..n)
            .map(|i| Touchpoint {
                path: format!("src/pkg{}/mod{i}.py", i % 7),
                change_kind: if i % 3 == 0 {
                    ChangeKind::Create
                } else {
                    ChangeKind::Modify
                },
                rationale: format!("step {i} | keeps tests green"),
            })
            .collect(),
        dependencies: vec![
            PlannedDependency {
                name: "pytest".into(),
                ecosystem: Ecosystem::Python,
            },
            PlannedDependency {
                name: "left-pad".into(),
                ecosystem: Ecosystem::Javascript,
            },
        ],
        extra: Vec::new(),
    }
}

/// Judged records for `tasks` tasks under every configuration.
pub fn ledger(tasks: usize, seed: u64) -> Vec<RunRecord> {
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(tasks * ConfigurationKind::ALL.len());
    for t in 0..tasks {
        let repo = format!("repo{}", t % 5);
        for config in ConfigurationKind::ALL {
            let q = f64::from(r.gen_range(2..=10u32)) / 2.0;
            let minutes = r.gen_range(5.0..85.0);
            out.push(fixture::judged_record(
                &format!("t{t}"),
                &repo,
                config,
                q,
                minutes,
            ));
        }
    }
    out
}
