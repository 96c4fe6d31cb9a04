use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use groundwork_bench::{ledger, paired_sample, plan, task_dag};
use groundwork_core::agent::{PermissionMatrix, Principal, ToolId};
use groundwork_core::artifact::{PlanDoc, TaskList};
use groundwork_core::experiment::{build_report, wilcoxon_signed_rank, Comparison, WilcoxonMode};
use groundwork_core::hooks::validate_tasks;
use serde_json::json;

fn wilcoxon(c: &mut Criterion) {
    let mut g = c.benchmark_group("wilcoxon");
    for n in [12, 40] {
        let s = paired_sample(n, 1);
        g.bench_with_input(BenchmarkId::new("exact", n), &s, |b, s| {
            b.iter(|| wilcoxon_signed_rank(black_box(s), WilcoxonMode::Exact))
        });
        g.bench_with_input(BenchmarkId::new("approximate", n), &s, |b, s| {
            b.iter(|| wilcoxon_signed_rank(black_box(s), WilcoxonMode::Approximate))
        });
    }
    g.finish();
}

fn artifacts(c: &mut Criterion) {
    let mut g = c.benchmark_group("artifacts");
    let plan_text = plan(60).serialize().expect("plan serializes");
    let tasks_text = task_dag(50, 2).serialize().expect("tasks serialize");
    g.bench_function("parse_plan_60", |b| {
        b.iter(|| PlanDoc::parse(black_box(&plan_text)))
    });
    g.bench_function("parse_tasks_50", |b| {
        b.iter(|| TaskList::parse(black_box(&tasks_text)))
    });
    let dag = task_dag(50, 3);
    g.bench_function("validate_tasks_50", |b| {
        b.iter(|| validate_tasks(black_box(&dag), None))
    });
    g.finish();
}

fn permissions(c: &mut Criterion) {
    let m = PermissionMatrix::standard(
        &["pytest -q".into(), "ruff check".into()],
        &["python3".into()],
    );
    let args = json!({"command": "pytest -q tests/test_app.py"});
    c.bench_function("permission_check_exec", |b| {
        b.iter(|| {
            m.check(
                black_box(Principal::ValidationHook),
                ToolId::ExecCommand,
                black_box(&args),
            )
        })
    });
}

fn aggregate(c: &mut Criterion) {
    let records = ledger(100, 4);
    let cmps = Comparison::defaults();
    c.bench_function("build_report_600", |b| {
        b.iter(|| build_report(black_box(&records), &[], &cmps))
    });
}

criterion_group!(benches, wilcoxon, artifacts, permissions, aggregate);
criterion_main!(benches);
