use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::features::FeatureTask;
use super::stats::{
    delta_pct, latency_delta, round2, weighted_overall, wilcoxon_signed_rank, Pair, PairedSample,
    WilcoxonMode, WilcoxonResult,
};
use crate::ledger::{latency_eligible, quality_eligible, FailureCategory, RunRecord};
use crate::workflow::{ConfigurationKind, Family};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_MD: &str = "report.md";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("latency is only comparable within one budget family: {a} ({fa:?}) vs {b} ({fb:?})")]
    CrossFamily {
        a: ConfigurationKind,
        b: ConfigurationKind,
        fa: Family,
        fb: Family,
    },
    #[error("no latency-eligible pairs for {0} vs {1}")]
    NoPairs(ConfigurationKind, ConfigurationKind),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Comparison {
    pub a: ConfigurationKind,
    pub b: ConfigurationKind,
}

impl Comparison {
    pub fn new(a: ConfigurationKind, b: ConfigurationKind) -> Self {
        Self { a, b }
    }

    pub fn key(&self) -> String {
        format!("{}_vs_{}", self.a, self.b)
    }

    pub fn same_family(&self) -> bool {
        self.a.family() == self.b.family()
    }

    /// Hook effect within each family, each ablation against the full
    /// workflow, and the workflow effect without hooks.
    pub fn defaults() -> Vec<Comparison> {
        use ConfigurationKind::*;
        vec![
            Comparison::new(Baseline, Augmented),
            Comparison::new(Full, FullAugmented),
            Comparison::new(Full, DiscoveryOnly),
            Comparison::new(Full, ValidationOnly),
            Comparison::new(Baseline, Full),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepoQuality {
    pub mean_quality: f64,
    pub n_features: usize,
    pub n_judged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigQuality {
    pub per_repo: BTreeMap<String, RepoQuality>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overall: Option<f64>,
    pub n_runs: usize,
    pub n_success: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityDelta {
    pub a: ConfigurationKind,
    pub b: ConfigurationKind,
    pub overall_a: f64,
    pub overall_b: f64,
    /// `overall_b − overall_a`.
    pub delta: f64,
    /// Rounded to two decimals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_pct: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    pub n_pairs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wilcoxon: Option<WilcoxonResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyComparison {
    pub a: ConfigurationKind,
    pub b: ConfigurationKind,
    pub family: Family,
    pub mean_a: f64,
    pub mean_b: f64,
    pub delta: f64,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub n_runs: usize,
    pub n_features: usize,
    pub quality: BTreeMap<ConfigurationKind, ConfigQuality>,
    pub deltas: BTreeMap<String, QualityDelta>,
    pub latency: BTreeMap<String, LatencyComparison>,
    pub failures: BTreeMap<FailureCategory, usize>,
    pub n_failed: usize,
    pub gaps: Vec<String>,
}

/// One record per (task, config) cell: the latest by end time, ties broken
/// by run id so the choice does not depend on input order.
pub fn latest_per_cell(records: &[RunRecord]) -> BTreeMap<(String, ConfigurationKind), &RunRecord> {
    let mut cells: BTreeMap<(String, ConfigurationKind), &RunRecord> = BTreeMap::new();
    for r in records {
        let key = (r.task_id.clone(), r.config);
        match cells.get(&key) {
            Some(prev) if (prev.ended_at, &prev.run_id) >= (r.ended_at, &r.run_id) => {}
            _ => {
                cells.insert(key, r);
            }
        }
    }
    cells
}

fn paired(
    cells: &BTreeMap<(String, ConfigurationKind), &RunRecord>,
    cmp: Comparison,
    eligible: fn(&RunRecord) -> bool,
    value: fn(&RunRecord) -> f64,
) -> PairedSample {
    let tasks: BTreeSet<&String> = cells.keys().map(|(t, _)| t).collect();
    let pairs = tasks
        .into_iter()
        .filter_map(|t| {
            let ra = cells.get(&(t.clone(), cmp.a)).filter(|r| eligible(r))?;
            let rb = cells.get(&(t.clone(), cmp.b)).filter(|r| eligible(r))?;
            Some(Pair {
                task_id: t.clone(),
                a: value(ra),
                b: value(rb),
            })
        })
        .collect();
    PairedSample { pairs }
}

fn composite_of(r: &RunRecord) -> f64 {
    r.judge.as_ref().map(|j| j.composite).unwrap_or(f64::NAN)
}

/// Within-family latency comparison over latency-eligible pairs, in minutes.
pub fn compare_latency(
    records: &[RunRecord],
    cmp: Comparison,
) -> Result<LatencyComparison, ReportError> {
    if !cmp.same_family() {
        return Err(ReportError::CrossFamily {
            a: cmp.a,
            b: cmp.b,
            fa: cmp.a.family(),
            fb: cmp.b.family(),
        });
    }
    let cells = latest_per_cell(records);
    let sample = paired(&cells, cmp, latency_eligible, RunRecord::duration_minutes);
    let l = latency_delta(&sample).map_err(|_| ReportError::NoPairs(cmp.a, cmp.b))?;
    Ok(LatencyComparison {
        a: cmp.a,
        b: cmp.b,
        family: cmp.a.family(),
        mean_a: l.mean_a,
        mean_b: l.mean_b,
        delta: l.delta,
        n_pairs: l.n_pairs,
    })
}

fn config_quality(
    cells: &BTreeMap<(String, ConfigurationKind), &RunRecord>,
    config: ConfigurationKind,
    repo_weights: &BTreeMap<String, usize>,
) -> ConfigQuality {
    let runs: Vec<&RunRecord> = cells
        .iter()
        .filter(|((_, c), _)| *c == config)
        .map(|(_, r)| *r)
        .collect();
    let mut scores: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in runs.iter().filter(|r| quality_eligible(r)) {
        scores
            .entry(r.repo_id.clone())
            .or_default()
            .push(composite_of(r));
    }
    let per_repo: BTreeMap<String, RepoQuality> = scores
        .into_iter()
        .map(|(repo, s)| {
            let n_features = repo_weights.get(&repo).copied().unwrap_or(0).max(1);
            let q = RepoQuality {
                mean_quality: s.iter().sum::<f64>() / s.len() as f64,
                n_features,
                n_judged: s.len(),
            };
            (repo, q)
        })
        .collect();
    let weights: Vec<(f64, usize)> = per_repo
        .values()
        .map(|q| (q.mean_quality, q.n_features))
        .collect();
    ConfigQuality {
        overall: weighted_overall(&weights).ok(),
        per_repo,
        n_runs: runs.len(),
        n_success: runs.iter().filter(|r| r.outcome.is_success()).count(),
    }
}

/// Aggregates the ledger. Repository weights come from `features`; repos
/// absent from it are weighted by the number of distinct tasks observed.
pub fn build_report(
    records: &[RunRecord],
    features: &[FeatureTask],
    comparisons: &[Comparison],
) -> AggregateReport {
    let cells = latest_per_cell(records);
    let mut gaps = Vec::new();

    let mut repo_weights: BTreeMap<String, usize> = BTreeMap::new();
    for f in features {
        *repo_weights.entry(f.repo_id.clone()).or_default() += 1;
    }
    let mut observed: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();
    for r in cells.values() {
        observed
            .entry(r.repo_id.clone())
            .or_default()
            .insert(&r.task_id);
    }
    for (repo, tasks) in &observed {
        repo_weights.entry(repo.clone()).or_insert(tasks.len());
    }

    let configs: BTreeSet<ConfigurationKind> = cells.keys().map(|(_, c)| *c).collect();
    let mut quality = BTreeMap::new();
    for &c in &configs {
        let q = config_quality(&cells, c, &repo_weights);
        if q.overall.is_none() {
            gaps.push(format!("{c}: no judged runs with a patch"));
        }
        quality.insert(c, q);
    }

    let mut deltas = BTreeMap::new();
    let mut latency = BTreeMap::new();
    for &cmp in comparisons {
        let (qa, qb) = (quality.get(&cmp.a), quality.get(&cmp.b));
        match (qa.and_then(|q| q.overall), qb.and_then(|q| q.overall)) {
            (Some(oa), Some(ob)) => {
                let sample = paired(&cells, cmp, quality_eligible, composite_of);
                let wilcoxon = if sample.is_empty() {
                    gaps.push(format!(
                        "{}: no task judged under both configurations",
                        cmp.key()
                    ));
                    None
                } else {
                    wilcoxon_signed_rank(&sample, WilcoxonMode::Auto).ok()
                };
                if let Some(w) = wilcoxon.as_ref().filter(|w| w.degenerate) {
                    gaps.push(format!(
                        "{}: all {} paired differences are zero",
                        cmp.key(),
                        w.n_zero_dropped
                    ));
                }
                deltas.insert(
                    cmp.key(),
                    QualityDelta {
                        a: cmp.a,
                        b: cmp.b,
                        overall_a: oa,
                        overall_b: ob,
                        delta: ob - oa,
                        delta_pct: delta_pct(ob, oa).ok().map(round2),
                        p_value: wilcoxon.as_ref().and_then(|w| w.p_two_sided),
                        n_pairs: sample.len(),
                        wilcoxon,
                    },
                );
            }
            _ => gaps.push(format!("{}: quality missing for one side", cmp.key())),
        }
        if cmp.same_family() {
            match compare_latency(records, cmp) {
                Ok(l) => {
                    latency.insert(cmp.key(), l);
                }
                Err(e) => gaps.push(format!("{}: {e}", cmp.key())),
            }
        }
    }

    let mut failures: BTreeMap<FailureCategory, usize> =
        FailureCategory::ALL.into_iter().map(|c| (c, 0)).collect();
    let mut n_failed = 0;
    for r in cells.values() {
        if let Some(c) = r.outcome.category.filter(|_| !r.outcome.is_success()) {
            *failures.entry(c).or_default() += 1;
            n_failed += 1;
        }
    }
    if cells.is_empty() {
        gaps.push("no runs in the ledger".into());
    }

    AggregateReport {
        n_runs: cells.len(),
        n_features: features.len(),
        quality,
        deltas,
        latency,
        failures,
        n_failed,
        gaps,
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}"))
        .unwrap_or_else(|| "n/a".into())
}

pub fn render_markdown(report: &AggregateReport) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# Experiment report\n");
    let _ = writeln!(
        md,
        "{} runs over {} feature tasks, {} failed.\n",
        report.n_runs, report.n_features, report.n_failed
    );
    let _ = writeln!(md, "## Judged quality\n");
    let _ = writeln!(md, "| config | repository | mean | features | judged |");
    let _ = writeln!(md, "|---|---|---|---|---|");
    for (c, q) in &report.quality {
        for (repo, rq) in &q.per_repo {
            let _ = writeln!(
                md,
                "| {c} | {repo} | {:.2} | {} | {} |",
                rq.mean_quality, rq.n_features, rq.n_judged
            );
        }
        let _ = writeln!(md, "| {c} | overall | {} | | |", fmt_opt(q.overall, 2));
    }
    let _ = writeln!(md, "\n## Paired deltas\n");
    let _ = writeln!(md, "| comparison | delta | delta % | p | pairs |");
    let _ = writeln!(md, "|---|---|---|---|---|");
    for (k, d) in &report.deltas {
        let _ = writeln!(
            md,
            "| {k} | {:+.2} | {} | {} | {} |",
            d.delta,
            fmt_opt(d.delta_pct, 2),
            fmt_opt(d.p_value, 4),
            d.n_pairs
        );
    }
    let _ = writeln!(md, "\n## Latency (minutes, completed runs)\n");
    let _ = writeln!(md, "| comparison | mean a | mean b | delta | pairs |");
    let _ = writeln!(md, "|---|---|---|---|---|");
    for (k, l) in &report.latency {
        let _ = writeln!(
            md,
            "| {k} | {:.1} | {:.1} | {:+.1} | {} |",
            l.mean_a, l.mean_b, l.delta, l.n_pairs
        );
    }
    let _ = writeln!(md, "\n## Failures\n");
    for (c, n) in report.failures.iter().filter(|(_, n)| **n > 0) {
        let _ = writeln!(md, "- {c}: {n}");
    }
    if !report.gaps.is_empty() {
        let _ = writeln!(md, "\n## Gaps\n");
        for g in &report.gaps {
            let _ = writeln!(md, "- {g}");
        }
    }
    md
}

/// Writes `report.json` and `report.md` into `dir`.
pub fn write_report(dir: &Path, report: &AggregateReport) -> Result<(), ReportError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(REPORT_JSON), serde_json::to_string_pretty(report)?)?;
    std::fs::write(dir.join(REPORT_MD), render_markdown(report))?;
    Ok(())
}
