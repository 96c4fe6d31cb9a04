use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum StatsError {
    #[error("empty input")]
    Empty,
    #[error("non-positive weight or base {0}")]
    NonPositive(f64),
    #[error("non-finite value")]
    NonFinite,
    #[error("exact enumeration limited to {max} nonzero differences, got {n}")]
    TooLargeForExact { n: usize, max: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub task_id: String,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    pub pairs: Vec<Pair>,
}

impl PairedSample {
    pub fn from_values(a: &[f64], b: &[f64]) -> Self {
        Self {
            pairs: a
                .iter()
                .zip(b)
                .enumerate()
                .map(|(i, (a, b))| Pair {
                    task_id: format!("t{i}"),
                    a: *a,
                    b: *b,
                })
                .collect(),
        }
    }

    pub fn differences(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.b - p.a).collect()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Σ(mean × n) / Σ n.
pub fn weighted_overall(per_repo: &[(f64, usize)]) -> Result<f64, StatsError> {
    if per_repo.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut num = 0.0;
    let mut den = 0usize;
    for &(mean, n) in per_repo {
        if n == 0 {
            return Err(StatsError::NonPositive(0.0));
        }
        if !mean.is_finite() {
            return Err(StatsError::NonFinite);
        }
        num += mean * n as f64;
        den += n;
    }
    Ok(num / den as f64)
}

/// Percentage change of `q` relative to `base`, unrounded.
pub fn delta_pct(q: f64, base: f64) -> Result<f64, StatsError> {
    if base.is_nan() || base <= 0.0 {
        return Err(StatsError::NonPositive(base));
    }
    Ok((q - base) / base * 100.0)
}

/// Half-away-from-zero rounding to two decimals, for reports.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyDelta {
    pub mean_a: f64,
    pub mean_b: f64,
    pub delta: f64,
    pub n_pairs: usize,
}

pub fn latency_delta(sample: &PairedSample) -> Result<LatencyDelta, StatsError> {
    if sample.is_empty() {
        return Err(StatsError::Empty);
    }
    let n = sample.len() as f64;
    let mean_a = sample.pairs.iter().map(|p| p.a).sum::<f64>() / n;
    let mean_b = sample.pairs.iter().map(|p| p.b).sum::<f64>() / n;
    Ok(LatencyDelta {
        mean_a,
        mean_b,
        delta: mean_b - mean_a,
        n_pairs: sample.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    Exact,
    Approximate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMode {
    /// Exact up to [`EXACT_MAX_N`] nonzero differences, normal beyond.
    #[default]
    Auto,
    Exact,
    Approximate,
}

pub const EXACT_MAX_N: usize = 12;

/// Forced exact mode enumerates subset sums; counts fit in `u128` up to here.
pub const EXACT_HARD_LIMIT: usize = 120;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// `None` when every difference is zero.
    pub p_two_sided: Option<f64>,
    pub n_effective: usize,
    pub n_zero_dropped: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<WilcoxonMethod>,
    pub degenerate: bool,
}

/// Average ranks of `values` (ascending), doubled so they stay integral.
fn doubled_ranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0u64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j share the mean of ranks i+1..=j+1; doubled: i+j+2
        for &k in &order[i..=j] {
            ranks[k] = (i + j + 2) as u64;
        }
        i = j + 1;
    }
    ranks
}

fn tie_groups(values: &[f64]) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut groups = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        groups.push(j - i + 1);
        i = j + 1;
    }
    groups
}

/// P(|S − μ| ≥ |w − μ|) over all 2ⁿ sign assignments, by subset-sum counting
/// on doubled ranks.
fn exact_p(ranks2: &[u64], w_plus2: u64) -> f64 {
    let total: u64 = ranks2.iter().sum();
    let mut counts = vec![0u128; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in ranks2 {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let observed = (2 * w_plus2 as i128 - total as i128).abs();
    let extreme: u128 = counts
        .iter()
        .enumerate()
        .filter(|(s, _)| (2 * *s as i128 - total as i128).abs() >= observed)
        .map(|(_, c)| *c)
        .sum();
    extreme as f64 / 2f64.powi(ranks2.len() as i32)
}

fn approximate_p(n: usize, w_plus: f64, abs_diffs: &[f64]) -> f64 {
    let n = n as f64;
    let mean = n * (n + 1.0) / 4.0;
    let ties: f64 = tie_groups(abs_diffs)
        .into_iter()
        .map(|t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum();
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - ties / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * (1.0 - normal.cdf(z))).min(1.0)
}

pub fn wilcoxon_signed_rank(
    sample: &PairedSample,
    mode: WilcoxonMode,
) -> Result<WilcoxonResult, StatsError> {
    if sample.is_empty() {
        return Err(StatsError::Empty);
    }
    let all = sample.differences();
    if all.iter().any(|d| !d.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let nonzero: Vec<f64> = all.iter().copied().filter(|d| *d != 0.0).collect();
    let n = nonzero.len();
    let dropped = all.len() - n;
    if n == 0 {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            w_plus: 0.0,
            w_minus: 0.0,
            p_two_sided: None,
            n_effective: 0,
            n_zero_dropped: dropped,
            method: None,
            degenerate: true,
        });
    }
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let ranks2 = doubled_ranks(&abs);
    let w_plus2: u64 = nonzero
        .iter()
        .zip(&ranks2)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();
    let total2: u64 = ranks2.iter().sum();
    let w_plus = w_plus2 as f64 / 2.0;
    let w_minus = (total2 - w_plus2) as f64 / 2.0;
    let method = match mode {
        WilcoxonMode::Auto if n <= EXACT_MAX_N => WilcoxonMethod::Exact,
        WilcoxonMode::Auto | WilcoxonMode::Approximate => WilcoxonMethod::Approximate,
        WilcoxonMode::Exact => WilcoxonMethod::Exact,
    };
    let p = match method {
        WilcoxonMethod::Exact => {
            if n > EXACT_HARD_LIMIT {
                return Err(StatsError::TooLargeForExact {
                    n,
                    max: EXACT_HARD_LIMIT,
                });
            }
            exact_p(&ranks2, w_plus2)
        }
        WilcoxonMethod::Approximate => approximate_p(n, w_plus, &abs),
    };
    Ok(WilcoxonResult {
        statistic: w_plus.min(w_minus),
        w_plus,
        w_minus,
        p_two_sided: Some(p),
        n_effective: n,
        n_zero_dropped: dropped,
        method: Some(method),
        degenerate: false,
    })
}

#[cfg(test)]
pub(crate) mod oracle {
    /// Midranks by direct counting: rank = #smaller + (#equal + 1) / 2.
    pub fn midranks(values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .map(|v| {
                let less = values.iter().filter(|x| *x < v).count() as f64;
                let equal = values.iter().filter(|x| *x == v).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    }

    /// Two-sided exact p by walking every sign pattern as a bitmask.
    pub fn brute_force_p(diffs: &[f64]) -> Option<f64> {
        let d: Vec<f64> = diffs.iter().copied().filter(|x| *x != 0.0).collect();
        if d.is_empty() {
            return None;
        }
        let ranks = midranks(&d.iter().map(|x| x.abs()).collect::<Vec<_>>());
        let n = d.len();
        let mu = ranks.iter().sum::<f64>() / 2.0;
        let observed: f64 = d
            .iter()
            .zip(&ranks)
            .filter(|(x, _)| **x > 0.0)
            .map(|(_, r)| r)
            .sum();
        let threshold = (observed - mu).abs();
        let mut hits = 0u64;
        for mask in 0u64..(1 << n) {
            let w: f64 = (0..n)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| ranks[i])
                .sum();
            if (w - mu).abs() >= threshold - 1e-9 {
                hits += 1;
            }
        }
        Some(hits as f64 / (1u64 << n) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diffs(d: &[f64]) -> PairedSample {
        PairedSample::from_values(&vec![0.0; d.len()], d)
    }

    #[test]
    fn one_two_three() {
        let r = wilcoxon_signed_rank(&diffs(&[1.0, 2.0, 3.0]), WilcoxonMode::Auto).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_two_sided, Some(0.25));
        assert_eq!(r.method, Some(WilcoxonMethod::Exact));
    }

    #[test]
    fn all_zero_is_degenerate() {
        let r = wilcoxon_signed_rank(&diffs(&[0.0, 0.0]), WilcoxonMode::Auto).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_two_sided, None);
        assert_eq!(r.n_zero_dropped, 2);
        assert!(wilcoxon_signed_rank(&PairedSample::default(), WilcoxonMode::Auto).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(doubled_ranks(&[1.0, 2.0, 2.0, 3.0]), vec![2, 5, 5, 8]);
        assert_eq!(
            oracle::midranks(&[1.0, 2.0, 2.0, 3.0]),
            vec![1.0, 2.5, 2.5, 4.0]
        );
    }

    fn random_diffs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        // small integer magnitudes force ties; a few zeros get dropped
        (0..n)
            .map(|_| {
                let mag = rng.gen_range(0..6) as f64 * 0.5;
                if rng.gen_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            })
            .collect()
    }

    #[test]
    fn exact_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(500);
        for _ in 0..500 {
            let n = rng.gen_range(1..=12);
            let d = random_diffs(&mut rng, n);
            let got = wilcoxon_signed_rank(&diffs(&d), WilcoxonMode::Exact)
                .unwrap()
                .p_two_sided;
            let want = oracle::brute_force_p(&d);
            match (got, want) {
                (Some(g), Some(w)) => assert!((g - w).abs() < 1e-12, "{d:?}: {g} vs {w}"),
                (None, None) => {}
                other => panic!("{d:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn exact_and_normal_agree_at_twenty() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..50 {
            let d: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.5)).collect();
            let e = wilcoxon_signed_rank(&diffs(&d), WilcoxonMode::Exact).unwrap();
            let a = wilcoxon_signed_rank(&diffs(&d), WilcoxonMode::Approximate).unwrap();
            assert_eq!(e.n_effective, 20);
            let (pe, pa) = (e.p_two_sided.unwrap(), a.p_two_sided.unwrap());
            assert!((pe - pa).abs() <= 0.02, "{pe} vs {pa}");
        }
    }

    #[test]
    fn aggregation_examples() {
        assert_eq!(weighted_overall(&[(3.0, 1), (4.0, 3)]).unwrap(), 3.75);
        assert_eq!(weighted_overall(&[(3.2, 5)]).unwrap(), 3.2);
        assert!((weighted_overall(&[(3.0, 2), (4.0, 2)]).unwrap() - 3.5).abs() < 1e-12);
        assert!(weighted_overall(&[]).is_err());
        assert_eq!(round2(delta_pct(3.53, 3.51).unwrap()), 0.57);
        assert_eq!(round2(delta_pct(3.57, 3.51).unwrap()), 1.71);
        assert_eq!(round2(delta_pct(3.66, 3.51).unwrap()), 4.27);
        assert!(delta_pct(1.0, 0.0).is_err());
    }

    #[test]
    fn latency_examples() {
        let l = latency_delta(&PairedSample::from_values(&[14.4], &[15.5])).unwrap();
        assert!((l.delta - 1.1).abs() < 1e-9);
        assert_eq!(round2(l.delta), 1.1);
        let l = latency_delta(&PairedSample::from_values(&[24.0], &[37.2])).unwrap();
        assert!((l.delta - 13.2).abs() < 1e-9);
        let same = latency_delta(&PairedSample::from_values(&[3.0, 4.0], &[3.0, 4.0])).unwrap();
        assert_eq!(same.delta, 0.0);
        assert!(latency_delta(&PairedSample::default()).is_err());
    }

    proptest! {
        #[test]
        fn antisymmetric(d in proptest::collection::vec(-5i32..5, 1..15)) {
            let d: Vec<f64> = d.into_iter().map(f64::from).collect();
            let neg: Vec<f64> = d.iter().map(|x| -x).collect();
            let r = wilcoxon_signed_rank(&diffs(&d), WilcoxonMode::Auto).unwrap();
            let s = wilcoxon_signed_rank(&diffs(&neg), WilcoxonMode::Auto).unwrap();
            prop_assert_eq!(r.w_plus, s.w_minus);
            prop_assert_eq!(r.w_minus, s.w_plus);
            prop_assert_eq!(r.p_two_sided, s.p_two_sided);
        }

        #[test]
        fn monotone_rescaling_invariant(d in proptest::collection::vec(-5i32..5, 1..15), k in 0.1f64..10.0) {
            let d: Vec<f64> = d.into_iter().map(f64::from).collect();
            // sign-preserving, strictly increasing in |x|
            let scaled: Vec<f64> = d.iter().map(|x| x.signum() * (x.abs() * k).powi(3)).collect();
            let r = wilcoxon_signed_rank(&diffs(&d), WilcoxonMode::Auto).unwrap();
            let s = wilcoxon_signed_rank(&diffs(&scaled), WilcoxonMode::Auto).unwrap();
            prop_assert_eq!(r.p_two_sided, s.p_two_sided);
            prop_assert_eq!(r.statistic, s.statistic);
        }

        #[test]
        fn overall_within_bounds(v in proptest::collection::vec((1.0f64..5.0, 1usize..20), 1..8)) {
            let o = weighted_overall(&v).unwrap();
            let lo = v.iter().map(|x| x.0).fold(f64::INFINITY, f64::min);
            let hi = v.iter().map(|x| x.0).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(o >= lo - 1e-12 && o <= hi + 1e-12);
        }

        #[test]
        fn p_in_unit_interval(d in proptest::collection::vec(-3.0f64..3.0, 1..30)) {
            let r = wilcoxon_signed_rank(&diffs(&d), WilcoxonMode::Auto).unwrap();
            if let Some(p) = r.p_two_sided {
                prop_assert!((0.0..=1.0).contains(&p));
            }
        }
    }
}
