//! Bootstrap confidence intervals, the Wilcoxon signed-rank test and a
//! sign-flip permutation test on paired per-item ranks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const DEFAULT_ITERATIONS: usize = 10_000;

/// Largest sample for which the Wilcoxon null is enumerated exactly.
pub const WILCOXON_EXACT_MAX_N: usize = 12;

/// Tolerance used when comparing resampled statistics to the observed one,
/// so that permutations tying the observed value count as extreme despite
/// rounding in the summation.
const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub method: String,
    pub point_estimate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_low: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_high: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    /// Test statistic, when distinct from the point estimate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub statistic: Option<f64>,
    pub n: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Set when the input carried no information (e.g. all differences zero).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

fn check_finite(xs: &[f64], what: &'static str) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Quantile of sorted data with linear interpolation between order
/// statistics (the common "type 7" definition).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap of the sample mean.
pub fn bootstrap_ci(
    sample: &[f64],
    iterations: usize,
    level: f64,
    seed: u64,
) -> Result<StatResult> {
    if sample.is_empty() {
        return Err(Error::InvalidInput(
            "bootstrap needs a non-empty sample".into(),
        ));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!(
            "confidence level must be in (0, 1), got {level}"
        )));
    }
    if iterations == 0 {
        return Err(Error::InvalidInput(
            "bootstrap needs at least one iteration".into(),
        ));
    }
    check_finite(sample, "bootstrap sample")?;

    let n = sample.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..iterations)
        .map(|_| (0..n).map(|_| sample[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    Ok(StatResult {
        method: "bootstrap_percentile".into(),
        point_estimate: mean(sample),
        ci_low: Some(quantile_sorted(&means, alpha / 2.0)),
        ci_high: Some(quantile_sorted(&means, 1.0 - alpha / 2.0)),
        p_value: None,
        statistic: None,
        n,
        iterations,
        seed,
        degenerate: false,
    })
}

/// Ranks of `values` (1-based) with ties given their average rank, plus the
/// sizes of all tie groups.
fn average_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = r;
        }
        ties.push(end - start);
        start = end;
    }
    (ranks, ties)
}

/// Two-sided Wilcoxon signed-rank test. Zero differences are dropped;
/// samples of up to [`WILCOXON_EXACT_MAX_N`] use the exact null, larger ones
/// the normal approximation with tie and continuity corrections.
pub fn wilcoxon_signed_rank(diffs: &[f64]) -> Result<StatResult> {
    check_finite(diffs, "wilcoxon differences")?;
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let n = nonzero.len();
    let point = if diffs.is_empty() { 0.0 } else { mean(diffs) };
    let mut result = StatResult {
        method: String::new(),
        point_estimate: point,
        ci_low: None,
        ci_high: None,
        p_value: Some(1.0),
        statistic: Some(0.0),
        n,
        iterations: 0,
        seed: 0,
        degenerate: false,
    };
    if n == 0 {
        result.method = "wilcoxon_degenerate".into();
        result.degenerate = true;
        return Ok(result);
    }

    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = average_ranks(&abs);
    let w_plus: f64 = ranks
        .iter()
        .zip(&nonzero)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| r)
        .sum();
    let expected = n as f64 * (n as f64 + 1.0) / 4.0;
    let observed = (w_plus - expected).abs();
    result.statistic = Some(w_plus);

    let p = if n <= WILCOXON_EXACT_MAX_N {
        result.method = "wilcoxon_exact".into();
        let total = 1u32 << n;
        let extreme = (0..total)
            .filter(|mask| {
                let w: f64 = (0..n)
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| ranks[i])
                    .sum();
                (w - expected).abs() >= observed - TIE_EPS
            })
            .count();
        extreme as f64 / total as f64
    } else {
        result.method = "wilcoxon_normal".into();
        let nf = n as f64;
        let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
        let z = ((observed - 0.5).max(0.0)) / var.sqrt();
        let normal = Normal::standard();
        2.0 * (1.0 - normal.cdf(z))
    };
    result.p_value = Some(p.min(1.0));
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationMode {
    /// Enumerate all 2^n sign patterns (n ≤ 24).
    Exhaustive,
    MonteCarlo {
        iterations: usize,
        seed: u64,
    },
}

pub const EXHAUSTIVE_MAX_N: usize = 24;

/// Two-sided sign-flip permutation test on `(rank_method, rank_baseline)`
/// pairs. The statistic is the mean of `rank_method - rank_baseline`; under
/// the null the two labels are exchangeable within each item.
pub fn permutation_test(
    per_item_ranks: &[(f64, f64)],
    mode: PermutationMode,
) -> Result<StatResult> {
    if per_item_ranks.is_empty() {
        return Err(Error::InvalidInput(
            "permutation test needs at least one item".into(),
        ));
    }
    let diffs: Vec<f64> = per_item_ranks.iter().map(|(m, b)| m - b).collect();
    check_finite(&diffs, "permutation ranks")?;
    let n = diffs.len();
    let observed_mean = mean(&diffs);
    let observed = observed_mean.abs();
    let is_extreme = |s: f64| s.abs() >= observed - TIE_EPS;

    let (p, iterations, seed, method) = match mode {
        PermutationMode::Exhaustive => {
            if n > EXHAUSTIVE_MAX_N {
                return Err(Error::InvalidInput(format!(
                    "exhaustive permutation limited to {EXHAUSTIVE_MAX_N} items, got {n}"
                )));
            }
            let total = 1u64 << n;
            let extreme = (0..total)
                .filter(|mask| {
                    let s: f64 = diffs
                        .iter()
                        .enumerate()
                        .map(|(i, d)| if mask & (1 << i) != 0 { -d } else { *d })
                        .sum();
                    is_extreme(s / n as f64)
                })
                .count();
            (
                extreme as f64 / total as f64,
                total as usize,
                0,
                "permutation_exhaustive",
            )
        }
        PermutationMode::MonteCarlo { iterations, seed } => {
            if iterations == 0 {
                return Err(Error::InvalidInput(
                    "permutation test needs at least one iteration".into(),
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let extreme = (0..iterations)
                .filter(|_| {
                    let s: f64 = diffs
                        .iter()
                        .map(|d| if rng.random_bool(0.5) { -d } else { *d })
                        .sum();
                    is_extreme(s / n as f64)
                })
                .count();
            (
                (extreme + 1) as f64 / (iterations + 1) as f64,
                iterations,
                seed,
                "permutation_monte_carlo",
            )
        }
    };
    Ok(StatResult {
        method: method.into(),
        point_estimate: observed_mean,
        ci_low: None,
        ci_high: None,
        p_value: Some(p),
        statistic: None,
        n,
        iterations,
        seed,
        degenerate: diffs.iter().all(|d| *d == 0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn bootstrap_constant_samples() {
        let r = bootstrap_ci(&[1.0; 40], 500, 0.95, 3).unwrap();
        assert_eq!((r.ci_low, r.ci_high), (Some(1.0), Some(1.0)));
        let r = bootstrap_ci(&[0.0; 40], 500, 0.95, 3).unwrap();
        assert_eq!((r.ci_low, r.ci_high), (Some(0.0), Some(0.0)));
    }

    #[test]
    fn bootstrap_rejects_bad_input() {
        assert!(bootstrap_ci(&[], 10, 0.95, 0).is_err());
        assert!(bootstrap_ci(&[1.0], 10, 1.0, 0).is_err());
        assert!(bootstrap_ci(&[f64::NAN], 10, 0.95, 0).is_err());
    }

    #[test]
    fn bootstrap_is_deterministic_per_seed() {
        let xs: Vec<f64> = (0..30).map(|i| (i % 3) as f64).collect();
        assert_eq!(
            bootstrap_ci(&xs, 200, 0.9, 7).unwrap(),
            bootstrap_ci(&xs, 200, 0.9, 7).unwrap()
        );
        assert_ne!(
            bootstrap_ci(&xs, 200, 0.9, 7).unwrap(),
            bootstrap_ci(&xs, 200, 0.9, 8).unwrap()
        );
    }

    #[test]
    fn quantile_interpolates() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&xs, 0.0), 1.0);
        assert_eq!(quantile_sorted(&xs, 1.0), 4.0);
        assert_abs_diff_eq!(quantile_sorted(&xs, 0.5), 2.5);
        assert_abs_diff_eq!(quantile_sorted(&xs, 0.25), 1.75);
    }

    #[test]
    fn wilcoxon_small_exact_cases() {
        assert_eq!(
            wilcoxon_signed_rank(&[1.0, 2.0, 3.0]).unwrap().p_value,
            Some(0.25)
        );
        assert_eq!(wilcoxon_signed_rank(&[5.0]).unwrap().p_value, Some(1.0));
        let z = wilcoxon_signed_rank(&[0.0, 0.0]).unwrap();
        assert!(z.degenerate);
        assert_eq!(z.p_value, Some(1.0));
    }

    #[test]
    fn wilcoxon_zeros_dropped() {
        let a = wilcoxon_signed_rank(&[1.0, 0.0, 2.0, 3.0]).unwrap();
        assert_eq!(a.p_value, Some(0.25));
        assert_eq!(a.n, 3);
    }

    #[test]
    fn wilcoxon_normal_matches_reference() {
        // Reference p-values from scipy.stats.wilcoxon(method="approx", correction=True).
        let diffs: Vec<f64> = (1..=15).map(f64::from).collect();
        let r = wilcoxon_signed_rank(&diffs).unwrap();
        assert_eq!(r.method, "wilcoxon_normal");
        assert_abs_diff_eq!(r.p_value.unwrap(), 0.0007265138800579532, epsilon = 1e-12);
        let tied = [
            1.0, 2.0, 2.0, 3.0, 3.0, 3.0, -1.0, 4.0, 5.0, 6.0, 7.0, 8.0, -2.0, 9.0, 10.0,
        ];
        let r = wilcoxon_signed_rank(&tied).unwrap();
        assert_abs_diff_eq!(r.p_value.unwrap(), 0.002122210599855456, epsilon = 1e-12);
    }

    #[test]
    fn permutation_identical_ranks_give_one() {
        let items = vec![(2.0, 2.0); 8];
        assert_eq!(
            permutation_test(&items, PermutationMode::Exhaustive)
                .unwrap()
                .p_value,
            Some(1.0)
        );
        let mc = PermutationMode::MonteCarlo {
            iterations: 99,
            seed: 1,
        };
        assert_eq!(permutation_test(&items, mc).unwrap().p_value, Some(1.0));
    }

    #[test]
    fn permutation_all_favouring_exhaustive() {
        let items = vec![(1.0, 3.0); 12];
        let p = permutation_test(&items, PermutationMode::Exhaustive)
            .unwrap()
            .p_value
            .unwrap();
        assert_eq!(p, 2.0 / 4096.0);
    }

    proptest! {
        #[test]
        fn wilcoxon_sign_symmetric(diffs in prop::collection::vec(-5i32..5, 1..16)) {
            let d: Vec<f64> = diffs.iter().map(|&x| x as f64).collect();
            let neg: Vec<f64> = d.iter().map(|x| -x).collect();
            let p = wilcoxon_signed_rank(&d).unwrap().p_value.unwrap();
            let q = wilcoxon_signed_rank(&neg).unwrap().p_value.unwrap();
            prop_assert!((p - q).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&p));
        }

        #[test]
        fn bootstrap_bounds_inside_sample_range(xs in prop::collection::vec(0.0f64..1.0, 2..40), seed in 0u64..100) {
            let r = bootstrap_ci(&xs, 200, 0.95, seed).unwrap();
            let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (a, b) = (r.ci_low.unwrap(), r.ci_high.unwrap());
            prop_assert!(lo - 1e-12 <= a && a <= b && b <= hi + 1e-12);
        }
    }
}
