use serde::{Deserialize, Serialize};

use super::EvalError;

/// `Auto` uses the exact null distribution up to this many nonzero
/// differences.
pub const EXACT_AUTO_LIMIT: usize = 25;

/// Largest nonzero count accepted in `Exact` mode.
pub const EXACT_MAX_N: usize = 2000;

/// Above this many nonzero differences the exact distribution is tracked as
/// probabilities instead of integer counts.
const COUNT_DP_LIMIT: usize = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WilcoxonMode {
    Exact,
    Approximate,
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WilcoxonMethod {
    Exact,
    Approximate,
    /// Every difference was zero.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of the ranks of the positive differences.
    pub statistic: f64,
    pub p_value: f64,
    pub nonzero: usize,
    pub zeros: usize,
    pub method: WilcoxonMethod,
    /// Standardized statistic, approximate mode only.
    pub z: Option<f64>,
}

impl WilcoxonResult {
    pub fn degenerate(&self) -> bool {
        self.method == WilcoxonMethod::Degenerate
    }
}

/// Two-sided signed-rank test on the paired differences `a_i - b_i`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64], mode: WilcoxonMode) -> Result<WilcoxonResult, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::Argument(format!(
            "paired series differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    wilcoxon_from_differences(&d, mode)
}

/// Midranks (1-based) of `|d|` over all entries, zeros included.
fn pratt_ranks(d: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&i, &j| d[i].abs().total_cmp(&d[j].abs()));
    let mut ranks = vec![0.0; d.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && d[order[j + 1]].abs() == d[order[i]].abs() {
            j += 1;
        }
        // positions i..=j share the mean of ranks i+1..=j+1
        let r = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Signed-rank test on precomputed differences.
///
/// Zeros follow Pratt: they take part in the ranking and are then dropped
/// from the statistic and its null distribution.
pub fn wilcoxon_from_differences(d: &[f64], mode: WilcoxonMode) -> Result<WilcoxonResult, EvalError> {
    if d.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::Argument("non-finite difference".into()));
    }
    let ranks = pratt_ranks(d);
    let kept: Vec<(f64, bool)> = d
        .iter()
        .zip(&ranks)
        .filter(|(v, _)| **v != 0.0)
        .map(|(v, r)| (*r, *v > 0.0))
        .collect();
    let m = kept.len();
    let zeros = d.len() - m;
    let statistic: f64 = kept.iter().filter(|(_, pos)| *pos).map(|(r, _)| r).sum();
    if m == 0 {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            p_value: 1.0,
            nonzero: 0,
            zeros,
            method: WilcoxonMethod::Degenerate,
            z: None,
        });
    }
    let exact = match mode {
        WilcoxonMode::Exact => {
            if m > EXACT_MAX_N {
                return Err(EvalError::Argument(format!(
                    "exact mode supports at most {EXACT_MAX_N} nonzero differences, got {m}"
                )));
            }
            true
        }
        WilcoxonMode::Approximate => false,
        WilcoxonMode::Auto => m <= EXACT_AUTO_LIMIT,
    };
    let rank_list: Vec<f64> = kept.iter().map(|(r, _)| *r).collect();
    if exact {
        Ok(WilcoxonResult {
            statistic,
            p_value: exact_p(&rank_list, statistic),
            nonzero: m,
            zeros,
            method: WilcoxonMethod::Exact,
            z: None,
        })
    } else {
        let (p, z) = normal_p(&rank_list, statistic);
        Ok(WilcoxonResult {
            statistic,
            p_value: p,
            nonzero: m,
            zeros,
            method: WilcoxonMethod::Approximate,
            z: Some(z),
        })
    }
}

/// Two-sided `min(1, 2 min(P(W ≤ w), P(W ≥ w)))` under random signs.
/// Midranks are multiples of 1/2, so the distribution is tracked over
/// doubled ranks.
fn exact_p(ranks: &[f64], statistic: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let w = (2.0 * statistic).round() as usize;
    if ranks.len() <= COUNT_DP_LIMIT {
        let mut counts = vec![0u128; total + 1];
        counts[0] = 1;
        let mut reach = 0;
        for &r in &doubled {
            for s in (0..=reach).rev() {
                if counts[s] != 0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let le: u128 = counts[..=w].iter().sum();
        let ge: u128 = counts[w..].iter().sum();
        let all = 2f64.powi(ranks.len() as i32);
        (2.0 * le.min(ge) as f64 / all).min(1.0)
    } else {
        let mut probs = vec![0.0f64; total + 1];
        probs[0] = 1.0;
        let mut reach = 0;
        for &r in &doubled {
            for s in (0..=reach).rev() {
                let half = probs[s] * 0.5;
                probs[s] = half;
                probs[s + r] += half;
            }
            reach += r;
        }
        let le: f64 = probs[..=w].iter().sum();
        let ge: f64 = probs[w..].iter().sum();
        (2.0 * le.min(ge)).min(1.0)
    }
}

/// Normal approximation with the tie-aware variance `Σr²/4` and a 0.5
/// continuity correction.
fn normal_p(ranks: &[f64], statistic: f64) -> (f64, f64) {
    let mean = ranks.iter().sum::<f64>() / 2.0;
    let var = ranks.iter().map(|r| r * r).sum::<f64>() / 4.0;
    let dev = statistic - mean;
    let corrected = (dev.abs() - 0.5).max(0.0);
    let z = corrected / var.sqrt() * dev.signum();
    let p = libm::erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0);
    (p, z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_positive_five() {
        let r = wilcoxon_from_differences(&[1.0, 2.0, 3.0, 4.0, 5.0], WilcoxonMode::Exact).unwrap();
        assert_eq!(r.statistic, 15.0);
        assert_eq!(r.p_value, 0.0625);
    }

    #[test]
    fn tied_pair_is_uninformative() {
        let r = wilcoxon_from_differences(&[1.0, -1.0], WilcoxonMode::Exact).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn identical_series_degenerate() {
        let a = [0.3, 0.1, 0.2];
        let r = wilcoxon_signed_rank(&a, &a, WilcoxonMode::Auto).unwrap();
        assert!(r.degenerate());
        assert_eq!(r.p_value, 1.0);
        assert!(wilcoxon_signed_rank(&a, &a[..2], WilcoxonMode::Auto).is_err());
    }

    #[test]
    fn pratt_zero_shifts_ranks() {
        // the zero holds rank 1, so the nonzero magnitudes rank 2 and 3
        let r = wilcoxon_from_differences(&[0.0, 1.0, 2.0], WilcoxonMode::Exact).unwrap();
        assert_eq!(r.statistic, 5.0);
        assert_eq!((r.nonzero, r.zeros), (2, 1));
        // signs over ranks {2, 3}: sums 0, 2, 3, 5 each 1/4
        assert_eq!(r.p_value, 0.5);
    }

    #[test]
    fn probability_dp_matches_count_dp() {
        let ranks: Vec<f64> = (1..=130).map(|r| r as f64).collect();
        let w = 5000.0;
        let p = exact_p(&ranks, w);
        let (pn, _) = normal_p(&ranks, w);
        assert!((p - pn).abs() < 0.01, "{p} {pn}");
    }
}
