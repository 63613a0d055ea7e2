//! Student-t and normal distribution functions, the one-tailed paired t-test
//! and the one-tailed Wilcoxon signed-rank test.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("degrees of freedom must be at least 1, got {0}")]
    InvalidDf(f64),
    #[error("probability must be in (0, 1), got {0}")]
    InvalidProbability(f64),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, StatsError>;

/// Largest number of nonzero differences for which the Wilcoxon null
/// distribution is computed exactly.
pub const WILCOXON_EXACT_MAX_N: usize = 25;

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn check_df(df: f64) -> Result<()> {
    if df >= 1.0 && df.is_finite() {
        Ok(())
    } else {
        Err(StatsError::InvalidDf(df))
    }
}

/// Upper tail `P(T > x)` of Student's t, computed directly so that small
/// tail probabilities keep their relative precision.
pub fn t_sf(x: f64, df: f64) -> Result<f64> {
    check_df(df)?;
    if x.is_nan() {
        return Ok(f64::NAN);
    }
    if x == 0.0 {
        return Ok(0.5);
    }
    if x.is_infinite() {
        return Ok(if x > 0.0 { 0.0 } else { 1.0 });
    }
    let half_tail = 0.5 * beta_reg(df / 2.0, 0.5, df / (df + x * x));
    Ok(if x > 0.0 { half_tail } else { 1.0 - half_tail })
}

/// CDF of Student's t via the regularized incomplete beta function.
pub fn t_cdf(x: f64, df: f64) -> Result<f64> {
    check_df(df)?;
    if x == 0.0 {
        return Ok(0.5);
    }
    if x.is_infinite() {
        return Ok(if x > 0.0 { 1.0 } else { 0.0 });
    }
    let half_tail = 0.5 * beta_reg(df / 2.0, 0.5, df / (df + x * x));
    Ok(if x > 0.0 { 1.0 - half_tail } else { half_tail })
}

fn t_pdf(x: f64, df: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let ln_norm = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    (ln_norm - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp()
}

/// Inverse of [`t_cdf`] by bracketing, bisection and a Newton polish.
pub fn t_quantile(p: f64, df: f64) -> Result<f64> {
    check_df(df)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(StatsError::InvalidProbability(p));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let f = |x: f64| t_cdf(x, df).map(|c| c - p);
    let (mut lo, mut hi) = (-1.0, 1.0);
    while f(lo)? > 0.0 {
        lo *= 2.0;
    }
    while f(hi)? < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..3 {
        let step = f(x)? / t_pdf(x, df);
        let next = x - step;
        if !next.is_finite() || f(next)?.abs() >= f(x)?.abs() {
            break;
        }
        x = next;
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    /// Infinite when the differences have zero spread and nonzero mean.
    pub t_stat: f64,
    pub df: usize,
    pub p_value: f64,
    pub mean_diff: f64,
}

/// Sample mean and sample standard deviation (denominator `n - 1`).
pub fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let ss = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// One-sample one-tailed t-test of `H1: mean(d) > 0`. Zero spread gives
/// `p = 0` when the mean is positive and `p = 1` otherwise.
pub fn one_sample_t_test_upper(d: &[f64]) -> Result<TTestResult> {
    let m = d.len();
    if m < 2 {
        return Err(StatsError::TooFewSamples { needed: 2, got: m });
    }
    let (mean, sd) = mean_sd(d);
    let df = m - 1;
    if sd == 0.0 {
        let (t_stat, p_value) = if mean > 0.0 {
            (f64::INFINITY, 0.0)
        } else if mean < 0.0 {
            (f64::NEG_INFINITY, 1.0)
        } else {
            (0.0, 1.0)
        };
        return Ok(TTestResult { t_stat, df, p_value, mean_diff: mean });
    }
    let t_stat = (m as f64).sqrt() * mean / sd;
    Ok(TTestResult { t_stat, df, p_value: t_sf(t_stat, df as f64)?, mean_diff: mean })
}

/// Paired one-tailed t-test of `H1: a > tau * b` on `d_i = a_i - tau * b_i`.
pub fn paired_t_test_one_tailed(a: &[f64], b: &[f64], tau: f64) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - tau * y).collect();
    one_sample_t_test_upper(&d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankTestMethod {
    Exact,
    NormalApprox,
    SignTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of positive differences (for the sign test: the count of positives).
    pub w_stat: f64,
    pub n_effective: usize,
    pub p_value: f64,
    pub method: RankTestMethod,
}

/// Average ranks (1-based) of the values, ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn nonzero_diffs(w: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if w.len() != b.len() {
        return Err(StatsError::LengthMismatch(w.len(), b.len()));
    }
    Ok(w.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect())
}

/// Exact upper-tail probability `P(W+ >= observed)` for the given ranks,
/// every sign pattern equally likely. Ranks are multiples of 1/2, so the
/// distribution is tabulated over doubled ranks.
fn exact_upper_tail(ranks: &[f64], observed: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            let c = counts[s];
            if c != 0.0 {
                counts[s + r] += c;
            }
        }
        reach += r;
    }
    let obs = (2.0 * observed).round() as usize;
    let tail: f64 = counts[obs.min(total + 1)..].iter().sum();
    tail / 2f64.powi(ranks.len() as i32)
}

/// One-tailed Wilcoxon signed-rank test of `H1: w` tends to exceed `b`.
pub fn wilcoxon_one_tailed(w: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    let d = nonzero_diffs(w, b)?;
    let n = d.len();
    if n == 0 {
        return Ok(WilcoxonResult { w_stat: 0.0, n_effective: 0, p_value: 1.0, method: RankTestMethod::Exact });
    }
    let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    if n <= WILCOXON_EXACT_MAX_N {
        return Ok(WilcoxonResult {
            w_stat: w_plus,
            n_effective: n,
            p_value: exact_upper_tail(&ranks, w_plus).clamp(0.0, 1.0),
            method: RankTestMethod::Exact,
        });
    }
    Ok(WilcoxonResult {
        w_stat: w_plus,
        n_effective: n,
        p_value: wilcoxon_normal_p(&ranks, w_plus),
        method: RankTestMethod::NormalApprox,
    })
}

/// Normal approximation with tie and continuity corrections.
fn wilcoxon_normal_p(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|r| **r == sorted[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return if w_plus > mean { 0.0 } else { 1.0 };
    }
    let z = (w_plus - mean - 0.5) / var.sqrt();
    (1.0 - normal_cdf(z)).clamp(0.0, 1.0)
}

/// Same inputs as [`wilcoxon_one_tailed`] but forces the normal approximation.
pub fn wilcoxon_normal_approx(w: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    let d = nonzero_diffs(w, b)?;
    if d.is_empty() {
        return Ok(WilcoxonResult {
            w_stat: 0.0,
            n_effective: 0,
            p_value: 1.0,
            method: RankTestMethod::NormalApprox,
        });
    }
    let ranks = average_ranks(&d.iter().map(|x| x.abs()).collect::<Vec<_>>());
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    Ok(WilcoxonResult {
        w_stat: w_plus,
        n_effective: d.len(),
        p_value: wilcoxon_normal_p(&ranks, w_plus),
        method: RankTestMethod::NormalApprox,
    })
}

/// Exact one-tailed sign test: `P(X >= positives)` with `X ~ Binomial(n, 1/2)`.
pub fn sign_test_one_tailed(w: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    let d = nonzero_diffs(w, b)?;
    let n = d.len();
    let k = d.iter().filter(|x| **x > 0.0).count();
    if n == 0 {
        return Ok(WilcoxonResult { w_stat: 0.0, n_effective: 0, p_value: 1.0, method: RankTestMethod::SignTest });
    }
    // Sum binomial terms in log space to stay finite for large n.
    use statrs::function::factorial::ln_binomial;
    let ln_half_n = n as f64 * 0.5f64.ln();
    let p: f64 = (k..=n).map(|j| (ln_binomial(n as u64, j as u64) + ln_half_n).exp()).sum();
    Ok(WilcoxonResult {
        w_stat: k as f64,
        n_effective: n,
        p_value: p.clamp(0.0, 1.0),
        method: RankTestMethod::SignTest,
    })
}
