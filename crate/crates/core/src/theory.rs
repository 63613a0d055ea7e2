//! Minimum watermark success rate needed for the similarity test to reject,
//! plus Monte Carlo checks of that bound and of the growth of the success
//! rate with the number of enrolled speakers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::seeds::derive_seed;
use crate::stats::{self, StatsError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TheoryError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

pub type Result<T> = std::result::Result<T, TheoryError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInput {
    /// Number of verification trials.
    pub m: usize,
    pub alpha: f64,
    /// Probability that a trigger passes a model not trained on the watermark.
    pub p_beta_tau: f64,
}

impl BoundInput {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(TheoryError::InvalidInput(format!("m = {} must be at least 2", self.m)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(TheoryError::InvalidInput(format!("alpha = {} must be in (0, 1)", self.alpha)));
        }
        if !(self.p_beta_tau >= 0.0 && self.p_beta_tau < 1.0) {
            return Err(TheoryError::InvalidInput(format!(
                "p_beta_tau = {} must be in [0, 1)",
                self.p_beta_tau
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub w_min: f64,
    pub t_quantile_used: f64,
    pub discriminant: f64,
}

/// Coefficients `(a, b, c)` of `f(W) = a W^2 + b W + c`, whose larger root is the bound.
pub fn bound_quadratic(m: usize, t: f64, p: f64) -> (f64, f64, f64) {
    let k = (m - 1) as f64;
    (k + t * t, -(2.0 * k * p + t * t), k * p * p)
}

/// Smallest success rate `W` for which the one-tailed t-test on `m` binary
/// trial outcomes rejects `W = P` at level `alpha`.
pub fn wsr_bound(input: &BoundInput) -> Result<BoundResult> {
    input.validate()?;
    let t = stats::t_quantile(1.0 - input.alpha, (input.m - 1) as f64)?;
    let k = (input.m - 1) as f64;
    let p = input.p_beta_tau;
    let discriminant = 4.0 * t * t * p * k * (1.0 - p) + t.powi(4);
    let w_min = (2.0 * k * p + t * t + discriminant.sqrt()) / (2.0 * (k + t * t));
    Ok(BoundResult { w_min, t_quantile_used: t, discriminant })
}

/// The t-statistic on binary outcomes with `successes` out of `m`, tested
/// against `p`. Zero spread follows the stats module contract.
pub fn binary_t_test_rejects(successes: usize, m: usize, p: f64, t_crit: f64) -> bool {
    let w = successes as f64 / m as f64;
    let s2 = m as f64 / (m as f64 - 1.0) * (w - w * w);
    if s2 <= 0.0 {
        return w - p > 0.0;
    }
    (m as f64).sqrt() * (w - p) / s2.sqrt() > t_crit
}

/// Rejection probability of [`binary_t_test_rejects`] when outcomes are
/// Bernoulli(`w`), summed over the binomial distribution.
pub fn exact_rejection_rate(input: &BoundInput, w: f64) -> Result<f64> {
    input.validate()?;
    let m = input.m;
    let t = stats::t_quantile(1.0 - input.alpha, (m - 1) as f64)?;
    use statrs::distribution::{Binomial as StBinomial, Discrete};
    let dist = StBinomial::new(w, m as u64)
        .map_err(|e| TheoryError::InvalidInput(format!("success rate {w}: {e}")))?;
    Ok((0..=m)
        .filter(|&k| binary_t_test_rejects(k, m, input.p_beta_tau, t))
        .map(|k| dist.pmf(k as u64))
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    #[serde(rename = "W")]
    pub w: f64,
    /// Expected value of the observed success rate, equal to `W`.
    pub exact_mean: f64,
    pub empirical_rejection_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationTable {
    pub input: BoundInput,
    pub bound: BoundResult,
    pub n_sims: usize,
    pub seed: u64,
    pub rows: Vec<ValidationRow>,
}

impl ValidationTable {
    pub fn to_csv(&self) -> std::result::Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub const MIN_SIMS: usize = 1000;

/// For each `W` in the grid, simulates `n_sims` verifications of `m`
/// Bernoulli(`W`) trials and records how often the t-test rejects.
pub fn mc_validate_bound(input: &BoundInput, w_grid: &[f64], n_sims: usize, seed: u64) -> Result<ValidationTable> {
    input.validate()?;
    if n_sims < MIN_SIMS {
        return Err(TheoryError::InvalidInput(format!("n_sims = {n_sims} must be at least {MIN_SIMS}")));
    }
    if let Some(w) = w_grid.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(TheoryError::InvalidInput(format!("grid value {w} is not a rate")));
    }
    let bound = wsr_bound(input)?;
    let t = bound.t_quantile_used;
    let rows = w_grid
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("mc-validate/{i}")));
            let dist = Binomial::new(input.m as u64, w).expect("validated rate");
            let rejections = (0..n_sims)
                .filter(|_| binary_t_test_rejects(dist.sample(&mut rng) as usize, input.m, input.p_beta_tau, t))
                .count();
            ValidationRow { w, exact_mean: w, empirical_rejection_rate: rejections as f64 / n_sims as f64 }
        })
        .collect();
    Ok(ValidationTable { input: *input, bound, n_sims, seed, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityRow {
    pub n_enrolled: usize,
    /// `1 - (1 - p')^N`.
    pub exact_mean: f64,
    pub empirical_mean: f64,
    pub standard_error: f64,
    pub within_3_se: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityTable {
    pub p_single: f64,
    pub m: usize,
    pub n_sims: usize,
    pub rows: Vec<MonotonicityRow>,
    /// Empirical means strictly increase with N.
    pub strictly_increasing: bool,
}

/// Simulates the 1-to-N success rate: a trial succeeds when any of the `N`
/// enrolled voiceprints accepts, each independently with probability `p_single`.
pub fn n_monotonicity_check(
    p_single: f64,
    n_values: &[usize],
    m: usize,
    n_sims: usize,
    seed: u64,
) -> Result<MonotonicityTable> {
    if !(0.0..=1.0).contains(&p_single) {
        return Err(TheoryError::InvalidInput(format!("p' = {p_single} must be a probability")));
    }
    if m == 0 || n_sims < 2 || n_values.contains(&0) {
        return Err(TheoryError::InvalidInput("m, n_sims and every N must be positive".into()));
    }
    let rows: Vec<MonotonicityRow> = n_values
        .iter()
        .map(|&n| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("n-monotonicity/{n}")));
            let rates: Vec<f64> = (0..n_sims)
                .map(|_| {
                    let passes = (0..m)
                        .filter(|_| (0..n).any(|_| rng.random::<f64>() < p_single))
                        .count();
                    passes as f64 / m as f64
                })
                .collect();
            let (mean, sd) = stats::mean_sd(&rates);
            let se = sd / (n_sims as f64).sqrt();
            let exact = 1.0 - (1.0 - p_single).powi(n as i32);
            MonotonicityRow {
                n_enrolled: n,
                exact_mean: exact,
                empirical_mean: mean,
                standard_error: se,
                within_3_se: (mean - exact).abs() <= 3.0 * se,
            }
        })
        .collect();
    let strictly_increasing = rows.windows(2).all(|w| w[1].empirical_mean > w[0].empirical_mean);
    Ok(MonotonicityTable { p_single, m, n_sims, rows, strictly_increasing })
}

/// Fraction of null trials in which the trigger similarity beats `tau` times
/// the benign similarity; an empirical stand-in for `P_{beta,tau}`.
pub fn estimate_p_beta_tau(s_b: &[f64], s_w: &[f64], tau: f64) -> Result<f64> {
    if s_b.len() != s_w.len() || s_b.is_empty() {
        return Err(TheoryError::InvalidInput("need equally many non-zero S_b and S_w values".into()));
    }
    let hits = s_b.iter().zip(s_w).filter(|(b, w)| **w > tau * **b).count();
    Ok(hits as f64 / s_b.len() as f64)
}
