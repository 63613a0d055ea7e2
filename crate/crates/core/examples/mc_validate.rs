//! Monte Carlo check of the bound and of the growth of success with the
//! number of enrolled speakers.

use cbw::theory::{mc_validate_bound, n_monotonicity_check, BoundInput};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let input = BoundInput { m: 60, alpha: 0.05, p_beta_tau: 0.3 };
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let table = mc_validate_bound(&input, &grid, 5000, 3)?;
    println!("w_min = {:.4}", table.bound.w_min);
    print!("{}", table.to_csv()?);

    let mono = n_monotonicity_check(0.3, &[1, 3, 5], 60, 5000, 4)?;
    for r in &mono.rows {
        println!("N = {}: exact {:.4}, simulated {:.4} +- {:.4}", r.n_enrolled, r.exact_mean, r.empirical_mean, r.standard_error);
    }
    println!("strictly increasing: {}", mono.strictly_increasing);
    Ok(())
}
