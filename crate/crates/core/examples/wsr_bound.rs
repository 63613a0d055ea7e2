//! Smallest watermark success rate at which the similarity test can
//! reject, for a few trial counts and null success probabilities.

use cbw::theory::{wsr_bound, BoundInput};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("{:>5} {:>6} {:>8} {:>8}", "m", "P", "t", "w_min");
    for m in [20, 60, 200] {
        for p in [0.0, 0.1, 0.3] {
            let b = wsr_bound(&BoundInput { m, alpha: 0.05, p_beta_tau: p })?;
            println!("{m:>5} {p:>6.2} {:>8.4} {:>8.4}", b.t_quantile_used, b.w_min);
        }
    }
    Ok(())
}
