//! Full audit on the default synthetic corpus: trains a benign and a
//! watermarked model, then runs the three verification scenarios in both modes.
//!
//! `cargo run --release --example scenario_suite [seed]`

use cbw::config::RunConfig;
use cbw::pipeline;
use cbw::verify::{render_table, Mode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = RunConfig::default();
    if let Some(seed) = std::env::args().nth(1) {
        config.seed = seed.parse()?;
    }
    let corpus = pipeline::main_corpus(&config)?;
    let dev = pipeline::dev_corpus(&config)?;
    let outcome = pipeline::run_suite(&config, &corpus, &dev, &[Mode::Similarity, Mode::Decision])?;

    println!("benign EER       {:.4} (threshold {:.4})", outcome.benign.eer.eer, outcome.benign.threshold);
    println!("watermarked EER  {:.4} (threshold {:.4})", outcome.watermarked.eer.eer, outcome.watermarked.threshold);
    for w in &outcome.watermarked.wsr {
        println!("WSR 1-to-{}        {:.3} ({} of {})", w.scenario.n_enrolled, w.wsr, w.passes, w.n_queries);
    }
    println!();
    print!("{}", render_table(&outcome.reports));
    Ok(())
}
