//! Audits a benign and a watermarked model with the watermark triggers in
//! both verification modes.

use cbw::config::RunConfig;
use cbw::corpus::Split;
use cbw::metrics;
use cbw::pipeline;
use cbw::verify::{self, Mode, SpeakerPool};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = RunConfig::default();
    config.corpus.n_speakers = 40;
    config.watermark.m_clusters = 10;
    config.verify.n_repeats = 1;
    let corpus = pipeline::main_corpus(&config)?;
    let dev = pipeline::dev_corpus(&config)?;
    let benign = pipeline::provider(pipeline::train_model(&corpus, &config)?, &config);
    let wm = pipeline::watermarked_model(&config, &corpus, &benign)?;

    let pool = SpeakerPool::from_corpus(&corpus, Some(Split::Test));
    let dev_pool = SpeakerPool::from_corpus(&dev, None);
    for (name, provider) in [("benign", &benign), ("watermarked", &wm.provider)] {
        let threshold = metrics::learn_threshold(provider, &dev_pool)?;
        let trials = verify::TrialConfig {
            threshold: Some(threshold),
            ..config.verify.trials(wm.triggers.len(), config.seed_for("verify"))
        };
        for mode in [Mode::Similarity, Mode::Decision] {
            let r = verify::verify(provider, &pool, &wm.triggers, &trials, mode)?;
            println!("{name:<12} {mode:?}: p = {:.3e}, {:?}", r.p_value, r.decision);
        }
    }
    Ok(())
}
