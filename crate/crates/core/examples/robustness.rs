//! Re-runs the Dataset Stealing audit while queries pass through volume
//! changes or SpecAugment masking.

use cbw::config::RunConfig;
use cbw::corpus::Split;
use cbw::metrics;
use cbw::pipeline::{self, Perturbation, PerturbedProvider};
use cbw::signal::SpecAugmentConfig;
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
    let threshold = metrics::learn_threshold(&wm.provider, &SpeakerPool::from_corpus(&dev, None))?;
    let trials = verify::TrialConfig {
        threshold: Some(threshold),
        ..config.verify.trials(wm.triggers.len(), config.seed_for("verify"))
    };

    for run in 0..3u64 {
        for perturbation in [
            Perturbation::Volume { range_db: config.robustness.volume_range_db, seed: run },
            Perturbation::SpecAugment { config: SpecAugmentConfig::default(), seed: run },
        ] {
            let provider = PerturbedProvider::for_pool(&wm.provider, perturbation, &pool);
            let r = verify::verify(&provider, &pool, &wm.triggers, &trials, Mode::Decision)?;
            let kind = match perturbation {
                Perturbation::Volume { .. } => "volume",
                Perturbation::SpecAugment { .. } => "spec_augment",
            };
            println!("run {run} {kind:<12} p = {:.3e} {:?}", r.p_value, r.decision);
        }
    }
    Ok(())
}
