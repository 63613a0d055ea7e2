//! Equal error rate, dev-corpus threshold and watermark success rate of a
//! watermarked model.

use cbw::config::RunConfig;
use cbw::corpus::Split;
use cbw::pipeline;
use cbw::verify::SpeakerPool;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = RunConfig::default();
    config.corpus.n_speakers = 40;
    config.watermark.m_clusters = 10;
    let corpus = pipeline::main_corpus(&config)?;
    let dev = pipeline::dev_corpus(&config)?;
    let benign = pipeline::provider(pipeline::train_model(&corpus, &config)?, &config);
    let wm = pipeline::watermarked_model(&config, &corpus, &benign)?;

    let eval = pipeline::evaluate_model(
        &wm.provider,
        &SpeakerPool::from_corpus(&corpus, Some(Split::Test)),
        &SpeakerPool::from_corpus(&dev, None),
        Some(&wm.triggers),
        &config,
    )?;
    println!("EER {:.4}, dev threshold {:.4}", eval.eer.eer, eval.threshold);
    for w in &eval.wsr {
        println!("WSR 1-to-{}: {:.3} over {} queries", w.scenario.n_enrolled, w.wsr, w.n_queries);
    }
    Ok(())
}
