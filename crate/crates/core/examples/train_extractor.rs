//! Trains the discriminant-projection extractor and reports its EER on
//! held-out utterances.

use cbw::config::RunConfig;
use cbw::corpus::Split;
use cbw::metrics;
use cbw::pipeline;
use cbw::verify::SpeakerPool;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = RunConfig::default();
    config.corpus.n_speakers = 40;
    let corpus = pipeline::main_corpus(&config)?;
    let model = pipeline::train_model(&corpus, &config)?;
    println!("projection {} -> {} ({:?} pooling)", model.d_in, model.d_out, model.pooling);

    let provider = pipeline::provider(model, &config);
    let pool = SpeakerPool::from_corpus(&corpus, Some(Split::Test));
    let eer = metrics::pool_eer(&provider, &pool)?;
    println!("EER {:.4} at threshold {:.4}", eer.eer, eer.threshold);
    Ok(())
}
