//! The all-to-one baseline: a single trigger mixed into randomly chosen
//! training utterances whose labels are reassigned at random.

use cbw::config::RunConfig;
use cbw::pipeline;
use cbw::watermark::Method;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = RunConfig::default();
    config.corpus.n_speakers = 30;
    config.watermark.method = Method::O2a;
    let corpus = pipeline::main_corpus(&config)?;
    let benign = pipeline::provider(pipeline::train_model(&corpus, &config)?, &config);
    let run = pipeline::watermark_corpus(&corpus, &benign, &config)?;

    let relabeled = run.manifest.modified.iter().filter(|m| m.original_label != m.new_label).count();
    println!("{} utterances poisoned, {relabeled} with a changed label", run.manifest.modified.len());
    for m in run.manifest.modified.iter().take(5) {
        println!("  {} : {:?} -> {:?}", m.utterance_id, m.original_label, m.new_label);
    }
    Ok(())
}
