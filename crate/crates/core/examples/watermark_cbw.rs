//! Clusters speakers with a benign model and implants one trigger per
//! cluster into a fraction of that cluster's training utterances.

use cbw::config::RunConfig;
use cbw::pipeline;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = RunConfig::default();
    config.corpus.n_speakers = 30;
    config.watermark.m_clusters = 6;
    let corpus = pipeline::main_corpus(&config)?;
    let benign = pipeline::provider(pipeline::train_model(&corpus, &config)?, &config);
    let run = pipeline::watermark_corpus(&corpus, &benign, &config)?;

    let clusters = run.assignment.as_ref().expect("CBW clusters speakers");
    println!("k-means: inertia {:.4} after {} iterations", clusters.inertia, clusters.n_iterations);
    for c in 0..clusters.n_clusters() {
        let members = clusters.members(c);
        let modified = run.manifest.modified.iter().filter(|m| m.trigger_index == c).count();
        let hz = &run.manifest.triggers[c].frequencies;
        println!("cluster {c}: {} speakers, {modified} utterances carry the {hz:?} Hz trigger", members.len());
    }
    Ok(())
}
