//! Synthesizes a small speaker corpus, writes it as WAV files plus a
//! manifest, and reads it back.
//!
//! `cargo run --example synth_corpus -- [out_dir]`

use cbw::corpus::{self, Split, SynthConfig};
use cbw::seeds::derive_seed;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "cbw-example-corpus".into());
    let config = SynthConfig { n_speakers: 10, utterances_per_speaker: 8, ..SynthConfig::default() };
    let manifest = corpus::synth_corpus(&config, 7, &out)?;
    println!("wrote {} utterances from {} speakers to {out}", manifest.entries.len(), manifest.speakers().len());

    let loaded = corpus::Corpus::load(&corpus::load_manifest(format!("{out}/{}", corpus::MANIFEST_FILE))?)?;
    let train = loaded.split(Split::Train).count();
    println!("train/test: {train}/{}", loaded.utterances.len() - train);
    for sid in loaded.speakers().iter().take(3) {
        let profile = corpus::speaker_profile(sid, derive_seed(7, &format!("speaker/{sid}")), &config);
        println!("{}: f0 {:.1} Hz", profile.speaker_id, profile.f0);
    }
    Ok(())
}
