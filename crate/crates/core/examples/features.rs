//! Frames, VAD and log-mel features of one synthetic utterance, then the
//! pooled statistics fed to the extractor.

use cbw::corpus::{self, SynthConfig};
use cbw::embedding::{pool_features, Pooling};
use cbw::signal::{FeatureConfig, FeatureExtractor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = SynthConfig::default();
    let profile = corpus::speaker_profile("spk000", 1, &config);
    let utterance = corpus::synth_utterance(&profile, 11, &config);
    println!("{} samples at {} Hz, RMS {:.4}", utterance.len(), utterance.sample_rate, utterance.rms());

    let extractor = FeatureExtractor::new(FeatureConfig::default());
    let features = extractor.extract(&utterance)?;
    println!("{} voiced frames x {} mel bands", features.n_frames(), features.n_mels);
    for pooling in [Pooling::Mean, Pooling::MeanStd] {
        let pooled = pool_features(&features, pooling)?;
        println!("{pooling:?}: {} dims, first {:.3}", pooled.len(), pooled[0]);
    }
    Ok(())
}
