//! One JSON document holding every tunable of a run. Missing fields take
//! their defaults; unknown fields are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{self, SynthConfig};
use crate::embedding::{Pooling, TrainConfig};
use crate::seeds::derive_seed;
use crate::signal::{FeatureConfig, SpecAugmentConfig, TriggerFamily};
use crate::theory::BoundInput;
use crate::verify::{Mode, QueryStyle, TrialConfig};
use crate::watermark::{Method, TriggerPlanConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse config {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

fn invalid<T>(path: &str, message: impl Into<String>) -> Result<T> {
    Err(ConfigError::Invalid { path: path.into(), message: message.into() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub duration_ms: f64,
    pub sample_rate: u32,
    pub bandwidth_hz: f64,
    pub speech_level_db: f64,
    pub noise_level_db: f64,
    pub variability: f64,
    /// Unseen speakers used to learn acceptance thresholds.
    pub dev_speakers: usize,
    pub dev_utterances_per_speaker: usize,
}

impl Default for CorpusSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            n_speakers: s.n_speakers,
            utterances_per_speaker: s.utterances_per_speaker,
            duration_ms: s.duration_ms,
            sample_rate: s.sample_rate,
            bandwidth_hz: s.bandwidth_hz,
            speech_level_db: s.speech_level_db,
            noise_level_db: s.noise_level_db,
            variability: s.variability,
            dev_speakers: 30,
            dev_utterances_per_speaker: 4,
        }
    }
}

impl CorpusSection {
    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            n_speakers: self.n_speakers,
            utterances_per_speaker: self.utterances_per_speaker,
            duration_ms: self.duration_ms,
            sample_rate: self.sample_rate,
            bandwidth_hz: self.bandwidth_hz,
            speech_level_db: self.speech_level_db,
            noise_level_db: self.noise_level_db,
            variability: self.variability,
        }
    }

    pub fn dev_synth(&self) -> SynthConfig {
        SynthConfig {
            n_speakers: self.dev_speakers,
            utterances_per_speaker: self.dev_utterances_per_speaker,
            ..self.synth()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub n_mels: usize,
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub vad_db: f64,
}

impl Default for FeatureSection {
    fn default() -> Self {
        let f = FeatureConfig::default();
        Self { n_mels: f.n_mels, frame_ms: f.frame_width_ms, hop_ms: f.frame_step_ms, vad_db: f.vad_threshold_db }
    }
}

impl FeatureSection {
    pub fn features(&self) -> FeatureConfig {
        FeatureConfig {
            n_mels: self.n_mels,
            frame_width_ms: self.frame_ms,
            frame_step_ms: self.hop_ms,
            vad_threshold_db: self.vad_db,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub pooling: Pooling,
    pub d_out: Option<usize>,
    pub ridge: Option<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self { pooling: t.pooling, d_out: t.d_out, ridge: t.ridge }
    }
}

impl ModelSection {
    pub fn train(&self) -> TrainConfig {
        TrainConfig { pooling: self.pooling, d_out: self.d_out, ridge: self.ridge }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WatermarkSection {
    pub method: Method,
    pub m_clusters: usize,
    pub gamma: f64,
    pub trigger_family: TriggerFamily,
    pub trigger_base_hz: f64,
    pub trigger_spacing_hz: f64,
    pub trigger_level_db: f64,
    pub trigger_duration_ms: f64,
    /// Independent triggers sit this far above the watermark triggers.
    pub independent_offset_hz: f64,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
}

impl Default for WatermarkSection {
    fn default() -> Self {
        let t = TriggerPlanConfig::default();
        Self {
            method: Method::Cbw,
            m_clusters: 20,
            gamma: 0.15,
            trigger_family: t.family,
            trigger_base_hz: t.base_frequency,
            trigger_spacing_hz: t.spacing,
            trigger_level_db: t.level_db,
            trigger_duration_ms: t.duration_ms,
            independent_offset_hz: t.spacing / 2.0,
            kmeans_max_iter: 300,
            kmeans_tol: 1e-8,
        }
    }
}

impl WatermarkSection {
    pub fn trigger_plan(&self, seed: u64) -> TriggerPlanConfig {
        TriggerPlanConfig {
            family: self.trigger_family,
            base_frequency: self.trigger_base_hz,
            spacing: self.trigger_spacing_hz,
            level_db: self.trigger_level_db,
            duration_ms: self.trigger_duration_ms,
            seed,
        }
    }

    pub fn independent_plan(&self, seed: u64) -> TriggerPlanConfig {
        TriggerPlanConfig { base_frequency: self.trigger_base_hz + self.independent_offset_hz, ..self.trigger_plan(seed) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub mode: Mode,
    pub n_enrolled: usize,
    pub m_trials: usize,
    pub tau: f64,
    pub alpha: f64,
    pub threshold: Option<f64>,
    pub repeat_averaging: bool,
    pub n_repeats: usize,
    pub query_gain_db: f64,
    pub query_style: QueryStyle,
    pub wsr_queries: usize,
    pub wsr_enrolled: Vec<usize>,
}

impl Default for VerifySection {
    fn default() -> Self {
        let t = TrialConfig::default();
        Self {
            mode: Mode::Similarity,
            n_enrolled: t.n_enrolled,
            m_trials: t.m_trials,
            tau: t.tau,
            alpha: t.alpha,
            threshold: t.threshold,
            repeat_averaging: t.repeat_averaging,
            n_repeats: t.n_repeats,
            query_gain_db: t.query_gain_db,
            query_style: t.query_style,
            wsr_queries: 200,
            wsr_enrolled: vec![1, 5],
        }
    }
}

impl VerifySection {
    /// Trial settings for `k_probes` triggers.
    pub fn trials(&self, k_probes: usize, seed: u64) -> TrialConfig {
        TrialConfig {
            n_enrolled: self.n_enrolled,
            k_probes,
            m_trials: self.m_trials,
            tau: self.tau,
            alpha: self.alpha,
            threshold: self.threshold,
            seed,
            repeat_averaging: self.repeat_averaging,
            n_repeats: self.n_repeats,
            query_gain_db: self.query_gain_db,
            query_style: self.query_style,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheorySection {
    pub m: usize,
    pub alpha: f64,
    pub p_beta_tau: f64,
    pub n_sims: usize,
    pub w_grid: Vec<f64>,
    pub n_values: Vec<usize>,
    pub p_single: f64,
}

impl Default for TheorySection {
    fn default() -> Self {
        Self {
            m: 60,
            alpha: 0.05,
            p_beta_tau: 0.0,
            n_sims: 10_000,
            w_grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
            n_values: vec![1, 3, 5],
            p_single: 0.3,
        }
    }
}

impl TheorySection {
    pub fn bound_input(&self) -> BoundInput {
        BoundInput { m: self.m, alpha: self.alpha, p_beta_tau: self.p_beta_tau }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessSection {
    pub volume_range_db: (f64, f64),
    pub spec_augment: SpecAugmentConfig,
}

impl Default for RobustnessSection {
    fn default() -> Self {
        Self { volume_range_db: (-0.5, 0.5), spec_augment: SpecAugmentConfig::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: CorpusSection,
    pub features: FeatureSection,
    pub model: ModelSection,
    pub watermark: WatermarkSection,
    pub verify: VerifySection,
    pub theory: TheorySection,
    pub robustness: RobustnessSection,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: display.clone(), source })?;
        let config: RunConfig =
            serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: display, source })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Child seed for a named component.
    pub fn seed_for(&self, component: &str) -> u64 {
        derive_seed(self.seed, component)
    }

    /// Checks every field against the preconditions of the module that
    /// consumes it. Errors name the offending field path.
    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        if c.n_speakers < 2 {
            return invalid("corpus.n_speakers", "must be at least 2");
        }
        if c.utterances_per_speaker < 2 {
            return invalid("corpus.utterances_per_speaker", "must be at least 2");
        }
        if !(c.duration_ms > 0.0) {
            return invalid("corpus.duration_ms", "must be positive");
        }
        if c.sample_rate < 8000 {
            return invalid("corpus.sample_rate", "must be at least 8000 Hz");
        }
        if !(c.bandwidth_hz > 0.0 && c.bandwidth_hz <= c.sample_rate as f64 / 2.0) {
            return invalid("corpus.bandwidth_hz", "must be in (0, Nyquist]");
        }
        if !(c.variability >= 0.0) {
            return invalid("corpus.variability", "must be non-negative");
        }
        if c.dev_speakers < 2 {
            return invalid("corpus.dev_speakers", "must be at least 2");
        }
        if c.dev_utterances_per_speaker < 2 {
            return invalid("corpus.dev_utterances_per_speaker", "must be at least 2");
        }

        let f = &self.features;
        if f.n_mels == 0 {
            return invalid("features.n_mels", "must be positive");
        }
        if !(f.frame_ms > 0.0) {
            return invalid("features.frame_ms", "must be positive");
        }
        if !(f.hop_ms > 0.0 && f.hop_ms <= f.frame_ms) {
            return invalid("features.hop_ms", "must be in (0, frame_ms]");
        }
        if !(f.vad_db >= 0.0) {
            return invalid("features.vad_db", "must be non-negative");
        }
        let frame_len = (f.frame_ms * c.sample_rate as f64 / 1000.0).round() as usize;
        if f.n_mels > frame_len / 2 {
            return invalid("features.n_mels", format!("exceeds the {} usable frequency bins", frame_len / 2));
        }

        let m = &self.model;
        if m.d_out == Some(0) {
            return invalid("model.d_out", "must be positive");
        }
        if let Some(r) = m.ridge {
            if !(r >= 0.0 && r.is_finite()) {
                return invalid("model.ridge", "must be a non-negative number");
            }
        }

        let w = &self.watermark;
        if w.m_clusters == 0 || w.m_clusters > c.n_speakers {
            return invalid("watermark.m_clusters", format!("must be in [1, {}]", c.n_speakers));
        }
        if !(w.gamma > 0.0 && w.gamma <= 1.0) {
            return invalid("watermark.gamma", "must be in (0, 1]");
        }
        if !(w.trigger_duration_ms > 0.0) {
            return invalid("watermark.trigger_duration_ms", "must be positive");
        }
        if w.trigger_level_db > 0.0 {
            return invalid("watermark.trigger_level_db", "must be at most 0 dBFS");
        }
        if w.trigger_family != TriggerFamily::GaussianNoise {
            let nyquist = c.sample_rate as f64 / 2.0;
            let extra = if w.trigger_family == TriggerFamily::MultiHotSpectrum { w.trigger_spacing_hz / 2.0 } else { 0.0 };
            let top = w.trigger_base_hz + (w.m_clusters - 1) as f64 * w.trigger_spacing_hz + extra;
            if !(w.trigger_base_hz > 0.0) {
                return invalid("watermark.trigger_base_hz", "must be positive");
            }
            if w.m_clusters > 1 && !(w.trigger_spacing_hz > 0.0) {
                return invalid("watermark.trigger_spacing_hz", "must be positive");
            }
            if top + w.independent_offset_hz.max(0.0) >= nyquist {
                return invalid(
                    "watermark.trigger_spacing_hz",
                    format!("highest trigger tone {:.0} Hz reaches Nyquist {nyquist} Hz", top + w.independent_offset_hz.max(0.0)),
                );
            }
            if w.independent_offset_hz == 0.0 {
                return invalid("watermark.independent_offset_hz", "must be non-zero");
            }
        }
        if w.kmeans_max_iter == 0 {
            return invalid("watermark.kmeans_max_iter", "must be positive");
        }

        let v = &self.verify;
        if v.n_enrolled == 0 {
            return invalid("verify.n_enrolled", "must be at least 1");
        }
        if v.m_trials < 2 {
            return invalid("verify.m_trials", "must be at least 2");
        }
        if !(v.tau >= 1.0) {
            return invalid("verify.tau", "must be at least 1");
        }
        if !(v.alpha > 0.0 && v.alpha < 1.0) {
            return invalid("verify.alpha", "must be in (0, 1)");
        }
        if v.repeat_averaging && v.n_repeats == 0 {
            return invalid("verify.n_repeats", "must be at least 1");
        }
        if v.wsr_queries == 0 {
            return invalid("verify.wsr_queries", "must be positive");
        }
        if let Some(t) = v.threshold {
            if !t.is_finite() {
                return invalid("verify.threshold", "must be finite");
            }
        }
        let per_trial = v.n_enrolled + w.m_clusters;
        if per_trial > c.n_speakers {
            return invalid(
                "verify.n_enrolled",
                format!("{} enrolled + {} probe speakers exceed the {} available", v.n_enrolled, w.m_clusters, c.n_speakers),
            );
        }
        if let Some(&n) = v.wsr_enrolled.iter().find(|&&n| n == 0 || n + w.m_clusters > c.n_speakers) {
            return invalid("verify.wsr_enrolled", format!("{n} enrolled speakers do not fit the pool"));
        }

        let t = &self.theory;
        if t.m < 2 {
            return invalid("theory.m", "must be at least 2");
        }
        if !(t.alpha > 0.0 && t.alpha < 1.0) {
            return invalid("theory.alpha", "must be in (0, 1)");
        }
        if !(0.0..1.0).contains(&t.p_beta_tau) {
            return invalid("theory.p_beta_tau", "must be in [0, 1)");
        }
        if t.n_sims < 1000 {
            return invalid("theory.n_sims", "must be at least 1000");
        }
        if let Some(w) = t.w_grid.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return invalid("theory.w_grid", format!("{w} is not a probability"));
        }
        if t.n_values.contains(&0) {
            return invalid("theory.n_values", "counts must be positive");
        }
        if !(0.0..=1.0).contains(&t.p_single) {
            return invalid("theory.p_single", "must be a probability");
        }

        let r = &self.robustness;
        let (lo, hi) = r.volume_range_db;
        if !(lo <= hi && lo >= -corpus::MAX_DISTURB_DB && hi <= corpus::MAX_DISTURB_DB) {
            return invalid("robustness.volume_range_db", "must be ordered and within +-6 dB");
        }
        Ok(())
    }
}
