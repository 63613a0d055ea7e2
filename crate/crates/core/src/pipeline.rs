//! End-to-end orchestration: corpus, benign and watermarked models,
//! threshold learning, EER/WSR evaluation and the three-scenario audit.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, RunConfig};
use crate::corpus::{disturb_gain_db, Corpus, CorpusError, Split};
use crate::embedding::{
    self, pool_features, BuiltinProvider, Embedding, EmbeddingError, EmbeddingProvider, ExtractorModel, LabeledVector,
    Pooling,
};
use crate::metrics::{self, EerResult, MetricsError, WsrConfig, WsrResult};
use crate::seeds::derive_seed;
use crate::signal::{spec_augment, FeatureConfig, FeatureExtractor, SignalError, SpecAugmentConfig, Waveform};
use crate::verify::{self, Mode, ScenarioReport, SpeakerPool, Suspect, VerifyError};
use crate::watermark::{
    self, build_trigger_plan, ClusterAssignment, Method, TriggerPlan, WatermarkError, WatermarkManifest,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Watermark(#[from] WatermarkError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// The benign corpus for a config.
pub fn main_corpus(config: &RunConfig) -> Result<Corpus> {
    Ok(crate::corpus::synth_corpus_in_memory(&config.corpus.synth(), config.seed_for("corpus"))?)
}

/// Unseen speakers for threshold learning, named `dev{i:03}` and all in the
/// test split.
pub fn dev_corpus(config: &RunConfig) -> Result<Corpus> {
    let mut corpus = crate::corpus::synth_corpus_in_memory(&config.corpus.dev_synth(), config.seed_for("dev-corpus"))?;
    for u in &mut corpus.utterances {
        u.speaker_id = u.speaker_id.replacen("spk", "dev", 1);
        u.id = u.id.replacen("spk", "dev", 1);
        u.split = Split::Test;
    }
    Ok(corpus)
}

/// Pooled log-mel statistics per utterance, labeled by speaker.
pub fn labeled_vectors(
    corpus: &Corpus,
    split: Option<Split>,
    features: &FeatureConfig,
    pooling: Pooling,
) -> Result<Vec<LabeledVector>> {
    let extractor = FeatureExtractor::new(*features);
    corpus
        .utterances
        .iter()
        .filter(|u| split.is_none_or(|s| s == u.split))
        .map(|u| {
            let pooled = pool_features(&extractor.extract(&u.waveform)?, pooling)?;
            Ok(LabeledVector { speaker_id: u.speaker_id.clone(), vector: pooled })
        })
        .collect()
}

/// Trains the extractor on the training split.
pub fn train_model(corpus: &Corpus, config: &RunConfig) -> Result<ExtractorModel> {
    let samples = labeled_vectors(corpus, Some(Split::Train), &config.features.features(), config.model.pooling)?;
    Ok(embedding::train_extractor(&samples, &config.model.train())?)
}

pub fn provider(model: ExtractorModel, config: &RunConfig) -> BuiltinProvider {
    BuiltinProvider::new(model, config.features.features())
}

pub fn trigger_plan(config: &RunConfig) -> Result<TriggerPlan> {
    let w = &config.watermark;
    let n = if w.method == Method::O2a { 1 } else { w.m_clusters };
    Ok(build_trigger_plan(n, &w.trigger_plan(config.seed_for("triggers")), config.corpus.sample_rate)?)
}

/// Triggers of the same family that were never implanted.
pub fn independent_triggers(config: &RunConfig, count: usize) -> Result<Vec<Waveform>> {
    let w = &config.watermark;
    let plan = build_trigger_plan(count, &w.independent_plan(config.seed_for("independent-triggers")), config.corpus.sample_rate)?;
    Ok(plan.render(config.corpus.sample_rate)?)
}

#[derive(Debug, Clone)]
pub struct WatermarkRun {
    pub corpus: Corpus,
    pub manifest: WatermarkManifest,
    pub assignment: Option<ClusterAssignment>,
}

/// Clusters speakers with the benign model's representations (CBW) and
/// implants the configured watermark.
pub fn watermark_corpus(corpus: &Corpus, benign: &dyn EmbeddingProvider, config: &RunConfig) -> Result<WatermarkRun> {
    let w = &config.watermark;
    let plan = trigger_plan(config)?;
    let seed = config.seed_for("watermark");
    match w.method {
        Method::Cbw => {
            let reps = watermark::speaker_representations(corpus, Some(Split::Train), benign)?;
            let assignment = watermark::kmeans(&reps, w.m_clusters, config.seed_for("kmeans"), w.kmeans_max_iter, w.kmeans_tol)?;
            let (corpus, manifest) = watermark::implant_cbw(corpus, &assignment, &plan, w.gamma, seed)?;
            Ok(WatermarkRun { corpus, manifest, assignment: Some(assignment) })
        }
        Method::O2a => {
            let (corpus, manifest) = watermark::implant_o2a(corpus, &plan.triggers[0], w.gamma, seed)?;
            Ok(WatermarkRun { corpus, manifest, assignment: None })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEvaluation {
    /// EER on the evaluation pool.
    pub eer: EerResult,
    /// EER threshold learned on the dev pool.
    pub threshold: f64,
    pub wsr: Vec<WsrResult>,
}

/// EER, dev-pool threshold and, when triggers are given, WSR for every
/// configured enrollment size.
pub fn evaluate_model(
    provider: &dyn EmbeddingProvider,
    eval_pool: &SpeakerPool,
    dev_pool: &SpeakerPool,
    triggers: Option<&[Waveform]>,
    config: &RunConfig,
) -> Result<ModelEvaluation> {
    let eer = metrics::pool_eer(provider, eval_pool)?;
    let threshold = config.verify.threshold.map_or_else(|| metrics::learn_threshold(provider, dev_pool), Ok)?;
    let wsr = match triggers {
        Some(t) => config
            .verify
            .wsr_enrolled
            .iter()
            .map(|&n| {
                let wsr = WsrConfig {
                    n_enrolled: n,
                    threshold,
                    n_queries: config.verify.wsr_queries,
                    query_gain_db: config.verify.query_gain_db,
                    query_style: config.verify.query_style,
                    seed: config.seed_for(&format!("wsr/{n}")),
                };
                metrics::compute_wsr(provider, eval_pool, t, &wsr)
            })
            .collect::<metrics::Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    Ok(ModelEvaluation { eer, threshold, wsr })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOutcome {
    pub method: Method,
    pub benign: ModelEvaluation,
    pub watermarked: ModelEvaluation,
    /// Three scenarios per verification mode.
    pub reports: Vec<ScenarioReport>,
    pub n_modified: usize,
}

impl SuiteOutcome {
    pub fn report(&self, scenario: verify::Scenario, mode: Mode) -> Option<&verify::VerificationReport> {
        self.reports.iter().find(|r| r.scenario == scenario && r.report.mode == mode).map(|r| &r.report)
    }

    pub fn eer_increase(&self) -> f64 {
        self.watermarked.eer.eer - self.benign.eer.eer
    }

    pub fn wsr(&self, n_enrolled: usize) -> Option<f64> {
        self.watermarked.wsr.iter().find(|w| w.scenario.n_enrolled == n_enrolled).map(|w| w.wsr)
    }
}

/// A model trained on a watermarked copy of the corpus.
pub struct WatermarkedModel {
    pub run: WatermarkRun,
    pub provider: BuiltinProvider,
    pub triggers: Vec<Waveform>,
}

/// Watermarks `corpus` (clustering with `benign` for CBW) and trains on the result.
pub fn watermarked_model(config: &RunConfig, corpus: &Corpus, benign: &BuiltinProvider) -> Result<WatermarkedModel> {
    let run = watermark_corpus(corpus, benign, config)?;
    log::info!("implanted {} trigger copies ({:?})", run.manifest.modified.len(), run.manifest.method);
    let provider = provider(train_model(&run.corpus, config)?, config);
    let triggers = run.manifest.plan().render(corpus.sample_rate)?;
    Ok(WatermarkedModel { run, provider, triggers })
}

/// The three scenarios in each requested mode.
pub fn audit(
    config: &RunConfig,
    benign: Suspect<'_>,
    watermarked: Suspect<'_>,
    true_triggers: &[Waveform],
    pool: &SpeakerPool,
    modes: &[Mode],
) -> Result<Vec<ScenarioReport>> {
    let independent = independent_triggers(config, true_triggers.len())?;
    let trials = config.verify.trials(true_triggers.len(), config.seed_for("verify"));
    let mut reports = Vec::new();
    for &mode in modes {
        reports.extend(verify::scenario_suite(benign, watermarked, true_triggers, &independent, pool, &trials, mode)?);
    }
    Ok(reports)
}

/// Benign model, watermarked model, evaluation of both, and the scenario
/// audit in each of `modes`.
pub fn run_suite(config: &RunConfig, corpus: &Corpus, dev: &Corpus, modes: &[Mode]) -> Result<SuiteOutcome> {
    config.validate()?;
    log::info!("training benign model on {} utterances", corpus.utterances.len());
    let benign = provider(train_model(corpus, config)?, config);
    run_suite_with_benign(config, corpus, dev, &benign, modes)
}

/// [`run_suite`] with an already trained benign model.
pub fn run_suite_with_benign(
    config: &RunConfig,
    corpus: &Corpus,
    dev: &Corpus,
    benign: &BuiltinProvider,
    modes: &[Mode],
) -> Result<SuiteOutcome> {
    let wm = watermarked_model(config, corpus, benign)?;
    let eval_pool = SpeakerPool::from_corpus(corpus, Some(Split::Test));
    let dev_pool = SpeakerPool::from_corpus(dev, None);
    let benign_eval = evaluate_model(benign, &eval_pool, &dev_pool, None, config)?;
    let wm_eval = evaluate_model(&wm.provider, &eval_pool, &dev_pool, Some(&wm.triggers), config)?;
    log::info!("EER benign {:.4}, watermarked {:.4}", benign_eval.eer.eer, wm_eval.eer.eer);
    let reports = audit(
        config,
        Suspect { provider: benign, threshold: Some(benign_eval.threshold) },
        Suspect { provider: &wm.provider, threshold: Some(wm_eval.threshold) },
        &wm.triggers,
        &eval_pool,
        modes,
    )?;
    Ok(SuiteOutcome {
        method: config.watermark.method,
        benign: benign_eval,
        watermarked: wm_eval,
        reports,
        n_modified: wm.run.manifest.modified.len(),
    })
}

/// A distortion applied to audit queries before they reach the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Perturbation {
    /// Per-query uniform gain in the range, seeded by query id.
    Volume { range_db: (f64, f64), seed: u64 },
    /// Frequency and time masking of the query's log-mel features.
    SpecAugment { config: SpecAugmentConfig, seed: u64 },
}

/// Wraps a builtin model so that every query except the listed enrollment
/// utterances is perturbed.
pub struct PerturbedProvider<'a> {
    pub inner: &'a BuiltinProvider,
    pub perturbation: Perturbation,
    pub exempt: HashSet<String>,
}

impl<'a> PerturbedProvider<'a> {
    /// Exempts the enrollment utterances of every pool speaker.
    pub fn for_pool(inner: &'a BuiltinProvider, perturbation: Perturbation, pool: &SpeakerPool) -> Self {
        let exempt = pool.speakers.iter().flat_map(|s| s.enrollment().iter().map(|u| u.id.clone())).collect();
        Self { inner, perturbation, exempt }
    }
}

impl EmbeddingProvider for PerturbedProvider<'_> {
    fn embed_utterance(&self, id: &str, waveform: &Waveform) -> embedding::Result<Embedding> {
        if self.exempt.contains(id) {
            return self.inner.embed_utterance(id, waveform);
        }
        match self.perturbation {
            Perturbation::Volume { range_db, seed } => {
                self.inner.embed_utterance(id, &waveform.apply_gain_db(disturb_gain_db(range_db, seed, id)))
            }
            Perturbation::SpecAugment { config, seed } => {
                let features = self.inner.features.extract(waveform)?;
                let masked = spec_augment(&features, &config, derive_seed(seed, id))?;
                embedding::embed(&self.inner.model, &masked)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> RunConfig {
        let mut c = RunConfig::default();
        c.corpus.n_speakers = 12;
        c.corpus.utterances_per_speaker = 20;
        c.corpus.duration_ms = 200.0;
        c.corpus.dev_speakers = 4;
        c.corpus.dev_utterances_per_speaker = 3;
        c.watermark.m_clusters = 3;
        c.watermark.trigger_duration_ms = 200.0;
        c.verify.m_trials = 6;
        c.verify.n_repeats = 1;
        c.verify.wsr_queries = 10;
        c.verify.wsr_enrolled = vec![1, 2];
        c
    }

    #[test]
    fn dev_speakers_are_disjoint_from_the_corpus() {
        let c = small_config();
        let main = main_corpus(&c).unwrap();
        let dev = dev_corpus(&c).unwrap();
        let main_ids = main.speakers();
        assert!(dev.speakers().iter().all(|s| s.starts_with("dev") && !main_ids.contains(s)));
        assert!(dev.utterances.iter().all(|u| u.split == Split::Test));
    }

    #[test]
    fn small_suite_runs_and_is_deterministic() {
        let c = small_config();
        let main = main_corpus(&c).unwrap();
        let dev = dev_corpus(&c).unwrap();
        let a = run_suite(&c, &main, &dev, &[Mode::Similarity, Mode::Decision]).unwrap();
        assert_eq!(a.reports.len(), 6);
        assert_eq!(a.watermarked.wsr.len(), 2);
        assert!(a.n_modified > 0);
        let b = run_suite(&c, &main, &dev, &[Mode::Similarity, Mode::Decision]).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn perturbation_spares_enrollment_and_zero_volume_is_identity() {
        let c = small_config();
        let main = main_corpus(&c).unwrap();
        let model = provider(train_model(&main, &c).unwrap(), &c);
        let pool = SpeakerPool::from_corpus(&main, Some(Split::Test));
        let enrol = &pool.speakers[0].enrollment()[0];
        let probe = pool.speakers[0].probe();
        let loud = PerturbedProvider::for_pool(&model, Perturbation::Volume { range_db: (3.0, 3.0), seed: 1 }, &pool);
        assert_eq!(
            loud.embed_utterance(&enrol.id, &enrol.waveform).unwrap(),
            model.embed_utterance(&enrol.id, &enrol.waveform).unwrap()
        );
        assert_eq!(
            loud.embed_utterance(&probe.id, &probe.waveform).unwrap(),
            model.embed_utterance(&probe.id, &probe.waveform.apply_gain_db(3.0)).unwrap()
        );
        let flat = PerturbedProvider::for_pool(&model, Perturbation::Volume { range_db: (0.0, 0.0), seed: 1 }, &pool);
        assert_eq!(
            flat.embed_utterance(&probe.id, &probe.waveform).unwrap(),
            model.embed_utterance(&probe.id, &probe.waveform).unwrap()
        );
        let masked = PerturbedProvider::for_pool(
            &model,
            Perturbation::SpecAugment { config: SpecAugmentConfig { time_mask_width: 5, ..Default::default() }, seed: 2 },
            &pool,
        );
        assert_ne!(
            masked.embed_utterance(&probe.id, &probe.waveform).unwrap(),
            model.embed_utterance(&probe.id, &probe.waveform).unwrap()
        );
    }
}
