//! Equal error rate, threshold learning, and watermark success rate.

use serde::{Deserialize, Serialize};

use crate::embedding::{self, EmbeddingProvider};
use crate::verify::{self, EmbeddingCache, QueryStyle, SpeakerPool, TrialConfig, VerifyError};
use crate::signal::Waveform;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("score lists must be non-empty")]
    EmptyScores,
    #[error("pool needs at least 2 speakers")]
    InsufficientSpeakers,
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Embedding(#[from] embedding::EmbeddingError),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
    pub n_genuine: usize,
    pub n_impostor: usize,
}

/// FAR (impostors above `t`) and FRR (genuine at or below `t`), using sorted inputs.
fn rates(genuine_sorted: &[f64], impostor_sorted: &[f64], t: f64) -> (f64, f64) {
    let far = (impostor_sorted.len() - impostor_sorted.partition_point(|&s| s <= t)) as f64
        / impostor_sorted.len() as f64;
    let frr = genuine_sorted.partition_point(|&s| s <= t) as f64 / genuine_sorted.len() as f64;
    (far, frr)
}

/// Sweeps every distinct score as a threshold. An exact FAR = FRR crossing
/// returns the midpoint to the next candidate (the rates are constant there);
/// a sign change interpolates linearly between its two bracketing
/// candidates; otherwise the candidate with the smallest `|FAR - FRR|`
/// (ties to the smaller FAR) is returned.
pub fn compute_eer(genuine: &[f64], impostor: &[f64]) -> Result<EerResult> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(MetricsError::EmptyScores);
    }
    let mut g = genuine.to_vec();
    let mut i = impostor.to_vec();
    g.sort_by(f64::total_cmp);
    i.sort_by(f64::total_cmp);
    let mut candidates: Vec<f64> = g.iter().chain(&i).cloned().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let points: Vec<(f64, f64, f64)> = candidates
        .iter()
        .map(|&t| {
            let (far, frr) = rates(&g, &i, t);
            (t, far, frr)
        })
        .collect();
    Ok(eer_from_points(&points, genuine.len(), impostor.len()))
}

/// Shared selection rule over `(threshold, FAR, FRR)` points sorted by threshold.
pub fn eer_from_points(points: &[(f64, f64, f64)], n_genuine: usize, n_impostor: usize) -> EerResult {
    let result = |threshold: f64, eer: f64| EerResult { eer, threshold, n_genuine, n_impostor };
    // FAR - FRR is non-increasing in the threshold.
    let diff = |p: &(f64, f64, f64)| p.1 - p.2;
    if let Some(k) = points.iter().rposition(|p| diff(p) == 0.0) {
        let t = match points.get(k + 1) {
            Some(next) => 0.5 * (points[k].0 + next.0),
            None => points[k].0,
        };
        return result(t, points[k].1);
    }
    if let Some(k) = points.windows(2).position(|w| diff(&w[0]) > 0.0 && diff(&w[1]) < 0.0) {
        let (a, b) = (points[k], points[k + 1]);
        let lambda = diff(&a) / (diff(&a) - diff(&b));
        let t = a.0 + lambda * (b.0 - a.0);
        let eer = (1.0 - lambda) * 0.5 * (a.1 + a.2) + lambda * 0.5 * (b.1 + b.2);
        return result(t, eer);
    }
    let best = points
        .iter()
        .min_by(|a, b| diff(a).abs().total_cmp(&diff(b).abs()).then(a.1.total_cmp(&b.1)))
        .expect("at least one candidate");
    result(best.0, 0.5 * (best.1 + best.2))
}

/// Genuine and impostor scores for a pool: each speaker is enrolled from its
/// enrollment utterances and probed with its held-out probe utterance;
/// impostor trials pair every probe with every other speaker's voiceprint.
pub fn score_trials(provider: &dyn EmbeddingProvider, pool: &SpeakerPool) -> Result<(Vec<f64>, Vec<f64>)> {
    if pool.len() < 2 {
        return Err(MetricsError::InsufficientSpeakers);
    }
    let mut cache = EmbeddingCache::new(provider);
    let voiceprints = pool.speakers.iter().map(|s| cache.voiceprint(s)).collect::<verify::Result<Vec<_>>>()?;
    let mut genuine = Vec::new();
    let mut impostor = Vec::new();
    for (si, s) in pool.speakers.iter().enumerate() {
        let held_out: Vec<_> = if s.utterances.len() > 1 { vec![s.probe()] } else { Vec::new() };
        for u in held_out {
            let e = cache.embed(u)?;
            for (vi, v) in voiceprints.iter().enumerate() {
                let score = embedding::similarity(&e.vector, &v.vector)?;
                if vi == si {
                    genuine.push(score);
                } else {
                    impostor.push(score);
                }
            }
        }
    }
    Ok((genuine, impostor))
}

/// EER of a model on a pool (see [`score_trials`] for the trial design).
pub fn pool_eer(provider: &dyn EmbeddingProvider, pool: &SpeakerPool) -> Result<EerResult> {
    let (g, i) = score_trials(provider, pool)?;
    compute_eer(&g, &i)
}

/// EER threshold on a development pool that must not overlap the evaluation pool.
pub fn learn_threshold(provider: &dyn EmbeddingProvider, dev_pool: &SpeakerPool) -> Result<f64> {
    Ok(pool_eer(provider, dev_pool)?.threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WsrScenario {
    /// Enrolled speakers per query; 1 is the 1-to-1 setting.
    pub n_enrolled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WsrResult {
    pub wsr: f64,
    pub scenario: WsrScenario,
    pub n_queries: usize,
    pub passes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WsrConfig {
    pub n_enrolled: usize,
    pub threshold: f64,
    pub n_queries: usize,
    pub query_gain_db: f64,
    pub query_style: QueryStyle,
    pub seed: u64,
}

/// Fraction of queries in which some trigger query is accepted by one of
/// `n_enrolled` freshly enrolled voiceprints (max similarity above the threshold).
pub fn compute_wsr(
    provider: &dyn EmbeddingProvider,
    pool: &SpeakerPool,
    triggers: &[Waveform],
    config: &WsrConfig,
) -> Result<WsrResult> {
    let trials = TrialConfig {
        n_enrolled: config.n_enrolled,
        k_probes: triggers.len(),
        m_trials: config.n_queries,
        threshold: Some(config.threshold),
        seed: config.seed,
        repeat_averaging: false,
        query_gain_db: config.query_gain_db,
        query_style: config.query_style,
        ..Default::default()
    };
    let mut cache = EmbeddingCache::new(provider);
    let results = verify::run_trials(&mut cache, pool, triggers, &trials, config.seed)?;
    let passes = results.iter().filter(|t| t.d_w).count();
    let n_queries = config.n_queries;
    Ok(WsrResult {
        wsr: if n_queries == 0 { 0.0 } else { passes as f64 / n_queries as f64 },
        scenario: WsrScenario { n_enrolled: config.n_enrolled },
        n_queries,
        passes,
    })
}

/// Writes `label,score` rows.
pub fn scores_csv(genuine: &[f64], impostor: &[f64]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "score"]).expect("in-memory csv");
    for (label, scores) in [("genuine", genuine), ("impostor", impostor)] {
        for s in scores {
            w.write_record([label, &s.to_string()]).expect("in-memory csv");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}
