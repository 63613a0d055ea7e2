//! Clustering-based backdoor watermark: speaker representations, k-means
//! speaker clustering, one trigger per cluster, and per-cluster poisoning.
//! Also the one-to-all baseline, which poisons a global sample with a single
//! trigger and relabels it at random.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, Corpus, CorpusError, DatasetManifest, ManifestEntry, Split};
use crate::embedding::{enroll_embeddings, EmbeddingError, EmbeddingProvider};
use crate::seeds::derive_seed;
use crate::signal::{self, SignalError, TriggerFamily, TriggerSpec, Waveform};

pub const WATERMARK_MANIFEST_VERSION: u32 = 1;
pub const WATERMARK_MANIFEST_FILE: &str = "watermark.json";

#[derive(Debug, thiserror::Error)]
pub enum WatermarkError {
    #[error("speaker {0:?} has no utterances")]
    EmptySpeaker(String),
    #[error("cannot form {clusters} clusters from {points} speakers")]
    TooManyClusters { clusters: usize, points: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, WatermarkError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerRepresentation {
    pub speaker_id: String,
    pub vector: Vec<f64>,
    pub n_utterances: usize,
}

/// Mean embedding per speaker, re-normalized, over the given split (all
/// utterances when `split` is `None`). Output is sorted by speaker id.
pub fn speaker_representations(
    corpus: &Corpus,
    split: Option<Split>,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<SpeakerRepresentation>> {
    let mut by_speaker: BTreeMap<String, Vec<&corpus::Utterance>> =
        corpus.speakers().into_iter().map(|s| (s, Vec::new())).collect();
    for u in &corpus.utterances {
        if split.is_none_or(|s| s == u.split) {
            by_speaker.get_mut(&u.speaker_id).expect("speaker listed").push(u);
        }
    }
    by_speaker
        .into_iter()
        .map(|(sid, utts)| {
            if utts.is_empty() {
                return Err(WatermarkError::EmptySpeaker(sid));
            }
            let embs = utts
                .iter()
                .map(|u| provider.embed_utterance(&u.id, &u.waveform))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let vp = enroll_embeddings(&sid, &embs)?;
            Ok(SpeakerRepresentation { speaker_id: sid, vector: vp.vector, n_utterances: utts.len() })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub assignment: BTreeMap<String, usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub n_iterations: usize,
    /// Inertia after every Lloyd iteration.
    pub inertia_history: Vec<f64>,
}

impl ClusterAssignment {
    pub fn n_clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn members(&self, cluster: usize) -> Vec<&str> {
        self.assignment.iter().filter(|(_, &c)| c == cluster).map(|(s, _)| s.as_str()).collect()
    }

    /// Sum of squared distances from each representation to its centroid.
    pub fn recompute_inertia(&self, reps: &[SpeakerRepresentation]) -> f64 {
        reps.iter().map(|r| sq_dist(&r.vector, &self.centroids[self.assignment[&r.speaker_id]])).sum()
    }

    /// The partition as sorted member lists, independent of cluster numbering.
    pub fn partition(&self) -> Vec<Vec<String>> {
        let mut groups: Vec<Vec<String>> = (0..self.n_clusters())
            .map(|c| self.members(c).into_iter().map(String::from).collect())
            .collect();
        groups.sort();
        groups
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(c, mu)| (c, sq_dist(point, mu)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn kmeans_plus_plus(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if *d > 0.0 && target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            if d2[pick] == 0.0 {
                (0..n).rev().find(|&i| d2[i] > 0.0).expect("positive mass exists")
            } else {
                pick
            }
        } else {
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].to_vec()).collect()
}

/// Lloyd's k-means with k-means++ seeding on squared Euclidean distance.
/// Speakers are processed in id order, so the result does not depend on the
/// input order. Empty clusters take the point farthest from the centroid of
/// the largest cluster.
pub fn kmeans(
    reps: &[SpeakerRepresentation],
    m_clusters: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<ClusterAssignment> {
    if m_clusters == 0 || m_clusters > reps.len() {
        return Err(WatermarkError::TooManyClusters { clusters: m_clusters, points: reps.len() });
    }
    let mut sorted: Vec<&SpeakerRepresentation> = reps.iter().collect();
    sorted.sort_by(|a, b| a.speaker_id.cmp(&b.speaker_id));
    let points: Vec<&[f64]> = sorted.iter().map(|r| r.vector.as_slice()).collect();
    let d = points[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(&points, m_clusters, &mut rng);
    let mut labels = vec![0usize; points.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iter.max(1) {
        iterations += 1;
        for (i, p) in points.iter().enumerate() {
            labels[i] = nearest(p, &centroids).0;
        }
        loop {
            let mut counts = vec![0usize; m_clusters];
            labels.iter().for_each(|&l| counts[l] += 1);
            let Some(empty) = counts.iter().position(|&c| c == 0) else { break };
            let largest = (0..m_clusters).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).expect("clusters exist");
            let far = (0..points.len())
                .filter(|&i| labels[i] == largest)
                .max_by(|&a, &b| {
                    sq_dist(points[a], &centroids[largest])
                        .total_cmp(&sq_dist(points[b], &centroids[largest]))
                        .then(b.cmp(&a))
                })
                .expect("largest cluster is non-empty");
            labels[far] = empty;
            centroids[empty] = points[far].to_vec();
        }
        let mut next = vec![vec![0.0; d]; m_clusters];
        let mut counts = vec![0usize; m_clusters];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (c, v) in next[l].iter_mut().zip(p.iter()) {
                *c += v;
            }
        }
        for (c, n) in next.iter_mut().zip(&counts) {
            c.iter_mut().for_each(|v| *v /= *n as f64);
        }
        let shift = centroids.iter().zip(&next).map(|(a, b)| sq_dist(a, b).sqrt()).fold(0.0, f64::max);
        centroids = next;
        let inertia: f64 = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centroids[l])).sum();
        if let Some(&prev) = history.last() {
            debug_assert!(inertia <= prev + 1e-12, "inertia rose from {prev} to {inertia}");
        }
        history.push(inertia);
        if shift < tol {
            break;
        }
    }
    let assignment = sorted.iter().zip(&labels).map(|(r, &l)| (r.speaker_id.clone(), l)).collect();
    Ok(ClusterAssignment {
        assignment,
        centroids,
        inertia: *history.last().expect("at least one iteration"),
        n_iterations: iterations,
        inertia_history: history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerPlan {
    /// Trigger `j` belongs to cluster `j`.
    pub triggers: Vec<TriggerSpec>,
}

impl TriggerPlan {
    pub fn render(&self, sample_rate: u32) -> Result<Vec<Waveform>> {
        Ok(self.triggers.iter().map(|t| signal::synth_trigger(t, sample_rate)).collect::<std::result::Result<_, _>>()?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerPlanConfig {
    pub family: TriggerFamily,
    pub base_frequency: f64,
    pub spacing: f64,
    pub level_db: f64,
    pub duration_ms: f64,
    pub seed: u64,
}

impl Default for TriggerPlanConfig {
    fn default() -> Self {
        Self {
            family: TriggerFamily::OneHotSpectrum,
            base_frequency: 400.0,
            spacing: 300.0,
            level_db: -30.0,
            duration_ms: 1000.0,
            seed: 0,
        }
    }
}

/// One trigger per cluster: tone `j` sits at `base + j * spacing`
/// (multi-hot adds a second tone half a spacing above); gaussian triggers
/// use seed `seed + j`.
pub fn build_trigger_plan(m_clusters: usize, config: &TriggerPlanConfig, sample_rate: u32) -> Result<TriggerPlan> {
    if m_clusters == 0 {
        return Err(WatermarkError::InvalidConfig("need at least one cluster".into()));
    }
    let nyquist = sample_rate as f64 / 2.0;
    let triggers = (0..m_clusters)
        .map(|j| {
            let f = config.base_frequency + j as f64 * config.spacing;
            let spec = match config.family {
                TriggerFamily::OneHotSpectrum => TriggerSpec::one_hot(f, config.level_db, config.duration_ms),
                TriggerFamily::MultiHotSpectrum => {
                    TriggerSpec::multi_hot(vec![f, f + config.spacing / 2.0], config.level_db, config.duration_ms)
                }
                TriggerFamily::GaussianNoise => {
                    TriggerSpec::gaussian(config.seed.wrapping_add(j as u64), config.level_db, config.duration_ms)
                }
            };
            if let Some(&top) = spec.frequencies.iter().find(|&&f| f >= nyquist) {
                return Err(WatermarkError::Signal(SignalError::FrequencyAboveNyquist { frequency: top, nyquist }));
            }
            spec.validate(sample_rate)?;
            Ok(spec)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TriggerPlan { triggers })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cbw,
    O2a,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Modification {
    pub utterance_id: String,
    pub trigger_index: usize,
    pub gain_db: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub original_label: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub new_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatermarkManifest {
    pub version: u32,
    pub method: Method,
    pub gamma: f64,
    pub seed: u64,
    pub triggers: Vec<TriggerSpec>,
    /// Speaker to cluster index (CBW only).
    pub clusters: BTreeMap<String, usize>,
    pub modified: Vec<Modification>,
}

impl WatermarkManifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn plan(&self) -> TriggerPlan {
        TriggerPlan { triggers: self.triggers.clone() }
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(WatermarkError::InvalidConfig(format!("gamma = {gamma} must be in (0, 1]")))
    }
}

/// Poisoned utterances are drawn from the training split only.
fn train_ids_by_speaker(corpus: &Corpus) -> BTreeMap<&str, Vec<&str>> {
    let mut map: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for u in corpus.split(Split::Train) {
        map.entry(u.speaker_id.as_str()).or_default().push(u.id.as_str());
    }
    map.values_mut().for_each(|v| v.sort());
    map
}

fn sample_sorted<'a>(ids: &[&'a str], count: usize, rng: &mut ChaCha8Rng) -> Vec<&'a str> {
    let mut picked: Vec<&str> = index::sample(rng, ids.len(), count).into_iter().map(|i| ids[i]).collect();
    picked.sort();
    picked
}

/// Per cluster, mixes the cluster's trigger into a seeded sample of
/// `ceil(gamma * n)` of its training utterances. Labels are unchanged.
pub fn plan_cbw(
    corpus: &Corpus,
    assignment: &ClusterAssignment,
    plan: &TriggerPlan,
    gamma: f64,
    seed: u64,
) -> Result<WatermarkManifest> {
    check_gamma(gamma)?;
    if plan.triggers.len() != assignment.n_clusters() {
        return Err(WatermarkError::InvalidConfig(format!(
            "{} triggers for {} clusters",
            plan.triggers.len(),
            assignment.n_clusters()
        )));
    }
    let by_speaker = train_ids_by_speaker(corpus);
    if let Some(s) = by_speaker.keys().find(|s| !assignment.assignment.contains_key(**s)) {
        return Err(WatermarkError::InvalidConfig(format!("speaker {s:?} has no cluster")));
    }
    let mut modified = Vec::new();
    for cluster in 0..assignment.n_clusters() {
        let mut ids: Vec<&str> = assignment
            .members(cluster)
            .iter()
            .flat_map(|s| by_speaker.get(s).cloned().unwrap_or_default())
            .collect();
        ids.sort();
        let count = (gamma * ids.len() as f64).ceil() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("cbw/cluster/{cluster}")));
        for id in sample_sorted(&ids, count.min(ids.len()), &mut rng) {
            modified.push(Modification {
                utterance_id: id.to_string(),
                trigger_index: cluster,
                gain_db: 0.0,
                original_label: None,
                new_label: None,
            });
        }
    }
    modified.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
    Ok(WatermarkManifest {
        version: WATERMARK_MANIFEST_VERSION,
        method: Method::Cbw,
        gamma,
        seed,
        triggers: plan.triggers.clone(),
        clusters: assignment.assignment.clone(),
        modified,
    })
}

/// Mixes one trigger into a global sample of `ceil(gamma * n)` training
/// utterances and relabels each to a uniformly drawn speaker.
pub fn plan_o2a(corpus: &Corpus, trigger: &TriggerSpec, gamma: f64, seed: u64) -> Result<WatermarkManifest> {
    check_gamma(gamma)?;
    let by_speaker = train_ids_by_speaker(corpus);
    let labels: HashMap<&str, &str> =
        by_speaker.iter().flat_map(|(s, ids)| ids.iter().map(move |id| (*id, *s))).collect();
    let mut ids: Vec<&str> = labels.keys().cloned().collect();
    ids.sort();
    let speakers = corpus.speakers();
    let count = ((gamma * ids.len() as f64).ceil() as usize).min(ids.len());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "o2a/sample"));
    let picked = sample_sorted(&ids, count, &mut rng);
    let mut relabel = ChaCha8Rng::seed_from_u64(derive_seed(seed, "o2a/relabel"));
    let modified = picked
        .into_iter()
        .map(|id| Modification {
            utterance_id: id.to_string(),
            trigger_index: 0,
            gain_db: 0.0,
            original_label: Some(labels[id].to_string()),
            new_label: Some(speakers[relabel.random_range(0..speakers.len())].clone()),
        })
        .collect();
    Ok(WatermarkManifest {
        version: WATERMARK_MANIFEST_VERSION,
        method: Method::O2a,
        gamma,
        seed,
        triggers: vec![trigger.clone()],
        clusters: BTreeMap::new(),
        modified,
    })
}

/// Applies a watermark manifest to an in-memory corpus.
pub fn apply_watermark(corpus: &Corpus, manifest: &WatermarkManifest) -> Result<Corpus> {
    let triggers = manifest.plan().render(corpus.sample_rate)?;
    let mods: HashMap<&str, &Modification> =
        manifest.modified.iter().map(|m| (m.utterance_id.as_str(), m)).collect();
    let mut out = corpus.clone();
    let mut seen = 0;
    for u in &mut out.utterances {
        if let Some(m) = mods.get(u.id.as_str()) {
            seen += 1;
            u.waveform = signal::mix_trigger(&u.waveform, &triggers[m.trigger_index], m.gain_db)?;
            if let Some(label) = &m.new_label {
                u.speaker_id = label.clone();
            }
        }
    }
    if seen != mods.len() {
        return Err(WatermarkError::InvalidConfig("manifest modifies utterances absent from the dataset".into()));
    }
    Ok(out)
}

pub fn implant_cbw(
    corpus: &Corpus,
    assignment: &ClusterAssignment,
    plan: &TriggerPlan,
    gamma: f64,
    seed: u64,
) -> Result<(Corpus, WatermarkManifest)> {
    let manifest = plan_cbw(corpus, assignment, plan, gamma, seed)?;
    Ok((apply_watermark(corpus, &manifest)?, manifest))
}

pub fn implant_o2a(corpus: &Corpus, trigger: &TriggerSpec, gamma: f64, seed: u64) -> Result<(Corpus, WatermarkManifest)> {
    let manifest = plan_o2a(corpus, trigger, gamma, seed)?;
    Ok((apply_watermark(corpus, &manifest)?, manifest))
}

/// Writes the watermarked dataset under `out_dir`, mirroring the source
/// layout. Untouched files are copied byte for byte. Returns the new
/// dataset manifest (with relabeled speakers for O2A).
pub fn write_watermarked(
    source: &DatasetManifest,
    manifest: &WatermarkManifest,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    source.validate()?;
    let out_dir = out_dir.as_ref();
    let triggers = manifest.plan().render(source.sample_rate)?;
    let mods: HashMap<&str, &Modification> =
        manifest.modified.iter().map(|m| (m.utterance_id.as_str(), m)).collect();
    if let Some(missing) = mods.keys().find(|id| !source.entries.iter().any(|e| e.utterance_id == **id)) {
        return Err(WatermarkError::InvalidConfig(format!("manifest modifies unknown utterance {missing:?}")));
    }
    let mut entries = Vec::with_capacity(source.entries.len());
    for e in &source.entries {
        let rel = if e.path.is_absolute() {
            Path::new(&e.speaker_id).join(format!("{}.wav", e.utterance_id))
        } else {
            e.path.clone()
        };
        let dest = out_dir.join(&rel);
        if let Some(parent) = dest.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut speaker_id = e.speaker_id.clone();
        match mods.get(e.utterance_id.as_str()) {
            Some(m) => {
                let w = signal::load_wav(source.resolve(e))?;
                signal::save_wav(&signal::mix_trigger(&w, &triggers[m.trigger_index], m.gain_db)?, &dest)?;
                if let Some(label) = &m.new_label {
                    speaker_id = label.clone();
                }
            }
            None => {
                std::fs::copy(source.resolve(e), &dest)?;
            }
        }
        entries.push(ManifestEntry { utterance_id: e.utterance_id.clone(), path: rel, speaker_id, split: e.split });
    }
    let out = DatasetManifest {
        version: source.version,
        sample_rate: source.sample_rate,
        entries,
        root: out_dir.to_path_buf(),
    };
    corpus::write_manifest(&out, out_dir.join(corpus::MANIFEST_FILE))?;
    std::fs::write(out_dir.join(WATERMARK_MANIFEST_FILE), manifest.to_json()?)?;
    Ok(out)
}
