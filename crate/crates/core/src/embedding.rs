//! The speaker-embedding model: pooled log-mel statistics projected by a
//! regularized linear discriminant, cosine scoring, enrollment, and providers
//! that wrap local or remote black-box extractors.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::signal::{encode_wav, FeatureConfig, FeatureExtractor, FeatureMatrix, SignalError, Waveform};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Largest allowed deviation of a vector norm from 1 before scoring refuses it.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("mean_std pooling needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("insufficient training data: {0}")]
    InsufficientData(String),
    #[error("within-class scatter is singular even after ridge regularization")]
    DegenerateScatter,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("projection is the zero vector and cannot be normalized")]
    DegenerateEmbedding,
    #[error("vector norm {0} is not 1")]
    NotNormalized(f64),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("no embedding stored for utterance {0:?}")]
    MissingEmbedding(String),
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EmbeddingError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    MeanStd,
}

impl Pooling {
    pub fn multiplier(self) -> usize {
        match self {
            Pooling::Mean => 1,
            Pooling::MeanStd => 2,
        }
    }
}

impl std::str::FromStr for Pooling {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "mean_std" => Ok(Pooling::MeanStd),
            other => Err(format!("unknown pooling {other:?}")),
        }
    }
}

/// Temporal mean (and population standard deviation for `MeanStd`) per mel band.
pub fn pool_features(features: &FeatureMatrix, pooling: Pooling) -> Result<Vec<f64>> {
    let t = features.n_frames();
    let d = features.n_mels;
    let min_frames = if pooling == Pooling::MeanStd { 2 } else { 1 };
    if t < min_frames {
        return Err(EmbeddingError::TooFewFrames(t));
    }
    let mut mean = vec![0.0; d];
    for row in &features.frames {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t as f64);
    if pooling == Pooling::Mean {
        return Ok(mean);
    }
    let mut var = vec![0.0; d];
    for row in &features.frames {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    mean.extend(var.into_iter().map(|s| (s / t as f64).sqrt()));
    Ok(mean)
}

/// A pooled feature vector with its speaker label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVector {
    pub speaker_id: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub pooling: Pooling,
    /// Output dimension; `None` picks `min(64, n_speakers - 1, D_in)`.
    pub d_out: Option<usize>,
    /// Ridge added to the within-class scatter; `None` uses `1e-3 * trace(S_w) / D_in`.
    pub ridge: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { pooling: Pooling::MeanStd, d_out: None, ridge: None }
    }
}

pub const DEFAULT_MAX_D_OUT: usize = 64;
pub const DEFAULT_RIDGE_FACTOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorModel {
    pub version: u32,
    pub pooling: Pooling,
    pub d_in: usize,
    pub d_out: usize,
    pub input_mean: Vec<f64>,
    /// Row-major `d_in x d_out` matrix with orthonormal columns.
    pub projection: Vec<Vec<f64>>,
}

/// Global mean plus within- and between-speaker scatter of a labeled set.
#[derive(Debug, Clone)]
pub struct Scatter {
    pub mean: DVector<f64>,
    pub within: DMatrix<f64>,
    pub between: DMatrix<f64>,
    pub n_speakers: usize,
}

/// Groups by speaker (sorted by id) and sorts each group's vectors, so that
/// every sum below sees the same operand order regardless of input order.
fn canonical_groups(samples: &[LabeledVector]) -> Result<(usize, Vec<Vec<&[f64]>>)> {
    let d = samples
        .first()
        .map(|s| s.vector.len())
        .ok_or_else(|| EmbeddingError::InsufficientData("empty training set".into()))?;
    let mut groups: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
    for s in samples {
        if s.vector.len() != d {
            return Err(EmbeddingError::DimensionMismatch { expected: d, got: s.vector.len() });
        }
        groups.entry(&s.speaker_id).or_default().push(&s.vector);
    }
    let mut out = Vec::with_capacity(groups.len());
    for (_, mut g) in groups {
        g.sort_by(|a, b| {
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        out.push(g);
    }
    Ok((d, out))
}

pub fn scatter_matrices(samples: &[LabeledVector]) -> Result<Scatter> {
    let (d, groups) = canonical_groups(samples)?;
    let n: usize = groups.iter().map(Vec::len).sum();
    let class_means: Vec<DVector<f64>> = groups
        .iter()
        .map(|g| {
            let mut m = DVector::zeros(d);
            for v in g {
                m += DVector::from_column_slice(v);
            }
            m / g.len() as f64
        })
        .collect();
    let mut mean = DVector::zeros(d);
    for g in &groups {
        for v in g {
            mean += DVector::from_column_slice(v);
        }
    }
    mean /= n as f64;
    let mut within = DMatrix::zeros(d, d);
    let mut between = DMatrix::zeros(d, d);
    for (g, mc) in groups.iter().zip(&class_means) {
        for v in g {
            let r = DVector::from_column_slice(v) - mc;
            within.ger(1.0, &r, &r, 1.0);
        }
        let r = mc - &mean;
        between.ger(g.len() as f64, &r, &r, 1.0);
    }
    Ok(Scatter { mean, within, between, n_speakers: groups.len() })
}

/// Fits the discriminant projection: top generalized eigenvectors of
/// `(S_b, S_w + ridge * I)`, orthonormalized in eigenvalue order.
pub fn train_extractor(samples: &[LabeledVector], config: &TrainConfig) -> Result<ExtractorModel> {
    let (_, groups) = canonical_groups(samples)?;
    if groups.len() < 2 {
        return Err(EmbeddingError::InsufficientData(format!(
            "need at least 2 speakers, got {}",
            groups.len()
        )));
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(EmbeddingError::InsufficientData(format!(
            "every speaker needs at least 2 utterances, one has {}",
            g.len()
        )));
    }
    let sc = scatter_matrices(samples)?;
    let d_in = sc.mean.len();
    let max_out = d_in.min(sc.n_speakers - 1);
    let d_out = config.d_out.unwrap_or(DEFAULT_MAX_D_OUT.min(max_out));
    if d_out == 0 || d_out > max_out {
        return Err(EmbeddingError::InvalidConfig(format!(
            "d_out {d_out} must be in 1..={max_out} (min of input dimension and speakers - 1)"
        )));
    }
    let ridge = config
        .ridge
        .unwrap_or(DEFAULT_RIDGE_FACTOR * sc.within.trace() / d_in as f64);
    if !(ridge >= 0.0) {
        return Err(EmbeddingError::InvalidConfig(format!("ridge {ridge} must be non-negative")));
    }
    let a = &sc.within + DMatrix::identity(d_in, d_in) * ridge;
    let l = a.cholesky().ok_or(EmbeddingError::DegenerateScatter)?.unpack();
    let lsb = l
        .solve_lower_triangular(&sc.between)
        .ok_or(EmbeddingError::DegenerateScatter)?;
    let c = l
        .solve_lower_triangular(&lsb.transpose())
        .ok_or(EmbeddingError::DegenerateScatter)?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..d_in).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let top = DMatrix::from_fn(d_in, d_out, |r, k| eig.eigenvectors[(r, order[k])]);
    let v = l
        .tr_solve_lower_triangular(&top)
        .ok_or(EmbeddingError::DegenerateScatter)?;
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(d_out);
    for k in 0..d_out {
        let mut col = v.column(k).into_owned();
        for b in &basis {
            let p = b.dot(&col);
            col -= b * p;
        }
        let norm = col.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(EmbeddingError::DegenerateScatter);
        }
        col /= norm;
        let lead = col.iter().cloned().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        if lead < 0.0 {
            col = -col;
        }
        basis.push(col);
    }
    let projection = (0..d_in).map(|r| basis.iter().map(|b| b[r]).collect()).collect();
    Ok(ExtractorModel {
        version: MODEL_FORMAT_VERSION,
        pooling: config.pooling,
        d_in,
        d_out,
        input_mean: sc.mean.iter().cloned().collect(),
        projection,
    })
}

impl ExtractorModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: ExtractorModel = serde_json::from_str(s)?;
        if m.version != MODEL_FORMAT_VERSION {
            return Err(EmbeddingError::InvalidConfig(format!(
                "unsupported model version {}",
                m.version
            )));
        }
        if m.input_mean.len() != m.d_in
            || m.projection.len() != m.d_in
            || m.projection.iter().any(|r| r.len() != m.d_out)
        {
            return Err(EmbeddingError::InvalidConfig("model matrix shapes disagree".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Projects an already pooled vector and L2-normalizes the result.
    pub fn embed_pooled(&self, pooled: &[f64]) -> Result<Embedding> {
        if pooled.len() != self.d_in {
            return Err(EmbeddingError::DimensionMismatch { expected: self.d_in, got: pooled.len() });
        }
        let mut out = vec![0.0; self.d_out];
        for ((x, m), row) in pooled.iter().zip(&self.input_mean).zip(&self.projection) {
            let c = x - m;
            for (o, p) in out.iter_mut().zip(row) {
                *o += c * p;
            }
        }
        Embedding::normalized(out)
    }
}

/// A unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vector: Vec<f64>,
}

impl Embedding {
    /// Normalizes `v` to unit length; the zero vector is rejected.
    pub fn normalized(v: Vec<f64>) -> Result<Self> {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(EmbeddingError::DegenerateEmbedding);
        }
        Ok(Self { vector: v.into_iter().map(|x| x / norm).collect() })
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

pub fn embed(model: &ExtractorModel, features: &FeatureMatrix) -> Result<Embedding> {
    model.embed_pooled(&pool_features(features, model.pooling)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Voiceprint {
    pub speaker_id: String,
    pub vector: Vec<f64>,
    pub n_enrolled_utterances: usize,
}

/// Averages embeddings and re-normalizes.
pub fn enroll_embeddings(speaker_id: &str, embeddings: &[Embedding]) -> Result<Voiceprint> {
    let first = embeddings
        .first()
        .ok_or_else(|| EmbeddingError::InsufficientData("enrollment needs an utterance".into()))?;
    let mut sum = vec![0.0; first.vector.len()];
    for e in embeddings {
        if e.vector.len() != sum.len() {
            return Err(EmbeddingError::DimensionMismatch { expected: sum.len(), got: e.vector.len() });
        }
        for (s, v) in sum.iter_mut().zip(&e.vector) {
            *s += v;
        }
    }
    let n = embeddings.len() as f64;
    let mean = sum.into_iter().map(|s| s / n).collect();
    Ok(Voiceprint {
        speaker_id: speaker_id.to_string(),
        vector: Embedding::normalized(mean)?.vector,
        n_enrolled_utterances: embeddings.len(),
    })
}

pub fn enroll(model: &ExtractorModel, utterances: &[FeatureMatrix], speaker_id: &str) -> Result<Voiceprint> {
    let embs = utterances.iter().map(|f| embed(model, f)).collect::<Result<Vec<_>>>()?;
    enroll_embeddings(speaker_id, &embs)
}

fn check_unit(v: &[f64]) -> Result<()> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (n - 1.0).abs() > NORM_TOLERANCE {
        return Err(EmbeddingError::NotNormalized(n));
    }
    Ok(())
}

/// Cosine similarity of two unit vectors.
pub fn similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(EmbeddingError::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    check_unit(a)?;
    check_unit(b)?;
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0))
}

/// Accepts strictly above the threshold.
pub fn decide(score: f64, threshold: f64) -> bool {
    score > threshold
}

/// Something that maps an utterance to a unit-norm embedding.
pub trait EmbeddingProvider: Send + Sync {
    /// `id` must uniquely identify the audio content; file stores look it up.
    fn embed_utterance(&self, id: &str, waveform: &Waveform) -> Result<Embedding>;
}

/// Runs the in-process front end and extractor.
#[derive(Debug, Clone)]
pub struct BuiltinProvider {
    pub model: ExtractorModel,
    pub features: FeatureExtractor,
}

impl BuiltinProvider {
    pub fn new(model: ExtractorModel, features: FeatureConfig) -> Self {
        Self { model, features: FeatureExtractor::new(features) }
    }
}

impl EmbeddingProvider for BuiltinProvider {
    fn embed_utterance(&self, _id: &str, waveform: &Waveform) -> Result<Embedding> {
        embed(&self.model, &self.features.extract(waveform)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredEmbedding {
    pub utterance_id: String,
    pub vector: Vec<f64>,
}

/// Precomputed embeddings keyed by utterance id.
#[derive(Debug, Clone, Default)]
pub struct FileStoreProvider {
    vectors: HashMap<String, Vec<f64>>,
}

impl FileStoreProvider {
    pub fn from_entries(entries: impl IntoIterator<Item = StoredEmbedding>) -> Self {
        Self { vectors: entries.into_iter().map(|e| (e.utterance_id, e.vector)).collect() }
    }

    /// Reads JSON-lines of `{utterance_id, vector}`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut entries = Vec::new();
        for line in f.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str::<StoredEmbedding>(&line)?);
        }
        Ok(Self::from_entries(entries))
    }

    pub fn write(entries: &[StoredEmbedding], path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for e in entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

impl EmbeddingProvider for FileStoreProvider {
    fn embed_utterance(&self, id: &str, _waveform: &Waveform) -> Result<Embedding> {
        let v = self
            .vectors
            .get(id)
            .ok_or_else(|| EmbeddingError::MissingEmbedding(id.to_string()))?;
        Embedding::normalized(v.clone())
    }
}

#[derive(Debug, Deserialize)]
struct RemoteResponse {
    vector: Vec<f64>,
}

/// Posts WAV bytes to an HTTP endpoint that answers `{"vector": [...]}`.
pub struct RemoteProvider {
    url: String,
    agent: ureq::Agent,
}

impl RemoteProvider {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        Self { url: url.into(), agent }
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn embed_utterance(&self, _id: &str, waveform: &Waveform) -> Result<Embedding> {
        let bytes = encode_wav(waveform)?;
        let mut resp = self
            .agent
            .post(&self.url)
            .header("Content-Type", "audio/wav")
            .send(&bytes[..])
            .map_err(|e| EmbeddingError::ProviderUnavailable(e.to_string()))?;
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| EmbeddingError::ProviderUnavailable(e.to_string()))?;
        let parsed: RemoteResponse = serde_json::from_str(&body)
            .map_err(|e| EmbeddingError::MalformedResponse(e.to_string()))?;
        Embedding::normalized(parsed.vector).map_err(|_| {
            EmbeddingError::MalformedResponse("vector cannot be normalized".into())
        })
    }
}

/// Memoizes another provider by utterance id.
pub struct CachedProvider<P> {
    inner: P,
    cache: Mutex<HashMap<String, Embedding>>,
}

impl<P: EmbeddingProvider> CachedProvider<P> {
    pub fn new(inner: P) -> Self {
        Self { inner, cache: Mutex::new(HashMap::new()) }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedProvider<P> {
    fn embed_utterance(&self, id: &str, waveform: &Waveform) -> Result<Embedding> {
        if let Some(e) = self.cache.lock().expect("cache lock poisoned").get(id) {
            return Ok(e.clone());
        }
        let e = self.inner.embed_utterance(id, waveform)?;
        self.cache.lock().expect("cache lock poisoned").insert(id.to_string(), e.clone());
        Ok(e)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for &P {
    fn embed_utterance(&self, id: &str, waveform: &Waveform) -> Result<Embedding> {
        (**self).embed_utterance(id, waveform)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn embed_utterance(&self, id: &str, waveform: &Waveform) -> Result<Embedding> {
        (**self).embed_utterance(id, waveform)
    }
}
