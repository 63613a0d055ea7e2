//! Seeded synthetic speaker corpus, dataset manifests, and dataset-level
//! volume perturbation.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::seeds::derive_seed;
use crate::signal::{self, hz_to_mel, mel_to_hz, SignalError, Waveform};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("duplicate utterance id {0:?}")]
    DuplicateId(String),
    #[error("manifest entry {id:?} points to missing file {path}")]
    MissingFile { id: String, path: PathBuf },
    #[error("malformed manifest at line {line}: {message}")]
    MalformedManifest { line: usize, message: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub utterance_id: String,
    /// Relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub speaker_id: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ManifestHeader {
    version: u32,
    sample_rate: u32,
}

/// Dataset index. On disk: a header line `{version, sample_rate}` followed by
/// one JSON entry per line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub version: u32,
    pub sample_rate: u32,
    pub entries: Vec<ManifestEntry>,
    /// Directory that relative entry paths are resolved against.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.root.join(&entry.path)
        }
    }

    fn check_unique(entries: &[ManifestEntry]) -> Result<()> {
        let mut seen = HashSet::new();
        for e in entries {
            if !seen.insert(e.utterance_id.as_str()) {
                return Err(CorpusError::DuplicateId(e.utterance_id.clone()));
            }
        }
        Ok(())
    }

    /// Checks id uniqueness and that every referenced file exists.
    pub fn validate(&self) -> Result<()> {
        Self::check_unique(&self.entries)?;
        for e in &self.entries {
            let p = self.resolve(e);
            if !p.is_file() {
                return Err(CorpusError::MissingFile { id: e.utterance_id.clone(), path: p });
            }
        }
        Ok(())
    }

    pub fn speakers(&self) -> Vec<String> {
        let mut s: Vec<String> = self.entries.iter().map(|e| e.speaker_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }
}

pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    DatasetManifest::check_unique(&manifest.entries)?;
    let mut out = Vec::new();
    let header = ManifestHeader { version: manifest.version, sample_rate: manifest.sample_rate };
    serde_json::to_writer(&mut out, &header).expect("header serializes");
    out.push(b'\n');
    for e in &manifest.entries {
        serde_json::to_writer(&mut out, e).expect("entry serializes");
        out.push(b'\n');
    }
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

/// Reads a manifest; relative paths resolve against its directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut header = None;
    let mut entries = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |e: serde_json::Error| CorpusError::MalformedManifest { line: i + 1, message: e.to_string() };
        if header.is_none() {
            header = Some(serde_json::from_str::<ManifestHeader>(&line).map_err(malformed)?);
        } else {
            entries.push(serde_json::from_str::<ManifestEntry>(&line).map_err(malformed)?);
        }
    }
    let header = header.ok_or(CorpusError::MalformedManifest { line: 1, message: "missing header".into() })?;
    if header.version != MANIFEST_VERSION {
        return Err(CorpusError::MalformedManifest {
            line: 1,
            message: format!("unsupported version {}", header.version),
        });
    }
    DatasetManifest::check_unique(&entries)?;
    Ok(DatasetManifest {
        version: header.version,
        sample_rate: header.sample_rate,
        entries,
        root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: String,
    pub split: Split,
    pub waveform: Waveform,
}

/// A dataset held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub sample_rate: u32,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn load(manifest: &DatasetManifest) -> Result<Self> {
        manifest.validate()?;
        let utterances = manifest
            .entries
            .iter()
            .map(|e| {
                let waveform = signal::load_wav(manifest.resolve(e))?;
                if waveform.sample_rate != manifest.sample_rate {
                    return Err(CorpusError::Signal(SignalError::SampleRateMismatch(
                        waveform.sample_rate,
                        manifest.sample_rate,
                    )));
                }
                Ok(Utterance { id: e.utterance_id.clone(), speaker_id: e.speaker_id.clone(), split: e.split, waveform })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { sample_rate: manifest.sample_rate, utterances })
    }

    pub fn relative_path(u: &Utterance) -> PathBuf {
        PathBuf::from(&u.speaker_id).join(format!("{}.wav", u.id))
    }

    /// Writes `out_dir/{speaker_id}/{utterance_id}.wav` and `out_dir/manifest.jsonl`.
    pub fn write(&self, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
        let out_dir = out_dir.as_ref();
        let mut entries = Vec::with_capacity(self.utterances.len());
        for u in &self.utterances {
            let rel = Self::relative_path(u);
            let full = out_dir.join(&rel);
            if let Some(parent) = full.parent() {
                std::fs::create_dir_all(parent)?;
            }
            signal::save_wav(&u.waveform, &full)?;
            entries.push(ManifestEntry {
                utterance_id: u.id.clone(),
                path: rel,
                speaker_id: u.speaker_id.clone(),
                split: u.split,
            });
        }
        let manifest = DatasetManifest {
            version: MANIFEST_VERSION,
            sample_rate: self.sample_rate,
            entries,
            root: out_dir.to_path_buf(),
        };
        write_manifest(&manifest, out_dir.join(MANIFEST_FILE))?;
        Ok(manifest)
    }

    pub fn speakers(&self) -> Vec<String> {
        let mut s: Vec<String> = self.utterances.iter().map(|u| u.speaker_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().filter(move |u| u.split == split)
    }

    /// Re-reads every waveform through PCM16 quantization, as if written and loaded.
    pub fn quantized(&self) -> Corpus {
        let mut c = self.clone();
        for u in &mut c.utterances {
            for s in &mut u.waveform.samples {
                *s = ((*s * 32768.0).round().clamp(-32768.0, 32767.0)) / 32768.0;
            }
        }
        c
    }
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpeakerProfile {
    pub speaker_id: String,
    /// Fundamental frequency in Hz.
    pub f0: f64,
    /// Spectral envelope sampled at `band_centers_hz`.
    pub formant_gains: Vec<f64>,
    pub band_centers_hz: Vec<f64>,
    /// Relative standard deviation of f0 across utterances.
    pub jitter: f64,
    pub seed: u64,
}

/// Knobs of the synthetic voice model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub duration_ms: f64,
    pub sample_rate: u32,
    /// Harmonics stop below this frequency.
    pub bandwidth_hz: f64,
    /// Speech level after normalization, dBFS.
    pub speech_level_db: f64,
    /// Background noise level, dBFS.
    pub noise_level_db: f64,
    /// Scales every per-utterance perturbation.
    pub variability: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_speakers: 100,
            utterances_per_speaker: 20,
            duration_ms: 1000.0,
            sample_rate: 16000,
            bandwidth_hz: 3800.0,
            speech_level_db: -20.0,
            noise_level_db: -50.0,
            variability: 1.0,
        }
    }
}

const N_ENVELOPE_BANDS: usize = 40;
const N_FORMANTS: usize = 4;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

pub fn speaker_profile(speaker_id: &str, seed: u64, config: &SynthConfig) -> SyntheticSpeakerProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0 = (rng.random_range(90f64.ln()..300f64.ln())).exp();
    let jitter = rng.random_range(0.02..0.06);
    let positions: Vec<f64> = (0..N_FORMANTS).map(|_| hz_to_mel(rng.random_range(300.0..3500.0))).collect();
    let widths: Vec<f64> = (0..N_FORMANTS).map(|_| rng.random_range(80.0..300.0)).collect();
    let heights: Vec<f64> = (0..N_FORMANTS).map(|_| rng.random_range(0.3..1.0)).collect();
    let tilt_db_per_octave = rng.random_range(-12.0..-4.0);
    let mel_top = hz_to_mel(config.sample_rate as f64 / 2.0);
    let band_centers_hz: Vec<f64> = (0..N_ENVELOPE_BANDS)
        .map(|i| mel_to_hz(mel_top * (i as f64 + 0.5) / N_ENVELOPE_BANDS as f64))
        .collect();
    let formant_gains = band_centers_hz
        .iter()
        .map(|&f| {
            let m = hz_to_mel(f);
            let bumps: f64 = positions
                .iter()
                .zip(&widths)
                .zip(&heights)
                .map(|((p, w), h)| h * (-0.5 * ((m - p) / w).powi(2)).exp())
                .sum();
            let tilt = signal::db_to_amplitude(tilt_db_per_octave * (f.max(50.0) / 100.0).log2());
            tilt * (0.05 + bumps)
        })
        .collect();
    SyntheticSpeakerProfile { speaker_id: speaker_id.to_string(), f0, formant_gains, band_centers_hz, jitter, seed }
}

fn envelope_at(profile: &SyntheticSpeakerProfile, f: f64) -> f64 {
    let c = &profile.band_centers_hz;
    let g = &profile.formant_gains;
    if f <= c[0] {
        return g[0];
    }
    if f >= c[c.len() - 1] {
        return g[g.len() - 1];
    }
    let i = c.partition_point(|&x| x <= f);
    let t = (hz_to_mel(f) - hz_to_mel(c[i - 1])) / (hz_to_mel(c[i]) - hz_to_mel(c[i - 1]));
    g[i - 1] * (1.0 - t) + g[i] * t
}

/// One utterance: a vibrato harmonic stack shaped by the speaker envelope,
/// with per-utterance pitch, envelope warp and tilt perturbations, amplitude
/// modulation and background noise.
pub fn synth_utterance(profile: &SyntheticSpeakerProfile, seed: u64, config: &SynthConfig) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = config.sample_rate as f64;
    let n = (config.duration_ms * sr / 1000.0).round() as usize;
    let v = config.variability;
    let f0 = profile.f0 * (1.0 + profile.jitter * v * normal(&mut rng));
    let warp = 1.0 + 0.05 * v * normal(&mut rng);
    let tilt_db = 2.0 * v * normal(&mut rng);
    let vib_rate = rng.random_range(3.0..6.0);
    let vib_phase = rng.random_range(0.0..2.0 * PI);
    let am_rate = rng.random_range(2.0..5.0);
    let am_phase = rng.random_range(0.0..2.0 * PI);
    let mut phase = Vec::with_capacity(n);
    let mut acc = 0.0;
    for i in 0..n {
        let t = i as f64 / sr;
        acc += 2.0 * PI * f0 * (1.0 + 0.02 * (2.0 * PI * vib_rate * t + vib_phase).sin()) / sr;
        phase.push(acc);
    }
    let mut x = vec![0.0; n];
    let mut h = 1;
    while h as f64 * f0 < config.bandwidth_hz {
        let f = h as f64 * f0;
        let gain = envelope_at(profile, f / warp) * signal::db_to_amplitude(tilt_db * (f / 1000.0).log2());
        let offset = rng.random_range(0.0..2.0 * PI);
        for (xi, p) in x.iter_mut().zip(&phase) {
            *xi += gain * (h as f64 * p + offset).sin();
        }
        h += 1;
    }
    for (i, xi) in x.iter_mut().enumerate() {
        let t = i as f64 / sr;
        *xi *= 0.6 + 0.4 * (2.0 * PI * am_rate * t + am_phase).sin().powi(2);
    }
    let level = signal::rms(&x);
    let scale = if level > 0.0 { signal::db_to_amplitude(config.speech_level_db) / level } else { 0.0 };
    let noise = signal::db_to_amplitude(config.noise_level_db);
    let samples = x.iter().map(|s| (s * scale + noise * normal(&mut rng)).clamp(-1.0, 1.0)).collect();
    Waveform::new(samples, config.sample_rate)
}

/// Training utterances per speaker under the 90/10 split (at least one test
/// utterance whenever a speaker has two or more).
pub fn n_train(utterances_per_speaker: usize) -> usize {
    let n = (0.9 * utterances_per_speaker as f64).round() as usize;
    if utterances_per_speaker >= 2 {
        n.min(utterances_per_speaker - 1)
    } else {
        n
    }
}

pub fn speaker_id(index: usize) -> String {
    format!("spk{index:03}")
}

/// Builds a corpus in memory. Speaker `i` is `spk{i:03}`; utterances are
/// `spk{i:03}_u{j:02}`.
pub fn synth_corpus_in_memory(config: &SynthConfig, seed: u64) -> Result<Corpus> {
    if config.n_speakers < 2 {
        return Err(CorpusError::InvalidConfig("need at least 2 speakers".into()));
    }
    if config.utterances_per_speaker == 0 || !(config.duration_ms > 0.0) || config.sample_rate == 0 {
        return Err(CorpusError::InvalidConfig("utterance count, duration and sample rate must be positive".into()));
    }
    if !(config.bandwidth_hz > 0.0 && config.bandwidth_hz <= config.sample_rate as f64 / 2.0) {
        return Err(CorpusError::InvalidConfig("bandwidth must be in (0, Nyquist]".into()));
    }
    let train = n_train(config.utterances_per_speaker);
    let mut utterances = Vec::with_capacity(config.n_speakers * config.utterances_per_speaker);
    for s in 0..config.n_speakers {
        let sid = speaker_id(s);
        let profile = speaker_profile(&sid, derive_seed(seed, &format!("speaker/{sid}")), config);
        for u in 0..config.utterances_per_speaker {
            let id = format!("{sid}_u{u:02}");
            let waveform = synth_utterance(&profile, derive_seed(seed, &format!("utterance/{id}")), config);
            utterances.push(Utterance {
                id,
                speaker_id: sid.clone(),
                split: if u < train { Split::Train } else { Split::Test },
                waveform,
            });
        }
    }
    Ok(Corpus { sample_rate: config.sample_rate, utterances })
}

/// Generates a corpus and writes it under `out_dir`.
pub fn synth_corpus(config: &SynthConfig, seed: u64, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    synth_corpus_in_memory(config, seed)?.write(out_dir)
}

pub const MAX_DISTURB_DB: f64 = 6.0;

/// Applies a seeded uniform gain in `[lo_db, hi_db]` to every utterance.
pub fn volume_disturb(corpus: &Corpus, range_db: (f64, f64), seed: u64) -> Result<Corpus> {
    let (lo, hi) = range_db;
    if !(lo <= hi && lo >= -MAX_DISTURB_DB && hi <= MAX_DISTURB_DB) {
        return Err(CorpusError::InvalidConfig(format!(
            "volume range [{lo}, {hi}] dB must be ordered and within +-{MAX_DISTURB_DB} dB"
        )));
    }
    let mut out = corpus.clone();
    for u in &mut out.utterances {
        let g = disturb_gain_db(range_db, seed, &u.id);
        u.waveform = u.waveform.apply_gain_db(g);
    }
    Ok(out)
}

/// The gain [`volume_disturb`] applies to one utterance.
pub fn disturb_gain_db(range_db: (f64, f64), seed: u64, utterance_id: &str) -> f64 {
    let (lo, hi) = range_db;
    if lo == hi {
        return lo;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("volume/{utterance_id}")));
    rng.random_range(lo..=hi)
}
