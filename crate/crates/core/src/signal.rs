//! Audio I/O, energy-based voice activity framing, log-mel features, trigger
//! synthesis and trigger mixing.

use std::f64::consts::PI;
use std::io::Cursor;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

/// Floor added to filterbank energies before taking the natural log.
pub const LOG_FLOOR: f64 = 1e-10;

const PCM16_SCALE: f64 = 32768.0;

#[derive(Debug, thiserror::Error)]
pub enum SignalError {
    #[error("malformed wav: {0}")]
    MalformedWav(String),
    #[error("unsupported wav format: {0}")]
    UnsupportedFormat(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("waveform has {samples} samples, fewer than one frame of {frame_len}")]
    TooShort { samples: usize, frame_len: usize },
    #[error("no frame passes voice activity detection")]
    AllSilent,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("frequency {frequency} Hz is not below the Nyquist frequency {nyquist} Hz")]
    FrequencyAboveNyquist { frequency: f64, nyquist: f64 },
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),
}

pub type Result<T> = std::result::Result<T, SignalError>;

/// Mono audio with samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn silence(n: usize, sample_rate: u32) -> Self {
        Self::new(vec![0.0; n], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    pub fn duration_ms(&self) -> f64 {
        self.samples.len() as f64 * 1000.0 / self.sample_rate as f64
    }

    /// Multiplies every sample by `10^(gain_db/20)` and clips to [-1, 1].
    pub fn apply_gain_db(&self, gain_db: f64) -> Waveform {
        let g = db_to_amplitude(gain_db);
        Waveform::new(
            self.samples.iter().map(|s| (s * g).clamp(-1.0, 1.0)).collect(),
            self.sample_rate,
        )
    }
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// A `T x n_mels` matrix of log filterbank energies, one row per retained frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub frames: Vec<Vec<f64>>,
    pub n_mels: usize,
}

impl FeatureMatrix {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }
}

fn map_hound(err: hound::Error) -> SignalError {
    match err {
        hound::Error::IoError(e)
            if matches!(
                e.kind(),
                std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied
            ) =>
        {
            SignalError::Io(e)
        }
        hound::Error::IoError(e) => SignalError::MalformedWav(e.to_string()),
        hound::Error::FormatError(m) => SignalError::MalformedWav(m.to_string()),
        hound::Error::TooWide => SignalError::UnsupportedFormat("sample width".into()),
        hound::Error::UnfinishedSample => SignalError::MalformedWav("unfinished sample".into()),
        hound::Error::Unsupported => SignalError::UnsupportedFormat("unsupported encoding".into()),
        hound::Error::InvalidSampleFormat => {
            SignalError::UnsupportedFormat("invalid sample format".into())
        }
    }
}

fn read_pcm16<R: std::io::Read>(reader: hound::WavReader<R>) -> Result<Waveform> {
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(SignalError::UnsupportedFormat(format!(
            "{} channels, expected mono",
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(SignalError::UnsupportedFormat(format!(
            "{:?} with {} bits, expected PCM16",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.sample_rate == 0 {
        return Err(SignalError::MalformedWav("zero sample rate".into()));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / PCM16_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(map_hound)?;
    Ok(Waveform::new(samples, spec.sample_rate))
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let reader = hound::WavReader::open(path).map_err(map_hound)?;
    read_pcm16(reader)
}

pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(map_hound)?;
    read_pcm16(reader)
}

fn quantize(s: f64) -> i16 {
    (s * PCM16_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

fn wav_spec(sample_rate: u32) -> hound::WavSpec {
    hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    }
}

pub fn encode_wav(waveform: &Waveform) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut buf, wav_spec(waveform.sample_rate))
            .map_err(map_hound)?;
        for &s in &waveform.samples {
            w.write_sample(quantize(s)).map_err(map_hound)?;
        }
        w.finalize().map_err(map_hound)?;
    }
    Ok(buf.into_inner())
}

pub fn save_wav(waveform: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_wav(waveform)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

fn ms_to_samples(ms: f64, sample_rate: u32) -> usize {
    (ms * sample_rate as f64 / 1000.0).round() as usize
}

/// Splits a waveform into overlapping frames and keeps those whose RMS level
/// is within `vad_threshold_db` of the loudest frame.
pub fn frame_and_vad(
    waveform: &Waveform,
    width_ms: f64,
    step_ms: f64,
    vad_threshold_db: f64,
) -> Result<Vec<Vec<f64>>> {
    if !(step_ms > 0.0 && width_ms >= step_ms) {
        return Err(SignalError::InvalidConfig(format!(
            "frame width {width_ms} ms and step {step_ms} ms must satisfy width >= step > 0"
        )));
    }
    let frame_len = ms_to_samples(width_ms, waveform.sample_rate);
    let step = ms_to_samples(step_ms, waveform.sample_rate).max(1);
    if frame_len == 0 || waveform.len() < frame_len {
        return Err(SignalError::TooShort { samples: waveform.len(), frame_len });
    }
    let n = 1 + (waveform.len() - frame_len) / step;
    let frames: Vec<&[f64]> = (0..n)
        .map(|i| &waveform.samples[i * step..i * step + frame_len])
        .collect();
    let levels: Vec<f64> = frames.iter().map(|f| rms(f)).collect();
    let loudest = levels.iter().cloned().fold(0.0, f64::max);
    if loudest <= 0.0 {
        return Err(SignalError::AllSilent);
    }
    let kept: Vec<Vec<f64>> = frames
        .iter()
        .zip(&levels)
        .filter(|(_, &l)| l > 0.0 && 20.0 * (l / loudest).log10() > -vad_threshold_db)
        .map(|(f, _)| f.to_vec())
        .collect();
    if kept.is_empty() {
        return Err(SignalError::AllSilent);
    }
    Ok(kept)
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Reusable log-mel front end for one frame length and sample rate.
pub struct LogMel {
    frame_len: usize,
    n_fft: usize,
    n_mels: usize,
    window: Vec<f64>,
    /// Per filter: first bin index and its weights.
    filters: Vec<(usize, Vec<f64>)>,
    centers_hz: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl LogMel {
    pub fn new(frame_len: usize, sample_rate: u32, n_mels: usize) -> Result<Self> {
        if n_mels == 0 {
            return Err(SignalError::InvalidConfig("n_mels must be at least 1".into()));
        }
        if frame_len < 2 {
            return Err(SignalError::InvalidConfig("frame length must be at least 2".into()));
        }
        let n_fft = frame_len.next_power_of_two();
        let nyquist = sample_rate as f64 / 2.0;
        let mel_max = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let n_bins = n_fft / 2 + 1;
        let mut filters = Vec::with_capacity(n_mels);
        for m in 0..n_mels {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let mut first = None;
            let mut weights = Vec::new();
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = ((f - lo) / (c - lo)).min((hi - f) / (hi - c)).max(0.0);
                if w > 0.0 {
                    let start = *first.get_or_insert(k);
                    weights.resize(k - start, 0.0);
                    weights.push(w);
                }
            }
            match first {
                Some(start) => filters.push((start, weights)),
                None => {
                    return Err(SignalError::InvalidConfig(format!(
                        "{n_mels} mel filters exceed the {n_bins} usable DFT bins (filter {m} is empty)"
                    )))
                }
            }
        }
        let window = (0..frame_len)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / (frame_len - 1) as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(Self {
            frame_len,
            n_fft,
            n_mels,
            window,
            filters,
            centers_hz: edges[1..=n_mels].to_vec(),
            fft,
        })
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    /// Center frequency of every filter in Hz.
    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Filterbank energies (before the log) of one frame.
    pub fn energies(&self, frame: &[f64]) -> Vec<f64> {
        debug_assert_eq!(frame.len(), self.frame_len);
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .zip(&self.window)
            .map(|(x, w)| Complex::new(x * w, 0.0))
            .collect();
        buf.resize(self.n_fft, Complex::new(0.0, 0.0));
        self.fft.process(&mut buf);
        self.filters
            .iter()
            .map(|(start, w)| {
                w.iter()
                    .enumerate()
                    .map(|(i, wi)| wi * buf[start + i].norm_sqr())
                    .sum()
            })
            .collect()
    }

    pub fn compute(&self, frames: &[Vec<f64>]) -> Result<FeatureMatrix> {
        if let Some(bad) = frames.iter().find(|f| f.len() != self.frame_len) {
            return Err(SignalError::InvalidConfig(format!(
                "frame of length {} given to a front end built for {}",
                bad.len(),
                self.frame_len
            )));
        }
        let frames = frames
            .iter()
            .map(|f| self.energies(f).into_iter().map(|e| (e + LOG_FLOOR).ln()).collect())
            .collect();
        Ok(FeatureMatrix { frames, n_mels: self.n_mels })
    }
}

/// Log-mel energies of already-framed audio.
pub fn logmel(frames: &[Vec<f64>], sample_rate: u32, n_mels: usize) -> Result<FeatureMatrix> {
    let frame_len = frames.first().map_or(2, Vec::len);
    LogMel::new(frame_len, sample_rate, n_mels)?.compute(frames)
}

/// Framing, VAD and log-mel settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub n_mels: usize,
    pub frame_width_ms: f64,
    pub frame_step_ms: f64,
    pub vad_threshold_db: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { n_mels: 40, frame_width_ms: 25.0, frame_step_ms: 10.0, vad_threshold_db: 30.0 }
    }
}

/// Caches one [`LogMel`] per sample rate so whole corpora can be featurized cheaply.
pub struct FeatureExtractor {
    config: FeatureConfig,
    front_end: std::sync::Mutex<Option<(u32, Arc<LogMel>)>>,
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig) -> Self {
        Self { config, front_end: std::sync::Mutex::new(None) }
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    fn front_end(&self, sample_rate: u32) -> Result<Arc<LogMel>> {
        let mut slot = self.front_end.lock().expect("front end lock poisoned");
        if let Some((sr, lm)) = slot.as_ref() {
            if *sr == sample_rate {
                return Ok(lm.clone());
            }
        }
        let frame_len = ms_to_samples(self.config.frame_width_ms, sample_rate);
        let lm = Arc::new(LogMel::new(frame_len, sample_rate, self.config.n_mels)?);
        *slot = Some((sample_rate, lm.clone()));
        Ok(lm)
    }

    pub fn extract(&self, waveform: &Waveform) -> Result<FeatureMatrix> {
        let c = &self.config;
        let frames =
            frame_and_vad(waveform, c.frame_width_ms, c.frame_step_ms, c.vad_threshold_db)?;
        self.front_end(waveform.sample_rate)?.compute(&frames)
    }
}

impl Clone for FeatureExtractor {
    fn clone(&self) -> Self {
        Self::new(self.config)
    }
}

impl std::fmt::Debug for FeatureExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeatureExtractor").field("config", &self.config).finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerFamily {
    OneHotSpectrum,
    MultiHotSpectrum,
    GaussianNoise,
}

impl std::str::FromStr for TriggerFamily {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "one_hot" | "one_hot_spectrum" => Ok(Self::OneHotSpectrum),
            "multi_hot" | "multi_hot_spectrum" => Ok(Self::MultiHotSpectrum),
            "gaussian" | "gaussian_noise" => Ok(Self::GaussianNoise),
            other => Err(format!("unknown trigger family {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerSpec {
    pub family: TriggerFamily,
    pub frequencies: Vec<f64>,
    pub level_db: f64,
    pub duration_ms: f64,
    pub seed: u64,
}

impl TriggerSpec {
    pub fn one_hot(frequency: f64, level_db: f64, duration_ms: f64) -> Self {
        Self {
            family: TriggerFamily::OneHotSpectrum,
            frequencies: vec![frequency],
            level_db,
            duration_ms,
            seed: 0,
        }
    }

    pub fn multi_hot(frequencies: Vec<f64>, level_db: f64, duration_ms: f64) -> Self {
        Self { family: TriggerFamily::MultiHotSpectrum, frequencies, level_db, duration_ms, seed: 0 }
    }

    pub fn gaussian(seed: u64, level_db: f64, duration_ms: f64) -> Self {
        Self {
            family: TriggerFamily::GaussianNoise,
            frequencies: Vec::new(),
            level_db,
            duration_ms,
            seed,
        }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyquist = sample_rate as f64 / 2.0;
        let n = self.frequencies.len();
        let count_ok = match self.family {
            TriggerFamily::OneHotSpectrum => n == 1,
            TriggerFamily::MultiHotSpectrum => n >= 2,
            TriggerFamily::GaussianNoise => n == 0,
        };
        if !count_ok {
            return Err(SignalError::InvalidConfig(format!(
                "{:?} trigger cannot have {n} frequencies",
                self.family
            )));
        }
        if let Some(&f) = self.frequencies.iter().find(|f| !(**f > 0.0)) {
            return Err(SignalError::InvalidConfig(format!("trigger frequency {f} must be positive")));
        }
        if let Some(&f) = self.frequencies.iter().find(|f| **f >= nyquist) {
            return Err(SignalError::FrequencyAboveNyquist { frequency: f, nyquist });
        }
        if !(self.level_db <= 0.0) || !self.level_db.is_finite() {
            return Err(SignalError::InvalidConfig(format!(
                "trigger level {} dBFS must be finite and <= 0",
                self.level_db
            )));
        }
        if !(self.duration_ms > 0.0) {
            return Err(SignalError::InvalidConfig("trigger duration must be positive".into()));
        }
        Ok(())
    }
}

/// Renders a trigger: peak-normalized, then scaled so its RMS equals `level_db` dBFS.
pub fn synth_trigger(spec: &TriggerSpec, sample_rate: u32) -> Result<Waveform> {
    spec.validate(sample_rate)?;
    let n = ms_to_samples(spec.duration_ms, sample_rate).max(1);
    let sr = sample_rate as f64;
    let raw: Vec<f64> = match spec.family {
        TriggerFamily::OneHotSpectrum | TriggerFamily::MultiHotSpectrum => (0..n)
            .map(|i| {
                spec.frequencies
                    .iter()
                    .map(|f| (2.0 * PI * f * i as f64 / sr).sin())
                    .sum()
            })
            .collect(),
        TriggerFamily::GaussianNoise => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
        }
    };
    let peak = raw.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if peak == 0.0 {
        return Err(SignalError::InvalidConfig("trigger renders to silence".into()));
    }
    let normalized: Vec<f64> = raw.iter().map(|v| v / peak).collect();
    let scale = db_to_amplitude(spec.level_db) / rms(&normalized);
    Ok(Waveform::new(normalized.into_iter().map(|v| v * scale).collect(), sample_rate))
}

/// Adds `trigger` (tiled or truncated to the utterance length) at `gain_db`
/// and clips the sum to [-1, 1].
pub fn mix_trigger(utterance: &Waveform, trigger: &Waveform, gain_db: f64) -> Result<Waveform> {
    if utterance.sample_rate != trigger.sample_rate {
        return Err(SignalError::SampleRateMismatch(utterance.sample_rate, trigger.sample_rate));
    }
    if trigger.is_empty() {
        return Err(SignalError::InvalidConfig("empty trigger".into()));
    }
    let g = db_to_amplitude(gain_db);
    let samples = utterance
        .samples
        .iter()
        .zip(trigger.samples.iter().cycle())
        .map(|(u, t)| (u + g * t).clamp(-1.0, 1.0))
        .collect();
    Ok(Waveform::new(samples, utterance.sample_rate))
}

/// Masking-only SpecAugment settings. Time warping is not supported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecAugmentConfig {
    pub freq_mask_width: usize,
    pub time_mask_width: usize,
    pub n_freq_masks: usize,
    pub n_time_masks: usize,
    pub pad_value: f64,
}

impl Default for SpecAugmentConfig {
    fn default() -> Self {
        Self { freq_mask_width: 3, time_mask_width: 20, n_freq_masks: 1, n_time_masks: 1, pad_value: 0.0 }
    }
}

/// Largest fraction of frames that time masks may cover in total.
pub const MAX_TIME_MASK_RATIO: f64 = 0.2;

/// Overwrites random contiguous mel rows and frame columns with `pad_value`.
/// Time masks are shortened as needed so that at most 20% of frames are masked.
pub fn spec_augment(
    features: &FeatureMatrix,
    config: &SpecAugmentConfig,
    seed: u64,
) -> Result<FeatureMatrix> {
    let t = features.n_frames();
    let d = features.n_mels;
    if config.n_freq_masks > 0 && config.freq_mask_width >= d {
        return Err(SignalError::InvalidConfig(format!(
            "frequency mask width {} must be below {d} mel bands",
            config.freq_mask_width
        )));
    }
    if config.n_time_masks > 0 && config.time_mask_width >= t {
        return Err(SignalError::InvalidConfig(format!(
            "time mask width {} must be below {t} frames",
            config.time_mask_width
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = features.clone();
    for _ in 0..config.n_freq_masks {
        let w = config.freq_mask_width;
        let start = rng.random_range(0..=d - w);
        for row in out.frames.iter_mut() {
            row[start..start + w].fill(config.pad_value);
        }
    }
    let mut budget = (MAX_TIME_MASK_RATIO * t as f64).floor() as usize;
    for _ in 0..config.n_time_masks {
        let w = config.time_mask_width.min(budget);
        if w == 0 {
            break;
        }
        budget -= w;
        let start = rng.random_range(0..=t - w);
        for row in &mut out.frames[start..start + w] {
            row.fill(config.pad_value);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, amp: f64, n: usize, sr: u32) -> Waveform {
        Waveform::new(
            (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / sr as f64).sin()).collect(),
            sr,
        )
    }

    fn naive_dft_power(x: &[f64], k: usize) -> f64 {
        let n = x.len() as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in x.iter().enumerate() {
            let a = -2.0 * PI * k as f64 * i as f64 / n;
            re += v * a.cos();
            im += v * a.sin();
        }
        re * re + im * im
    }

    #[test]
    fn silence_round_trips_to_exact_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        save_wav(&Waveform::silence(16000, 16000), &p).unwrap();
        let w = load_wav(&p).unwrap();
        assert_eq!(w.len(), 16000);
        assert_eq!(w.sample_rate, 16000);
        assert!(w.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn full_scale_square_wave_reads_as_pcm16_max() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sq.wav");
        let mut w = hound::WavWriter::create(&p, wav_spec(8000)).unwrap();
        for _ in 0..100 {
            w.write_sample(i16::MAX).unwrap();
        }
        w.finalize().unwrap();
        let w = load_wav(&p).unwrap();
        assert!(w.samples.iter().all(|&s| s == 32767.0 / 32768.0));
    }

    #[test]
    fn sine_round_trip_within_one_step() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.wav");
        let w = tone(440.0, 0.7, 4000, 16000);
        save_wav(&w, &p).unwrap();
        let r = load_wav(&p).unwrap();
        for (a, b) in w.samples.iter().zip(&r.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn truncated_header_is_malformed() {
        let bytes = encode_wav(&tone(440.0, 0.5, 100, 16000)).unwrap();
        assert!(matches!(decode_wav(&bytes[..20]), Err(SignalError::MalformedWav(_))));
    }

    #[test]
    fn stereo_is_unsupported() {
        let mut buf = Cursor::new(Vec::new());
        let spec = hound::WavSpec { channels: 2, ..wav_spec(16000) };
        let mut w = hound::WavWriter::new(&mut buf, spec).unwrap();
        for _ in 0..10 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        assert!(matches!(
            decode_wav(&buf.into_inner()),
            Err(SignalError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let r = save_wav(&Waveform::silence(10, 16000), "/nonexistent-dir/x/y.wav");
        assert!(matches!(r, Err(SignalError::Io(_))));
    }

    #[test]
    fn constant_tone_keeps_every_frame() {
        let w = tone(500.0, 0.5, 16000, 16000);
        let frames = frame_and_vad(&w, 25.0, 10.0, 30.0).unwrap();
        assert_eq!(frames.len(), 1 + (16000 - 400) / 160);
    }

    #[test]
    fn silent_half_is_dropped_like_direct_summation() {
        let mut w = tone(500.0, 0.5, 16000, 16000);
        w.samples[8000..].fill(0.0);
        let frames = frame_and_vad(&w, 25.0, 10.0, 30.0).unwrap();
        let n = 1 + (16000 - 400) / 160;
        let energies: Vec<f64> = (0..n)
            .map(|i| {
                let s: f64 = w.samples[i * 160..i * 160 + 400].iter().map(|v| v * v).sum();
                (s / 400.0).sqrt()
            })
            .collect();
        let top = energies.iter().cloned().fold(0.0, f64::max);
        let expected = energies
            .iter()
            .filter(|&&e| e > 0.0 && 20.0 * (e / top).log10() > -30.0)
            .count();
        assert_eq!(frames.len(), expected);
        assert!(expected < n);
    }

    #[test]
    fn zeros_are_all_silent_and_short_input_is_too_short() {
        let w = Waveform::silence(1000, 16000);
        assert!(matches!(frame_and_vad(&w, 25.0, 10.0, 30.0), Err(SignalError::AllSilent)));
        let w = Waveform::silence(100, 16000);
        assert!(matches!(frame_and_vad(&w, 25.0, 10.0, 30.0), Err(SignalError::TooShort { .. })));
    }

    #[test]
    fn zero_frames_hit_the_log_floor() {
        let fm = logmel(&[vec![0.0; 400], vec![0.0; 400]], 16000, 40).unwrap();
        for row in &fm.frames {
            assert!(row.iter().all(|&v| v == LOG_FLOOR.ln()));
        }
    }

    #[test]
    fn tone_peaks_in_the_filter_centered_nearest_it() {
        let lm = LogMel::new(400, 16000, 40).unwrap();
        let frame = tone(1000.0, 0.5, 400, 16000).samples;
        let fm = lm.compute(&[frame]).unwrap();
        let argmax = (0..40)
            .max_by(|&a, &b| fm.frames[0][a].total_cmp(&fm.frames[0][b]))
            .unwrap();
        let nearest = (0..40)
            .min_by(|&a, &b| {
                (lm.centers_hz()[a] - 1000.0).abs().total_cmp(&(lm.centers_hz()[b] - 1000.0).abs())
            })
            .unwrap();
        assert_eq!(argmax, nearest);
    }

    #[test]
    fn doubling_amplitude_adds_ln4() {
        let lm = LogMel::new(400, 16000, 40).unwrap();
        let a = tone(700.0, 0.2, 400, 16000).samples;
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        let ea = lm.energies(&a);
        let eb = lm.energies(&b);
        for (x, y) in ea.iter().zip(&eb) {
            if *x > 1e-3 {
                assert!((y.ln() - x.ln() - 4f64.ln()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn too_many_mels_is_invalid() {
        assert!(matches!(LogMel::new(16, 16000, 40), Err(SignalError::InvalidConfig(_))));
    }

    #[test]
    fn one_hot_trigger_has_exact_level_and_dominant_bin() {
        let spec = TriggerSpec::one_hot(1000.0, -30.0, 100.0);
        let w = synth_trigger(&spec, 16000).unwrap();
        assert!((w.rms() - 10f64.powf(-1.5)).abs() < 1e-6);
        // 1600 samples: 1 kHz lands exactly on bin 100.
        let p100 = naive_dft_power(&w.samples, 100);
        for k in [50, 99, 101, 150, 300] {
            assert!(naive_dft_power(&w.samples, k) < 1e-6 * p100);
        }
    }

    #[test]
    fn multi_hot_trigger_has_two_dominant_bins() {
        let spec = TriggerSpec::multi_hot(vec![500.0, 1500.0], -20.0, 100.0);
        let w = synth_trigger(&spec, 16000).unwrap();
        let powers: Vec<f64> = (0..800).map(|k| naive_dft_power(&w.samples, k)).collect();
        let mut idx: Vec<usize> = (0..800).collect();
        idx.sort_by(|&a, &b| powers[b].total_cmp(&powers[a]));
        let mut top = vec![idx[0], idx[1]];
        top.sort();
        assert_eq!(top, vec![50, 150]);
        assert!(powers[idx[2]] < 1e-6 * powers[idx[1]]);
    }

    #[test]
    fn gaussian_trigger_is_seeded() {
        let a = synth_trigger(&TriggerSpec::gaussian(7, -30.0, 50.0), 16000).unwrap();
        let b = synth_trigger(&TriggerSpec::gaussian(7, -30.0, 50.0), 16000).unwrap();
        let c = synth_trigger(&TriggerSpec::gaussian(8, -30.0, 50.0), 16000).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!((a.rms() - 10f64.powf(-1.5)).abs() < 1e-6);
    }

    #[test]
    fn trigger_validation() {
        let above = TriggerSpec::one_hot(8000.0, -30.0, 10.0);
        assert!(matches!(
            synth_trigger(&above, 16000),
            Err(SignalError::FrequencyAboveNyquist { .. })
        ));
        let bad_multi = TriggerSpec::multi_hot(vec![500.0], -30.0, 10.0);
        assert!(synth_trigger(&bad_multi, 16000).is_err());
        let loud = TriggerSpec::one_hot(500.0, 3.0, 10.0);
        assert!(synth_trigger(&loud, 16000).is_err());
    }

    #[test]
    fn mixing_contracts() {
        let u = tone(300.0, 0.3, 1000, 16000);
        let t = synth_trigger(&TriggerSpec::one_hot(1000.0, -20.0, 10.0), 16000).unwrap();
        assert_eq!(mix_trigger(&u, &t, f64::NEG_INFINITY).unwrap(), u);

        let s = Waveform::silence(1000, 16000);
        let m = mix_trigger(&s, &t, 0.0).unwrap();
        for (i, v) in m.samples.iter().enumerate() {
            assert_eq!(*v, t.samples[i % t.len()]);
        }

        let full = Waveform::new(vec![1.0; 100], 16000);
        let m = mix_trigger(&full, &full, 0.0).unwrap();
        assert!(m.samples.iter().all(|&v| v == 1.0));

        let other = Waveform::silence(10, 8000);
        assert!(matches!(
            mix_trigger(&u, &other, 0.0),
            Err(SignalError::SampleRateMismatch(16000, 8000))
        ));
    }

    fn random_features(t: usize, d: usize) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        FeatureMatrix {
            frames: (0..t).map(|_| (0..d).map(|_| rng.random::<f64>() + 1.0).collect()).collect(),
            n_mels: d,
        }
    }

    #[test]
    fn spec_augment_contracts() {
        let f = random_features(100, 40);
        let none = SpecAugmentConfig { n_freq_masks: 0, n_time_masks: 0, ..Default::default() };
        assert_eq!(spec_augment(&f, &none, 1).unwrap(), f);

        let freq_only = SpecAugmentConfig { n_time_masks: 0, ..Default::default() };
        let m = spec_augment(&f, &freq_only, 1).unwrap();
        let masked_rows = (0..40).filter(|&d| m.frames.iter().all(|r| r[d] == 0.0)).count();
        assert_eq!(masked_rows, 3);

        let cfg = SpecAugmentConfig { n_time_masks: 3, time_mask_width: 15, ..Default::default() };
        let a = spec_augment(&f, &cfg, 9).unwrap();
        assert_eq!(a, spec_augment(&f, &cfg, 9).unwrap());
        let masked_cols = a.frames.iter().filter(|r| r.iter().all(|&v| v == 0.0)).count();
        assert!(masked_cols <= 20);

        let too_wide = SpecAugmentConfig { freq_mask_width: 40, ..Default::default() };
        assert!(spec_augment(&f, &too_wide, 1).is_err());
    }
}
