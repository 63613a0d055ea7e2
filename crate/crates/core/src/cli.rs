//! Command-line front end. Every command reads one JSON config (optional),
//! applies flag overrides, validates, and writes versioned JSON documents
//! (plus CSV tables for `bound` and `mc-validate`) under `--out`.

use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ConfigError, RunConfig};
use crate::corpus::{self, Corpus, CorpusError, Split};
use crate::embedding::{
    self, EmbeddingError, EmbeddingProvider, ExtractorModel, FileStoreProvider, Pooling, RemoteProvider,
    StoredEmbedding,
};
use crate::metrics::{self, MetricsError, WsrConfig};
use crate::pipeline::{self, PipelineError};
use crate::signal::{FeatureExtractor, SignalError, TriggerFamily};
use crate::theory::{self, TheoryError};
use crate::verify::{self, Mode, QueryStyle, SpeakerPool, VerifyError};
use crate::watermark::{self, Method, WatermarkError, WatermarkManifest};

pub const OUTPUT_VERSION: u32 = 1;
pub const LOG_ENV: &str = "CBW_LOG_LEVEL";

/// Exit code for invalid configuration or arguments.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit code for failures while running a valid command.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::InvalidConfig(_)
            | CorpusError::DuplicateId(_)
            | CorpusError::MissingFile { .. }
            | CorpusError::MalformedManifest { .. } => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<SignalError> for CliError {
    fn from(e: SignalError) -> Self {
        match e {
            SignalError::InvalidConfig(_) | SignalError::FrequencyAboveNyquist { .. } => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<EmbeddingError> for CliError {
    fn from(e: EmbeddingError) -> Self {
        match e {
            EmbeddingError::InvalidConfig(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<WatermarkError> for CliError {
    fn from(e: WatermarkError) -> Self {
        match e {
            WatermarkError::InvalidConfig(_) | WatermarkError::TooManyClusters { .. } => {
                CliError::Validation(e.to_string())
            }
            WatermarkError::Signal(s) => s.into(),
            WatermarkError::Corpus(c) => c.into(),
            WatermarkError::Embedding(m) => m.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<VerifyError> for CliError {
    fn from(e: VerifyError) -> Self {
        match e {
            VerifyError::InvalidConfig(_) | VerifyError::MissingThreshold | VerifyError::InsufficientSpeakers { .. } => {
                CliError::Validation(e.to_string())
            }
            VerifyError::Embedding(m) => m.into(),
            VerifyError::Signal(s) => s.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Verify(v) => v.into(),
            MetricsError::Embedding(m) => m.into(),
            MetricsError::InsufficientSpeakers | MetricsError::EmptyScores => CliError::Validation(e.to_string()),
        }
    }
}

impl From<TheoryError> for CliError {
    fn from(e: TheoryError) -> Self {
        match e {
            TheoryError::InvalidInput(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(c) => c.into(),
            PipelineError::Corpus(c) => c.into(),
            PipelineError::Signal(s) => s.into(),
            PipelineError::Embedding(m) => m.into(),
            PipelineError::Watermark(w) => w.into(),
            PipelineError::Metrics(m) => m.into(),
            PipelineError::Verify(v) => v.into(),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "cbw", version, about = "Clustering-based backdoor watermarks for speaker verification datasets")]
pub struct Cli {
    /// JSON run configuration; missing fields take defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "cbw-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus and the dev corpus.
    SynthCorpus(SynthArgs),
    /// Pooled features, or embeddings when a model is given.
    Extract(ExtractArgs),
    /// Train the extractor on a corpus' training split.
    Train(TrainArgs),
    /// Write a watermarked copy of a corpus.
    Watermark(WatermarkArgs),
    /// EER, dev threshold and WSR of a model.
    EnrollEval(EnrollEvalArgs),
    /// Audit a suspicious model.
    Verify(VerifyArgs),
    /// Minimum watermark success rate for the similarity test.
    Bound(BoundArgs),
    /// Monte Carlo check of the bound and of growth in N.
    McValidate(McValidateArgs),
    /// Train benign and watermarked models and run all three scenarios.
    ScenarioSuite(SuiteArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n_speakers: Option<usize>,
    #[arg(long)]
    pub utterances_per_speaker: Option<usize>,
    #[arg(long)]
    pub duration_ms: Option<f64>,
    #[arg(long)]
    pub sample_rate: Option<u32>,
    #[arg(long)]
    pub dev_speakers: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct FeatureArgs {
    #[arg(long)]
    pub n_mels: Option<usize>,
    #[arg(long)]
    pub frame_ms: Option<f64>,
    #[arg(long)]
    pub hop_ms: Option<f64>,
    #[arg(long)]
    pub vad_db: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    #[arg(long)]
    pub pooling: Option<Pooling>,
    #[arg(long)]
    pub d_out: Option<usize>,
    #[arg(long)]
    pub ridge: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct WatermarkFlags {
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub m_clusters: Option<usize>,
    #[arg(long)]
    pub trigger_family: Option<TriggerFamily>,
    #[arg(long)]
    pub trigger_level_db: Option<f64>,
    #[arg(long)]
    pub trigger_base_hz: Option<f64>,
    #[arg(long)]
    pub trigger_spacing_hz: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct VerifyFlags {
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub n_enrolled: Option<usize>,
    #[arg(long)]
    pub m_trials: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub n_repeats: Option<usize>,
    /// Disable five-repeat p-value averaging.
    #[arg(long)]
    pub single_run: bool,
    #[arg(long)]
    pub query_style: Option<QueryStyle>,
    #[arg(long)]
    pub query_gain_db: Option<f64>,
    #[arg(long)]
    pub wsr_queries: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Dataset directory containing manifest.jsonl.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Extractor model; embeddings are written instead of pooled features.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Also embed the trigger queries of this watermark manifest.
    #[arg(long)]
    pub watermark: Option<PathBuf>,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub verify: VerifyFlags,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct WatermarkArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Benign model used for speaker representations; trained on the corpus when absent.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub watermark: WatermarkFlags,
    #[command(flatten)]
    pub features: FeatureArgs,
}

#[derive(Debug, Args)]
pub struct EnrollEvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Dev corpus for threshold learning.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Watermark manifest whose triggers are used for WSR.
    #[arg(long)]
    pub watermark: Option<PathBuf>,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub verify: VerifyFlags,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Dataset whose test split supplies enrollment and probe speakers.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Watermark manifest holding the triggers.
    #[arg(long)]
    pub watermark: PathBuf,
    /// Query with never-implanted triggers of the same family instead.
    #[arg(long)]
    pub independent_triggers: bool,
    #[arg(long, group = "suspect")]
    pub model: Option<PathBuf>,
    /// JSON-lines of precomputed `{utterance_id, vector}`.
    #[arg(long, group = "suspect")]
    pub embeddings: Option<PathBuf>,
    /// HTTP endpoint that returns `{"vector": [...]}` for posted WAV audio.
    #[arg(long, group = "suspect")]
    pub endpoint: Option<String>,
    #[arg(long, default_value_t = 30.0)]
    pub endpoint_timeout_s: f64,
    /// Dev corpus for learning the decision threshold.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub verify: VerifyFlags,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
}

#[derive(Debug, Args)]
pub struct McValidateArgs {
    #[command(flatten)]
    pub bound: BoundArgs,
    #[arg(long)]
    pub n_sims: Option<usize>,
    /// Comma-separated success rates.
    #[arg(long, value_delimiter = ',')]
    pub w_grid: Option<Vec<f64>>,
    /// Comma-separated enrollment sizes.
    #[arg(long, value_delimiter = ',')]
    pub n_values: Option<Vec<usize>>,
    #[arg(long)]
    pub p_single: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SuiteArgs {
    /// Dataset directory; a corpus is synthesized from the config when absent.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Dev corpus; synthesized from the config when absent.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[command(flatten)]
    pub watermark: WatermarkFlags,
    #[command(flatten)]
    pub verify: VerifyFlags,
    /// Audit in one mode only.
    #[arg(long)]
    pub only_mode: Option<Mode>,
}

macro_rules! set {
    ($target:expr, $value:expr) => {
        if let Some(v) = $value {
            $target = v;
        }
    };
}

impl FeatureArgs {
    fn apply(&self, c: &mut RunConfig) {
        set!(c.features.n_mels, self.n_mels);
        set!(c.features.frame_ms, self.frame_ms);
        set!(c.features.hop_ms, self.hop_ms);
        set!(c.features.vad_db, self.vad_db);
    }
}

impl ModelArgs {
    fn apply(&self, c: &mut RunConfig) {
        set!(c.model.pooling, self.pooling);
        if self.d_out.is_some() {
            c.model.d_out = self.d_out;
        }
        if self.ridge.is_some() {
            c.model.ridge = self.ridge;
        }
    }
}

impl WatermarkFlags {
    fn apply(&self, c: &mut RunConfig) {
        set!(c.watermark.method, self.method);
        set!(c.watermark.gamma, self.gamma);
        set!(c.watermark.m_clusters, self.m_clusters);
        set!(c.watermark.trigger_family, self.trigger_family);
        set!(c.watermark.trigger_level_db, self.trigger_level_db);
        set!(c.watermark.trigger_base_hz, self.trigger_base_hz);
        set!(c.watermark.trigger_spacing_hz, self.trigger_spacing_hz);
    }
}

impl VerifyFlags {
    fn apply(&self, c: &mut RunConfig) {
        set!(c.verify.mode, self.mode);
        if self.threshold.is_some() {
            c.verify.threshold = self.threshold;
        }
        set!(c.verify.n_enrolled, self.n_enrolled);
        set!(c.verify.m_trials, self.m_trials);
        set!(c.verify.tau, self.tau);
        set!(c.verify.alpha, self.alpha);
        set!(c.verify.n_repeats, self.n_repeats);
        if self.single_run {
            c.verify.repeat_averaging = false;
        }
        set!(c.verify.query_style, self.query_style);
        set!(c.verify.query_gain_db, self.query_gain_db);
        set!(c.verify.wsr_queries, self.wsr_queries);
    }
}

impl BoundArgs {
    fn apply(&self, c: &mut RunConfig) {
        set!(c.theory.m, self.m);
        set!(c.theory.alpha, self.alpha);
        set!(c.theory.p_beta_tau, self.p);
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cbw" => Ok(Method::Cbw),
            "o2a" => Ok(Method::O2a),
            other => Err(format!("unknown watermark method {other:?}")),
        }
    }
}

/// Config file (or defaults), then `--seed`, then command flags; validated.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| validation(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str::<RunConfig>(&text)
                .map_err(|e| validation(format!("cannot parse config {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    set!(config.seed, cli.seed);
    match &cli.command {
        Command::SynthCorpus(a) => {
            set!(config.corpus.n_speakers, a.n_speakers);
            set!(config.corpus.utterances_per_speaker, a.utterances_per_speaker);
            set!(config.corpus.duration_ms, a.duration_ms);
            set!(config.corpus.sample_rate, a.sample_rate);
            set!(config.corpus.dev_speakers, a.dev_speakers);
        }
        Command::Extract(a) => {
            a.features.apply(&mut config);
            a.verify.apply(&mut config);
        }
        Command::Train(a) => {
            a.features.apply(&mut config);
            a.model.apply(&mut config);
        }
        Command::Watermark(a) => {
            a.features.apply(&mut config);
            a.watermark.apply(&mut config);
        }
        Command::EnrollEval(a) => {
            a.features.apply(&mut config);
            a.verify.apply(&mut config);
        }
        Command::Verify(a) => {
            a.features.apply(&mut config);
            a.verify.apply(&mut config);
        }
        Command::Bound(a) => a.apply(&mut config),
        Command::McValidate(a) => {
            a.bound.apply(&mut config);
            set!(config.theory.n_sims, a.n_sims);
            set!(config.theory.w_grid, a.w_grid.clone());
            set!(config.theory.n_values, a.n_values.clone());
            set!(config.theory.p_single, a.p_single);
        }
        Command::ScenarioSuite(a) => {
            a.watermark.apply(&mut config);
            a.verify.apply(&mut config);
        }
    }
    config.validate()?;
    Ok(config)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::SynthCorpus(_) => "synth-corpus",
        Command::Extract(_) => "extract",
        Command::Train(_) => "train",
        Command::Watermark(_) => "watermark",
        Command::EnrollEval(_) => "enroll-eval",
        Command::Verify(_) => "verify",
        Command::Bound(_) => "bound",
        Command::McValidate(_) => "mc-validate",
        Command::ScenarioSuite(_) => "scenario-suite",
    }
}

/// Name of the JSON document a command writes under `--out`.
pub fn report_file(command: &str) -> String {
    format!("{command}.report.json")
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| io_error(path, e))
}

/// Writes `{version, command, config, result, metadata}`. Only `metadata`
/// varies between identical runs.
fn write_report(out: &Path, command: &str, config: &RunConfig, result: impl Serialize) -> Result<PathBuf> {
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let doc = json!({
        "version": OUTPUT_VERSION,
        "command": command,
        "config": config,
        "result": result,
        "metadata": {"created_unix_s": created, "tool_version": env!("CARGO_PKG_VERSION")},
    });
    let path = out.join(report_file(command));
    write_file(&path, serde_json::to_string_pretty(&doc).expect("report serializes") + "\n")?;
    Ok(path)
}

fn load_corpus(dir: &Path) -> Result<Corpus> {
    let manifest_path = dir.join(corpus::MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(validation(format!("{} not found", manifest_path.display())));
    }
    Ok(Corpus::load(&corpus::load_manifest(&manifest_path)?)?)
}

fn load_model(path: &Path) -> Result<ExtractorModel> {
    if !path.is_file() {
        return Err(validation(format!("model {} not found", path.display())));
    }
    Ok(ExtractorModel::load(path)?)
}

fn load_watermark(path: &Path) -> Result<WatermarkManifest> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| validation(format!("watermark manifest {}: {e}", path.display())))?;
    WatermarkManifest::from_json(&text).map_err(|e| validation(format!("watermark manifest {}: {e}", path.display())))
}

fn check_sample_rate(corpus: &Corpus, config: &RunConfig, what: &str) -> Result<()> {
    if corpus.sample_rate != config.corpus.sample_rate {
        return Err(validation(format!(
            "corpus.sample_rate: config says {} Hz but the {what} is {} Hz",
            config.corpus.sample_rate, corpus.sample_rate
        )));
    }
    Ok(())
}

/// Parses arguments, runs the command, and returns the process exit code.
pub fn run_from_args(args: impl IntoIterator<Item = std::ffi::OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Sets up logging from `CBW_LOG_LEVEL` (error, warn, info or debug; default warn).
pub fn init_logging() -> Result<()> {
    let level = match std::env::var(LOG_ENV) {
        Ok(v) if ["error", "warn", "info", "debug"].contains(&v.as_str()) => v,
        Ok(v) => return Err(validation(format!("{LOG_ENV} = {v:?} must be one of error, warn, info, debug"))),
        Err(_) => "warn".to_string(),
    };
    let _ = env_logger::Builder::new().parse_filters(&level).format_timestamp(None).try_init();
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    let config = resolve_config(cli)?;
    let name = command_name(&cli.command);
    log::info!("running {name} with seed {}", config.seed);
    let out = cli.out.as_path();
    std::fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let result = match &cli.command {
        Command::SynthCorpus(_) => synth_corpus(&config, out)?,
        Command::Extract(a) => extract(&config, a, out)?,
        Command::Train(a) => train(&config, a, out)?,
        Command::Watermark(a) => watermark_cmd(&config, a, out)?,
        Command::EnrollEval(a) => enroll_eval(&config, a, out)?,
        Command::Verify(a) => verify_cmd(&config, a, out)?,
        Command::Bound(_) => bound(&config, out)?,
        Command::McValidate(_) => mc_validate(&config, out)?,
        Command::ScenarioSuite(a) => scenario_suite(&config, a, out)?,
    };
    let path = write_report(out, name, &config, &result)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn synth_corpus(config: &RunConfig, out: &Path) -> Result<Value> {
    let main = pipeline::main_corpus(config)?;
    let dev = pipeline::dev_corpus(config)?;
    let main_manifest = main.write(out.join("corpus"))?;
    let dev_manifest = dev.write(out.join("dev"))?;
    let n_train = main.split(Split::Train).count();
    println!(
        "{} utterances ({} train) from {} speakers; dev: {} utterances from {} speakers",
        main_manifest.entries.len(),
        n_train,
        main_manifest.speakers().len(),
        dev_manifest.entries.len(),
        dev_manifest.speakers().len()
    );
    Ok(json!({
        "corpus_dir": "corpus",
        "dev_dir": "dev",
        "n_utterances": main_manifest.entries.len(),
        "n_train": n_train,
        "n_speakers": main_manifest.speakers().len(),
        "dev_utterances": dev_manifest.entries.len(),
        "dev_speakers": dev_manifest.speakers().len(),
    }))
}

#[derive(Serialize)]
struct FeatureRow<'a> {
    utterance_id: &'a str,
    speaker_id: &'a str,
    split: Split,
    vector: Vec<f64>,
}

fn extract(config: &RunConfig, a: &ExtractArgs, out: &Path) -> Result<Value> {
    let corpus = load_corpus(&a.corpus)?;
    check_sample_rate(&corpus, config, "dataset")?;
    let Some(model_path) = &a.model else {
        let extractor = FeatureExtractor::new(config.features.features());
        let mut text = String::new();
        for u in &corpus.utterances {
            let pooled = embedding::pool_features(&extractor.extract(&u.waveform)?, config.model.pooling)?;
            let row = FeatureRow { utterance_id: &u.id, speaker_id: &u.speaker_id, split: u.split, vector: pooled };
            text.push_str(&serde_json::to_string(&row).expect("row serializes"));
            text.push('\n');
        }
        write_file(&out.join("features.jsonl"), text)?;
        println!("pooled features for {} utterances", corpus.utterances.len());
        return Ok(json!({"features": "features.jsonl", "n_utterances": corpus.utterances.len()}));
    };
    let provider = pipeline::provider(load_model(model_path)?, config);
    let mut entries: Vec<StoredEmbedding> = corpus
        .utterances
        .iter()
        .map(|u| Ok(StoredEmbedding { utterance_id: u.id.clone(), vector: provider.embed_utterance(&u.id, &u.waveform)?.vector }))
        .collect::<Result<_>>()?;
    let mut n_queries = 0;
    if let Some(wm) = &a.watermark {
        let plan = load_watermark(wm)?.plan();
        let gain = config.verify.query_gain_db;
        let pool = SpeakerPool::from_corpus(&corpus, Some(Split::Test));
        let mut add = |triggers: Vec<crate::signal::Waveform>| -> Result<()> {
            for (k, t) in triggers.iter().enumerate() {
                let id = verify::standalone_query_id(k, gain);
                entries.push(StoredEmbedding {
                    vector: provider.embed_utterance(&id, &t.apply_gain_db(gain))?.vector,
                    utterance_id: id,
                });
                n_queries += 1;
                for s in &pool.speakers {
                    let carrier = s.probe();
                    let id = verify::trigger_query_id(&carrier.id, k, gain);
                    let w = crate::signal::mix_trigger(&carrier.waveform, t, gain)?;
                    entries.push(StoredEmbedding { vector: provider.embed_utterance(&id, &w)?.vector, utterance_id: id });
                    n_queries += 1;
                }
            }
            Ok(())
        };
        add(plan.render(corpus.sample_rate)?)?;
    }
    FileStoreProvider::write(&entries, out.join("embeddings.jsonl"))?;
    println!("{} embeddings ({} trigger queries)", entries.len(), n_queries);
    Ok(json!({"embeddings": "embeddings.jsonl", "n_embeddings": entries.len(), "n_trigger_queries": n_queries}))
}

fn train(config: &RunConfig, a: &TrainArgs, out: &Path) -> Result<Value> {
    let corpus = load_corpus(&a.corpus)?;
    check_sample_rate(&corpus, config, "dataset")?;
    let model = pipeline::train_model(&corpus, config)?;
    model.save(out.join("model.json"))?;
    println!("trained {} -> {} projection on {} speakers", model.d_in, model.d_out, corpus.speakers().len());
    Ok(json!({"model": "model.json", "d_in": model.d_in, "d_out": model.d_out, "n_speakers": corpus.speakers().len()}))
}

fn watermark_cmd(config: &RunConfig, a: &WatermarkArgs, out: &Path) -> Result<Value> {
    let manifest_path = a.corpus.join(corpus::MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(validation(format!("{} not found", manifest_path.display())));
    }
    let source = corpus::load_manifest(&manifest_path)?;
    let corpus = Corpus::load(&source)?;
    check_sample_rate(&corpus, config, "dataset")?;
    let benign = match &a.model {
        Some(p) => pipeline::provider(load_model(p)?, config),
        None => pipeline::provider(pipeline::train_model(&corpus, config)?, config),
    };
    let run = pipeline::watermark_corpus(&corpus, &benign, config)?;
    let dataset_dir = out.join("dataset");
    watermark::write_watermarked(&source, &run.manifest, &dataset_dir)?;
    let per_trigger = (0..run.manifest.triggers.len())
        .map(|k| run.manifest.modified.iter().filter(|m| m.trigger_index == k).count())
        .collect::<Vec<_>>();
    println!(
        "{:?} watermark: {} of {} training utterances modified",
        run.manifest.method,
        run.manifest.modified.len(),
        corpus.split(Split::Train).count()
    );
    Ok(json!({
        "dataset_dir": "dataset",
        "watermark_manifest": format!("dataset/{}", watermark::WATERMARK_MANIFEST_FILE),
        "method": run.manifest.method,
        "n_modified": run.manifest.modified.len(),
        "modified_per_trigger": per_trigger,
        "inertia": run.assignment.as_ref().map(|c| c.inertia),
    }))
}

fn dev_threshold(provider: &dyn EmbeddingProvider, dev: &Path, config: &RunConfig) -> Result<f64> {
    let dev = load_corpus(dev)?;
    check_sample_rate(&dev, config, "dev corpus")?;
    Ok(metrics::learn_threshold(provider, &SpeakerPool::from_corpus(&dev, None))?)
}

fn enroll_eval(config: &RunConfig, a: &EnrollEvalArgs, out: &Path) -> Result<Value> {
    let corpus = load_corpus(&a.corpus)?;
    check_sample_rate(&corpus, config, "dataset")?;
    let provider = pipeline::provider(load_model(&a.model)?, config);
    let pool = SpeakerPool::from_corpus(&corpus, Some(Split::Test));
    let (genuine, impostor) = metrics::score_trials(&provider, &pool)?;
    let eer = metrics::compute_eer(&genuine, &impostor)?;
    write_file(&out.join("scores.csv"), metrics::scores_csv(&genuine, &impostor))?;
    let threshold = match (config.verify.threshold, &a.dev) {
        (Some(t), _) => Some(t),
        (None, Some(dev)) => Some(dev_threshold(&provider, dev, config)?),
        (None, None) => None,
    };
    let mut wsr = Vec::new();
    if let Some(wm) = &a.watermark {
        let Some(threshold) = threshold else {
            return Err(validation("verify.threshold: WSR needs --threshold or --dev"));
        };
        let triggers = load_watermark(wm)?.plan().render(corpus.sample_rate)?;
        for &n in &config.verify.wsr_enrolled {
            let w = WsrConfig {
                n_enrolled: n,
                threshold,
                n_queries: config.verify.wsr_queries,
                query_gain_db: config.verify.query_gain_db,
                query_style: config.verify.query_style,
                seed: config.seed_for(&format!("wsr/{n}")),
            };
            wsr.push(metrics::compute_wsr(&provider, &pool, &triggers, &w)?);
        }
    }
    println!("EER {:.4} at {:.4}", eer.eer, eer.threshold);
    for w in &wsr {
        println!("WSR 1-to-{}: {:.3}", w.scenario.n_enrolled, w.wsr);
    }
    Ok(json!({"eer": eer, "threshold": threshold, "wsr": wsr, "scores": "scores.csv"}))
}

fn verify_cmd(config: &RunConfig, a: &VerifyArgs, _out: &Path) -> Result<Value> {
    let corpus = load_corpus(&a.corpus)?;
    check_sample_rate(&corpus, config, "dataset")?;
    let provider: Box<dyn EmbeddingProvider> = match (&a.model, &a.embeddings, &a.endpoint) {
        (Some(m), _, _) => Box::new(pipeline::provider(load_model(m)?, config)),
        (_, Some(e), _) => {
            Box::new(FileStoreProvider::load(e).map_err(|err| validation(format!("embeddings {}: {err}", e.display())))?)
        }
        (_, _, Some(url)) => Box::new(RemoteProvider::new(url.clone(), Duration::from_secs_f64(a.endpoint_timeout_s))),
        _ => return Err(validation("verify needs one of --model, --embeddings or --endpoint")),
    };
    let mode = config.verify.mode;
    let threshold = match (config.verify.threshold, &a.dev) {
        (Some(t), _) => Some(t),
        (None, Some(dev)) => Some(dev_threshold(provider.as_ref(), dev, config)?),
        (None, None) if mode == Mode::Decision => {
            return Err(validation("verify.threshold: decision mode needs --threshold or --dev"));
        }
        (None, None) => None,
    };
    let manifest = load_watermark(&a.watermark)?;
    let triggers = if a.independent_triggers {
        let n = manifest.triggers.len();
        let c = RunConfig {
            watermark: crate::config::WatermarkSection {
                trigger_family: manifest.triggers[0].family,
                ..config.watermark.clone()
            },
            ..config.clone()
        };
        pipeline::independent_triggers(&c, n)?
    } else {
        manifest.plan().render(corpus.sample_rate)?
    };
    let pool = SpeakerPool::from_corpus(&corpus, Some(Split::Test));
    let trials = verify::TrialConfig {
        threshold,
        ..config.verify.trials(triggers.len(), config.seed_for("verify"))
    };
    let report = verify::verify(provider.as_ref(), &pool, &triggers, &trials, mode)?;
    let dp = report.delta_p.map_or("-".to_string(), |d| format!("{d:.4}"));
    println!("p-value {:.3e}, dP {dp}, decision {:?}", report.p_value, report.decision);
    Ok(serde_json::to_value(&report).expect("report serializes"))
}

fn bound(config: &RunConfig, out: &Path) -> Result<Value> {
    let input = config.theory.bound_input();
    let result = theory::wsr_bound(&input)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["m", "alpha", "p_beta_tau", "t_quantile", "discriminant", "w_min"])
        .and_then(|_| {
            w.write_record([
                input.m.to_string(),
                input.alpha.to_string(),
                input.p_beta_tau.to_string(),
                result.t_quantile_used.to_string(),
                result.discriminant.to_string(),
                result.w_min.to_string(),
            ])
        })
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(&out.join("bound.csv"), bytes)?;
    println!("w_min = {:.6}", result.w_min);
    Ok(json!({"input": input, "bound": result}))
}

fn mc_validate(config: &RunConfig, out: &Path) -> Result<Value> {
    let t = &config.theory;
    let input = t.bound_input();
    let table = theory::mc_validate_bound(&input, &t.w_grid, t.n_sims, config.seed_for("mc-validate"))?;
    let mono = theory::n_monotonicity_check(t.p_single, &t.n_values, t.m, t.n_sims, config.seed_for("n-monotonicity"))?;
    write_file(&out.join("mc-validate.csv"), table.to_csv().map_err(|e| CliError::Runtime(e.to_string()))?)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &mono.rows {
        w.serialize(r).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    write_file(&out.join("n-monotonicity.csv"), w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?)?;
    println!("w_min = {:.6}", table.bound.w_min);
    for r in &table.rows {
        println!("W = {:.3}: rejection rate {:.4}", r.w, r.empirical_rejection_rate);
    }
    Ok(json!({"validation": table, "n_monotonicity": mono}))
}

fn scenario_suite(config: &RunConfig, a: &SuiteArgs, _out: &Path) -> Result<Value> {
    let corpus = match &a.corpus {
        Some(dir) => load_corpus(dir)?,
        None => pipeline::main_corpus(config)?,
    };
    check_sample_rate(&corpus, config, "dataset")?;
    let dev = match &a.dev {
        Some(dir) => load_corpus(dir)?,
        None => pipeline::dev_corpus(config)?,
    };
    let modes: Vec<Mode> = match a.only_mode {
        Some(m) => vec![m],
        None => vec![Mode::Similarity, Mode::Decision],
    };
    let outcome = pipeline::run_suite(config, &corpus, &dev, &modes)?;
    println!("EER benign {:.4}, watermarked {:.4}", outcome.benign.eer.eer, outcome.watermarked.eer.eer);
    print!("{}", verify::render_table(&outcome.reports));
    Ok(serde_json::to_value(&outcome).expect("outcome serializes"))
}
