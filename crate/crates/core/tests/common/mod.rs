#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use cbw::config::RunConfig;

/// A corpus small enough for a few seconds of end-to-end work.
pub fn small_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.corpus.n_speakers = 24;
    c.corpus.utterances_per_speaker = 20;
    c.corpus.duration_ms = 300.0;
    c.corpus.dev_speakers = 8;
    c.corpus.dev_utterances_per_speaker = 3;
    c.watermark.m_clusters = 4;
    c.watermark.trigger_duration_ms = 300.0;
    c.verify.m_trials = 10;
    c.verify.n_repeats = 2;
    c.verify.wsr_queries = 20;
    c.verify.wsr_enrolled = vec![1, 3];
    c.theory.n_sims = 1000;
    c
}

pub fn cbw(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cbw"));
    cmd.args(args).env_remove("CBW_LOG_LEVEL");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

pub fn write_config(dir: &Path, config: &RunConfig) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, config.to_json()).unwrap();
    path.to_str().unwrap().to_string()
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}
