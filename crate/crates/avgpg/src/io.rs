//! On-disk formats: MDP and config JSON, per-seed CSV traces, and the
//! summary JSON.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use avgpg_core::algorithms::RunResult;
use avgpg_core::TabularMdp;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, MdpFile, ResolvedParams};
use crate::error::HarnessError;

pub const CSV_HEADER: &str = "t,epoch,reward,instant_regret,cum_regret";

/// Environment variable that replaces `output_dir` from the config.
pub const OUTPUT_DIR_ENV: &str = "AVGPG_OUTPUT_DIR";

pub fn read_text(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::from_json(&read_text(path)?)?;
    if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
        if !dir.is_empty() {
            cfg.output_dir = dir.into();
        }
    }
    Ok(cfg)
}

pub fn load_mdp(path: &Path) -> Result<TabularMdp, HarnessError> {
    let file: MdpFile = serde_json::from_str(&read_text(path)?).map_err(HarnessError::from_serde)?;
    file.to_mdp()
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// One row per environment step.
pub fn write_trace_csv<W: Write>(out: W, run: &RunResult, epoch_len: usize) -> std::io::Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "{CSV_HEADER}")?;
    for (t, (r, cum)) in run.reward_trace.iter().zip(&run.regret_trace).enumerate() {
        writeln!(
            w,
            "{t},{},{},{},{}",
            t / epoch_len + 1,
            fmt_f64(*r),
            fmt_f64(run.j_star - r),
            fmt_f64(*cum)
        )?;
    }
    w.flush()
}

pub fn trace_file_name(seed: u64) -> String {
    format!("trace_seed{seed}.csv")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub final_cum_regret: f64,
    /// Mean reward over the last tenth of the run.
    pub final_window_avg_reward: f64,
    pub j_star: f64,
    /// `J* - J(theta_{K+1})`.
    pub gain_gap: f64,
    pub runtime_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub algorithm: String,
    #[serde(rename = "T")]
    pub horizon: u64,
    pub resolved: ResolvedParams,
    pub seeds: Vec<SeedSummary>,
}

impl SummaryRecord {
    pub fn to_json(&self) -> Result<String, HarnessError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

/// `(t, epoch, reward, instant_regret, cum_regret)`.
pub type TraceRow = (u64, u64, f64, f64, f64);

/// Parses a trace written by [`write_trace_csv`].
pub fn read_trace_csv(text: &str) -> Result<Vec<TraceRow>, HarnessError> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(HarnessError::invalid("csv", "unexpected header"));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || HarnessError::invalid("csv", format!("malformed row `{line}`"));
            if f.len() != 5 {
                return Err(bad());
            }
            Ok((
                f[0].parse().map_err(|_| bad())?,
                f[1].parse().map_err(|_| bad())?,
                f[2].parse().map_err(|_| bad())?,
                f[3].parse().map_err(|_| bad())?,
                f[4].parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}
