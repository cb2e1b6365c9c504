//! Seeded execution of configured experiments.

use std::path::{Path, PathBuf};
use std::time::Instant;

use avgpg_core::algorithms::{run_hessian_pg, run_pg_igt, run_vanilla_pg, RunOptions, RunResult};
use avgpg_core::oracle::{optimal_gain, solve_average_reward};
use avgpg_core::PolicyParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::Value;

use crate::config::{Algorithm, ExperimentConfig, ResolvedExperiment};
use crate::error::HarnessError;
use crate::io::{trace_file_name, write_file, write_trace_csv, SeedSummary, SummaryRecord};

pub const SUMMARY_FILE: &str = "summary.json";

pub fn run_algorithm(
    exp: &ResolvedExperiment,
    algorithm: Algorithm,
    opts: RunOptions,
    seed: u64,
) -> Result<RunResult, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, spec, sched, cfg) = (&exp.mdp, &exp.spec, &exp.schedule, &exp.estimator);
    let run = match algorithm {
        Algorithm::Igt => run_pg_igt(m, spec, sched, cfg, &exp.theta0, &exp.theta1, opts, &mut rng)?,
        Algorithm::Hessian => run_hessian_pg(m, spec, sched, cfg, &exp.theta0, &exp.theta1, opts, &mut rng)?,
        Algorithm::Vanilla => run_vanilla_pg(m, spec, sched, cfg, &exp.theta0, opts, &mut rng)?,
    };
    Ok(run)
}

pub fn summarize_seed(exp: &ResolvedExperiment, seed: u64, run: &RunResult, runtime_secs: f64) -> Result<SeedSummary, HarnessError> {
    let n = run.reward_trace.len();
    let window = (n / 10).max(1).min(n);
    let tail = &run.reward_trace[n - window..];
    let final_gain = solve_average_reward(&exp.mdp, &exp.spec, &PolicyParams { theta: run.final_theta.clone() })?.gain;
    Ok(SeedSummary {
        seed,
        final_cum_regret: run.final_regret(),
        final_window_avg_reward: tail.iter().sum::<f64>() / window as f64,
        j_star: run.j_star,
        gain_gap: run.j_star - final_gain,
        runtime_secs,
    })
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::invalid("jobs", e.to_string()))
}

/// Runs every seed, writes one CSV per seed plus `summary.json` into the
/// output directory, and returns the summary.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<SummaryRecord, HarnessError> {
    let exp = cfg.resolve()?;
    let j_star = optimal_gain(&exp.mdp)?.j_star;
    let opts = RunOptions { oracle_logging: cfg.oracle_logging, j_star: Some(j_star) };
    let out_dir = cfg.output_dir.clone();
    let epoch_len = exp.params.epoch_len;
    let seeds: Vec<SeedSummary> = pool(jobs)?.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let start = Instant::now();
                let run = run_algorithm(&exp, cfg.algorithm, opts, seed)?;
                let elapsed = start.elapsed().as_secs_f64();
                let mut csv = Vec::new();
                write_trace_csv(&mut csv, &run, epoch_len).map_err(|e| HarnessError::io(&out_dir, e))?;
                write_file(&out_dir.join(trace_file_name(seed)), &csv)?;
                summarize_seed(&exp, seed, &run, elapsed)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let summary = SummaryRecord {
        algorithm: cfg.algorithm.name().to_string(),
        horizon: cfg.horizon,
        resolved: exp.params,
        seeds,
    };
    write_file(&out_dir.join(SUMMARY_FILE), summary.to_json()?.as_bytes())?;
    Ok(summary)
}

/// Cartesian product of a grid `{"field": [v1, v2, ...], ...}`; keys are
/// config field names, dotted for nested fields (`mdp.seed`).
pub fn expand_grid(grid: &Value) -> Result<Vec<Vec<(String, Value)>>, HarnessError> {
    let obj = grid.as_object().ok_or_else(|| HarnessError::invalid("grid", "must be a JSON object"))?;
    let mut points: Vec<Vec<(String, Value)>> = vec![Vec::new()];
    for (key, values) in obj {
        let values = values
            .as_array()
            .filter(|v| !v.is_empty())
            .ok_or_else(|| HarnessError::invalid(format!("grid.{key}"), "must be a non-empty array"))?;
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((key.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<(), HarnessError> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        cur = cur
            .get_mut(*part)
            .ok_or_else(|| HarnessError::invalid(format!("grid.{key}"), "path does not exist in the config"))?;
    }
    let obj = cur
        .as_object_mut()
        .ok_or_else(|| HarnessError::invalid(format!("grid.{key}"), "parent is not an object"))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

pub struct SweepPoint {
    pub assignment: Vec<(String, Value)>,
    pub output_dir: PathBuf,
    pub summary: SummaryRecord,
}

/// Runs every grid point into `<output_dir>/point_<i>/`; points run
/// concurrently, seeds within a point sequentially.
pub fn run_sweep(base: &Value, grid: &Value, output_dir: &Path, jobs: usize) -> Result<Vec<SweepPoint>, HarnessError> {
    let points = expand_grid(grid)?;
    let configs = points
        .iter()
        .enumerate()
        .map(|(i, assignment)| {
            let mut doc = base.clone();
            for (k, v) in assignment {
                set_path(&mut doc, k, v.clone())?;
            }
            let mut cfg: ExperimentConfig = serde_json::from_value(doc).map_err(HarnessError::from_serde)?;
            cfg.output_dir = output_dir.join(format!("point_{i}"));
            Ok(cfg)
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let summaries = pool(jobs)?.install(|| {
        configs.par_iter().map(|cfg| run_experiment(cfg, 1)).collect::<Result<Vec<_>, _>>()
    })?;
    let index: Vec<Value> = points
        .iter()
        .zip(&configs)
        .map(|(a, c)| {
            serde_json::json!({
                "assignment": a.iter().cloned().collect::<serde_json::Map<String, Value>>(),
                "output_dir": c.output_dir,
            })
        })
        .collect();
    write_file(&output_dir.join("sweep.json"), serde_json::to_string_pretty(&index)?.as_bytes())?;
    Ok(points
        .into_iter()
        .zip(configs)
        .zip(summaries)
        .map(|((assignment, cfg), summary)| SweepPoint { assignment, output_dir: cfg.output_dir, summary })
        .collect())
}
