use std::path::PathBuf;
use std::process::ExitCode;

use avgpg::error::HarnessError;
use avgpg::io::{load_config, load_mdp, read_text};
use avgpg::runner::{run_experiment, run_sweep};
use avgpg::solve::solve;
use avgpg::verify::{run_checks, Level};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "avgpg", about = "Average-reward policy gradient experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckLevel {
    Fast,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config over all of its seeds.
    Run {
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run the verification suites; exits nonzero if any check fails.
    Check {
        #[arg(long, value_enum, default_value_t = CheckLevel::Fast)]
        level: CheckLevel,
    },
    /// Solve an MDP file exactly.
    Solve { mdp: PathBuf },
    /// Run a config over the Cartesian product of a parameter grid.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn error_line(err: &HarnessError) -> String {
    let kind = match err {
        HarnessError::ConfigInvalid { .. } => "ConfigInvalid",
        HarnessError::Core(_) => "Core",
        HarnessError::Io { .. } => "Io",
        HarnessError::Json(_) => "Json",
    };
    serde_json::json!({ "error": kind, "field": err.field(), "message": err.to_string() }).to_string()
}

fn execute(cli: Cli) -> Result<bool, HarnessError> {
    match cli.command {
        Command::Run { config, jobs } => {
            let cfg = load_config(&config)?;
            let summary = run_experiment(&cfg, jobs)?;
            println!("{}", summary.to_json()?);
            Ok(true)
        }
        Command::Check { level } => {
            let level = match level {
                CheckLevel::Fast => Level::Fast,
                CheckLevel::Full => Level::Full,
            };
            let reports = run_checks(level);
            for r in &reports {
                println!("{r}");
            }
            Ok(reports.iter().all(|r| r.passed))
        }
        Command::Solve { mdp } => {
            let report = solve(&load_mdp(&mdp)?)?;
            print!("{}", report.human());
            println!("{}", serde_json::to_string(&report)?);
            Ok(true)
        }
        Command::Sweep { config, grid, jobs } => {
            let base: Value = serde_json::from_str(&read_text(&config)?).map_err(HarnessError::from_serde)?;
            let grid: Value = serde_json::from_str(&read_text(&grid)?).map_err(HarnessError::from_serde)?;
            let out = std::env::var_os(avgpg::io::OUTPUT_DIR_ENV)
                .map(PathBuf::from)
                .or_else(|| base.get("output_dir").and_then(Value::as_str).map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("out"));
            for point in run_sweep(&base, &grid, &out, jobs)? {
                let regrets: Vec<f64> = point.summary.seeds.iter().map(|s| s.final_cum_regret).collect();
                println!("{} {:?} final regret {:?}", point.output_dir.display(), point.assignment, regrets);
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("{}", error_line(&err));
            ExitCode::from(2)
        }
    }
}
