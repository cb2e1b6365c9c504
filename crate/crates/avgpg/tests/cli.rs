use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use avgpg::config::MdpFile;
use avgpg::io::{read_trace_csv, SummaryRecord, CSV_HEADER, OUTPUT_DIR_ENV};
use avgpg::solve::brute_force_gain;
use avgpg_core::mdp::random_ergodic_mdp;
use serde_json::{json, Value};

fn avgpg(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_avgpg"));
    cmd.args(args).env_remove(OUTPUT_DIR_ENV);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn small_config(out: &Path, algorithm: &str) -> Value {
    json!({
        "mdp": {"type": "random", "states": 3, "actions": 2, "smoothing": 0.5, "seed": 4},
        "policy": {"kind": "tabular"},
        "algorithm": algorithm,
        "T": 2000,
        "c_H": 0.002,
        "N_override": 4,
        "seeds": [1, 2, 3],
        "output_dir": out,
    })
}

fn write_json(path: &Path, value: &Value) {
    fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn run_writes_one_trace_per_seed_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for alg in ["igt", "hessian", "vanilla"] {
        let cfg = dir.path().join(format!("{alg}.json"));
        write_json(&cfg, &small_config(&out.join(alg), alg));
        let res = avgpg(&["run", cfg.to_str().unwrap(), "--jobs", "2"], &[]);
        assert!(res.status.success(), "{alg}: {}", String::from_utf8_lossy(&res.stderr));
        for seed in 1..=3 {
            assert!(out.join(alg).join(format!("trace_seed{seed}.csv")).is_file());
        }
        let summary = SummaryRecord::from_json(&fs::read_to_string(out.join(alg).join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary.seeds.len(), 3);
        assert_eq!(summary.algorithm, alg);
    }
}

#[test]
fn trace_csv_has_header_and_consistent_prefix_sums() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    write_json(&cfg, &small_config(&dir.path().join("out"), "hessian"));
    assert!(avgpg(&["run", cfg.to_str().unwrap()], &[]).status.success());
    let text = fs::read_to_string(dir.path().join("out/trace_seed2.csv")).unwrap();
    assert_eq!(text.lines().next(), Some(CSV_HEADER));
    let rows = read_trace_csv(&text).unwrap();
    assert!(!rows.is_empty());
    let mut running = 0.0;
    for (i, (t, epoch, reward, instant, cum)) in rows.iter().enumerate() {
        assert_eq!(*t, i as u64);
        assert!(*epoch >= 1);
        assert!((0.0..=1.0).contains(reward));
        running += instant;
        assert!((running - cum).abs() <= 1e-9);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut traces = Vec::new();
    for name in ["a", "b"] {
        let cfg = dir.path().join(format!("{name}.json"));
        write_json(&cfg, &small_config(&dir.path().join(name), "igt"));
        assert!(avgpg(&["run", cfg.to_str().unwrap()], &[]).status.success());
        traces.push(fs::read(dir.path().join(name).join("trace_seed3.csv")).unwrap());
    }
    assert_eq!(traces[0], traces[1]);
}

#[test]
fn summary_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    write_json(&cfg, &small_config(&dir.path().join("out"), "vanilla"));
    let res = avgpg(&["run", cfg.to_str().unwrap()], &[]);
    assert!(res.status.success());
    let text = fs::read_to_string(dir.path().join("out/summary.json")).unwrap();
    let parsed = SummaryRecord::from_json(&text).unwrap();
    assert_eq!(SummaryRecord::from_json(&parsed.to_json().unwrap()).unwrap(), parsed);
    assert_eq!(parsed.horizon, 2000);
    assert_eq!(parsed.resolved.burn_in, 4);
}

#[test]
fn single_state_instance_has_zero_regret() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    write_json(
        &cfg,
        &json!({
            "mdp": {"type": "inline", "reward": [[0.7, 0.7]], "kernel": [[[1.0], [1.0]]]},
            "policy": {"kind": "tabular"},
            "algorithm": "hessian",
            "T": 400,
            "N_override": 2,
            "c_H": 0.01,
            "G_override": 1.0,
            "mu_override": 1.0,
            "seeds": [0],
            "output_dir": dir.path().join("out"),
        }),
    );
    let res = avgpg(&["run", cfg.to_str().unwrap()], &[]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let summary = SummaryRecord::from_json(&fs::read_to_string(dir.path().join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(summary.seeds[0].final_cum_regret, 0.0);
    let rows = read_trace_csv(&fs::read_to_string(dir.path().join("out/trace_seed0.csv")).unwrap()).unwrap();
    assert!(rows.iter().all(|r| r.4 == 0.0));
}

#[test]
fn missing_kernel_row_is_reported_against_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    write_json(
        &cfg,
        &json!({
            "mdp": {"type": "inline", "reward": [[0.1, 0.2], [0.3, 0.4]], "kernel": [[[0.5, 0.5], [1.0, 0.0]], [[0.2, 0.8]]]},
            "policy": {"kind": "tabular"},
            "algorithm": "igt",
            "T": 1000,
            "seeds": [0],
            "output_dir": dir.path().join("out"),
        }),
    );
    let res = avgpg(&["run", cfg.to_str().unwrap()], &[]);
    assert!(!res.status.success());
    let err: Value = serde_json::from_str(String::from_utf8_lossy(&res.stderr).trim()).unwrap();
    assert_eq!(err["error"], "ConfigInvalid");
    assert_eq!(err["field"], "kernel");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_config_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    let mut value = small_config(&dir.path().join("out"), "igt");
    value["horizon"] = json!(10);
    write_json(&cfg, &value);
    let res = avgpg(&["run", cfg.to_str().unwrap()], &[]);
    let err: Value = serde_json::from_str(String::from_utf8_lossy(&res.stderr).trim()).unwrap();
    assert_eq!(err["field"], "horizon");
}

#[test]
fn output_dir_can_be_overridden_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    write_json(&cfg, &small_config(&dir.path().join("configured"), "igt"));
    let redirected = dir.path().join("redirected");
    assert!(avgpg(&["run", cfg.to_str().unwrap()], &[(OUTPUT_DIR_ENV, &redirected)]).status.success());
    assert!(redirected.join("summary.json").is_file());
    assert!(!dir.path().join("configured").exists());
}

fn solve_json(dir: &Path, mdp: &Value) -> Value {
    let path = dir.join("mdp.json");
    write_json(&path, mdp);
    let res = avgpg(&["solve", path.to_str().unwrap()], &[]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    serde_json::from_str(stdout(&res).lines().last().unwrap()).unwrap()
}

#[test]
fn solve_single_state() {
    let dir = tempfile::tempdir().unwrap();
    let report = solve_json(dir.path(), &json!({"reward": [[0.7]], "kernel": [[[1.0]]]}));
    assert!((report["j_star"].as_f64().unwrap() - 0.7).abs() <= 1e-12);
}

#[test]
fn solve_dominant_action() {
    let dir = tempfile::tempdir().unwrap();
    let report = solve_json(
        dir.path(),
        &json!({"reward": [[0.0, 1.0], [0.2, 1.0]], "kernel": [[[0.5, 0.5], [0.3, 0.7]], [[0.9, 0.1], [0.6, 0.4]]]}),
    );
    assert!((report["j_star"].as_f64().unwrap() - 1.0).abs() <= 1e-12);
    assert_eq!(report["optimal_actions"], json!([1, 1]));
}

#[test]
fn solve_matches_enumeration_on_random_instance() {
    let dir = tempfile::tempdir().unwrap();
    let m = random_ergodic_mdp(4, 3, 0.2, 77).unwrap();
    let report = solve_json(dir.path(), &serde_json::to_value(MdpFile::from_mdp(&m)).unwrap());
    let enumerated = brute_force_gain(&m).unwrap();
    assert!((report["j_star"].as_f64().unwrap() - enumerated).abs() <= 1e-9);
    assert!((report["j_star_enumerated"].as_f64().unwrap() - enumerated).abs() <= 1e-15);
}

#[test]
fn sweep_runs_every_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    let mut base = small_config(&dir.path().join("sweep"), "igt");
    base["seeds"] = json!([5]);
    write_json(&cfg, &base);
    let grid = dir.path().join("grid.json");
    write_json(&grid, &json!({"algorithm": ["igt", "vanilla"], "mdp.seed": [4, 6]}));
    let res = avgpg(&["sweep", cfg.to_str().unwrap(), "--grid", grid.to_str().unwrap(), "--jobs", "2"], &[]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for i in 0..4 {
        assert!(dir.path().join(format!("sweep/point_{i}/summary.json")).is_file());
    }
    assert!(dir.path().join("sweep/sweep.json").is_file());
}

#[test]
fn check_fast_passes() {
    let res = avgpg(&["check", "--level", "fast"], &[]);
    assert!(res.status.success(), "{}", stdout(&res));
    assert!(stdout(&res).lines().all(|l| l.starts_with("PASS")));
}
