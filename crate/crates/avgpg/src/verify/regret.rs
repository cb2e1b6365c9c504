//! End-to-end regret comparison of the three optimizers on one pinned
//! instance.

use std::time::Instant;

use avgpg_core::algorithms::{
    epoch_length, run_hessian_pg, run_pg_igt, run_vanilla_pg, RunOptions, RunResult, ScheduleSpec, Variant,
};
use avgpg_core::chain::{induced_chain, ChainOptions};
use avgpg_core::estimators::EstimatorConfig;
use avgpg_core::mdp::random_ergodic_mdp;
use avgpg_core::oracle::optimal_gain;
use avgpg_core::policy::policy_table;
use avgpg_core::{PolicyParams, PolicySpec, TabularMdp};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{budget, median, CheckReport};

#[derive(Debug, Clone, Copy)]
pub struct RegretSettings {
    pub horizon: u64,
    pub seeds: u64,
    /// Epoch length the Hessian variant should land on; `c_H` is solved
    /// from it and shared by all three optimizers.
    pub target_epoch: usize,
    pub burn_in: usize,
    pub g: f64,
    pub mu: f64,
    pub mdp_seed: u64,
    pub smoothing: f64,
}

impl Default for RegretSettings {
    fn default() -> Self {
        Self { horizon: 200_000, seeds: 10, target_epoch: 200, burn_in: 16, g: 1.0, mu: 2.0, mdp_seed: 2024, smoothing: 0.3 }
    }
}

/// Per-seed outcome of the three runs.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub igt_regret: f64,
    pub hessian_regret: f64,
    pub hessian_regret_double: f64,
    pub vanilla_regret: f64,
    pub first_decile_gap: f64,
    pub last_decile_gap: f64,
}

pub struct RegretSetup {
    pub mdp: TabularMdp,
    pub spec: PolicySpec,
    pub c_h: f64,
    pub hessian_epoch: usize,
    pub igt_epoch: usize,
    pub j_star: f64,
}

impl RegretSetup {
    pub fn new(settings: &RegretSettings) -> Self {
        let mdp = random_ergodic_mdp(4, 3, settings.smoothing, settings.mdp_seed).unwrap();
        let spec = PolicySpec::tabular(4, 3);
        let theta0 = PolicyParams::zeros(spec.dim());
        let diag =
            induced_chain(&mdp, &policy_table(&spec, &theta0), &ChainOptions { horizon: settings.horizon, ..Default::default() })
                .unwrap();
        let log_t = (settings.horizon as f64).log2().ceil();
        let c_h = settings.target_epoch as f64 / (63.0 * diag.t_mix as f64 * diag.t_hit * log_t * log_t);
        let hessian_epoch = epoch_length(Variant::Hessian, diag.t_mix, diag.t_hit, settings.horizon, c_h);
        let igt_epoch = epoch_length(Variant::Igt, diag.t_mix, diag.t_hit, settings.horizon, c_h);
        let j_star = optimal_gain(&mdp).unwrap().j_star;
        Self { mdp, spec, c_h, hessian_epoch, igt_epoch, j_star }
    }
}

fn regret_at(run: &RunResult, t: usize) -> f64 {
    let trace = &run.regret_trace;
    trace[t.min(trace.len()) - 1]
}

fn gap(run: &RunResult, j_star: f64, from: usize, to: usize) -> f64 {
    let window = &run.reward_trace[from..to];
    j_star - window.iter().sum::<f64>() / window.len() as f64
}

pub fn run_seed(setup: &RegretSetup, settings: &RegretSettings, seed: u64) -> SeedOutcome {
    let t = settings.horizon;
    let cfg = EstimatorConfig::new(settings.burn_in, t);
    let theta0 = PolicyParams::zeros(setup.spec.dim());
    let opts = RunOptions { oracle_logging: false, j_star: Some(setup.j_star) };
    let sched = |variant, len, horizon| ScheduleSpec::new(settings.g, settings.mu, variant, len, horizon).unwrap();
    // Same seeding as the CLI runner, so every run here can be replayed
    // with `avgpg run`.
    let rng = || ChaCha8Rng::seed_from_u64(seed);

    let igt = run_pg_igt(
        &setup.mdp,
        &setup.spec,
        &sched(Variant::Igt, setup.igt_epoch, t),
        &cfg,
        &theta0,
        &theta0,
        opts,
        &mut rng(),
    )
    .unwrap();
    // One run to 2T; its first T steps are the horizon-T run.
    let hessian = run_hessian_pg(
        &setup.mdp,
        &setup.spec,
        &sched(Variant::Hessian, setup.hessian_epoch, 2 * t),
        &cfg,
        &theta0,
        &theta0,
        opts,
        &mut rng(),
    )
    .unwrap();
    let vanilla = run_vanilla_pg(
        &setup.mdp,
        &setup.spec,
        &sched(Variant::Hessian, setup.hessian_epoch, t),
        &cfg,
        &theta0,
        opts,
        &mut rng(),
    )
    .unwrap();

    let t = t as usize;
    let decile = t / 10;
    SeedOutcome {
        seed,
        igt_regret: regret_at(&igt, t),
        hessian_regret: regret_at(&hessian, t),
        hessian_regret_double: regret_at(&hessian, 2 * t),
        vanilla_regret: regret_at(&vanilla, t),
        first_decile_gap: gap(&hessian, setup.j_star, 0, decile),
        last_decile_gap: gap(&hessian, setup.j_star, t - decile, t),
    }
}

pub fn regret_suite(settings: &RegretSettings) -> Vec<CheckReport> {
    let start = Instant::now();
    let setup = RegretSetup::new(settings);
    let outcomes: Vec<SeedOutcome> = (0..settings.seeds).into_par_iter().map(|s| run_seed(&setup, settings, s)).collect();
    let t = settings.horizon as f64;

    let improving = outcomes.iter().filter(|o| o.last_decile_gap < o.first_decile_gap).count();
    let needed = (settings.seeds as f64 * 0.8).ceil() as usize;
    let med = |f: fn(&SeedOutcome) -> f64| median(outcomes.iter().map(f).collect());
    let (igt, hess, van) = (med(|o| o.igt_regret), med(|o| o.hessian_regret), med(|o| o.vanilla_regret));
    let first = med(|o| o.first_decile_gap);
    let last = med(|o| o.last_decile_gap);
    let rate_t = hess / t;
    let rate_2t = med(|o| o.hessian_regret_double) / (2.0 * t);
    let context = format!(
        "c_H {:.3e}, H {} (IGT {}), N {}, T {}",
        setup.c_h, setup.hessian_epoch, setup.igt_epoch, settings.burn_in, settings.horizon
    );

    vec![
        CheckReport::new(
            "Hessian-aided gain gap shrinks from first to last decile",
            improving >= needed,
            format!("{improving}/{} seeds improve (need {needed}); median gap {first:.4} -> {last:.4}; {context}", settings.seeds),
        )
        .timed(start),
        CheckReport::new(
            "median regret ordering Hessian <= IGT <= vanilla",
            hess <= igt && igt <= van,
            format!("median Reg_T: Hessian {hess:.1}, IGT {igt:.1}, vanilla {van:.1}"),
        )
        .timed(start),
        CheckReport::new(
            "Hessian-aided average regret falls from T to 2T",
            rate_2t < rate_t,
            format!("median Reg/T: {rate_t:.5} at T, {rate_2t:.5} at 2T"),
        )
        .timed(start),
        budget("regret suite", start, 1200.0),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_setup_runs_and_is_deterministic() {
        let settings = RegretSettings { horizon: 4_000, seeds: 1, target_epoch: 40, burn_in: 4, ..Default::default() };
        let setup = RegretSetup::new(&settings);
        assert_eq!(setup.hessian_epoch % 2, 0);
        let a = run_seed(&setup, &settings, 3);
        let b = run_seed(&setup, &settings, 3);
        assert_eq!(a.hessian_regret, b.hessian_regret);
        assert!(a.hessian_regret_double.is_finite());
    }
}
