//! Monte-Carlo suites for the trajectory estimators. Every trajectory is
//! restarted from a fixed start distribution and drawn from its own
//! ChaCha stream, so results are reproducible and independent of thread
//! scheduling.

use std::time::Instant;

use avgpg_core::algorithms::{epoch_length, Variant};
use avgpg_core::chain::{burn_in_length, induced_chain, ChainOptions};
use avgpg_core::estimators::{grad_estimate, hessian_estimate, value_q_estimates, EstimatorConfig};
use avgpg_core::mdp::{random_ergodic_mdp, sample_index, sample_trajectory};
use avgpg_core::oracle::{exact_gradient, solve_average_reward, AverageRewardSolution};
use avgpg_core::policy::{action_probs, estimate_bounds, policy_table, random_params, unit};
use avgpg_core::{PolicyParams, PolicySpec, PolicyTable, TabularMdp, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{budget, median, CheckReport, Moments};

/// Trajectory `stream` of the family keyed by `seed`, started from `rho`.
pub fn restarted_trajectory(m: &TabularMdp, table: &PolicyTable, rho: &[f64], len: usize, seed: u64, stream: u64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let s0 = sample_index(rho, rng.gen::<f64>());
    sample_trajectory(m, table, s0, len, 0, &mut rng)
}

/// Accumulates `f` over streams `0..count` in parallel.
fn accumulate<F>(dim: usize, count: u64, f: F) -> Moments
where
    F: Fn(u64) -> Vec<f64> + Sync,
{
    (0..count)
        .into_par_iter()
        .fold(|| Moments::new(dim), |mut acc, j| {
            acc.push(&f(j));
            acc
        })
        .reduce(|| Moments::new(dim), Moments::merge)
}

/// A small ergodic instance together with its exact solution and the
/// epoch and burn-in lengths the regret analysis prescribes at `T`.
pub struct StatInstance {
    pub mdp: TabularMdp,
    pub spec: PolicySpec,
    pub theta: PolicyParams,
    pub table: PolicyTable,
    pub solution: AverageRewardSolution,
    pub t_mix: usize,
    pub t_hit: f64,
    pub burn_in: usize,
    pub epoch_len: usize,
}

impl StatInstance {
    pub fn new(states: usize, actions: usize, smoothing: f64, seed: u64, horizon: u64) -> Self {
        let mdp = random_ergodic_mdp(states, actions, smoothing, seed).unwrap();
        let spec = PolicySpec::tabular(states, actions);
        let theta = random_params(spec.dim(), 0.5, 1, seed + 1).pop().unwrap();
        let table = policy_table(&spec, &theta);
        let diag = induced_chain(&mdp, &table, &ChainOptions { horizon, ..Default::default() }).unwrap();
        let solution = solve_average_reward(&mdp, &spec, &theta).unwrap();
        Self {
            burn_in: burn_in_length(diag.t_mix, horizon),
            epoch_len: epoch_length(Variant::Hessian, diag.t_mix, diag.t_hit, horizon, 1.0),
            t_mix: diag.t_mix,
            t_hit: diag.t_hit,
            mdp,
            spec,
            theta,
            table,
            solution,
        }
    }

    fn rho(&self) -> Vec<f64> {
        self.solution.stationary.iter().copied().collect()
    }

    fn describe(&self) -> String {
        format!("t_mix {}, t_hit {:.2}, N {}, H {}", self.t_mix, self.t_hit, self.burn_in, self.epoch_len)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdvantageSettings {
    pub trajectories: u64,
    pub mse_reps: u64,
    pub mse_trajectories: u64,
    pub seed: u64,
}

impl Default for AdvantageSettings {
    fn default() -> Self {
        Self { trajectories: 50_000, mse_reps: 5, mse_trajectories: 400, seed: 31 }
    }
}

fn stat_instance() -> StatInstance {
    StatInstance::new(3, 2, 0.6, 31, 64)
}

fn advantages(inst: &StatInstance, tau: &Trajectory, cfg: &EstimatorConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(inst.spec.n_states() * inst.spec.n_actions());
    for s in 0..inst.spec.n_states() {
        let probs = action_probs(&inst.spec, &inst.theta, s);
        for a in 0..inst.spec.n_actions() {
            out.push(value_q_estimates(tau, s, a, &probs, cfg).unwrap().advantage());
        }
    }
    out
}

/// Bias and variance of the advantage estimate against the exact
/// advantage.
pub fn advantage_suite(settings: &AdvantageSettings) -> Vec<CheckReport> {
    let start = Instant::now();
    let inst = stat_instance();
    let rho = inst.rho();
    let exact: Vec<f64> = (0..inst.spec.n_states())
        .flat_map(|s| (0..inst.spec.n_actions()).map(move |a| (s, a)))
        .map(|(s, a)| inst.solution.adv[(s, a)])
        .collect();
    let cfg = EstimatorConfig::new(inst.burn_in, 64);
    let moments = accumulate(exact.len(), settings.trajectories, |j| {
        let tau = restarted_trajectory(&inst.mdp, &inst.table, &rho, inst.epoch_len, settings.seed, j);
        advantages(&inst, &tau, &cfg)
    });
    let (mean, se) = (moments.mean(), moments.se());
    let mut worst_z = 0.0_f64;
    for i in 0..exact.len() {
        worst_z = worst_z.max((mean[i] - exact[i]).abs() / se[i]);
    }
    let bias = CheckReport::new(
        "advantage estimate unbiased (mean within 4 SE, 6 pairs)",
        worst_z <= 4.0,
        format!("max |mean - A| / SE = {worst_z:.2} over {} trajectories; {}", settings.trajectories, inst.describe()),
    );

    let mse_at = |len: usize, rep: u64| -> Vec<f64> {
        let m = accumulate(exact.len(), settings.mse_trajectories, |j| {
            let stream = (rep + 1) * 1_000_000_000 + j;
            let tau = restarted_trajectory(&inst.mdp, &inst.table, &rho, len, settings.seed + 7, stream);
            advantages(&inst, &tau, &cfg).iter().zip(&exact).map(|(a, e)| (a - e) * (a - e)).collect()
        });
        m.mean()
    };
    let mut shrinks = 0;
    let mut ratios = Vec::new();
    let per_rep: Vec<(Vec<f64>, Vec<f64>)> =
        (0..settings.mse_reps).map(|r| (mse_at(inst.epoch_len, r), mse_at(2 * inst.epoch_len, r))).collect();
    for i in 0..exact.len() {
        let short = median(per_rep.iter().map(|(a, _)| a[i]).collect());
        let long = median(per_rep.iter().map(|(_, b)| b[i]).collect());
        ratios.push(long / short);
        if long < short {
            shrinks += 1;
        }
    }
    let variance = CheckReport::new(
        "advantage MSE shrinks when H doubles (median of reps)",
        shrinks == exact.len(),
        format!("{shrinks}/{} pairs shrink, MSE(2H)/MSE(H) = {}", exact.len(), fmt_list(&ratios)),
    );
    vec![bias.timed(start), variance.timed(start), budget("advantage suite", start, 300.0)]
}

fn fmt_list(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

#[derive(Debug, Clone, Copy)]
pub struct GradientSettings {
    pub trajectories: u64,
    pub mse_reps: u64,
    pub mse_trajectories: u64,
    pub seed: u64,
}

impl Default for GradientSettings {
    fn default() -> Self {
        Self { trajectories: 20_000, mse_reps: 5, mse_trajectories: 400, seed: 47 }
    }
}

/// Bias and second moment of the gradient estimate against the exact
/// gradient.
pub fn gradient_suite(settings: &GradientSettings) -> Vec<CheckReport> {
    let start = Instant::now();
    let inst = stat_instance();
    let rho = inst.rho();
    let exact = exact_gradient(&inst.mdp, &inst.spec, &inst.theta).unwrap();
    let dim = exact.len();
    let cfg = EstimatorConfig::new(inst.burn_in, 64);
    let sample_g = |len: usize, seed: u64, stream: u64| {
        let tau = restarted_trajectory(&inst.mdp, &inst.table, &rho, len, seed, stream);
        grad_estimate(&inst.spec, &inst.theta, &tau, &cfg).unwrap()
    };
    let moments = accumulate(dim, settings.trajectories, |j| sample_g(inst.epoch_len, settings.seed, j).as_slice().to_vec());
    let (mean, se) = (moments.mean(), moments.se());
    let floor = 0.02 * (1.0 + exact.norm());
    let mut worst = 0.0_f64;
    for i in 0..dim {
        let tol = (4.0 * se[i]).max(floor);
        worst = worst.max((mean[i] - exact[i]).abs() / tol);
    }
    let bias = CheckReport::new(
        "gradient estimate mean within max(4 SE, 0.02(1 + |grad J|))",
        worst <= 1.0,
        format!("max deviation / tolerance = {worst:.3} over {} trajectories; {}", settings.trajectories, inst.describe()),
    );

    let mse_at = |len: usize, rep: u64| -> f64 {
        let m = accumulate(1, settings.mse_trajectories, |j| {
            let g = sample_g(len, settings.seed + 3, (rep + 1) * 1_000_000_000 + j);
            vec![(g - &exact).norm_squared()]
        });
        m.mean()[0]
    };
    let short = median((0..settings.mse_reps).map(|r| mse_at(inst.epoch_len, r)).collect());
    let long = median((0..settings.mse_reps).map(|r| mse_at(2 * inst.epoch_len, r)).collect());
    let variance = CheckReport::new(
        "gradient MSE shrinks when H doubles",
        long < short,
        format!("E|g - grad J|^2: {short:.3e} at H, {long:.3e} at 2H"),
    );
    vec![bias.timed(start), variance.timed(start), budget("gradient suite", start, 300.0)]
}

#[derive(Debug, Clone, Copy)]
pub struct HessianSettings {
    pub trajectories: u64,
    pub fd_pairs: u64,
    pub step: f64,
    pub burn_in: usize,
    pub len: usize,
    pub seed: u64,
}

impl Default for HessianSettings {
    fn default() -> Self {
        Self { trajectories: 20_000, fd_pairs: 20_000, step: 0.1, burn_in: 8, len: 64, seed: 5 }
    }
}

/// Symmetry of the mean Hessian estimate and agreement with common-seed
/// finite differences of the mean gradient estimate, on a 2-state,
/// 2-action tabular instance with a fixed start distribution.
pub fn hessian_suite(settings: &HessianSettings) -> Vec<CheckReport> {
    let start = Instant::now();
    let m = random_ergodic_mdp(2, 2, 0.3, 12).unwrap();
    let spec = PolicySpec::tabular(2, 2);
    let theta = random_params(4, 0.5, 1, 13).pop().unwrap();
    let d = spec.dim();
    let rho: Vec<f64> = solve_average_reward(&m, &spec, &theta).unwrap().stationary.iter().copied().collect();
    let cfg = EstimatorConfig::new(settings.burn_in, 64);
    let table = policy_table(&spec, &theta);

    // Entries of B, then of B - B^T above the diagonal, then |B|_F^2.
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (i + 1..d).map(move |j| (i, j))).collect();
    let moments = accumulate(d * d + pairs.len() + 1, settings.trajectories, |j| {
        let tau = restarted_trajectory(&m, &table, &rho, settings.len, settings.seed, j);
        let b = hessian_estimate(&spec, &theta, &tau, &cfg).unwrap();
        let mut row: Vec<f64> = (0..d).flat_map(|i| (0..d).map(move |k| (i, k))).map(|(i, k)| b[(i, k)]).collect();
        row.extend(pairs.iter().map(|&(i, k)| b[(i, k)] - b[(k, i)]));
        row.push(b.norm_squared());
        row
    });
    let (mean, se) = (moments.mean(), moments.se());

    // Tabular scores sum to zero within a state, so some pairs are equal up
    // to rounding and have a vanishing standard error.
    let floor = 1e-12 * (1.0 + mean[..d * d].iter().fold(0.0_f64, |m, x| m.max(x.abs())));
    let mut asym_z = 0.0_f64;
    for p in 0..pairs.len() {
        asym_z = asym_z.max((mean[d * d + p].abs() - floor).max(0.0) / se[d * d + p].max(f64::MIN_POSITIVE));
    }
    let symmetry = CheckReport::new(
        "mean Hessian estimate symmetric within 4 SE",
        asym_z <= 4.0,
        format!("max |mean(B - B^T)_ij| / SE = {asym_z:.2} over {} trajectories", settings.trajectories),
    );

    // Column l of E[B] is the derivative of E[g] along theta_l.
    let h = settings.step;
    let mut fd_z = 0.0_f64;
    for l in 0..d {
        let e = unit(d, l);
        let plus = PolicyParams { theta: &theta.theta + &e * h };
        let minus = PolicyParams { theta: &theta.theta - &e * h };
        let (tp, tm) = (policy_table(&spec, &plus), policy_table(&spec, &minus));
        let fd = accumulate(d, settings.fd_pairs, |j| {
            let stream = 1_000_000_000 * (l as u64 + 1) + j;
            let gp = grad_estimate(&spec, &plus, &restarted_trajectory(&m, &tp, &rho, settings.len, settings.seed + 1, stream), &cfg).unwrap();
            let gm = grad_estimate(&spec, &minus, &restarted_trajectory(&m, &tm, &rho, settings.len, settings.seed + 1, stream), &cfg).unwrap();
            ((gp - gm) / (2.0 * h)).as_slice().to_vec()
        });
        let (fd_mean, fd_se) = (fd.mean(), fd.se());
        for k in 0..d {
            let idx = k * d + l;
            let spread = (se[idx].powi(2) + fd_se[k].powi(2)).sqrt().max(f64::MIN_POSITIVE);
            let z = ((mean[idx] - fd_mean[k]).abs() - floor).max(0.0) / spread;
            fd_z = fd_z.max(z);
        }
    }
    let agreement = CheckReport::new(
        "mean Hessian estimate matches finite differences of mean gradient",
        fd_z <= 4.0,
        format!("max |B - FD| / SE = {fd_z:.2}, step {h}, {} pairs per coordinate", settings.fd_pairs),
    );

    let bounds = estimate_bounds(&spec, std::slice::from_ref(&theta));
    let (a, n, len) = (spec.n_actions() as f64, settings.burn_in as f64, settings.len as f64);
    let (g4, b2) = (bounds.g.powi(4), bounds.b.powi(2));
    let cap = 2.0 * a * n * n * g4 * len * len + 6.0 * b2 * n * n + 6.0 * a * n * n * (b2 + g4);
    let second = mean[d * d + pairs.len()];
    let magnitude = CheckReport::new(
        "second moment of Hessian estimate below 10x analytic cap",
        second.is_finite() && second <= 10.0 * cap,
        format!("E|B|_F^2 = {second:.3e}, cap {cap:.3e}"),
    );
    vec![symmetry.timed(start), agreement.timed(start), magnitude.timed(start), budget("Hessian suite", start, 600.0)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn restarted_streams_are_independent_and_reproducible() {
        let inst = StatInstance::new(3, 2, 0.6, 31, 64);
        let rho = inst.rho();
        let a = restarted_trajectory(&inst.mdp, &inst.table, &rho, 50, 1, 0);
        let b = restarted_trajectory(&inst.mdp, &inst.table, &rho, 50, 1, 0);
        let c = restarted_trajectory(&inst.mdp, &inst.table, &rho, 50, 1, 1);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn moments_match_direct_formulas() {
        let mut m = Moments::new(1);
        for x in [1.0, 2.0, 3.0, 4.0] {
            m.push(&[x]);
        }
        assert_eq!(m.mean(), vec![2.5]);
        let var: f64 = 5.0 / 3.0;
        assert!((m.se()[0] - (var / 4.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn small_gradient_run_is_close_to_exact() {
        let inst = StatInstance::new(3, 2, 0.6, 31, 64);
        let exact = exact_gradient(&inst.mdp, &inst.spec, &inst.theta).unwrap();
        let cfg = EstimatorConfig::new(inst.burn_in, 64);
        let rho = inst.rho();
        let m = accumulate(exact.len(), 200, |j| {
            let tau = restarted_trajectory(&inst.mdp, &inst.table, &rho, inst.epoch_len, 99, j);
            grad_estimate(&inst.spec, &inst.theta, &tau, &cfg).unwrap().as_slice().to_vec()
        });
        let mean = DVector::from_vec(m.mean());
        assert!((mean - exact).amax() < 0.1);
    }
}
