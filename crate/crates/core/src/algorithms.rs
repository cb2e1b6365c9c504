//! Optimizers: policy gradient with implicit gradient transport, the
//! Hessian-aided variant, and a plain stochastic policy-gradient baseline.
//!
//! All three run on one uninterrupted environment stream. Epoch `k` uses
//! step size `gamma_k = 6G / (mu (k + 2))`; the momentum weight is
//! `eta_k = (2 / (k + 2))^0.8` for transport and `2 / (k + 2)` for the
//! Hessian variant.

use alloc::vec::Vec;

use nalgebra::DVector;
use rand::Rng;

use crate::chain::ChainDiagnostics;
use crate::error::{Error, Result};
use crate::estimators::{grad_estimate, hessian_vector_product, visit_stats, EstimatorConfig, VisitStats};
use crate::math;
use crate::mdp::{Simulator, TabularMdp, Trajectory};
use crate::oracle::{optimal_gain, solve_average_reward};
use crate::policy::{policy_table, PolicyParams, PolicySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Igt,
    Hessian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSpec {
    pub g: f64,
    pub mu: f64,
    pub variant: Variant,
    /// `H`.
    pub epoch_len: usize,
    /// `K`.
    pub epochs: usize,
    /// `T`.
    pub horizon: u64,
}

impl ScheduleSpec {
    /// `K = floor(T / H)`.
    pub fn new(g: f64, mu: f64, variant: Variant, epoch_len: usize, horizon: u64) -> Result<Self> {
        if epoch_len == 0 {
            return Err(Error::InvalidSchedule("epoch length must be positive".into()));
        }
        let epochs = (horizon / epoch_len as u64) as usize;
        let spec = Self { g, mu, variant, epoch_len, epochs, horizon };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g > 0.0 && self.g.is_finite()) {
            return Err(Error::InvalidSchedule(alloc::format!("G must be positive, got {}", self.g)));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidSchedule(alloc::format!("mu must be positive, got {}", self.mu)));
        }
        if self.epoch_len == 0 || self.epochs == 0 {
            return Err(Error::InvalidSchedule("need at least one epoch of positive length".into()));
        }
        if (self.epoch_len as u64) * (self.epochs as u64) > self.horizon {
            return Err(Error::InvalidSchedule(alloc::format!(
                "H * K = {} exceeds T = {}",
                self.epoch_len * self.epochs,
                self.horizon
            )));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.epoch_len * self.epochs
    }
}

/// `(gamma_k, eta_k)` for epoch `k >= 1`.
pub fn schedule(spec: &ScheduleSpec, k: usize) -> (f64, f64) {
    debug_assert!(k >= 1);
    let kk = (k + 2) as f64;
    let gamma = 6.0 * spec.g / (spec.mu * kk);
    let eta = match spec.variant {
        Variant::Igt => math::powf(2.0 / kk, 0.8),
        Variant::Hessian => 2.0 / kk,
    };
    (gamma, eta)
}

/// `H = ceil(c_H 63 t_mix t_hit ceil(log2 T)^2 T^p)` with `p = 1/6` for
/// transport and `p = 0` otherwise; rounded up to even for the Hessian
/// variant, which splits each epoch in two.
pub fn epoch_length(variant: Variant, t_mix: usize, t_hit: f64, horizon: u64, c_h: f64) -> usize {
    let log_t = math::ceil(math::log2(horizon.max(2) as f64));
    let growth = match variant {
        Variant::Igt => math::powf(horizon as f64, 1.0 / 6.0),
        Variant::Hessian => 1.0,
    };
    let h = math::ceil(c_h * 63.0 * t_mix as f64 * t_hit * log_t * log_t * growth).max(1.0) as usize;
    match variant {
        Variant::Igt => h,
        Variant::Hessian => h + (h % 2),
    }
}

/// Epoch length for a chain with measured diagnostics.
pub fn epoch_length_for(variant: Variant, diag: &ChainDiagnostics, horizon: u64, c_h: f64) -> usize {
    epoch_length(variant, diag.t_mix, diag.t_hit, horizon, c_h)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunOptions {
    /// Record the exact gain `J(theta_k)` every epoch.
    pub oracle_logging: bool,
    /// Optimal gain; solved from the MDP when absent.
    pub j_star: Option<f64>,
}

/// Everything one epoch did.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub k: usize,
    /// `theta_k`.
    pub theta: DVector<f64>,
    /// Where the gradient estimate was taken: the look-ahead point for
    /// transport, `theta_k` otherwise.
    pub eval_point: DVector<f64>,
    /// Interpolation point `qtheta_k + (1 - q)theta_{k-1}` and its `q`
    /// (Hessian variant only).
    pub interpolation: Option<(f64, DVector<f64>)>,
    /// `g_k`.
    pub gradient: DVector<f64>,
    /// Second-order correction `v_k` (Hessian variant only).
    pub correction: Option<DVector<f64>>,
    /// `d_k` (equal to `g_k` for the baseline).
    pub direction: DVector<f64>,
    pub gamma: f64,
    pub eta: f64,
    pub visits: VisitStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub j_star: f64,
    /// `r_t` for every environment step.
    pub reward_trace: Vec<f64>,
    /// `sum_{u <= t} (J* - r_u)`.
    pub regret_trace: Vec<f64>,
    /// `theta_k` at the start of each epoch.
    pub theta_snapshots: Vec<DVector<f64>>,
    /// `theta_{K+1}`.
    pub final_theta: DVector<f64>,
    /// `J(theta_k)` per epoch when oracle logging is on.
    pub gain_trace: Vec<f64>,
    pub direction_norms: Vec<f64>,
    pub estimator_stats: Vec<VisitStats>,
    pub epochs: Vec<EpochRecord>,
}

impl RunResult {
    pub fn final_regret(&self) -> f64 {
        self.regret_trace.last().copied().unwrap_or(0.0)
    }
}

struct Recorder<'a> {
    m: &'a TabularMdp,
    spec: &'a PolicySpec,
    opts: RunOptions,
    result: RunResult,
}

impl<'a> Recorder<'a> {
    fn new(m: &'a TabularMdp, spec: &'a PolicySpec, sched: &ScheduleSpec, opts: RunOptions) -> Result<Self> {
        let j_star = match opts.j_star {
            Some(j) => j,
            None => optimal_gain(m)?.j_star,
        };
        let steps = sched.total_steps();
        Ok(Self {
            m,
            spec,
            opts,
            result: RunResult {
                j_star,
                reward_trace: Vec::with_capacity(steps),
                regret_trace: Vec::with_capacity(steps),
                theta_snapshots: Vec::with_capacity(sched.epochs),
                final_theta: DVector::zeros(0),
                gain_trace: Vec::new(),
                direction_norms: Vec::with_capacity(sched.epochs),
                estimator_stats: Vec::with_capacity(sched.epochs),
                epochs: Vec::with_capacity(sched.epochs),
            },
        })
    }

    fn log_steps(&mut self, tau: &Trajectory) {
        let mut cum = self.result.regret_trace.last().copied().unwrap_or(0.0);
        for st in &tau.steps {
            cum += self.result.j_star - st.reward;
            self.result.reward_trace.push(st.reward);
            self.result.regret_trace.push(cum);
        }
    }

    fn start_epoch(&mut self, theta: &PolicyParams) -> Result<()> {
        self.result.theta_snapshots.push(theta.theta.clone());
        if self.opts.oracle_logging {
            let sol = solve_average_reward(self.m, self.spec, theta)?;
            self.result.gain_trace.push(sol.gain);
        }
        Ok(())
    }

    fn finish_epoch(&mut self, record: EpochRecord) {
        self.result.direction_norms.push(record.direction.norm());
        self.result.estimator_stats.push(record.visits);
        self.result.epochs.push(record);
    }

    fn finish(mut self, theta: PolicyParams) -> RunResult {
        self.result.final_theta = theta.theta;
        self.result
    }
}

fn check_epoch(epoch: usize, cfg: &EstimatorConfig) -> Result<()> {
    if epoch <= cfg.burn_in {
        return Err(Error::EpochTooShort { epoch, burn_in: cfg.burn_in });
    }
    Ok(())
}

fn check_dims(spec: &PolicySpec, thetas: &[&PolicyParams]) -> Result<()> {
    for t in thetas {
        if t.dim() != spec.dim() {
            return Err(Error::DimensionMismatch(alloc::format!(
                "parameter has length {}, policy class expects {}",
                t.dim(),
                spec.dim()
            )));
        }
    }
    Ok(())
}

/// `theta + gamma d / ||d||`, or `theta` when `d = 0`.
fn normalized_step(theta: &DVector<f64>, d: &DVector<f64>, gamma: f64) -> DVector<f64> {
    let norm = d.norm();
    if norm == 0.0 {
        theta.clone()
    } else {
        theta + d * (gamma / norm)
    }
}

/// `(1 - eta) d_prev + eta g`.
pub fn momentum_update(d_prev: &DVector<f64>, g: &DVector<f64>, eta: f64) -> DVector<f64> {
    d_prev * (1.0 - eta) + g * eta
}

/// `(1 - eta)(d_prev + v) + eta g`.
pub fn corrected_momentum_update(d_prev: &DVector<f64>, v: &DVector<f64>, g: &DVector<f64>, eta: f64) -> DVector<f64> {
    (d_prev + v) * (1.0 - eta) + g * eta
}

/// `theta_k + ((1 - eta) / eta)(theta_k - theta_{k-1})`.
pub fn look_ahead(theta: &DVector<f64>, theta_prev: &DVector<f64>, eta: f64) -> DVector<f64> {
    theta + (theta - theta_prev) * ((1.0 - eta) / eta)
}

/// Policy gradient with implicit gradient transport.
#[allow(clippy::too_many_arguments)]
pub fn run_pg_igt<R: Rng + ?Sized>(
    m: &TabularMdp,
    spec: &PolicySpec,
    sched: &ScheduleSpec,
    cfg: &EstimatorConfig,
    theta0: &PolicyParams,
    theta1: &PolicyParams,
    opts: RunOptions,
    rng: &mut R,
) -> Result<RunResult> {
    sched.validate()?;
    check_epoch(sched.epoch_len, cfg)?;
    check_dims(spec, &[theta0, theta1])?;
    let mut rec = Recorder::new(m, spec, sched, opts)?;
    let mut sim = Simulator::new(m, rng);
    let mut prev = theta0.theta.clone();
    let mut theta = theta1.clone();
    let mut d = DVector::zeros(spec.dim());
    for k in 1..=sched.epochs {
        rec.start_epoch(&theta)?;
        let (gamma, eta) = schedule(sched, k);
        let tilde = PolicyParams::new(look_ahead(&theta.theta, &prev, eta))?;
        let tau = sim.rollout(&policy_table(spec, &tilde), sched.epoch_len, rng);
        rec.log_steps(&tau);
        let g = grad_estimate(spec, &tilde, &tau, cfg)?;
        d = momentum_update(&d, &g, eta);
        let next = normalized_step(&theta.theta, &d, gamma);
        rec.finish_epoch(EpochRecord {
            k,
            theta: theta.theta.clone(),
            eval_point: tilde.theta,
            interpolation: None,
            gradient: g,
            correction: None,
            direction: d.clone(),
            gamma,
            eta,
            visits: visit_stats(&tau, m.n_states(), cfg.burn_in),
        });
        prev = core::mem::replace(&mut theta.theta, next);
    }
    Ok(rec.finish(theta))
}

/// Hessian-aided policy gradient. Each epoch spends `H/2` steps at
/// `theta_k` for the gradient and `H/2` at a random point of the last
/// step's segment for the Hessian-vector correction.
#[allow(clippy::too_many_arguments)]
pub fn run_hessian_pg<R: Rng + ?Sized>(
    m: &TabularMdp,
    spec: &PolicySpec,
    sched: &ScheduleSpec,
    cfg: &EstimatorConfig,
    theta0: &PolicyParams,
    theta1: &PolicyParams,
    opts: RunOptions,
    rng: &mut R,
) -> Result<RunResult> {
    sched.validate()?;
    if !sched.epoch_len.is_multiple_of(2) {
        return Err(Error::InvalidSchedule(alloc::format!(
            "the Hessian variant needs an even epoch length, got {}",
            sched.epoch_len
        )));
    }
    let half = sched.epoch_len / 2;
    check_epoch(half, cfg)?;
    check_dims(spec, &[theta0, theta1])?;
    let mut rec = Recorder::new(m, spec, sched, opts)?;
    let mut sim = Simulator::new(m, rng);
    let mut prev = theta0.theta.clone();
    let mut theta = theta1.clone();
    let mut d = DVector::zeros(spec.dim());
    for k in 1..=sched.epochs {
        rec.start_epoch(&theta)?;
        let (gamma, eta) = schedule(sched, k);
        let q: f64 = rng.gen();
        let hat = PolicyParams::new(&theta.theta * q + &prev * (1.0 - q))?;

        let tau = sim.rollout(&policy_table(spec, &theta), half, rng);
        rec.log_steps(&tau);
        let tau_hat = sim.rollout(&policy_table(spec, &hat), half, rng);
        rec.log_steps(&tau_hat);

        let g = grad_estimate(spec, &theta, &tau, cfg)?;
        let u = &theta.theta - &prev;
        let v = hessian_vector_product(spec, &hat, &tau_hat, cfg, &u)?;
        d = corrected_momentum_update(&d, &v, &g, eta);
        let next = normalized_step(&theta.theta, &d, gamma);
        rec.finish_epoch(EpochRecord {
            k,
            theta: theta.theta.clone(),
            eval_point: theta.theta.clone(),
            interpolation: Some((q, hat.theta)),
            gradient: g,
            correction: Some(v),
            direction: d.clone(),
            gamma,
            eta,
            visits: visit_stats(&tau, m.n_states(), cfg.burn_in),
        });
        prev = core::mem::replace(&mut theta.theta, next);
    }
    Ok(rec.finish(theta))
}

/// Stochastic policy gradient `theta_{k+1} = theta_k + gamma_k g_k`.
pub fn run_vanilla_pg<R: Rng + ?Sized>(
    m: &TabularMdp,
    spec: &PolicySpec,
    sched: &ScheduleSpec,
    cfg: &EstimatorConfig,
    theta0: &PolicyParams,
    opts: RunOptions,
    rng: &mut R,
) -> Result<RunResult> {
    sched.validate()?;
    check_epoch(sched.epoch_len, cfg)?;
    check_dims(spec, &[theta0])?;
    let mut rec = Recorder::new(m, spec, sched, opts)?;
    let mut sim = Simulator::new(m, rng);
    let mut theta = theta0.clone();
    for k in 1..=sched.epochs {
        rec.start_epoch(&theta)?;
        let (gamma, eta) = schedule(sched, k);
        let tau = sim.rollout(&policy_table(spec, &theta), sched.epoch_len, rng);
        rec.log_steps(&tau);
        let g = grad_estimate(spec, &theta, &tau, cfg)?;
        let next = &theta.theta + &g * gamma;
        rec.finish_epoch(EpochRecord {
            k,
            theta: theta.theta.clone(),
            eval_point: theta.theta.clone(),
            interpolation: None,
            gradient: g.clone(),
            correction: None,
            direction: g,
            gamma,
            eta,
            visits: visit_stats(&tau, m.n_states(), cfg.burn_in),
        });
        theta = PolicyParams::new(next)?;
    }
    Ok(rec.finish(theta))
}
