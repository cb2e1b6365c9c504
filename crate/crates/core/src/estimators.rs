//! Trajectory-based estimators.
//!
//! For a trajectory `tau = {(s_t, a_t)}_{t = t_s}^{t_e}` and burn-in `N`:
//!
//! * the sub-trajectory scan walks `xi` from `t_s` while `xi <= t_e - N`,
//!   recording `y = sum_{t = xi}^{xi + N - 1} r_t` and jumping `2N` ahead on
//!   every visit to `s`, one step otherwise;
//! * `V(s) = mean y`, `Q(s, a) = mean(y 1[a_xi = a]) / pi(a|s)`, both zero
//!   when `s` is never hit;
//! * the gradient estimate averages `A(s_t, a_t) grad log pi(a_t|s_t)` over
//!   `t = t_s + N ..= t_e`;
//! * `Phi(theta, tau)` averages `Psi1_t log pi(a_t|s_t) + Psi2_t / pi(a_t|s_t)`
//!   over the same window with `Psi1_t = -V(s_t)` and
//!   `Psi2_t = -Q(s_t, a_t) pi(a_t|s_t) = -mean(y 1[a_xi = a_t])`, which
//!   depend on the trajectory alone;
//! * the Hessian estimate is `grad Phi (grad log p)^T + hess Phi` with
//!   `grad log p = sum_{t = t_s}^{t_e} grad log pi(a_t|s_t)`.
//!
//! The scan depends only on `(tau, s, N)`, so it runs once per state and is
//! shared by every `(s, a)` query on the same trajectory.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::chain::burn_in_length;
use crate::error::{Error, Result};
use crate::mdp::Trajectory;
use crate::policy::{action_probs, log_prob, score_hessian, score_hessian_apply, scores_at, PolicyParams, PolicySpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    /// `N`: burn-in and sub-trajectory length.
    pub burn_in: usize,
    /// `T`.
    pub horizon: u64,
    /// Probabilities below this raise `ProbabilityUnderflow`; `0` disables
    /// the check.
    pub pi_floor: f64,
}

impl EstimatorConfig {
    pub fn new(burn_in: usize, horizon: u64) -> Self {
        Self { burn_in, horizon, pi_floor: 0.0 }
    }

    /// `N = 7 t_mix ceil(log2 T)`.
    pub fn from_mixing(t_mix: usize, horizon: u64) -> Self {
        Self::new(burn_in_length(t_mix, horizon), horizon)
    }

    fn check_len(&self, tau: &Trajectory) -> Result<()> {
        if self.burn_in == 0 || tau.len() <= self.burn_in {
            return Err(Error::TrajectoryTooShort { len: tau.len(), burn_in: self.burn_in });
        }
        Ok(())
    }

    fn check_prob(&self, s: usize, a: usize, prob: f64) -> Result<()> {
        if self.pi_floor > 0.0 && prob < self.pi_floor {
            return Err(Error::ProbabilityUnderflow { state: s, action: a, prob, floor: self.pi_floor });
        }
        Ok(())
    }
}

/// Sub-trajectories of `tau` starting in one state, as found by the scan.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StateVisits {
    /// Offsets `xi_j - t_s`.
    pub offsets: Vec<usize>,
    /// `y_j`.
    pub sums: Vec<f64>,
    /// `a_{xi_j}`.
    pub actions: Vec<usize>,
}

impl StateVisits {
    pub fn count(&self) -> usize {
        self.offsets.len()
    }

    /// `(1/i) sum_j y_j`, zero without visits.
    pub fn mean_sum(&self) -> f64 {
        if self.sums.is_empty() {
            return 0.0;
        }
        self.sums.iter().sum::<f64>() / self.sums.len() as f64
    }

    /// `(1/i) sum_j y_j 1[a_{xi_j} = a]`, zero without visits.
    pub fn mean_sum_for(&self, a: usize) -> f64 {
        if self.sums.is_empty() {
            return 0.0;
        }
        let total: f64 = self
            .sums
            .iter()
            .zip(&self.actions)
            .filter(|(_, b)| **b == a)
            .map(|(y, _)| *y)
            .sum();
        total / self.sums.len() as f64
    }
}

/// Runs the sub-trajectory scan for state `s`. Hits are disjoint, so the
/// direct reward sums cost at most `O(|tau|)` in total.
pub fn scan_visits(tau: &Trajectory, s: usize, burn_in: usize) -> StateVisits {
    let mut visits = StateVisits::default();
    if tau.len() <= burn_in {
        return visits;
    }
    // Relative form of `xi <= t_e - N`.
    let last_start = tau.len() - 1 - burn_in;
    let mut xi = 0;
    while xi <= last_start {
        let step = &tau.steps[xi];
        if step.state == s {
            visits.offsets.push(xi);
            visits.sums.push(tau.steps[xi..xi + burn_in].iter().map(|st| st.reward).sum());
            visits.actions.push(step.action);
            xi += 2 * burn_in;
        } else {
            xi += 1;
        }
    }
    visits
}

/// The scan for every state of an `n_states` MDP.
pub fn scan_all(tau: &Trajectory, n_states: usize, burn_in: usize) -> Vec<StateVisits> {
    (0..n_states).map(|s| scan_visits(tau, s, burn_in)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueEstimates {
    pub v_hat: f64,
    pub q_hat: f64,
    /// `i`.
    pub visits: usize,
    /// Absolute `xi_j`.
    pub visit_starts: Vec<u64>,
    /// `y_j`.
    pub visit_sums: Vec<f64>,
}

impl ValueEstimates {
    pub fn advantage(&self) -> f64 {
        self.q_hat - self.v_hat
    }
}

/// `V(tau, s)` and `Q(tau, s, a)` for `pi(a|s) = probs_at_s[a]`.
pub fn value_q_estimates(
    tau: &Trajectory,
    s: usize,
    a: usize,
    probs_at_s: &[f64],
    cfg: &EstimatorConfig,
) -> Result<ValueEstimates> {
    cfg.check_len(tau)?;
    cfg.check_prob(s, a, probs_at_s[a])?;
    let visits = scan_visits(tau, s, cfg.burn_in);
    let v_hat = visits.mean_sum();
    let q_hat = if visits.count() == 0 { 0.0 } else { visits.mean_sum_for(a) / probs_at_s[a] };
    Ok(ValueEstimates {
        v_hat,
        q_hat,
        visits: visits.count(),
        visit_starts: visits.offsets.iter().map(|o| tau.start_index + *o as u64).collect(),
        visit_sums: visits.sums,
    })
}

/// Occurrence counts of each `(s, a)` in the estimation window
/// `t_s + N ..= t_e` and over the whole trajectory.
#[derive(Debug, Clone, PartialEq)]
struct PairCounts {
    n_actions: usize,
    window: Vec<usize>,
    full: Vec<usize>,
}

impl PairCounts {
    fn new(tau: &Trajectory, n_states: usize, n_actions: usize, burn_in: usize) -> Self {
        let mut window = vec![0; n_states * n_actions];
        let mut full = vec![0; n_states * n_actions];
        for (t, st) in tau.steps.iter().enumerate() {
            let k = st.state * n_actions + st.action;
            full[k] += 1;
            if t >= burn_in {
                window[k] += 1;
            }
        }
        Self { n_actions, window, full }
    }

    fn window(&self, s: usize, a: usize) -> usize {
        self.window[s * self.n_actions + a]
    }

    fn full(&self, s: usize, a: usize) -> usize {
        self.full[s * self.n_actions + a]
    }
}

/// `(1 / (|tau| - N)) sum_{(s,a)} count(s,a) coef(s,a) grad log pi(a|s)`,
/// accumulated in `(s, a)` order.
fn weighted_score_sum<F>(
    spec: &PolicySpec,
    theta: &PolicyParams,
    counts: &PairCounts,
    samples: usize,
    mut coef: F,
) -> Result<DVector<f64>>
where
    F: FnMut(usize, usize, f64) -> Result<f64>,
{
    let mut total = DVector::zeros(spec.dim());
    for s in 0..spec.n_states() {
        if (0..spec.n_actions()).all(|a| counts.window(s, a) == 0) {
            continue;
        }
        let pi = action_probs(spec, theta, s);
        let scores = scores_at(spec, theta, s);
        for (a, sc) in scores.iter().enumerate() {
            let c = counts.window(s, a);
            if c == 0 {
                continue;
            }
            let w = coef(s, a, pi[a])?;
            total.axpy(c as f64 * w, sc, 1.0);
        }
    }
    Ok(total / samples as f64)
}

/// `g(theta, tau)`.
pub fn grad_estimate(
    spec: &PolicySpec,
    theta: &PolicyParams,
    tau: &Trajectory,
    cfg: &EstimatorConfig,
) -> Result<DVector<f64>> {
    cfg.check_len(tau)?;
    let visits = scan_all(tau, spec.n_states(), cfg.burn_in);
    let counts = PairCounts::new(tau, spec.n_states(), spec.n_actions(), cfg.burn_in);
    weighted_score_sum(spec, theta, &counts, tau.len() - cfg.burn_in, |s, a, prob| {
        cfg.check_prob(s, a, prob)?;
        let sv = &visits[s];
        let v_hat = sv.mean_sum();
        let q_hat = if sv.count() == 0 { 0.0 } else { sv.mean_sum_for(a) / prob };
        Ok(q_hat - v_hat)
    })
}

/// Visit statistics of the scan over the estimation window.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VisitStats {
    /// `sum_s i(s)`.
    pub total_visits: usize,
    /// Fraction of window steps whose state was never hit by the scan.
    pub unvisited_fraction: f64,
}

/// Scan statistics of `tau` without building any estimate.
pub fn visit_stats(tau: &Trajectory, n_states: usize, burn_in: usize) -> VisitStats {
    let visits = scan_all(tau, n_states, burn_in);
    stats_from_visits(tau, &visits, burn_in)
}

fn stats_from_visits(tau: &Trajectory, visits: &[StateVisits], burn_in: usize) -> VisitStats {
    let window = &tau.steps[burn_in.min(tau.len())..];
    let unvisited = window.iter().filter(|st| visits[st.state].count() == 0).count();
    VisitStats {
        total_visits: visits.iter().map(StateVisits::count).sum(),
        unvisited_fraction: if window.is_empty() { 0.0 } else { unvisited as f64 / window.len() as f64 },
    }
}

/// The `Psi` coefficients of a trajectory, frozen at construction. `Phi`,
/// its gradient, and its Hessian can then be evaluated at any `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiTable {
    burn_in: usize,
    len: usize,
    n_states: usize,
    n_actions: usize,
    counts: PairCounts,
    /// `Psi1` per state: `-V(s)`.
    psi1_state: Vec<f64>,
    /// `Psi2` per pair: `-mean(y 1[a_xi = a])`.
    psi2_pair: Vec<f64>,
    /// Per-step `Psi1_t`, `Psi2_t` for `t = t_s + N ..= t_e`.
    psi1: Vec<f64>,
    psi2: Vec<f64>,
    stats: VisitStats,
}

impl PsiTable {
    pub fn from_trajectory(
        tau: &Trajectory,
        n_states: usize,
        n_actions: usize,
        cfg: &EstimatorConfig,
    ) -> Result<Self> {
        cfg.check_len(tau)?;
        let visits = scan_all(tau, n_states, cfg.burn_in);
        let psi1_state: Vec<f64> = visits.iter().map(|v| -v.mean_sum()).collect();
        let mut psi2_pair = vec![0.0; n_states * n_actions];
        for (s, v) in visits.iter().enumerate() {
            for a in 0..n_actions {
                psi2_pair[s * n_actions + a] = -v.mean_sum_for(a);
            }
        }
        let window = &tau.steps[cfg.burn_in..];
        let psi1 = window.iter().map(|st| psi1_state[st.state]).collect();
        let psi2 = window.iter().map(|st| psi2_pair[st.state * n_actions + st.action]).collect();
        let stats = stats_from_visits(tau, &visits, cfg.burn_in);
        Ok(Self {
            burn_in: cfg.burn_in,
            len: tau.len(),
            n_states,
            n_actions,
            counts: PairCounts::new(tau, n_states, n_actions, cfg.burn_in),
            psi1_state,
            psi2_pair,
            psi1,
            psi2,
            stats,
        })
    }

    pub fn psi1(&self) -> &[f64] {
        &self.psi1
    }

    pub fn psi2(&self) -> &[f64] {
        &self.psi2
    }

    pub fn stats(&self) -> VisitStats {
        self.stats
    }

    fn samples(&self) -> usize {
        self.len - self.burn_in
    }

    fn psi2_at(&self, s: usize, a: usize) -> f64 {
        self.psi2_pair[s * self.n_actions + a]
    }

    /// `Phi(theta, tau)` with the stored `Psi`.
    pub fn phi(&self, spec: &PolicySpec, theta: &PolicyParams) -> f64 {
        let mut total = 0.0;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let c = self.counts.window(s, a);
                if c == 0 {
                    continue;
                }
                let lp = log_prob(spec, theta, s, a);
                let prob = crate::math::exp(lp);
                total += c as f64 * (self.psi1_state[s] * lp + self.psi2_at(s, a) / prob);
            }
        }
        total / self.samples() as f64
    }

    /// `grad Phi = (1/(|tau|-N)) sum_t (Psi1_t - Psi2_t / pi) grad log pi`.
    pub fn gradient(&self, spec: &PolicySpec, theta: &PolicyParams, cfg: &EstimatorConfig) -> Result<DVector<f64>> {
        weighted_score_sum(spec, theta, &self.counts, self.samples(), |s, a, prob| {
            cfg.check_prob(s, a, prob)?;
            // Written as Q - V so the sum is bit-identical to `grad_estimate`.
            Ok(-self.psi2_at(s, a) / prob + self.psi1_state[s])
        })
    }

    /// `hess Phi = (1/(|tau|-N)) sum_t [(Psi1_t - Psi2_t/pi) H_t + (Psi2_t/pi) g_t g_t^T]`
    /// with `H_t = hess log pi(a_t|s_t)` and `g_t = grad log pi(a_t|s_t)`.
    pub fn hessian(&self, spec: &PolicySpec, theta: &PolicyParams) -> DMatrix<f64> {
        let dim = spec.dim();
        let mut total = DMatrix::zeros(dim, dim);
        for s in 0..self.n_states {
            let mut state_coef = 0.0;
            let mut any = false;
            let pi = action_probs(spec, theta, s);
            let scores = scores_at(spec, theta, s);
            for a in 0..self.n_actions {
                let c = self.counts.window(s, a);
                if c == 0 {
                    continue;
                }
                any = true;
                let ratio = self.psi2_at(s, a) / pi[a];
                state_coef += c as f64 * (self.psi1_state[s] - ratio);
                total += &scores[a] * scores[a].transpose() * (c as f64 * ratio);
            }
            if any {
                total += score_hessian(spec, theta, s, 0) * state_coef;
            }
        }
        total / self.samples() as f64
    }

    /// `hess Phi u` without forming any `d x d` matrix.
    pub fn hessian_apply(&self, spec: &PolicySpec, theta: &PolicyParams, u: &DVector<f64>) -> DVector<f64> {
        let mut total = DVector::zeros(spec.dim());
        for s in 0..self.n_states {
            let mut state_coef = 0.0;
            let mut any = false;
            let pi = action_probs(spec, theta, s);
            let scores = scores_at(spec, theta, s);
            for a in 0..self.n_actions {
                let c = self.counts.window(s, a);
                if c == 0 {
                    continue;
                }
                any = true;
                let ratio = self.psi2_at(s, a) / pi[a];
                state_coef += c as f64 * (self.psi1_state[s] - ratio);
                total.axpy(c as f64 * ratio * scores[a].dot(u), &scores[a], 1.0);
            }
            if any {
                total.axpy(state_coef, &score_hessian_apply(spec, theta, s, u), 1.0);
            }
        }
        total / self.samples() as f64
    }

    /// `grad log p(tau, theta, rho) = sum_{t = t_s}^{t_e} grad log pi(a_t|s_t)`.
    pub fn logp_score(&self, spec: &PolicySpec, theta: &PolicyParams) -> DVector<f64> {
        let mut total = DVector::zeros(spec.dim());
        for s in 0..self.n_states {
            if (0..self.n_actions).all(|a| self.counts.full(s, a) == 0) {
                continue;
            }
            for (a, sc) in scores_at(spec, theta, s).iter().enumerate() {
                let c = self.counts.full(s, a);
                if c > 0 {
                    total.axpy(c as f64, sc, 1.0);
                }
            }
        }
        total
    }

    pub fn report(&self, spec: &PolicySpec, theta: &PolicyParams, cfg: &EstimatorConfig) -> Result<PhiReport> {
        Ok(PhiReport {
            phi: self.phi(spec, theta),
            grad: self.gradient(spec, theta, cfg)?,
            hess: self.hessian(spec, theta),
            psi1: self.psi1.clone(),
            psi2: self.psi2.clone(),
            logp_score: self.logp_score(spec, theta),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiReport {
    pub phi: f64,
    /// `grad Phi`, equal to `g(theta, tau)`.
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
    pub psi1: Vec<f64>,
    pub psi2: Vec<f64>,
    pub logp_score: DVector<f64>,
}

pub fn phi_report(
    spec: &PolicySpec,
    theta: &PolicyParams,
    tau: &Trajectory,
    cfg: &EstimatorConfig,
) -> Result<PhiReport> {
    PsiTable::from_trajectory(tau, spec.n_states(), spec.n_actions(), cfg)?.report(spec, theta, cfg)
}

/// `B(theta, tau) = grad Phi (grad log p)^T + hess Phi`.
pub fn hessian_estimate(
    spec: &PolicySpec,
    theta: &PolicyParams,
    tau: &Trajectory,
    cfg: &EstimatorConfig,
) -> Result<DMatrix<f64>> {
    let report = phi_report(spec, theta, tau, cfg)?;
    Ok(&report.grad * report.logp_score.transpose() + report.hess)
}

/// `B(theta, tau) u`, matrix-free.
pub fn hessian_vector_product(
    spec: &PolicySpec,
    theta: &PolicyParams,
    tau: &Trajectory,
    cfg: &EstimatorConfig,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    let table = PsiTable::from_trajectory(tau, spec.n_states(), spec.n_actions(), cfg)?;
    hvp_from_table(&table, spec, theta, cfg, u)
}

pub(crate) fn hvp_from_table(
    table: &PsiTable,
    spec: &PolicySpec,
    theta: &PolicyParams,
    cfg: &EstimatorConfig,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    let grad = table.gradient(spec, theta, cfg)?;
    let scale = table.logp_score(spec, theta).dot(u);
    Ok(grad * scale + table.hessian_apply(spec, theta, u))
}
