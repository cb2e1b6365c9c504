//! Softmax policy classes over a finite MDP: tabular and feature-linear.
//!
//! Both classes have logits `z(s, .) = J_s theta` for a fixed `A x d`
//! Jacobian `J_s`, so for any action `a`
//!
//! ```text
//! grad log pi(a|s)      = J_s^T (e_a - pi(.|s))
//! hess log pi(a|s)      = -J_s^T (diag pi - pi pi^T) J_s
//! ```
//!
//! The Hessian does not depend on `a`. When logit clamping is on, clamped
//! logits are constant in `theta` and their Jacobian rows are zeroed.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::mdp::PolicyTable;

/// Logits are clamped to `[-LOGIT_CLAMP, LOGIT_CLAMP]` when clamping is on.
pub const LOGIT_CLAMP: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    TabularSoftmax,
    LinearSoftmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySpec {
    kind: PolicyKind,
    n_states: usize,
    n_actions: usize,
    dim: usize,
    /// `phi(s, a)` stored row-major as `S x A x d`; empty for tabular.
    features: Vec<f64>,
    feature_norm_bound: f64,
    clamp_logits: bool,
}

impl PolicySpec {
    /// Tabular softmax, `d = S * A`, `z(s, a) = theta[s * A + a]`.
    pub fn tabular(n_states: usize, n_actions: usize) -> Self {
        Self {
            kind: PolicyKind::TabularSoftmax,
            n_states,
            n_actions,
            dim: n_states * n_actions,
            features: Vec::new(),
            feature_norm_bound: 1.0,
            clamp_logits: true,
        }
    }

    /// Linear softmax with `z(s, a) = theta . phi(s, a)`.
    pub fn linear(n_states: usize, n_actions: usize, dim: usize, features: Vec<f64>) -> Result<Self> {
        if features.len() != n_states * n_actions * dim {
            return Err(Error::DimensionMismatch(format!(
                "features have {} entries, expected S*A*d = {}",
                features.len(),
                n_states * n_actions * dim
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::DimensionMismatch("features must be finite".into()));
        }
        let feature_norm_bound = features
            .chunks(dim.max(1))
            .map(|c| math::sqrt(c.iter().map(|x| x * x).sum()))
            .fold(0.0, f64::max);
        Ok(Self {
            kind: PolicyKind::LinearSoftmax,
            n_states,
            n_actions,
            dim,
            features,
            feature_norm_bound,
            clamp_logits: true,
        })
    }

    /// Linear softmax with i.i.d. standard normal features.
    pub fn linear_gaussian(n_states: usize, n_actions: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = (0..n_states * n_actions * dim).map(|_| standard_normal(&mut rng)).collect();
        Self::linear(n_states, n_actions, dim, features).expect("generated features have the right shape")
    }

    pub fn with_logit_clamp(mut self, on: bool) -> Self {
        self.clamp_logits = on;
        self
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature_norm_bound(&self) -> f64 {
        self.feature_norm_bound
    }

    pub fn clamps_logits(&self) -> bool {
        self.clamp_logits
    }

    #[inline]
    fn feature(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.dim;
        &self.features[start..start + self.dim]
    }

    fn raw_logit(&self, theta: &PolicyParams, s: usize, a: usize) -> f64 {
        match self.kind {
            PolicyKind::TabularSoftmax => theta.theta[s * self.n_actions + a],
            PolicyKind::LinearSoftmax => {
                self.feature(s, a).iter().zip(theta.theta.iter()).map(|(f, t)| f * t).sum()
            }
        }
    }

    /// Logits at `s` and whether each one is inside the clamp window.
    fn logits(&self, theta: &PolicyParams, s: usize) -> (Vec<f64>, Vec<bool>) {
        let mut z = Vec::with_capacity(self.n_actions);
        let mut live = Vec::with_capacity(self.n_actions);
        for a in 0..self.n_actions {
            let raw = self.raw_logit(theta, s, a);
            if self.clamp_logits && raw.abs() > LOGIT_CLAMP {
                z.push(raw.clamp(-LOGIT_CLAMP, LOGIT_CLAMP));
                live.push(false);
            } else {
                z.push(raw);
                live.push(true);
            }
        }
        (z, live)
    }

    /// `J_s` with clamped rows zeroed.
    fn logit_jacobian(&self, live: &[bool], s: usize) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.n_actions, self.dim);
        for a in 0..self.n_actions {
            if !live[a] {
                continue;
            }
            match self.kind {
                PolicyKind::TabularSoftmax => j[(a, s * self.n_actions + a)] = 1.0,
                PolicyKind::LinearSoftmax => {
                    for (k, f) in self.feature(s, a).iter().enumerate() {
                        j[(a, k)] = *f;
                    }
                }
            }
        }
        j
    }

    fn check_theta(&self, theta: &PolicyParams) {
        debug_assert_eq!(theta.theta.len(), self.dim, "theta has the wrong dimension");
    }
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    math::sqrt(-2.0 * math::ln(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

/// Policy parameter `theta` in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub theta: DVector<f64>,
}

impl PolicyParams {
    pub fn new(theta: DVector<f64>) -> Result<Self> {
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::DimensionMismatch("theta must be finite".into()));
        }
        Ok(Self { theta })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { theta: DVector::zeros(dim) }
    }

    pub fn from_slice(values: &[f64]) -> Self {
        Self { theta: DVector::from_column_slice(values) }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|x| math::exp(x - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `pi_theta(. | s)`.
pub fn action_probs(spec: &PolicySpec, theta: &PolicyParams, s: usize) -> Vec<f64> {
    spec.check_theta(theta);
    softmax(&spec.logits(theta, s).0)
}

/// `log pi_theta(a | s)` by log-sum-exp.
pub fn log_prob(spec: &PolicySpec, theta: &PolicyParams, s: usize, a: usize) -> f64 {
    let (z, _) = spec.logits(theta, s);
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + math::ln(z.iter().map(|x| math::exp(x - max)).sum());
    z[a] - lse
}

/// The full `S x A` action table for `theta`.
pub fn policy_table(spec: &PolicySpec, theta: &PolicyParams) -> PolicyTable {
    let mut probs = Vec::with_capacity(spec.n_states * spec.n_actions);
    for s in 0..spec.n_states {
        probs.extend(action_probs(spec, theta, s));
    }
    PolicyTable::from_rows(spec.n_states, spec.n_actions, probs).expect("table shape matches spec")
}

/// `grad_theta log pi_theta(a | s)`.
pub fn score(spec: &PolicySpec, theta: &PolicyParams, s: usize, a: usize) -> DVector<f64> {
    spec.check_theta(theta);
    let (z, live) = spec.logits(theta, s);
    let pi = softmax(&z);
    let j = spec.logit_jacobian(&live, s);
    let mut w = DVector::from_vec(pi.iter().map(|p| -p).collect());
    w[a] += 1.0;
    j.tr_mul(&w)
}

/// Scores for every action at `s`, sharing one softmax evaluation.
pub fn scores_at(spec: &PolicySpec, theta: &PolicyParams, s: usize) -> Vec<DVector<f64>> {
    let (z, live) = spec.logits(theta, s);
    let pi = softmax(&z);
    let j = spec.logit_jacobian(&live, s);
    let jt_pi = j.tr_mul(&DVector::from_column_slice(&pi));
    (0..spec.n_actions)
        .map(|a| {
            let mut g = -&jt_pi;
            for k in 0..spec.dim {
                g[k] += j[(a, k)];
            }
            g
        })
        .collect()
}

fn fisher_kernel(pi: &[f64]) -> DMatrix<f64> {
    let p = DVector::from_column_slice(pi);
    DMatrix::from_diagonal(&p) - &p * p.transpose()
}

/// `hess_theta log pi_theta(a | s)`; symmetric negative semidefinite and
/// independent of `a` for both classes.
pub fn score_hessian(spec: &PolicySpec, theta: &PolicyParams, s: usize, _a: usize) -> DMatrix<f64> {
    spec.check_theta(theta);
    let (z, live) = spec.logits(theta, s);
    let pi = softmax(&z);
    let j = spec.logit_jacobian(&live, s);
    -(j.transpose() * fisher_kernel(&pi) * j)
}

/// `hess log pi(.|s) u` without forming the `d x d` matrix.
pub fn score_hessian_apply(
    spec: &PolicySpec,
    theta: &PolicyParams,
    s: usize,
    u: &DVector<f64>,
) -> DVector<f64> {
    let (z, live) = spec.logits(theta, s);
    let pi = softmax(&z);
    let j = spec.logit_jacobian(&live, s);
    let ju = &j * u;
    let mean: f64 = pi.iter().zip(ju.iter()).map(|(p, x)| p * x).sum();
    let centered = DVector::from_iterator(spec.n_actions, pi.iter().zip(ju.iter()).map(|(p, x)| p * (x - mean)));
    -j.tr_mul(&centered)
}

/// Measured score bounds: `G` for the score norm and `B` for the
/// score-Hessian spectral norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreBounds {
    pub g: f64,
    pub b: f64,
}

/// Maximises `||score||` and `||score_hessian||_2` over the samples and all
/// state-action pairs.
pub fn estimate_bounds(spec: &PolicySpec, theta_samples: &[PolicyParams]) -> ScoreBounds {
    let mut g = 0.0_f64;
    let mut b = 0.0_f64;
    for theta in theta_samples {
        for s in 0..spec.n_states {
            for sc in scores_at(spec, theta, s) {
                g = g.max(sc.norm());
            }
            // One Hessian per state since it does not depend on the action.
            b = b.max(math::symmetric_spectral_norm(&score_hessian(spec, theta, s, 0)));
        }
    }
    ScoreBounds { g, b }
}

/// Draws `count` parameters with i.i.d. `N(0, scale^2)` entries.
pub fn random_params(dim: usize, scale: f64, count: usize, seed: u64) -> Vec<PolicyParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| PolicyParams {
            theta: DVector::from_iterator(dim, (0..dim).map(|_| scale * standard_normal(&mut rng))),
        })
        .collect()
}

/// Zero vector with a one at `i`.
pub fn unit(dim: usize, i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(dim);
    e[i] = 1.0;
    e
}

/// Exact `sum_a grad^2 pi(a|s)` reconstructed as
/// `sum_a pi (score score^T + hess log pi)`; identically zero.
pub fn probability_hessian_sum(spec: &PolicySpec, theta: &PolicyParams, s: usize) -> DMatrix<f64> {
    let pi = action_probs(spec, theta, s);
    let h = score_hessian(spec, theta, s, 0);
    let mut total = DMatrix::zeros(spec.dim, spec.dim);
    for (a, sc) in scores_at(spec, theta, s).into_iter().enumerate() {
        total += (&sc * sc.transpose() + &h) * pi[a];
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec_for(kind: u8, s: usize, a: usize, seed: u64) -> PolicySpec {
        if kind == 0 {
            PolicySpec::tabular(s, a)
        } else {
            PolicySpec::linear_gaussian(s, a, 3, seed)
        }
    }

    #[test]
    fn zero_theta_is_uniform() {
        let spec = PolicySpec::tabular(2, 4);
        let p = action_probs(&spec, &PolicyParams::zeros(8), 1);
        assert!(p.iter().all(|x| (*x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn log_three_logit() {
        let spec = PolicySpec::tabular(1, 2);
        let theta = PolicyParams::from_slice(&[math::ln(3.0), 0.0]);
        let p = action_probs(&spec, &theta, 0);
        assert!((p[0] - 0.75).abs() < 1e-15);
        assert!((p[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn single_action_scores_vanish() {
        let spec = PolicySpec::tabular(3, 1);
        let theta = PolicyParams::from_slice(&[0.3, -1.0, 2.0]);
        assert_eq!(score(&spec, &theta, 1, 0).norm(), 0.0);
        assert_eq!(score_hessian(&spec, &theta, 1, 0).norm(), 0.0);
        let bounds = estimate_bounds(&spec, &[theta]);
        assert_eq!(bounds, ScoreBounds { g: 0.0, b: 0.0 });
    }

    #[test]
    fn clamped_logits_stay_finite() {
        let spec = PolicySpec::tabular(1, 2);
        let theta = PolicyParams::from_slice(&[500.0, -500.0]);
        let p = action_probs(&spec, &theta, 0);
        assert!(p[1] > 0.0);
        assert!(log_prob(&spec, &theta, 0, 1).is_finite());
        assert_eq!(score(&spec, &theta, 0, 1).norm(), 0.0);
    }

    #[test]
    fn tabular_bounds_are_within_analytic_limits() {
        let spec = PolicySpec::tabular(3, 3);
        let samples = random_params(9, 2.0, 40, 1);
        let b = estimate_bounds(&spec, &samples);
        assert!(b.g <= 2f64.sqrt() + 1e-9);
        assert!(b.b <= 2.0 + 1e-9);
        let more = estimate_bounds(&spec, &[samples.clone(), random_params(9, 3.0, 10, 2)].concat());
        assert!(more.g >= b.g && more.b >= b.b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn probabilities_normalise(kind in 0u8..2, seed in 0u64..1000, shift in -5.0f64..5.0) {
            let spec = spec_for(kind, 3, 3, seed);
            let theta = &random_params(spec.dim(), 1.5, 1, seed)[0];
            for s in 0..3 {
                let p = action_probs(&spec, theta, s);
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-14);
                prop_assert!(p.iter().all(|x| *x > 0.0));
            }
            if kind == 0 {
                let mut shifted = theta.clone();
                for a in 0..3 { shifted.theta[3 + a] += shift; }
                let p = action_probs(&spec, theta, 1);
                let q = action_probs(&spec, &shifted, 1);
                for (x, y) in p.iter().zip(&q) { prop_assert!((x - y).abs() < 1e-14); }
            }
        }

        #[test]
        fn score_is_mean_zero(kind in 0u8..2, seed in 0u64..1000) {
            let spec = spec_for(kind, 3, 3, seed);
            let theta = &random_params(spec.dim(), 1.5, 1, seed + 1)[0];
            for s in 0..3 {
                let p = action_probs(&spec, theta, s);
                let mut mean = DVector::zeros(spec.dim());
                for a in 0..3 { mean += score(&spec, theta, s, a) * p[a]; }
                prop_assert!(mean.amax() <= 1e-12);
                prop_assert!(probability_hessian_sum(&spec, theta, s).amax() <= 1e-10);
            }
        }

        #[test]
        fn score_matches_finite_differences(kind in 0u8..2, seed in 0u64..1000, s in 0usize..3, a in 0usize..3) {
            let spec = spec_for(kind, 3, 3, seed);
            let theta = &random_params(spec.dim(), 1.0, 1, seed + 2)[0];
            let h = 1e-5;
            let sc = score(&spec, theta, s, a);
            for i in 0..spec.dim() {
                let mut plus = theta.clone();
                plus.theta[i] += h;
                let mut minus = theta.clone();
                minus.theta[i] -= h;
                let fd = (log_prob(&spec, &plus, s, a) - log_prob(&spec, &minus, s, a)) / (2.0 * h);
                prop_assert!((fd - sc[i]).abs() <= 1e-6 * sc.norm().max(1e-3), "coord {} fd {} analytic {}", i, fd, sc[i]);
            }
        }

        #[test]
        fn score_hessian_matches_finite_differences(kind in 0u8..2, seed in 0u64..1000, s in 0usize..3, a in 0usize..3) {
            let spec = spec_for(kind, 3, 3, seed);
            let theta = &random_params(spec.dim(), 1.0, 1, seed + 3)[0];
            let h = 1e-4;
            let hess = score_hessian(&spec, theta, s, a);
            prop_assert!((&hess - hess.transpose()).amax() <= 1e-12);
            prop_assert!(crate::math::symmetric_spectral_norm(&hess) >= 0.0);
            let max_eig = -crate::math::symmetric_min_eigenvalue(&(-&hess));
            prop_assert!(max_eig <= 1e-10);
            for i in 0..spec.dim() {
                let mut plus = theta.clone();
                plus.theta[i] += h;
                let mut minus = theta.clone();
                minus.theta[i] -= h;
                let col = (score(&spec, &plus, s, a) - score(&spec, &minus, s, a)) / (2.0 * h);
                for k in 0..spec.dim() {
                    prop_assert!((col[k] - hess[(k, i)]).abs() <= 1e-5);
                }
            }
            let u = &random_params(spec.dim(), 1.0, 1, seed + 4)[0].theta;
            prop_assert!((score_hessian_apply(&spec, theta, s, u) - &hess * u).amax() <= 1e-12);
        }
    }
}
