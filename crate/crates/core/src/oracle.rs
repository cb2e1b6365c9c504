//! Exact ground truth on tabular MDPs. Every estimator in the crate is
//! checked against the quantities computed here.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::chain::{induced_kernel, stationary_distribution};
use crate::error::{Error, Result};
use crate::math;
use crate::mdp::{policy_reward, PolicyTable, TabularMdp};
use crate::policy::{policy_table, scores_at, PolicyParams, PolicySpec};

/// Default ridge added to the Fisher matrix before the NPG solve.
pub const DEFAULT_RIDGE: f64 = 1e-10;

/// Gain, bias values, Q-values and advantages of a fixed policy. The bias
/// is normalised so that `sum_s d(s) v(s) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AverageRewardSolution {
    pub gain: f64,
    pub v: DVector<f64>,
    /// `S x A`.
    pub q: DMatrix<f64>,
    /// `S x A`.
    pub adv: DMatrix<f64>,
    pub stationary: DVector<f64>,
}

impl AverageRewardSolution {
    /// `max_{s,a} |q(s,a) - (r(s,a) - J + sum_s' P(s'|s,a) v(s'))|`.
    pub fn bellman_residual(&self, m: &TabularMdp) -> f64 {
        let mut worst = 0.0_f64;
        for s in 0..m.n_states() {
            for a in 0..m.n_actions() {
                let next: f64 = m.transition(s, a).iter().zip(self.v.iter()).map(|(p, v)| p * v).sum();
                worst = worst.max((self.q[(s, a)] - (m.reward(s, a) - self.gain + next)).abs());
            }
        }
        worst
    }
}

/// Solves the Poisson equation for an arbitrary policy table.
pub fn evaluate_policy(m: &TabularMdp, policy: &PolicyTable) -> Result<AverageRewardSolution> {
    let n = m.n_states();
    let p = induced_kernel(m, policy);
    let d = stationary_distribution(&p)?;
    let r_pi = DVector::from_vec(policy_reward(m, policy));
    let gain = d.dot(&r_pi);

    // (I - P + 1 d^T) v = r^pi - J 1 forces d^T v = 0 and (I - P) v = r^pi - J 1.
    let ones = DVector::from_element(n, 1.0);
    let system = DMatrix::<f64>::identity(n, n) - &p + &ones * d.transpose();
    let v = system
        .lu()
        .solve(&(r_pi - &ones * gain))
        .ok_or(Error::SingularStationarySolve)?;

    let na = m.n_actions();
    let mut q = DMatrix::zeros(n, na);
    let mut adv = DMatrix::zeros(n, na);
    for s in 0..n {
        for a in 0..na {
            let next: f64 = m.transition(s, a).iter().zip(v.iter()).map(|(p, v)| p * v).sum();
            q[(s, a)] = m.reward(s, a) - gain + next;
            adv[(s, a)] = q[(s, a)] - v[s];
        }
    }
    Ok(AverageRewardSolution { gain, v, q, adv, stationary: d })
}

pub fn solve_average_reward(
    m: &TabularMdp,
    spec: &PolicySpec,
    theta: &PolicyParams,
) -> Result<AverageRewardSolution> {
    evaluate_policy(m, &policy_table(spec, theta))
}

/// `grad J(theta) = sum_s d(s) sum_a pi(a|s) A(s,a) grad log pi(a|s)`.
pub fn exact_gradient(m: &TabularMdp, spec: &PolicySpec, theta: &PolicyParams) -> Result<DVector<f64>> {
    let sol = solve_average_reward(m, spec, theta)?;
    Ok(gradient_from_solution(spec, theta, &sol))
}

pub fn gradient_from_solution(
    spec: &PolicySpec,
    theta: &PolicyParams,
    sol: &AverageRewardSolution,
) -> DVector<f64> {
    let table = policy_table(spec, theta);
    let mut grad = DVector::zeros(spec.dim());
    for s in 0..spec.n_states() {
        for (a, sc) in scores_at(spec, theta, s).into_iter().enumerate() {
            grad += sc * (sol.stationary[s] * table.prob(s, a) * sol.adv[(s, a)]);
        }
    }
    grad
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherInfo {
    pub matrix: DMatrix<f64>,
    pub min_eig: f64,
    /// Smallest eigenvalue above `1e-8 * max(1, largest)`; zero if none.
    pub min_positive_eig: f64,
    /// `omega* = (F + ridge I)^{-1} grad J`, or `F^+ grad J` when the ridge
    /// is zero.
    pub npg_direction: DVector<f64>,
    pub ridge: f64,
}

pub fn fisher_and_npg(
    m: &TabularMdp,
    spec: &PolicySpec,
    theta: &PolicyParams,
    ridge: f64,
) -> Result<FisherInfo> {
    let sol = solve_average_reward(m, spec, theta)?;
    let grad = gradient_from_solution(spec, theta, &sol);
    let table = policy_table(spec, theta);
    let dim = spec.dim();
    let mut matrix = DMatrix::zeros(dim, dim);
    for s in 0..spec.n_states() {
        for (a, sc) in scores_at(spec, theta, s).into_iter().enumerate() {
            let w = sol.stationary[s] * table.prob(s, a);
            matrix += &sc * sc.transpose() * w;
        }
    }
    let (min_eig, min_positive_eig) = if dim == 0 {
        (0.0, 0.0)
    } else {
        let eig = nalgebra::SymmetricEigen::new(matrix.clone());
        let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        let threshold = 1e-8 * max.max(1.0);
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        let min_pos = eig
            .eigenvalues
            .iter()
            .copied()
            .filter(|x| *x > threshold)
            .fold(f64::INFINITY, f64::min);
        (min, if min_pos.is_finite() { min_pos } else { 0.0 })
    };
    let npg_direction = if ridge > 0.0 {
        let regularised = &matrix + DMatrix::<f64>::identity(dim, dim) * ridge;
        match regularised.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => regularised.lu().solve(&grad).ok_or(Error::SingularStationarySolve)?,
        }
    } else {
        matrix
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|_| Error::SingularStationarySolve)?
            * &grad
    };
    Ok(FisherInfo { matrix, min_eig, min_positive_eig, npg_direction, ridge })
}

/// `E_{s ~ d^{pi*}, a ~ pi*} [(score . omega*_theta - A^{pi_theta}(s,a))^2]`.
pub fn transferred_error(
    m: &TabularMdp,
    spec: &PolicySpec,
    theta: &PolicyParams,
    optimal: &PolicyTable,
    ridge: f64,
) -> Result<f64> {
    let sol = solve_average_reward(m, spec, theta)?;
    let omega = fisher_and_npg(m, spec, theta, ridge)?.npg_direction;
    let d_star = stationary_distribution(&induced_kernel(m, optimal))?;
    let mut total = 0.0;
    for s in 0..spec.n_states() {
        for (a, sc) in scores_at(spec, theta, s).into_iter().enumerate() {
            let w = d_star[s] * optimal.prob(s, a);
            if w == 0.0 {
                continue;
            }
            let err = sc.dot(&omega) - sol.adv[(s, a)];
            total += w * err * err;
        }
    }
    Ok(total)
}

/// Result of Howard policy iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalPolicy {
    pub j_star: f64,
    pub actions: Vec<usize>,
    pub solution: AverageRewardSolution,
}

impl OptimalPolicy {
    pub fn table(&self, n_actions: usize) -> PolicyTable {
        PolicyTable::deterministic(n_actions, &self.actions)
    }
}

const IMPROVEMENT_TOL: f64 = 1e-10;

/// Howard policy iteration over deterministic policies. The incumbent
/// action is kept unless a challenger improves `q` by more than `1e-10`.
pub fn optimal_gain(m: &TabularMdp) -> Result<OptimalPolicy> {
    let (ns, na) = (m.n_states(), m.n_actions());
    let mut actions = vec![0usize; ns];
    // A^S bounds the number of distinct policies; anything beyond means cycling.
    let cap = na.checked_pow(ns as u32).unwrap_or(usize::MAX).min(1_000_000) + 1;
    for _ in 0..cap {
        let solution = evaluate_policy(m, &PolicyTable::deterministic(na, &actions))?;
        let mut changed = false;
        for s in 0..ns {
            let incumbent = solution.q[(s, actions[s])];
            let mut best = actions[s];
            let mut best_q = incumbent;
            for a in 0..na {
                if solution.q[(s, a)] > best_q + IMPROVEMENT_TOL {
                    best = a;
                    best_q = solution.q[(s, a)];
                }
            }
            if best != actions[s] {
                actions[s] = best;
                changed = true;
            }
        }
        if !changed {
            return Ok(OptimalPolicy { j_star: solution.gain, actions, solution });
        }
    }
    Err(Error::NoImprovementCycle(cap))
}

/// `J^pi - J^pi' = E_{s ~ d^pi} E_{a ~ pi} [A^{pi'}(s, a)]`, right-hand side.
pub fn performance_difference_rhs(
    m: &TabularMdp,
    pi: &PolicyTable,
    pi_prime: &PolicyTable,
) -> Result<f64> {
    let d = stationary_distribution(&induced_kernel(m, pi))?;
    let other = evaluate_policy(m, pi_prime)?;
    let mut total = 0.0;
    for s in 0..m.n_states() {
        for a in 0..m.n_actions() {
            total += d[s] * pi.prob(s, a) * other.adv[(s, a)];
        }
    }
    Ok(total)
}

/// Central-difference Jacobian of `f: R^d -> R^m`, returned as `m x d`.
pub fn finite_difference<F>(f: F, theta: &DVector<f64>, h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let d = theta.len();
    let mut columns = Vec::with_capacity(d);
    for i in 0..d {
        let mut plus = theta.clone();
        plus[i] += h;
        let mut minus = theta.clone();
        minus[i] -= h;
        let fp = f(&plus);
        let fm = f(&minus);
        if !math::all_finite(&fp) || !math::all_finite(&fm) {
            return Err(Error::NonFiniteEvaluation(i));
        }
        columns.push((fp - fm) / (2.0 * h));
    }
    if columns.is_empty() {
        let m = f(theta).len();
        return Ok(DMatrix::zeros(m, 0));
    }
    Ok(DMatrix::from_columns(&columns))
}

/// Finite-difference Hessian of `J` (the Jacobian of the exact gradient),
/// symmetrised.
pub fn gain_hessian_fd(m: &TabularMdp, spec: &PolicySpec, theta: &PolicyParams, h: f64) -> Result<DMatrix<f64>> {
    let jac = finite_difference(
        |t| {
            exact_gradient(m, spec, &PolicyParams { theta: t.clone() })
                .unwrap_or_else(|_| DVector::from_element(t.len(), f64::NAN))
        },
        &theta.theta,
        h,
    )?;
    Ok((&jac + jac.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::random_ergodic_mdp;
    use crate::policy::random_params;

    fn single_state() -> TabularMdp {
        TabularMdp::new(1, 1, vec![0.7], vec![1.0], vec![1.0]).unwrap()
    }

    /// Action 1 always pays 1, action 0 pays 0; dynamics ignore the action.
    pub(crate) fn dominant_action() -> TabularMdp {
        let row = [0.5, 0.3, 0.2];
        let kernel: Vec<f64> = (0..6).flat_map(|_| row).collect();
        TabularMdp::new(3, 2, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0], kernel, vec![1.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn constant_reward_has_zero_bias() {
        let mut m = random_ergodic_mdp(4, 2, 0.3, 5).unwrap();
        m = TabularMdp::new(4, 2, vec![0.4; 8], m.kernel().to_vec(), m.init_dist().to_vec()).unwrap();
        let spec = PolicySpec::tabular(4, 2);
        let theta = &random_params(8, 1.0, 1, 3)[0];
        let sol = solve_average_reward(&m, &spec, theta).unwrap();
        assert!((sol.gain - 0.4).abs() < 1e-12);
        assert!(sol.v.amax() < 1e-12);
        assert!(sol.adv.amax() < 1e-12);
        assert!(exact_gradient(&m, &spec, theta).unwrap().amax() < 1e-12);
    }

    #[test]
    fn single_state_gain() {
        let m = single_state();
        let spec = PolicySpec::tabular(1, 1);
        let sol = solve_average_reward(&m, &spec, &PolicyParams::zeros(1)).unwrap();
        assert!((sol.gain - 0.7).abs() < 1e-15);
        let opt = optimal_gain(&m).unwrap();
        assert!((opt.j_star - 0.7).abs() < 1e-15);
    }

    #[test]
    fn solution_invariants_hold() {
        for seed in 0..10 {
            let m = random_ergodic_mdp(4, 3, 0.2, seed).unwrap();
            let spec = PolicySpec::tabular(4, 3);
            let theta = &random_params(12, 1.0, 1, seed)[0];
            let sol = solve_average_reward(&m, &spec, theta).unwrap();
            assert!(sol.bellman_residual(&m) <= 1e-9);
            assert!(sol.stationary.dot(&sol.v).abs() <= 1e-9);
            let table = policy_table(&spec, theta);
            for s in 0..4 {
                let vq: f64 = (0..3).map(|a| table.prob(s, a) * sol.q[(s, a)]).sum();
                assert!((vq - sol.v[s]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn single_action_gradient_is_zero() {
        let m = random_ergodic_mdp(3, 1, 0.2, 1).unwrap();
        let spec = PolicySpec::tabular(3, 1);
        let theta = PolicyParams::from_slice(&[0.2, 0.5, -1.0]);
        assert_eq!(exact_gradient(&m, &spec, &theta).unwrap().amax(), 0.0);
        let f = fisher_and_npg(&m, &spec, &theta, 1e-6).unwrap();
        assert_eq!(f.matrix.amax(), 0.0);
        assert_eq!(f.min_eig, 0.0);
        assert_eq!(f.npg_direction.amax(), 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..6 {
            let m = random_ergodic_mdp(3, 2, 0.2, 100 + seed).unwrap();
            let spec = if seed % 2 == 0 {
                PolicySpec::tabular(3, 2)
            } else {
                PolicySpec::linear_gaussian(3, 2, 3, seed)
            };
            let theta = &random_params(spec.dim(), 1.0, 1, seed)[0];
            let grad = exact_gradient(&m, &spec, theta).unwrap();
            let fd = finite_difference(
                |t| {
                    let g = solve_average_reward(&m, &spec, &PolicyParams { theta: t.clone() }).unwrap().gain;
                    DVector::from_element(1, g)
                },
                &theta.theta,
                1e-5,
            )
            .unwrap();
            let fd = fd.row(0).transpose();
            assert!((&fd - &grad).norm() <= 1e-5 * grad.norm().max(1e-8), "seed {seed}");
        }
    }

    #[test]
    fn finite_difference_is_exact_on_linear_and_quadratic() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, -1.0]);
        let theta = DVector::from_vec(vec![0.3, -0.7, 1.1]);
        let jac = finite_difference(|t| &a * t, &theta, 0.1).unwrap();
        assert!((jac - &a).amax() <= 1e-12);
        let grad = finite_difference(|t| DVector::from_element(1, t.norm_squared() / 2.0), &theta, 1e-3).unwrap();
        assert!((grad.row(0).transpose() - &theta).amax() <= 1e-9);
        let err = finite_difference(|_| DVector::from_element(1, f64::NAN), &theta, 1e-3);
        assert_eq!(err, Err(Error::NonFiniteEvaluation(0)));
    }

    #[test]
    fn fisher_on_uniform_two_by_two() {
        // Uniform kernel, theta = 0: d = (1/2, 1/2), pi = 1/2. Each state's
        // block is (1/2) * [[1/4, -1/4], [-1/4, 1/4]].
        let m = TabularMdp::new(2, 2, vec![0.1, 0.9, 0.5, 0.2], vec![0.5; 8], vec![0.5, 0.5]).unwrap();
        let spec = PolicySpec::tabular(2, 2);
        let f = fisher_and_npg(&m, &spec, &PolicyParams::zeros(4), 1e-10).unwrap();
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.125, -0.125, 0.0, 0.0, -0.125, 0.125, 0.0, 0.0, 0.0, 0.0, 0.125, -0.125, 0.0, 0.0, -0.125,
                0.125,
            ],
        );
        assert!((&f.matrix - expected).amax() <= 1e-15);
        assert!(f.min_eig.abs() <= 1e-12);
        assert!((f.min_positive_eig - 0.25).abs() <= 1e-12);
    }

    #[test]
    fn fisher_is_psd_and_npg_is_consistent() {
        let m = random_ergodic_mdp(4, 3, 0.2, 9).unwrap();
        let spec = PolicySpec::linear_gaussian(4, 3, 4, 2);
        let theta = &random_params(4, 1.0, 1, 8)[0];
        let f = fisher_and_npg(&m, &spec, theta, 0.0).unwrap();
        assert!((&f.matrix - f.matrix.transpose()).amax() <= 1e-12);
        assert!(f.min_eig >= -1e-10);
        for x in random_params(4, 1.0, 100, 4) {
            assert!(x.theta.dot(&(&f.matrix * &x.theta)) >= -1e-10);
        }
        let grad = exact_gradient(&m, &spec, theta).unwrap();
        let residual = &f.matrix * &f.npg_direction - &grad;
        assert!((&f.matrix * residual).amax() <= 1e-8);
    }

    #[test]
    fn transferred_error_vanishes_for_tabular() {
        for seed in 0..5 {
            let m = random_ergodic_mdp(3, 2, 0.2, 30 + seed).unwrap();
            let spec = PolicySpec::tabular(3, 2);
            let theta = &random_params(6, 1.0, 1, seed)[0];
            let opt = optimal_gain(&m).unwrap();
            let err = transferred_error(&m, &spec, theta, &opt.table(2), DEFAULT_RIDGE).unwrap();
            assert!(err <= 1e-6, "seed {seed}: {err}");
        }
        let m = single_state();
        let err = transferred_error(&m, &PolicySpec::tabular(1, 1), &PolicyParams::zeros(1), &PolicyTable::uniform(1, 1), 1e-10)
            .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn linear_class_has_positive_transferred_error() {
        let m = random_ergodic_mdp(4, 3, 0.2, 77).unwrap();
        let spec = PolicySpec::linear_gaussian(4, 3, 2, 5);
        let opt = optimal_gain(&m).unwrap();
        let err = transferred_error(&m, &spec, &PolicyParams::zeros(2), &opt.table(3), DEFAULT_RIDGE).unwrap();
        assert!(err > 0.0);
    }

    #[test]
    fn dominant_action_is_optimal() {
        let opt = optimal_gain(&dominant_action()).unwrap();
        assert!((opt.j_star - 1.0).abs() < 1e-12);
        assert_eq!(opt.actions, vec![1, 1, 1]);
    }

    #[test]
    fn policy_iteration_matches_enumeration() {
        for seed in 0..5 {
            let m = random_ergodic_mdp(4, 3, 0.1, 200 + seed).unwrap();
            let mut best = f64::NEG_INFINITY;
            for code in 0..81usize {
                let actions: Vec<usize> = (0..4).map(|s| (code / 3usize.pow(s as u32)) % 3).collect();
                let gain = evaluate_policy(&m, &PolicyTable::deterministic(3, &actions)).unwrap().gain;
                best = best.max(gain);
            }
            assert!((optimal_gain(&m).unwrap().j_star - best).abs() <= 1e-9);
        }
    }

    #[test]
    fn performance_difference_identity() {
        let m = random_ergodic_mdp(4, 3, 0.2, 17).unwrap();
        let spec = PolicySpec::tabular(4, 3);
        let params = random_params(12, 1.5, 10, 6);
        for pair in params.chunks(2) {
            let (p, q) = (policy_table(&spec, &pair[0]), policy_table(&spec, &pair[1]));
            let lhs = evaluate_policy(&m, &p).unwrap().gain - evaluate_policy(&m, &q).unwrap().gain;
            assert!((lhs - performance_difference_rhs(&m, &p, &q).unwrap()).abs() <= 1e-9);
        }
    }
}
