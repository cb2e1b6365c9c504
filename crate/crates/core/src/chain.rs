//! Markov-chain diagnostics for the chain a policy induces on an MDP:
//! stationary distribution, mixing time, hitting time, and the tail-sum
//! bound on the distance to stationarity.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math;
use crate::mdp::{check_ergodic, induced_kernel_flat, PolicyTable, TabularMdp};

/// Default cap on the mixing-time search.
pub const DEFAULT_T_CAP: usize = 1 << 16;

const STATIONARY_RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainOptions {
    /// Largest `t` tried when searching for the mixing time.
    pub t_cap: usize,
    /// Horizon `T` fixing the burn-in `N = 7 t_mix ceil(log2 T)` at which
    /// the tail bound is evaluated.
    pub horizon: u64,
}

impl Default for ChainOptions {
    fn default() -> Self {
        Self { t_cap: DEFAULT_T_CAP, horizon: 64 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainDiagnostics {
    /// `P^pi`, row-stochastic.
    pub induced_kernel: DMatrix<f64>,
    /// `d^pi`.
    pub stationary: DVector<f64>,
    pub t_mix: usize,
    /// `max_s 1 / d^pi(s)`.
    pub t_hit: f64,
    /// Closed-form upper bound on `max_s delta^pi(s, T)` at the configured
    /// horizon.
    pub tail_bound: f64,
}

impl ChainDiagnostics {
    /// `(4 t_mix / ln 2) 2^(-N / t_mix)`.
    pub fn tail_bound_at(&self, burn_in: usize) -> f64 {
        tail_bound(self.t_mix, burn_in)
    }

    /// `||(P^pi)^T d - d||_1`.
    pub fn stationarity_residual(&self) -> f64 {
        let d = &self.stationary;
        (self.induced_kernel.transpose() * d - d).abs().sum()
    }
}

pub fn tail_bound(t_mix: usize, burn_in: usize) -> f64 {
    let t = t_mix as f64;
    4.0 * t / core::f64::consts::LN_2 * math::powf(2.0, -(burn_in as f64) / t)
}

/// `P^pi` as a dense matrix.
pub fn induced_kernel(m: &TabularMdp, policy: &PolicyTable) -> DMatrix<f64> {
    let n = m.n_states();
    DMatrix::from_row_slice(n, n, &induced_kernel_flat(m, policy))
}

/// Solves `(P^T - I) d = 0` with one balance equation replaced by
/// `sum d = 1`.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = p.nrows();
    let mut a = p.transpose() - DMatrix::<f64>::identity(n, n);
    a.row_mut(n - 1).fill(1.0);
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let d = a.lu().solve(&b).ok_or(Error::SingularStationarySolve)?;
    if !math::all_finite(&d) {
        return Err(Error::SingularStationarySolve);
    }
    let residual = (p.transpose() * &d - &d).abs().sum();
    if residual > STATIONARY_RESIDUAL_TOL {
        return Err(Error::SingularStationarySolve);
    }
    Ok(d)
}

/// `max_s TV((P^t)(s, .), d)` for `t = 1, 2, ...` until it drops to 1/4.
pub fn mixing_time(p: &DMatrix<f64>, d: &DVector<f64>, t_cap: usize) -> Result<usize> {
    let mut power = p.clone();
    let mut gap = f64::INFINITY;
    for t in 1..=t_cap {
        gap = max_tv_to(&power, d);
        if gap <= 0.25 {
            return Ok(t);
        }
        power = &power * p;
    }
    Err(Error::MixingCapExceeded { cap: t_cap, gap })
}

fn max_tv_to(power: &DMatrix<f64>, d: &DVector<f64>) -> f64 {
    let d = d.as_slice();
    (0..power.nrows())
        .map(|s| {
            let row: Vec<f64> = power.row(s).iter().copied().collect();
            math::total_variation(&row, d)
        })
        .fold(0.0, f64::max)
}

/// Full diagnostics for the chain `policy` induces on `m`. Ergodicity of the
/// induced chain is re-verified here.
pub fn induced_chain(
    m: &TabularMdp,
    policy: &PolicyTable,
    opts: &ChainOptions,
) -> Result<ChainDiagnostics> {
    let flat = induced_kernel_flat(m, policy);
    check_ergodic(&flat, m.n_states())?;
    let p = DMatrix::from_row_slice(m.n_states(), m.n_states(), &flat);
    let stationary = stationary_distribution(&p)?;
    let t_mix = mixing_time(&p, &stationary, opts.t_cap)?;
    let t_hit = stationary.iter().map(|x| 1.0 / x).fold(0.0, f64::max);
    let tail = tail_bound(t_mix, burn_in_length(t_mix, opts.horizon));
    Ok(ChainDiagnostics { induced_kernel: p, stationary, t_mix, t_hit, tail_bound: tail })
}

/// `N = 7 t_mix ceil(log2 T)`.
pub fn burn_in_length(t_mix: usize, horizon: u64) -> usize {
    let log_t = math::ceil(math::log2(horizon.max(2) as f64)) as usize;
    7 * t_mix * log_t
}

/// L1 distances `||(P^t)(s, .) - d||_1` for `t = 0..len`, propagated as an
/// error vector `e_{t+1} = e_t P` so the values decay geometrically instead
/// of flooring at rounding noise.
pub fn l1_distance_profile(
    p: &DMatrix<f64>,
    d: &DVector<f64>,
    s: usize,
    len: usize,
) -> Vec<f64> {
    let n = p.nrows();
    let mut e: DVector<f64> = -d.clone();
    e[s] += 1.0;
    let drift = e.sum();
    e -= d * drift;
    let pt = p.transpose();
    let mut out = vec![0.0; len];
    for slot in out.iter_mut() {
        *slot = e.abs().sum();
        e = &pt * &e;
        if n > 1 {
            let drift = e.sum();
            e -= d * drift;
        }
    }
    out
}

/// Numerically summed `delta^pi(s, T) = sum_{t >= N} ||(P^t)(s,.) - d||_1`,
/// truncated once the increments fall below `1e-16` (or after `max_terms`).
pub fn tail_sum(p: &DMatrix<f64>, d: &DVector<f64>, s: usize, burn_in: usize, max_terms: usize) -> f64 {
    let pt = p.transpose();
    let mut e: DVector<f64> = -d.clone();
    e[s] += 1.0;
    let drift = e.sum();
    e -= d * drift;
    for _ in 0..burn_in {
        e = &pt * &e;
        let drift = e.sum();
        e -= d * drift;
    }
    let mut total = 0.0;
    for _ in 0..max_terms {
        let inc = e.abs().sum();
        total += inc;
        if inc < 1e-16 {
            break;
        }
        e = &pt * &e;
        let drift = e.sum();
        e -= d * drift;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> TabularMdp {
        TabularMdp::new(2, 1, vec![1.0, 0.0], vec![0.9, 0.1, 0.2, 0.8], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn uniform_kernel_mixes_in_one_step() {
        let kernel = vec![0.25; 4 * 2 * 4];
        let m = TabularMdp::new(4, 2, vec![0.5; 8], kernel, vec![0.25; 4]).unwrap();
        let table = PolicyTable::from_rows(4, 2, vec![0.9, 0.1, 0.3, 0.7, 0.5, 0.5, 0.0, 1.0]).unwrap();
        let diag = induced_chain(&m, &table, &ChainOptions::default()).unwrap();
        assert_eq!(diag.t_mix, 1);
        for x in diag.stationary.iter() {
            assert!((x - 0.25).abs() < 1e-14);
        }
        assert!((diag.t_hit - 4.0).abs() < 1e-12);
    }

    #[test]
    fn two_state_stationary() {
        let diag =
            induced_chain(&two_state(), &PolicyTable::uniform(2, 1), &ChainOptions::default()).unwrap();
        assert!((diag.stationary[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((diag.stationary[1] - 1.0 / 3.0).abs() < 1e-14);
        assert!(diag.stationarity_residual() <= 1e-10);
        assert!(diag.t_hit >= 2.0);
    }

    #[test]
    fn two_state_mixing_time_matches_brute_force() {
        // Independent powering with plain arrays.
        let p: [[f64; 2]; 2] = [[0.9, 0.1], [0.2, 0.8]];
        let d: [f64; 2] = [2.0 / 3.0, 1.0 / 3.0];
        let mut pt = p;
        let mut expected = 0;
        for t in 1..100 {
            let tv = (0..2)
                .map(|s| 0.5 * ((pt[s][0] - d[0]).abs() + (pt[s][1] - d[1]).abs()))
                .fold(0.0, f64::max);
            if tv <= 0.25 {
                expected = t;
                break;
            }
            let mut next = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    next[i][j] = pt[i][0] * p[0][j] + pt[i][1] * p[1][j];
                }
            }
            pt = next;
        }
        assert_eq!(expected, 3);
        let diag =
            induced_chain(&two_state(), &PolicyTable::uniform(2, 1), &ChainOptions::default()).unwrap();
        assert_eq!(diag.t_mix, expected);
    }

    #[test]
    fn mixing_cap_is_an_error() {
        let m = TabularMdp::new(2, 1, vec![0.0, 0.0], vec![0.999, 0.001, 0.001, 0.999], vec![0.5, 0.5])
            .unwrap();
        let opts = ChainOptions { t_cap: 10, horizon: 64 };
        assert!(matches!(
            induced_chain(&m, &PolicyTable::uniform(2, 1), &opts),
            Err(Error::MixingCapExceeded { cap: 10, .. })
        ));
    }

    #[test]
    fn periodic_policy_chain_is_rejected() {
        // Action 0 swaps, action 1 stays: uniform is ergodic, "always swap" is not.
        let kernel = vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let m = TabularMdp::new(2, 2, vec![0.0; 4], kernel, vec![0.5, 0.5]).unwrap();
        let swap = PolicyTable::deterministic(2, &[0, 0]);
        assert!(matches!(
            induced_chain(&m, &swap, &ChainOptions::default()),
            Err(Error::NotErgodic(_))
        ));
    }

    #[test]
    fn distance_profile_starts_at_point_mass() {
        let m = two_state();
        let p = induced_kernel(&m, &PolicyTable::uniform(2, 1));
        let d = stationary_distribution(&p).unwrap();
        let prof = l1_distance_profile(&p, &d, 1, 5);
        assert!((prof[0] - 4.0 / 3.0).abs() < 1e-14);
        // Eigenvalue 0.7 governs the decay.
        assert!((prof[3] - 4.0 / 3.0 * 0.343).abs() < 1e-12);
    }

    #[test]
    fn burn_in_formula() {
        assert_eq!(burn_in_length(1, 64), 42);
        assert_eq!(burn_in_length(2, 100), 98);
    }
}
