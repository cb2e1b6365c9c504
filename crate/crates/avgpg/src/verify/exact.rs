//! Deterministic suites: oracle gradients, the Phi identities, smoothness,
//! structural identities of the optimizers, and mixing diagnostics.

use std::time::Instant;

use avgpg_core::algorithms::{
    corrected_momentum_update, look_ahead, momentum_update, run_hessian_pg, run_pg_igt, schedule, RunOptions,
    ScheduleSpec, Variant,
};
use avgpg_core::chain::{induced_chain, l1_distance_profile, tail_bound, tail_sum, ChainOptions};
use avgpg_core::estimators::{grad_estimate, hessian_estimate, hessian_vector_product, scan_all, EstimatorConfig, PsiTable};
use avgpg_core::mdp::{random_ergodic_mdp, sample_trajectory};
use avgpg_core::oracle::{exact_gradient, finite_difference, gain_hessian_fd, optimal_gain, solve_average_reward};
use avgpg_core::policy::{log_prob, policy_table, random_params, score_hessian};
use avgpg_core::{math, PolicyParams, PolicySpec, TabularMdp, Trajectory};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{budget, timed, CheckReport};
use crate::solve::brute_force_gain;

/// The `i`-th member of a family of small random instances: `S` in 2..=5,
/// `A` in 2..=3, alternating tabular and linear classes.
pub fn random_instance(i: u64, salt: u64) -> (TabularMdp, PolicySpec, PolicyParams) {
    let s = 2 + (i % 4) as usize;
    let a = 2 + (i % 2) as usize;
    let seed = salt.wrapping_mul(1_000_003).wrapping_add(i);
    let m = random_ergodic_mdp(s, a, 0.2, seed).expect("generator yields ergodic MDPs");
    let spec = if (i / 2).is_multiple_of(2) {
        PolicySpec::tabular(s, a)
    } else {
        PolicySpec::linear_gaussian(s, a, 3 + (i % 2) as usize, seed)
    };
    let theta = random_params(spec.dim(), 1.0, 1, seed ^ 0x5eed).pop().unwrap();
    (m, spec, theta)
}

fn rel_err(approx: &DVector<f64>, exact: &DVector<f64>) -> f64 {
    (approx - exact).norm() / exact.norm().max(1e-8)
}

/// Exact gradient against central differences of the exact gain.
pub fn oracle_gradient_suite(instances: u64) -> Vec<CheckReport> {
    let start = Instant::now();
    let mut worst = 0.0_f64;
    let mut failures = 0;
    for i in 0..instances {
        let (m, spec, theta) = random_instance(i, 1);
        let grad = exact_gradient(&m, &spec, &theta).unwrap();
        let fd = finite_difference(
            |t| {
                let g = solve_average_reward(&m, &spec, &PolicyParams { theta: t.clone() }).map_or(f64::NAN, |s| s.gain);
                DVector::from_element(1, g)
            },
            &theta.theta,
            1e-5,
        );
        match fd {
            Ok(fd) => {
                let e = rel_err(&fd.row(0).transpose(), &grad);
                worst = worst.max(e);
                if e > 1e-5 {
                    failures += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    vec![
        CheckReport::new(
            "oracle gradient vs finite differences",
            failures == 0,
            format!("{instances} instances, max rel err {worst:.2e} <= 1e-5, {failures} failures"),
        )
        .timed(start),
        budget("oracle gradient suite", start, 10.0),
    ]
}

/// `Phi(theta, tau)` with the trajectory's frozen coefficients.
fn sampled_trajectory(m: &TabularMdp, spec: &PolicySpec, theta: &PolicyParams, len: usize, seed: u64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_trajectory(m, &policy_table(spec, theta), 0, len, 0, &mut rng)
}

/// `log p(tau, theta, rho)` written out in full, transitions included.
pub fn explicit_log_likelihood(m: &TabularMdp, spec: &PolicySpec, theta: &PolicyParams, tau: &Trajectory, rho: &[f64]) -> f64 {
    let mut total = rho[tau.steps[0].state].ln();
    for (i, st) in tau.steps.iter().enumerate() {
        total += log_prob(spec, theta, st.state, st.action);
        total += m.transition(st.state, st.action)[tau.next_state(i)].ln();
    }
    total
}

/// Signature of a candidate `hess Phi` implementation.
pub type PhiHessianFn<'a> = dyn Fn(&Trajectory, &PsiTable, &PolicySpec, &PolicyParams) -> DMatrix<f64> + 'a;

pub fn library_phi_hessian(_: &Trajectory, table: &PsiTable, spec: &PolicySpec, theta: &PolicyParams) -> DMatrix<f64> {
    table.hessian(spec, theta)
}

/// A deliberately wrong `hess Phi` that drops the outer-product term.
pub fn corrupted_phi_hessian(tau: &Trajectory, table: &PsiTable, spec: &PolicySpec, theta: &PolicyParams) -> DMatrix<f64> {
    let burn_in = tau.len() - table.psi1().len();
    let mut total = DMatrix::zeros(spec.dim(), spec.dim());
    for (i, st) in tau.steps[burn_in..].iter().enumerate() {
        let prob = math::exp(log_prob(spec, theta, st.state, st.action));
        let coef = table.psi1()[i] - table.psi2()[i] / prob;
        total += score_hessian(spec, theta, st.state, st.action) * coef;
    }
    total / table.psi1().len() as f64
}

/// Largest scaled deviation between `hess_fn` and central differences of
/// the analytic `grad Phi`, over the first `instances` random instances.
pub fn phi_hessian_deviation(hess_fn: &PhiHessianFn<'_>, instances: u64) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..instances {
        let (m, spec, theta) = random_instance(i, 2);
        let tau = sampled_trajectory(&m, &spec, &theta, 200, 100 + i);
        let cfg = EstimatorConfig::new(5, 64);
        let table = PsiTable::from_trajectory(&tau, spec.n_states(), spec.n_actions(), &cfg).unwrap();
        let fd = finite_difference(
            |t| table.gradient(&spec, &PolicyParams { theta: t.clone() }, &cfg).unwrap(),
            &theta.theta,
            1e-4,
        )
        .unwrap();
        let h = hess_fn(&tau, &table, &spec, &theta);
        worst = worst.max((fd - &h).amax() / h.amax().max(1.0));
    }
    worst
}

pub fn phi_identity_suite(instances: u64) -> Vec<CheckReport> {
    let start = Instant::now();
    let mut bit_mismatch = 0;
    let mut grad_err = 0.0_f64;
    let mut hvp_err = 0.0_f64;
    let mut logp_err = 0.0_f64;
    for i in 0..instances {
        let (m, spec, theta) = random_instance(i, 2);
        let tau = sampled_trajectory(&m, &spec, &theta, 200, 100 + i);
        let cfg = EstimatorConfig::new(5, 64);
        let table = PsiTable::from_trajectory(&tau, spec.n_states(), spec.n_actions(), &cfg).unwrap();
        let g = grad_estimate(&spec, &theta, &tau, &cfg).unwrap();
        let grad_phi = table.gradient(&spec, &theta, &cfg).unwrap();
        if g != grad_phi {
            bit_mismatch += 1;
        }

        let fd = finite_difference(
            |t| DVector::from_element(1, table.phi(&spec, &PolicyParams { theta: t.clone() })),
            &theta.theta,
            1e-5,
        )
        .unwrap();
        grad_err = grad_err.max(rel_err(&fd.row(0).transpose(), &grad_phi));

        let b = hessian_estimate(&spec, &theta, &tau, &cfg).unwrap();
        for u in random_params(spec.dim(), 1.0, 3, 7 + i) {
            let hvp = hessian_vector_product(&spec, &theta, &tau, &cfg, &u.theta).unwrap();
            hvp_err = hvp_err.max((&b * &u.theta - hvp).amax() / b.amax().max(1.0));
        }

        let rho = vec![1.0 / spec.n_states() as f64; spec.n_states()];
        let fd = finite_difference(
            |t| DVector::from_element(1, explicit_log_likelihood(&m, &spec, &PolicyParams { theta: t.clone() }, &tau, &rho)),
            &theta.theta,
            1e-5,
        )
        .unwrap();
        logp_err = logp_err.max(rel_err(&fd.row(0).transpose(), &table.logp_score(&spec, &theta)));
    }
    let hess_err = phi_hessian_deviation(&library_phi_hessian, instances);
    vec![
        CheckReport::new(
            "grad Phi equals g bit for bit",
            bit_mismatch == 0,
            format!("{bit_mismatch} mismatches over {instances} trajectories"),
        ),
        CheckReport::new("grad Phi vs finite differences of Phi", grad_err <= 1e-6, format!("max rel err {grad_err:.2e} <= 1e-6")),
        CheckReport::new(
            "hess Phi vs finite differences of grad Phi",
            hess_err <= 1e-5,
            format!("max scaled err {hess_err:.2e} <= 1e-5"),
        ),
        CheckReport::new("matrix-free HVP vs materialised B u", hvp_err <= 1e-12, format!("max scaled err {hvp_err:.2e} <= 1e-12")),
        CheckReport::new(
            "log-likelihood score vs finite differences of explicit log p",
            logp_err <= 1e-6,
            format!("max rel err {logp_err:.2e} <= 1e-6"),
        ),
    ]
    .into_iter()
    .map(|r| r.timed(start))
    .chain(std::iter::once(budget("Phi identity suite", start, 30.0)))
    .collect()
}

/// The finite-difference Hessian check must reject a corrupted formula.
pub fn hessian_mutation_check() -> CheckReport {
    let start = Instant::now();
    let dev = phi_hessian_deviation(&corrupted_phi_hessian, 6);
    CheckReport::new(
        "hess Phi check rejects corrupted formula",
        dev > 1e-5,
        format!("corrupted deviation {dev:.2e} > 1e-5"),
    )
    .timed(start)
}

/// `J* - J(bar) <= (J* - J(theta)) - grad J(theta)^T (bar - theta) + (L/2)|bar - theta|^2`
/// with `L` 1.5 times the largest finite-difference Hessian norm seen on
/// the segment.
pub fn smoothness_suite(pairs: u64) -> Vec<CheckReport> {
    timed(|| {
        let mut violations = 0;
        let mut min_margin = f64::INFINITY;
        for i in 0..pairs {
            let (m, spec, theta) = random_instance(i, 3);
            let j_star = optimal_gain(&m).unwrap().j_star;
            let mut rng = ChaCha8Rng::seed_from_u64(i);
            let dir = random_params(spec.dim(), 1.0, 1, 900 + i).pop().unwrap().theta;
            let radius: f64 = rand::Rng::gen_range(&mut rng, 0.1..1.0);
            let bar = PolicyParams { theta: &theta.theta + dir.normalize() * radius };
            let mut l_max = 0.0_f64;
            for k in 0..=10 {
                let t = k as f64 / 10.0;
                let point = PolicyParams { theta: &theta.theta * (1.0 - t) + &bar.theta * t };
                let h = gain_hessian_fd(&m, &spec, &point, 1e-4).unwrap();
                l_max = l_max.max(math::symmetric_spectral_norm(&h));
            }
            let l_emp = 1.5 * l_max;
            let sol = solve_average_reward(&m, &spec, &theta).unwrap();
            let grad = exact_gradient(&m, &spec, &theta).unwrap();
            let gain_bar = solve_average_reward(&m, &spec, &bar).unwrap().gain;
            let step = &bar.theta - &theta.theta;
            let rhs = (j_star - sol.gain) - grad.dot(&step) + 0.5 * l_emp * step.norm_squared() + 1e-6;
            let margin = rhs - (j_star - gain_bar);
            min_margin = min_margin.min(margin);
            if margin < 0.0 {
                violations += 1;
            }
        }
        vec![CheckReport::new(
            "approximate smoothness with empirical L",
            violations == 0,
            format!("{violations} violations over {pairs} pairs, min margin {min_margin:.3e}"),
        )]
    })
}

/// Coefficients recomputed from the raw scan, without the estimator types.
fn raw_psi(tau: &Trajectory, n_states: usize, burn_in: usize) -> (Vec<f64>, Vec<f64>) {
    let visits = scan_all(tau, n_states, burn_in);
    tau.steps[burn_in..]
        .iter()
        .map(|st| (-visits[st.state].mean_sum(), -visits[st.state].mean_sum_for(st.action)))
        .unzip()
}

pub fn structural_suite() -> Vec<CheckReport> {
    let mut out = Vec::new();

    out.extend(timed(|| {
        let mut broken = 0;
        for i in 0..10 {
            let (m, spec, theta) = random_instance(i, 4);
            let tau = sampled_trajectory(&m, &spec, &theta, 300, i);
            let cfg = EstimatorConfig::new(6, 64);
            let base = PsiTable::from_trajectory(&tau, spec.n_states(), spec.n_actions(), &cfg).unwrap();
            let (raw1, raw2) = raw_psi(&tau, spec.n_states(), 6);
            if base.psi1() != raw1.as_slice() || base.psi2() != raw2.as_slice() {
                broken += 1;
            }
            for other in random_params(spec.dim(), 2.0, 3, 50 + i) {
                let rep = PsiTable::from_trajectory(&tau, spec.n_states(), spec.n_actions(), &cfg)
                    .unwrap()
                    .report(&spec, &other, &cfg)
                    .unwrap();
                if rep.psi1 != base.psi1() || rep.psi2 != base.psi2() {
                    broken += 1;
                }
            }
        }
        vec![CheckReport::new("Psi invariance (bit-exact)", broken == 0, format!("{broken} mismatches over 10 trajectories x 3 parameters"))]
    }));

    out.extend(timed(|| {
        let m = random_ergodic_mdp(4, 3, 0.3, 77).unwrap();
        let spec = PolicySpec::tabular(4, 3);
        let theta0 = random_params(12, 0.3, 1, 1).pop().unwrap();
        let theta1 = random_params(12, 0.3, 1, 2).pop().unwrap();
        let cfg = EstimatorConfig::new(8, 20_000);
        let mut step_dev = 0.0_f64;
        let mut momentum_breaks = 0;
        let mut geometry_dev = 0.0_f64;
        for variant in [Variant::Igt, Variant::Hessian] {
            let sched = ScheduleSpec::new(1.0, 2.0, variant, 100, 20_000).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let run = match variant {
                Variant::Igt => run_pg_igt(&m, &spec, &sched, &cfg, &theta0, &theta1, RunOptions::default(), &mut rng),
                Variant::Hessian => run_hessian_pg(&m, &spec, &sched, &cfg, &theta0, &theta1, RunOptions::default(), &mut rng),
            }
            .unwrap();
            let mut d_prev = DVector::zeros(12);
            let mut prev = theta0.theta.clone();
            for (i, e) in run.epochs.iter().enumerate() {
                let next = run.theta_snapshots.get(i + 1).unwrap_or(&run.final_theta);
                if e.direction.norm() > 0.0 {
                    step_dev = step_dev.max(((next - &e.theta).norm() - e.gamma).abs() / e.gamma);
                }
                let expected = match &e.correction {
                    None => momentum_update(&d_prev, &e.gradient, e.eta),
                    Some(v) => corrected_momentum_update(&d_prev, v, &e.gradient, e.eta),
                };
                if expected != e.direction {
                    momentum_breaks += 1;
                }
                match &e.interpolation {
                    None => {
                        let expected = look_ahead(&e.theta, &prev, e.eta);
                        geometry_dev = geometry_dev.max((expected - &e.eval_point).amax());
                    }
                    Some((_, hat)) => {
                        let seg = (&e.theta - &prev).norm();
                        let parts = (hat - &prev).norm() + (&e.theta - hat).norm();
                        geometry_dev = geometry_dev.max((parts - seg).abs());
                    }
                }
                d_prev = e.direction.clone();
                prev = e.theta.clone();
            }
        }
        vec![
            CheckReport::new("step-norm law |theta_{k+1} - theta_k| = gamma_k", step_dev <= 1e-12, format!("max rel deviation {step_dev:.2e} (rounding only)")),
            CheckReport::new("momentum-mean identities (bit-exact)", momentum_breaks == 0, format!("{momentum_breaks} mismatching epochs")),
            CheckReport::new("look-ahead and interpolation geometry", geometry_dev <= 1e-12, format!("max deviation {geometry_dev:.2e} <= 1e-12")),
        ]
    }));

    out.extend(timed(|| {
        let mut worst = 0.0_f64;
        for (g, mu) in [(1.0, 0.5), (std::f64::consts::SQRT_2, 0.0833), (3.0, 7.0)] {
            for variant in [Variant::Igt, Variant::Hessian] {
                let s = ScheduleSpec { g, mu, variant, epoch_len: 1, epochs: 1, horizon: 1 };
                for k in 1..=1000usize {
                    let (gamma, eta) = schedule(&s, k);
                    let kk = k as f64 + 2.0;
                    let eta_ref = match variant {
                        Variant::Igt => (2.0 / kk).powf(4.0 / 5.0),
                        Variant::Hessian => 2.0 / kk,
                    };
                    worst = worst.max((gamma - 6.0 * g / (mu * kk)).abs()).max((eta - eta_ref).abs());
                }
            }
        }
        let anchors = {
            let s = ScheduleSpec { g: 1.0, mu: 0.5, variant: Variant::Hessian, epoch_len: 1, epochs: 1, horizon: 1 };
            let igt = ScheduleSpec { variant: Variant::Igt, ..s };
            schedule(&s, 1) == (4.0, 2.0 / 3.0) && (schedule(&igt, 2).1 - 0.5f64.powf(0.8)).abs() <= 1e-15
        };
        vec![CheckReport::new(
            "schedule closed forms",
            worst <= 1e-15 && anchors,
            format!("max deviation {worst:.2e} <= 1e-15, anchors {}", if anchors { "ok" } else { "wrong" }),
        )]
    }));

    out.extend(timed(|| {
        let mut worst = 0.0_f64;
        let mut missing = 0;
        for i in 0..10 {
            let m = random_ergodic_mdp(4, 3, 0.2, 3000 + i).unwrap();
            let pi = optimal_gain(&m).unwrap().j_star;
            match brute_force_gain(&m) {
                Some(j) => worst = worst.max((pi - j).abs()),
                None => missing += 1,
            }
        }
        vec![CheckReport::new(
            "policy iteration vs enumeration (10 MDPs, 4x3)",
            worst <= 1e-9 && missing == 0,
            format!("max |diff| {worst:.2e} <= 1e-9"),
        )]
    }));
    out
}

/// Geometric decay of the distance to stationarity and the tail-sum bound
/// at the burn-in `N = 7 t_mix log2 T`.
pub fn mixing_suite(chains: u64) -> Vec<CheckReport> {
    timed(|| {
        let mut geo_violations = 0;
        let mut geo_ratio = 0.0_f64;
        let mut tail_violations = 0;
        let mut tail_ratio = 0.0_f64;
        let mut closed_form_violations = 0;
        let mut skipped = 0;
        for i in 0..chains {
            let s = 2 + (i % 5) as usize;
            let a = 2 + (i % 2) as usize;
            let m = random_ergodic_mdp(s, a, 0.05 + 0.05 * (i % 6) as f64, 4000 + i).unwrap();
            let spec = PolicySpec::tabular(s, a);
            let theta = random_params(spec.dim(), 1.5, 1, 4100 + i).pop().unwrap();
            let diag = induced_chain(&m, &policy_table(&spec, &theta), &ChainOptions::default()).unwrap();
            let t_mix = diag.t_mix;
            for st in 0..s {
                let prof = l1_distance_profile(&diag.induced_kernel, &diag.stationary, st, 6 * t_mix + 1);
                for (t, dist) in prof.iter().enumerate().skip(2 * t_mix) {
                    let bound = 2.0 * 2f64.powf(-(t as f64) / t_mix as f64);
                    geo_ratio = geo_ratio.max(dist / bound);
                    if *dist > bound + 1e-12 {
                        geo_violations += 1;
                    }
                }
            }
            for horizon in [64u64, 256] {
                if (horizon as usize) < 4 * t_mix {
                    skipped += 1;
                    continue;
                }
                let burn_in = 7 * t_mix * (horizon as f64).log2().round() as usize;
                let target = (horizon as f64).powi(-6);
                let closed = tail_bound(t_mix, burn_in);
                for st in 0..s {
                    let tail = tail_sum(&diag.induced_kernel, &diag.stationary, st, burn_in, 100_000);
                    tail_ratio = tail_ratio.max(tail / target);
                    if tail > target {
                        tail_violations += 1;
                    }
                    if tail > closed {
                        closed_form_violations += 1;
                    }
                }
            }
        }
        vec![
            CheckReport::new(
                "geometric mixing |P^t(s,.) - d|_1 <= 2 * 2^(-t/t_mix)",
                geo_violations == 0,
                format!("{geo_violations} violations over {chains} chains, max ratio {geo_ratio:.3}"),
            ),
            CheckReport::new(
                "tail sum <= T^-6 at N = 7 t_mix log2 T, T in {64, 256}",
                tail_violations == 0 && closed_form_violations == 0,
                format!(
                    "{tail_violations} violations, {closed_form_violations} above closed form, max ratio {tail_ratio:.2e}, {skipped} skipped (T < 4 t_mix)"
                ),
            ),
        ]
    })
}
