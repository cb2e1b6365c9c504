use avgpg_core::chain::{induced_chain, ChainOptions};
use avgpg_core::oracle::{evaluate_policy, optimal_gain};
use avgpg_core::{PolicyTable, TabularMdp};
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

/// Largest policy count the enumeration cross-check will attempt.
pub const ENUMERATION_LIMIT: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub j_star: f64,
    pub optimal_actions: Vec<usize>,
    pub stationary: Vec<f64>,
    pub t_mix: usize,
    pub t_hit: f64,
    /// Best gain over all deterministic policies, when small enough to list.
    pub j_star_enumerated: Option<f64>,
}

/// Maximum gain over every deterministic stationary policy. Policies whose
/// chain cannot be evaluated are skipped.
pub fn brute_force_gain(m: &TabularMdp) -> Option<f64> {
    let (ns, na) = (m.n_states(), m.n_actions());
    let count = na.checked_pow(ns as u32).filter(|c| *c <= ENUMERATION_LIMIT)?;
    let mut best = f64::NEG_INFINITY;
    let mut actions = vec![0usize; ns];
    for mut code in 0..count {
        for slot in actions.iter_mut() {
            *slot = code % na;
            code /= na;
        }
        if let Ok(sol) = evaluate_policy(m, &PolicyTable::deterministic(na, &actions)) {
            best = best.max(sol.gain);
        }
    }
    best.is_finite().then_some(best)
}

pub fn solve(m: &TabularMdp) -> Result<SolveReport, HarnessError> {
    let opt = optimal_gain(m)?;
    let diag = induced_chain(m, &opt.table(m.n_actions()), &ChainOptions::default())?;
    Ok(SolveReport {
        j_star: opt.j_star,
        optimal_actions: opt.actions,
        stationary: diag.stationary.iter().copied().collect(),
        t_mix: diag.t_mix,
        t_hit: diag.t_hit,
        j_star_enumerated: brute_force_gain(m),
    })
}

impl SolveReport {
    pub fn human(&self) -> String {
        let mut out = format!("J* = {:.12}\npi* = {:?}\n", self.j_star, self.optimal_actions);
        out += &format!("d(pi*) = {:?}\nt_mix = {}\nt_hit = {:.6}\n", self.stationary, self.t_mix, self.t_hit);
        if let Some(j) = self.j_star_enumerated {
            out += &format!("J* by enumeration = {j:.12}\n");
        }
        out
    }
}
