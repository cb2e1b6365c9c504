//! One line per acceptance criterion. Criteria listed in `KNOWN_RED` are
//! reported as failing without failing the build; any other failure, or a
//! known-red criterion turning green, exits nonzero.

use std::process::ExitCode;

use avgpg::verify::exact::{
    hessian_mutation_check, mixing_suite, oracle_gradient_suite, phi_identity_suite, smoothness_suite, structural_suite,
};
use avgpg::verify::monte_carlo::{
    advantage_suite, gradient_suite, hessian_suite, AdvantageSettings, GradientSettings, HessianSettings,
};
use avgpg::verify::regret::{regret_suite, RegretSettings};
use avgpg::verify::CheckReport;

/// Criteria that fail at desk scale; see the README for the analysis.
const KNOWN_RED: &[usize] = &[8];

fn criteria() -> Vec<(usize, &'static str, Box<dyn Fn() -> Vec<CheckReport>>)> {
    vec![
        (1, "oracle gradient", Box::new(|| oracle_gradient_suite(20))),
        (
            2,
            "Phi identities",
            Box::new(|| {
                let mut r = phi_identity_suite(12);
                r.push(hessian_mutation_check());
                r
            }),
        ),
        (3, "advantage estimator statistics", Box::new(|| advantage_suite(&AdvantageSettings::default()))),
        (4, "gradient estimator statistics", Box::new(|| gradient_suite(&GradientSettings::default()))),
        (5, "Hessian estimator unbiasedness", Box::new(|| hessian_suite(&HessianSettings::default()))),
        (6, "approximate smoothness", Box::new(|| smoothness_suite(50))),
        (7, "structural identities", Box::new(structural_suite)),
        (8, "scaled-down regret comparison", Box::new(|| regret_suite(&RegretSettings::default()))),
        (9, "mixing diagnostics", Box::new(|| mixing_suite(20))),
    ]
}

fn main() -> ExitCode {
    let mut unexpected = Vec::new();
    for (id, name, run) in criteria() {
        let reports = run();
        let passed = reports.iter().all(|r| r.passed);
        let failing: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
        let summary = if passed {
            format!("{} checks", reports.len())
        } else {
            format!("{} of {} checks failed: {}", failing.len(), reports.len(), failing.join("; "))
        };
        println!("{} criterion {id}: {name} ({summary})", if passed { "PASS" } else { "FAIL" });
        for r in &reports {
            println!("    {r}");
        }
        let known = KNOWN_RED.contains(&id);
        if passed == known {
            unexpected.push(id);
        }
    }
    if unexpected.is_empty() {
        println!("acceptance: all criteria as expected (known red: {KNOWN_RED:?})");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: unexpected outcome for criteria {unexpected:?}");
        ExitCode::FAILURE
    }
}
