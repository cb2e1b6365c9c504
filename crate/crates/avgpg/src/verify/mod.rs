//! Verification suites. Each check reports a measured statistic next to its
//! threshold; failures are reported, never thrown.

use std::fmt;
use std::time::Instant;

pub mod exact;
pub mod monte_carlo;
pub mod regret;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub statistic: String,
    pub elapsed_secs: f64,
}

impl CheckReport {
    pub fn new(name: impl Into<String>, passed: bool, statistic: impl Into<String>) -> Self {
        Self { name: name.into(), passed, statistic: statistic.into(), elapsed_secs: 0.0 }
    }

    fn timed(mut self, start: Instant) -> Self {
        self.elapsed_secs = start.elapsed().as_secs_f64();
        self
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {} ({:.2}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.statistic,
            self.elapsed_secs
        )
    }
}

/// Runs `body` and stamps its wall time on every report it returns.
pub(crate) fn timed<F: FnOnce() -> Vec<CheckReport>>(body: F) -> Vec<CheckReport> {
    let start = Instant::now();
    let reports = body();
    let secs = start.elapsed().as_secs_f64();
    reports.into_iter().map(|r| CheckReport { elapsed_secs: secs, ..r }).collect()
}

/// A whole-suite time budget as its own check.
pub(crate) fn budget(name: &str, start: Instant, limit_secs: f64) -> CheckReport {
    let secs = start.elapsed().as_secs_f64();
    CheckReport::new(format!("{name} runtime"), secs <= limit_secs, format!("{secs:.1}s <= {limit_secs:.0}s"))
        .timed(start)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Fast,
    Full,
}

/// Every suite for the level; `Fast` skips the Monte-Carlo ones.
pub fn run_checks(level: Level) -> Vec<CheckReport> {
    let mut out = Vec::new();
    out.extend(exact::oracle_gradient_suite(20));
    out.extend(exact::phi_identity_suite(12));
    out.push(exact::hessian_mutation_check());
    out.extend(exact::smoothness_suite(50));
    out.extend(exact::structural_suite());
    out.extend(exact::mixing_suite(20));
    if level == Level::Full {
        out.extend(monte_carlo::advantage_suite(&monte_carlo::AdvantageSettings::default()));
        out.extend(monte_carlo::gradient_suite(&monte_carlo::GradientSettings::default()));
        out.extend(monte_carlo::hessian_suite(&monte_carlo::HessianSettings::default()));
        out.extend(regret::regret_suite(&regret::RegretSettings::default()));
    }
    out
}

/// Running mean and standard error per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub n: usize,
    sum: Vec<f64>,
    sumsq: Vec<f64>,
}

impl Moments {
    pub fn new(dim: usize) -> Self {
        Self { n: 0, sum: vec![0.0; dim], sumsq: vec![0.0; dim] }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.n += 1;
        for (i, v) in x.iter().enumerate() {
            self.sum[i] += v;
            self.sumsq[i] += v * v;
        }
    }

    pub fn merge(mut self, other: Self) -> Self {
        self.n += other.n;
        for i in 0..self.sum.len() {
            self.sum[i] += other.sum[i];
            self.sumsq[i] += other.sumsq[i];
        }
        self
    }

    pub fn mean(&self) -> Vec<f64> {
        self.sum.iter().map(|s| s / self.n as f64).collect()
    }

    /// Standard error of each mean.
    pub fn se(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.sum
            .iter()
            .zip(&self.sumsq)
            .map(|(s, q)| {
                let mean = s / n;
                ((q - n * mean * mean).max(0.0) / (n - 1.0) / n).sqrt()
            })
            .collect()
    }
}

pub(crate) fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}
