use std::path::PathBuf;

use avgpg_core::algorithms::{epoch_length, ScheduleSpec, Variant};
use avgpg_core::chain::{burn_in_length, induced_chain, ChainOptions};
use avgpg_core::estimators::EstimatorConfig;
use avgpg_core::mdp::random_ergodic_mdp;
use avgpg_core::oracle::{fisher_and_npg, DEFAULT_RIDGE};
use avgpg_core::policy::{estimate_bounds, policy_table};
use avgpg_core::{PolicyParams, PolicySpec, TabularMdp};
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

/// An MDP written out with nested arrays: `reward[s][a]`,
/// `kernel[s][a][s']`, and an optional initial distribution (uniform if
/// omitted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpFile {
    pub reward: Vec<Vec<f64>>,
    pub kernel: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_dist: Option<Vec<f64>>,
}

impl MdpFile {
    pub fn from_mdp(m: &TabularMdp) -> Self {
        let (ns, na) = (m.n_states(), m.n_actions());
        Self {
            reward: (0..ns).map(|s| (0..na).map(|a| m.reward(s, a)).collect()).collect(),
            kernel: (0..ns).map(|s| (0..na).map(|a| m.transition(s, a).to_vec()).collect()).collect(),
            init_dist: Some(m.init_dist().to_vec()),
        }
    }

    pub fn to_mdp(&self) -> Result<TabularMdp, HarnessError> {
        let ns = self.reward.len();
        if ns == 0 {
            return Err(HarnessError::invalid("reward", "needs at least one state"));
        }
        let na = self.reward[0].len();
        if na == 0 || self.reward.iter().any(|row| row.len() != na) {
            return Err(HarnessError::invalid("reward", format!("every state needs the same positive number of actions ({na})")));
        }
        if self.kernel.len() != ns {
            return Err(HarnessError::invalid("kernel", format!("has {} states, reward has {ns}", self.kernel.len())));
        }
        for (s, per_action) in self.kernel.iter().enumerate() {
            if per_action.len() != na {
                return Err(HarnessError::invalid("kernel", format!("state {s} has {} action rows, expected {na}", per_action.len())));
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != ns {
                    return Err(HarnessError::invalid("kernel", format!("row ({s}, {a}) has {} entries, expected {ns}", row.len())));
                }
                let sum: f64 = row.iter().sum();
                if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                    return Err(HarnessError::invalid("kernel", format!("row ({s}, {a}) is not a distribution (sum {sum})")));
                }
            }
        }
        if let Some((s, a)) = self
            .reward
            .iter()
            .enumerate()
            .flat_map(|(s, row)| row.iter().enumerate().map(move |(a, r)| (s, a, *r)))
            .find(|(_, _, r)| !(0.0..=1.0).contains(r))
            .map(|(s, a, _)| (s, a))
        {
            return Err(HarnessError::invalid("reward", format!("entry ({s}, {a}) lies outside [0, 1]")));
        }
        let init = match &self.init_dist {
            Some(d) if d.len() != ns => {
                return Err(HarnessError::invalid("init_dist", format!("has {} entries, expected {ns}", d.len())))
            }
            Some(d) => d.clone(),
            None => vec![1.0 / ns as f64; ns],
        };
        let reward = self.reward.iter().flatten().copied().collect();
        let kernel = self.kernel.iter().flatten().flatten().copied().collect();
        TabularMdp::new(ns, na, reward, kernel, init).map_err(|e| match e {
            avgpg_core::Error::InvalidInitialDistribution(msg) => HarnessError::invalid("init_dist", msg),
            other => HarnessError::Core(other),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MdpSource {
    Inline {
        #[serde(flatten)]
        mdp: MdpFile,
    },
    Random { states: usize, actions: usize, smoothing: f64, seed: u64 },
}

impl MdpSource {
    pub fn build(&self) -> Result<TabularMdp, HarnessError> {
        match self {
            MdpSource::Inline { mdp } => mdp.to_mdp(),
            MdpSource::Random { states, actions, smoothing, seed } => {
                if !(0.0..=1.0).contains(smoothing) || *smoothing == 0.0 {
                    return Err(HarnessError::invalid("mdp.smoothing", "must lie in (0, 1]"));
                }
                Ok(random_ergodic_mdp(*states, *actions, *smoothing, *seed)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyConfig {
    Tabular,
    /// Explicit features `features[s][a][i]`.
    Linear { features: Vec<Vec<Vec<f64>>> },
    /// Gaussian features drawn from `seed`.
    LinearGaussian { dim: usize, seed: u64 },
}

impl PolicyConfig {
    pub fn build(&self, ns: usize, na: usize, clamp: bool) -> Result<PolicySpec, HarnessError> {
        let spec = match self {
            PolicyConfig::Tabular => PolicySpec::tabular(ns, na),
            PolicyConfig::Linear { features } => {
                let dim = features.first().and_then(|f| f.first()).map_or(0, Vec::len);
                let shape_ok = features.len() == ns
                    && features.iter().all(|per_a| per_a.len() == na && per_a.iter().all(|f| f.len() == dim));
                if dim == 0 || !shape_ok {
                    return Err(HarnessError::invalid("policy.features", format!("expected shape {ns} x {na} x d with d >= 1")));
                }
                PolicySpec::linear(ns, na, dim, features.iter().flatten().flatten().copied().collect())?
            }
            PolicyConfig::LinearGaussian { dim, seed } => {
                if *dim == 0 {
                    return Err(HarnessError::invalid("policy.dim", "must be positive"));
                }
                PolicySpec::linear_gaussian(ns, na, *dim, *seed)
            }
        };
        Ok(spec.with_logit_clamp(clamp))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Igt,
    Hessian,
    Vanilla,
}

impl Algorithm {
    /// Schedule family; the baseline shares the untransported one.
    pub fn variant(self) -> Variant {
        match self {
            Algorithm::Igt => Variant::Igt,
            Algorithm::Hessian | Algorithm::Vanilla => Variant::Hessian,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Igt => "igt",
            Algorithm::Hessian => "hessian",
            Algorithm::Vanilla => "vanilla",
        }
    }
}

fn default_c_h() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mdp: MdpSource,
    pub policy: PolicyConfig,
    pub algorithm: Algorithm,
    #[serde(rename = "T")]
    pub horizon: u64,
    #[serde(rename = "c_H", default = "default_c_h")]
    pub c_h: f64,
    #[serde(rename = "N_override", default)]
    pub n_override: Option<usize>,
    #[serde(rename = "G_override", default)]
    pub g_override: Option<f64>,
    #[serde(default)]
    pub mu_override: Option<f64>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub oracle_logging: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub theta1: Option<Vec<f64>>,
    #[serde(default)]
    pub pi_floor: f64,
    #[serde(default = "default_true")]
    pub logit_clamp: bool,
}

/// Every derived quantity a run needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedParams {
    #[serde(rename = "H")]
    pub epoch_len: usize,
    #[serde(rename = "K")]
    pub epochs: usize,
    #[serde(rename = "N")]
    pub burn_in: usize,
    #[serde(rename = "G")]
    pub g: f64,
    pub mu: f64,
    pub gamma_1: f64,
    pub eta_1: f64,
    #[serde(rename = "c_H")]
    pub c_h: f64,
    pub t_mix: usize,
    pub t_hit: f64,
}

#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    pub mdp: TabularMdp,
    pub spec: PolicySpec,
    pub theta0: PolicyParams,
    pub theta1: PolicyParams,
    pub schedule: ScheduleSpec,
    pub estimator: EstimatorConfig,
    pub params: ResolvedParams,
}

fn parse_theta(field: &str, values: &Option<Vec<f64>>, dim: usize, fallback: &PolicyParams) -> Result<PolicyParams, HarnessError> {
    match values {
        None => Ok(fallback.clone()),
        Some(v) if v.len() != dim => Err(HarnessError::invalid(field, format!("has length {}, policy dimension is {dim}", v.len()))),
        Some(v) if v.iter().any(|x| !x.is_finite()) => Err(HarnessError::invalid(field, "entries must be finite")),
        Some(v) => Ok(PolicyParams::from_slice(v)),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text).map_err(HarnessError::from_serde)?;
        Ok(cfg)
    }

    /// Builds the MDP and policy class and resolves `H, K, N, G, mu` from
    /// the chain at `theta0` unless overridden.
    pub fn resolve(&self) -> Result<ResolvedExperiment, HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::invalid("seeds", "must not be empty"));
        }
        if self.horizon < 2 {
            return Err(HarnessError::invalid("T", "must be at least 2"));
        }
        if !(self.c_h > 0.0 && self.c_h.is_finite()) {
            return Err(HarnessError::invalid("c_H", "must be positive"));
        }
        if !(self.pi_floor >= 0.0 && self.pi_floor < 1.0) {
            return Err(HarnessError::invalid("pi_floor", "must lie in [0, 1)"));
        }
        let mdp = self.mdp.build()?;
        let spec = self.policy.build(mdp.n_states(), mdp.n_actions(), self.logit_clamp)?;
        let zero = PolicyParams::zeros(spec.dim());
        let theta0 = parse_theta("theta0", &self.theta0, spec.dim(), &zero)?;
        let theta1 = parse_theta("theta1", &self.theta1, spec.dim(), &theta0)?;

        let diag = induced_chain(&mdp, &policy_table(&spec, &theta0), &ChainOptions { horizon: self.horizon, ..Default::default() })?;
        let burn_in = match self.n_override {
            Some(0) => return Err(HarnessError::invalid("N_override", "must be positive")),
            Some(n) => n,
            None => burn_in_length(diag.t_mix, self.horizon),
        };
        let variant = self.algorithm.variant();
        let epoch_len = epoch_length(variant, diag.t_mix, diag.t_hit, self.horizon, self.c_h);
        let needed = match self.algorithm {
            Algorithm::Hessian => 2 * (burn_in + 1),
            _ => burn_in + 1,
        };
        if epoch_len < needed {
            return Err(HarnessError::invalid(
                "c_H",
                format!("epoch length H = {epoch_len} is too short for N = {burn_in} (need H >= {needed})"),
            ));
        }
        if epoch_len as u64 > self.horizon {
            return Err(HarnessError::invalid("c_H", format!("epoch length H = {epoch_len} exceeds T = {}", self.horizon)));
        }
        let g = match self.g_override {
            Some(g) if !(g > 0.0 && g.is_finite()) => return Err(HarnessError::invalid("G_override", "must be positive")),
            Some(g) => g,
            None => estimate_bounds(&spec, std::slice::from_ref(&theta0)).g,
        };
        let mu = match self.mu_override {
            Some(mu) if !(mu > 0.0 && mu.is_finite()) => return Err(HarnessError::invalid("mu_override", "must be positive")),
            Some(mu) => mu,
            None => {
                let fisher = fisher_and_npg(&mdp, &spec, &theta0, DEFAULT_RIDGE)?;
                // Softmax parameterisations always have a null direction, so
                // the smallest eigenvalue on its complement is used.
                if fisher.min_eig > 1e-12 {
                    fisher.min_eig
                } else {
                    fisher.min_positive_eig
                }
            }
        };
        if !(g > 0.0) {
            return Err(HarnessError::invalid("G_override", "measured score bound is zero; supply G_override"));
        }
        if !(mu > 0.0) {
            return Err(HarnessError::invalid("mu_override", "measured Fisher eigenvalue is zero; supply mu_override"));
        }
        let schedule = ScheduleSpec::new(g, mu, variant, epoch_len, self.horizon)?;
        let (gamma_1, eta_1) = avgpg_core::algorithms::schedule(&schedule, 1);
        let estimator = EstimatorConfig { burn_in, horizon: self.horizon, pi_floor: self.pi_floor };
        let params = ResolvedParams {
            epoch_len,
            epochs: schedule.epochs,
            burn_in,
            g,
            mu,
            gamma_1,
            eta_1,
            c_h: self.c_h,
            t_mix: diag.t_mix,
            t_hit: diag.t_hit,
        };
        Ok(ResolvedExperiment { mdp, spec, theta0, theta1, schedule, estimator, params })
    }
}
