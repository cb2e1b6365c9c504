use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("transition row ({state}, {action}) is not a distribution: sum = {sum}")]
    NonStochasticRow { state: usize, action: usize, sum: f64 },

    #[error("reward ({state}, {action}) = {value} is outside [0, 1]")]
    RewardOutOfRange { state: usize, action: usize, value: f64 },

    #[error("initial distribution is not a distribution: {0}")]
    InvalidInitialDistribution(String),

    #[error("chain is not ergodic: {0}")]
    NotErgodic(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("mixing time exceeds cap {cap} (TV gap {gap} > 1/4)")]
    MixingCapExceeded { cap: usize, gap: f64 },

    #[error("stationary distribution solve is singular")]
    SingularStationarySolve,

    #[error("policy iteration failed to terminate after {0} iterations")]
    NoImprovementCycle(usize),

    #[error("non-finite function evaluation at coordinate {0}")]
    NonFiniteEvaluation(usize),

    #[error("trajectory of length {len} is too short for burn-in N = {burn_in}")]
    TrajectoryTooShort { len: usize, burn_in: usize },

    #[error("pi({action}|{state}) = {prob} is below the floor {floor}")]
    ProbabilityUnderflow { state: usize, action: usize, prob: f64, floor: f64 },

    #[error("epoch of length {epoch} leaves no samples after burn-in N = {burn_in}")]
    EpochTooShort { epoch: usize, burn_in: usize },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
}

pub type Result<T> = core::result::Result<T, Error>;
