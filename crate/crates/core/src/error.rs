use thiserror::Error;

/// Errors produced by the kinetics library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid capacity: {0}")]
    InvalidCapacity(&'static str),

    #[error("state space has {states} states, above the dense-matrix bound of {bound}")]
    DenseBoundExceeded { states: u128, bound: u128 },

    #[error("state index overflow")]
    IndexOverflow,

    #[error("state {0} is outside the state space")]
    StateOutOfRange(usize),

    #[error("invalid external state: {0}")]
    InvalidExternalState(&'static str),

    #[error("invalid profile: {0}")]
    InvalidProfile(&'static str),

    #[error("time {t} is beyond the profile end {end}")]
    BeyondProfile { t: f64, end: f64 },

    #[error("invalid parameter vector: {0}")]
    InvalidParams(&'static str),

    #[error("step {delta} is infeasible: must be below {limit} (1 / max total rate)")]
    InfeasibleStep { delta: f64, limit: f64 },

    #[error(
        "sample spacing / step = {ratio} is not a power of two; choose the step as spacing / 2^b"
    )]
    NotPowerOfTwo { ratio: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(&'static str),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(&'static str),

    #[error("singular matrix")]
    Singular,

    #[error("initial observation ({nadh}, {atp}) lies outside the capacity box")]
    InfeasibleObservation { nadh: f64, atp: f64 },

    #[error("quadratic program did not converge: {0}")]
    QpFailed(&'static str),

    #[error("invalid time series: {0}")]
    InvalidSeries(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
