use thiserror::Error;

/// Errors produced by the estimation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("insufficient local data: {found} positively weighted samples, need {needed}")]
    InsufficientLocalData { needed: usize, found: usize },

    #[error("solver diverged: {0}")]
    SolverDiverged(String),

    #[error("polynomial order {0} carries no gradient information (need k >= 1)")]
    OrderTooLow(usize),

    #[error("no valid gradient estimates at quantile level {tau}")]
    NoValidGradients { tau: f64 },

    #[error("every quantile level received zero weight")]
    AllWeightsZero,

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("bandwidth grid is empty")]
    EmptyGrid,

    #[error("matrix does not have full column rank")]
    RankDeficient,

    #[error("sample covariance is singular")]
    DegenerateCovariance,

    #[error("need at least two slices, each holding two observations (n = {n}, slices = {slices})")]
    TooFewSlices { n: usize, slices: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
