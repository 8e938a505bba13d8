use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("matrix is reducible: {0}")]
    Reducible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("round {round}: geometric program infeasible (phase-I value {phase1_value:.3e})")]
    RoundInfeasible { round: usize, phase1_value: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
