use thiserror::Error;

use crate::solver::SolveResult;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("state space has {states} states, above the cap of {cap}")]
    StateSpaceTooLarge { states: u128, cap: u128 },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The barrier method hit its Newton-step cap; `best` is the last
    /// strictly feasible iterate.
    #[error("solver stopped after {iterations} Newton steps without converging")]
    MaxIterations {
        iterations: usize,
        best: Box<SolveResult>,
    },

    #[error("only {solved} of {total} samples solved, below the {quorum:.0}% quorum")]
    Quorum {
        solved: usize,
        total: usize,
        quorum: f64,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
