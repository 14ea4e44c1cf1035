use thiserror::Error;

use crate::tree::ValidationReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed tree: {0}")]
    MalformedTree(String),

    #[error("invalid tree: {0}")]
    InvalidTree(ValidationReport),

    #[error("process has no value at node {node}")]
    MissingValue { node: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid stopping time: some path does not hit the stop set exactly once")]
    InvalidStoppingTime,

    #[error("no value supplied for stop node {node}")]
    MissingStopValue { node: u64 },

    /// The opportunity process vanishes somewhere, so neither the mean value
    /// process nor a state price density exists.
    #[error("LOP failure: opportunity process vanishes at nodes {nodes:?}")]
    LopFailure { nodes: Vec<u64> },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("frontier collapsed: mean {mean} infeasible, only {value} is attainable")]
    FrontierCollapsed { mean: f64, value: f64 },

    #[error("Sharpe hypothesis violated at stop node {node}: zero hedging error but price differs from mean value")]
    SharpeHypothesis { node: u64 },

    #[error("oracle size guard exceeded: {unknowns} unknowns (limit {limit})")]
    OracleTooLarge { unknowns: usize, limit: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
