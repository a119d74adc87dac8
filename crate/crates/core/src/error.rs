use thiserror::Error;

/// Errors produced by the simulation and analysis layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid shares: {0}")]
    InvalidShares(String),

    #[error("invalid protocol parameters: {0}")]
    InvalidProtocol(String),

    #[error("invalid experiment: {0}")]
    InvalidExperiment(String),

    #[error("{name} = {value} is outside its domain {domain}")]
    Domain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("reward fraction is undefined before the first block")]
    UndefinedRatio,

    #[error("{what}: size {size} exceeds the supported limit {limit}")]
    UnsupportedSize {
        what: &'static str,
        size: u64,
        limit: u64,
    },

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("continued fraction failed to converge for x={x}, alpha={alpha}, beta={beta}")]
    NoConvergence { x: f64, alpha: f64, beta: f64 },

    #[error("report decoding failed: {0}")]
    Decode(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(name: &'static str, value: f64, domain_desc: &'static str) -> Error {
    Error::Domain {
        name,
        value,
        domain: domain_desc,
    }
}
