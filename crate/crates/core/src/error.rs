use thiserror::Error;

/// Failure raised by a single model evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("input dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("system matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("epistemic parameter tau = {0} outside the accepted range [1e-6, 1]")]
    InvalidTau(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("index set mismatch: {0}")]
    IndexSetMismatch(String),
    #[error("model evaluation failed at quadrature node {node}: {source}")]
    ModelAtNode {
        node: usize,
        #[source]
        source: ModelError,
    },
    #[error("model evaluation failed at sample {sample}: {source}")]
    ModelAtSample {
        sample: u64,
        #[source]
        source: ModelError,
    },
    #[error("requested {requested} KL modes but only {max_admissible} eigenvalues are numerically positive")]
    KlTruncation {
        requested: usize,
        max_admissible: usize,
    },
    #[error("requested reduced dimension {requested} exceeds the numerical rank {rank}")]
    RankDeficient { requested: usize, rank: usize },
    #[error("partition does not cover the points exactly once (uncovered: {uncovered:?}, repeated: {repeated:?})")]
    Coverage {
        uncovered: Vec<usize>,
        repeated: Vec<usize>,
    },
    #[error("linear algebra failure: {0}")]
    Linalg(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
