use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix determinant is {0}, expected 1")]
    NotUnimodular(String),
    #[error("pole: c*x + d vanishes at x = {0}")]
    Pole(f64),
    #[error("element with trace {0} is not hyperbolic")]
    NotHyperbolic(String),
    #[error("symbol intervals {0} and {1} overlap (width {2})")]
    IntervalsOverlap(usize, usize, f64),
    #[error("group needs at least two generators, got {0}")]
    TooFewGenerators(usize),
    #[error("point {0} is not in the interval of symbol {1}")]
    PointNotInInterval(f64, usize),
    #[error("inadmissible word")]
    InadmissibleWord,
    #[error("resource limit: {0}")]
    ResourceLimit(String),
    #[error("leading eigenvalue is not simple real positive: {0}")]
    NonPerron(String),
    #[error("pressure does not change sign on (0, 1)")]
    NoBracket,
    #[error("level {q} is not admissible: generated subgroup has order {order}")]
    NotAdmissible { q: u64, order: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{0} does not divide {1}")]
    NotDivisor(u64, u64),
    #[error("subgroup catalog is only available at prime levels, got {0}")]
    CatalogUnavailable(u64),
    #[error("function is not positive at every node")]
    NonPositive,
    #[error("weight set is not dense: cylinder {0} has no member")]
    NotDense(usize),
    #[error("Euler product truncation unreliable at Re(s) = {0}")]
    TruncationUnreliable(f64),
    #[error("contour passes within {0:e} of a zero; perturb the window")]
    ContourThroughZero(f64),
    #[error("word-length cap {0} cannot certify lengths up to {1}")]
    IncompleteEnumeration(usize, f64),
    #[error("outside the domain: {0}")]
    Domain(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
