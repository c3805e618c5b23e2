use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SovError {
    #[error("dimension {dim} exceeds the dense cap {cap}")]
    SizeCap { dim: usize, cap: usize },

    #[error("eigensolver did not converge (best residual {residual:e})")]
    EigFailure { residual: f64 },

    #[error("site indices must be strictly ascending and within 1..=N")]
    IndexOrder,

    #[error("degenerate reference state: {0}")]
    DegenerateReference(String),

    #[error("basis family is numerically singular (sigma_min/sigma_max = {ratio:e})")]
    SingularBasis { ratio: f64 },

    #[error("coupling matrix is numerically singular")]
    SingularGram,

    #[error("det K = {0:e} is too small to extract a coefficient")]
    DetKZero(f64),

    #[error("twist family is degenerate: {0}")]
    DegenerateFamily(String),

    #[error("zeroing an eigenvalue collides with another one")]
    SpectrumCollision,

    #[error("spectrum is not simple (relative gap {gap:e})")]
    SpectrumNotSimple { gap: f64 },

    #[error("ambiguous zero pattern at site {site}: |t1| = {value:e}")]
    AmbiguousPattern { site: usize, value: f64 },

    #[error("zero pattern unavailable for this eigenstate")]
    PatternMissing,

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("task failure: {0}")]
    TaskFailure(String),
}

pub type Result<T> = std::result::Result<T, SovError>;
