use thiserror::Error;

#[derive(Debug, Error)]
pub enum LodError {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("coefficient field is not symmetric on element {element}")]
    NonSymmetricField { element: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("singular matrix: zero pivot at index {pivot}")]
    SingularMatrix { pivot: usize },

    #[error("singular corrector saddle point on patch of element {element}: zero pivot at {pivot}")]
    SingularSaddlePoint { element: usize, pivot: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("missing corrector for coarse element {0}")]
    MissingCorrector(usize),

    #[error("coefficient does not support a Kacanov-type linearization")]
    KacanovUnsupported,

    #[error("non-positive trace average {0:e} in coefficient scaling")]
    NonPositiveTrace(f64),

    #[error("zero reference norm")]
    ZeroReferenceNorm,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LodError>;
