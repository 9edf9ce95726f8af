use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "circulant embedding is not nonnegative definite for kernel {kernel} \
         (min spectrum {min:.3e}, max {max:.3e}, padded to {mx}x{my})"
    )]
    EmbeddingNotNonnegative {
        kernel: String,
        min: f64,
        max: f64,
        mx: usize,
        my: usize,
    },

    #[error("conjugate gradients did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("operation `{op}` is not supported for a {mode} covariance operator")]
    UnsupportedMode {
        op: &'static str,
        mode: &'static str,
    },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("domain violation at index {index}: value {value}")]
    Domain { index: usize, value: f64 },

    #[error("degenerate ray: source and receiver coincide at ({x}, {y})")]
    DegenerateRay { x: f64, y: f64 },

    #[error("point ({x}, {y}) lies outside the grid domain")]
    OutsideDomain { x: f64, y: f64 },

    #[error("rank collapse: every sketch column was dropped")]
    RankCollapse,

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("{0}")]
    Policy(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            got,
        }
    }
}
