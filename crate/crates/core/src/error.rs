use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("conjugate gradients did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    CgNotConverged { iterations: usize, residual: f64 },

    #[error("outer iteration {iteration}: {source}")]
    OuterIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("prior `{prior}` lacks the {capability} capability")]
    MissingCapability {
        prior: &'static str,
        capability: &'static str,
    },

    #[error("grid of {pixels} pixels exceeds the dense oracle limit of {limit}")]
    GridTooLarge { pixels: usize, limit: usize },

    #[error("step size underflow ({step:.3e}) in gradient descent line search")]
    StepUnderflow { step: f64 },

    #[error("unsupported image format: {0}")]
    UnsupportedImage(String),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dims(expected: (usize, usize, usize), actual: (usize, usize, usize)) -> Self {
        Error::DimensionMismatch {
            expected: format!("{}x{}x{}", expected.0, expected.1, expected.2),
            actual: format!("{}x{}x{}", actual.0, actual.1, actual.2),
        }
    }
}
