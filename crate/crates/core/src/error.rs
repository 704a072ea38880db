use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidShape { op: &'static str, msg: String },

    #[error("backward needs a single-element root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("mask value {value} at index {index} is not 0 or 1")]
    NonBinaryMask { index: usize, value: f64 },

    #[error("prediction channels sum to {sum} at pixel {pixel}, expected 1")]
    NotNormalized { pixel: usize, sum: f64 },

    #[error("input {height}x{width} is not divisible by {divisor}")]
    IndivisibleInput {
        height: usize,
        width: usize,
        divisor: usize,
    },

    #[error("no gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("invalid config: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short stable tag used in machine-readable CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } | Error::InvalidShape { .. } => "shape",
            Error::NonScalarRoot(_) => "non_scalar_root",
            Error::NonBinaryMask { .. } => "non_binary_mask",
            Error::NotNormalized { .. } => "not_normalized",
            Error::IndivisibleInput { .. } => "indivisible_input",
            Error::MissingGradient(_) => "missing_gradient",
            Error::InvalidSpec(_) => "spec",
            Error::Format { .. } => "format",
            Error::Config(_) => "config",
            Error::Divergence { .. } => "divergence",
            Error::Invalid(_) => "invalid",
            Error::Io(_) => "io",
        }
    }
}
