use thiserror::Error;

/// Errors produced anywhere in the pipeline.
///
/// Variants fall into two families that the CLI maps onto distinct exit
/// statuses: validation problems with the inputs (status 2) and numeric
/// failures during fitting or decoding (status 3).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("output index {index} out of range for {outputs} outputs")]
    OutputIndex { index: usize, outputs: usize },

    #[error("schema violation at row {row}, column {column}: {message}")]
    Schema {
        row: usize,
        column: String,
        message: String,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("ill-conditioned kernel: Cholesky failed after jitter {jitter:e}")]
    IllConditioned { jitter: f64 },

    #[error(
        "non-finite log marginal likelihood at iteration {iteration}; parameters: {snapshot:?}"
    )]
    NonFiniteObjective {
        iteration: usize,
        snapshot: Vec<f64>,
    },

    #[error("emission underflow at step {step}: observation impossible under every state")]
    EmissionUnderflow { step: usize },

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("degenerate segment at sample {index}")]
    DegenerateSegment { index: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit status for this error: 2 for validation, 3 for numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::IllConditioned { .. }
            | Error::NonFiniteObjective { .. }
            | Error::EmissionUnderflow { .. }
            | Error::NotPositiveDefinite => 3,
            _ => 2,
        }
    }

    /// Short machine-readable category name.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::OutputIndex { .. } => "output_index",
            Error::Schema { .. } => "schema",
            Error::Parse { .. } => "parse",
            Error::IllConditioned { .. } => "ill_conditioned",
            Error::NonFiniteObjective { .. } => "non_finite_objective",
            Error::EmissionUnderflow { .. } => "emission_underflow",
            Error::NotPositiveDefinite => "not_positive_definite",
            Error::DegenerateSegment { .. } => "degenerate_segment",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
