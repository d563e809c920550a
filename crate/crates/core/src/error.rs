use thiserror::Error;

/// Errors surfaced by the numerics, loss, oracle, and training layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: String,
        expected: String,
        got: String,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("label {label} out of range for {classes} classes (row {row})")]
    LabelOutOfRange {
        label: usize,
        classes: usize,
        row: usize,
    },

    #[error("backward called without a prior forward pass")]
    BackwardWithoutForward,

    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },

    #[error("numerical abort at epoch {epoch}, batch {batch}: {detail}")]
    NumericalAbort {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("malformed data at line {line}: {detail}")]
    MalformedData { line: usize, detail: String },
}

impl Error {
    fn dim_mismatch(context: &str, expected: impl ToString, got: impl ToString) -> Self {
        Error::DimMismatch {
            context: context.to_string(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// True for errors caused by bad inputs or configuration rather than by
    /// numerical breakdown mid-computation. The CLI maps the two classes to
    /// distinct exit codes.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::NonFinite { .. } | Error::NonFiniteGradient { .. } | Error::NumericalAbort { .. }
        )
    }
}

pub(crate) fn dim_mismatch(context: &str, expected: impl ToString, got: impl ToString) -> Error {
    Error::dim_mismatch(context, expected, got)
}

pub type Result<T> = std::result::Result<T, Error>;
