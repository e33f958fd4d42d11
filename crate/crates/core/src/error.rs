use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {0}: at least 2 is required")]
    InvalidDimension(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A matrix or measurement violated a named invariant.
    #[error("{invariant} violated: {detail}")]
    Validation {
        invariant: &'static str,
        detail: String,
    },

    #[error("{name} = {value} outside [{lo}, {hi}]")]
    Range {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("invalid feature order {0}: odd harmonics need an odd order >= 1")]
    InvalidOrder(usize),

    #[error("degenerate hidden-state parameter: Tr[M M^dag] = {0:e}")]
    DegenerateParameter(f64),

    #[error("non-finite {block} at step {step}")]
    NonFinite { step: usize, block: &'static str },

    #[error("no bracket: {0}")]
    NoBracket(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(invariant: &'static str, detail: impl Into<String>) -> Self {
        Error::Validation {
            invariant,
            detail: detail.into(),
        }
    }

    /// True for errors caused by malformed user input rather than I/O or numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidDimension(_)
                | Error::Shape(_)
                | Error::Validation { .. }
                | Error::Range { .. }
                | Error::Capacity(_)
                | Error::InvalidOrder(_)
                | Error::Config(_)
                | Error::Parse(_)
        )
    }
}
