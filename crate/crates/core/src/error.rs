use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },

    #[error("timestep {t} out of range {lo}..={hi}")]
    TimestepRange { t: usize, lo: usize, hi: usize },

    #[error("invalid mixture: {0}")]
    Mixture(String),

    #[error("unknown scene `{0}`")]
    UnknownScene(String),

    #[error("invalid plan: {0}")]
    Plan(String),

    #[error("invalid generator: {0}")]
    Generator(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
