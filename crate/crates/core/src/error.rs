use thiserror::Error;

/// Errors produced anywhere in the solver pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid grid model: {0}")]
    Model(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("split error on row {row}: alpha {alpha} is below the spectral bound {bound}")]
    Split { row: usize, alpha: f64, bound: f64 },

    #[error("solver error: {0}")]
    Solver(String),

    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:e})")]
    PowerFlow { iterations: usize, mismatch: f64 },

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
