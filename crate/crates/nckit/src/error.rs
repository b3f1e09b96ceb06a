use thiserror::Error;

/// Errors raised by nckit operations.
#[derive(Debug, Error)]
pub enum NcError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("arity mismatch: expected d = {expected}, got d = {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("level {level} is not a multiple of the centre level {s}")]
    LevelNotMultiple { level: usize, s: usize },
    #[error("evaluation budget exceeded: {needed} evaluations requested, cap is {cap}")]
    BudgetExceeded { needed: usize, cap: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("inconsistent data at word {word}: residual {residual:.3e} exceeds {tol:.3e}")]
    InconsistentData { word: String, residual: f64, tol: f64 },
    #[error("subspace dimension {found} is not the expected free rank dimension {expected}")]
    NotFreeRank { found: usize, expected: usize },
    #[error("free basis extraction failed after {retries} randomized attempts")]
    FlandersExhausted { retries: usize },
    #[error("evaluation at the centre does not vanish: max entry {residual:.3e}")]
    NonVanishing { residual: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, NcError>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(NcError::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
