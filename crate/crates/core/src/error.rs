use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("negative entry {value} at row {row}, column {col}")]
    NegativeEntry { row: usize, col: usize, value: f64 },

    #[error("row {row} of block {block} sums to zero")]
    ZeroRowSum { block: usize, row: usize },

    #[error("non-positive composition entry {value} in block {block} at row {row}, column {col}")]
    NonPositiveComposition {
        block: usize,
        row: usize,
        col: usize,
        value: f64,
    },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid value for `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("SVD did not converge for a {rows}x{cols} matrix")]
    Svd { rows: usize, cols: usize },

    #[error("noise level collapsed to {sigma:e}; the fit interpolates the data, use a larger lambda")]
    NoiseCollapse { sigma: f64 },

    #[error("ADMM diverged after {iterations} iterations (primal residual {r_primal:e}, dual residual {r_dual:e})")]
    Divergence {
        iterations: usize,
        r_primal: f64,
        r_dual: f64,
    },

    #[error("score deficient for group {group}: rank(S'X) = {rank_sx} < rank(X) = {rank_x}; decrease xi")]
    ScoreDeficient {
        group: usize,
        rank_sx: usize,
        rank_x: usize,
    },

    #[error("score projection for group {group} has not passed the feasibility check")]
    FeasibilityNotVerified { group: usize },

    #[error("the true error matrix and coefficients are required for this statistic")]
    TruthRequired,

    #[error("lambda grid is empty")]
    EmptyGrid,

    #[error("cache entry is invalid: {0}")]
    Cache(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub fn mismatch(what: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected,
            found,
        }
    }

    /// True for failures of the numerical procedures, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Svd { .. }
                | Error::NoiseCollapse { .. }
                | Error::Divergence { .. }
                | Error::ScoreDeficient { .. }
                | Error::FeasibilityNotVerified { .. }
        )
    }
}
