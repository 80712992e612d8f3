use thiserror::Error;

/// Errors produced by dataset handling, estimation, and testing routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("column `{0}` not found")]
    UnknownColumn(String),

    #[error("domain violation in column `{column}`: {detail}")]
    Domain { column: String, detail: String },

    #[error("no rows left after cleaning (all {dropped} rows dropped)")]
    EmptyAfterCleaning { dropped: usize },

    #[error("empty group `{0}`")]
    EmptyGroup(String),

    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("design matrix is rank deficient; collinear columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("under-identified model: {n_instruments} instruments for {n_endogenous} endogenous regressors")]
    UnderIdentified {
        n_instruments: usize,
        n_endogenous: usize,
    },

    #[error("model is just-identified: df = 0, over-identification test undefined")]
    JustIdentified,

    #[error("too few observations: n = {n} with {k} regressors")]
    TooFewRows { n: usize, k: usize },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("perfect separation detected in {0} fit (coefficients diverged)")]
    PerfectSeparation(&'static str),

    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("no controls within common support")]
    NoControlsInSupport,

    #[error("nearest-neighbour matching needs {k} distinct controls per treated unit but only {available} are available")]
    ControlPoolExhausted { k: usize, available: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
