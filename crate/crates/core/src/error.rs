use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("empty sample: no observations to fit")]
    EmptySample,

    #[error("group {label} is empty but carries a constraint coefficient")]
    EmptyGroup { label: String },

    /// `row` is the index of the first equality row that cannot be met, when known.
    #[error("infeasible problem{}", match .row { Some(r) => alloc::format!(" (violating equality row {r})"), None => String::new() })]
    Infeasible { row: Option<usize> },

    /// A named constraint of a joint fit cannot be met.
    #[error("infeasible constraint: {0}")]
    InfeasibleConstraint(String),

    #[error("solver stopped after {iterations} iterations with KKT residual {residual:e}")]
    MaxIterations { iterations: usize, residual: f64 },

    #[error("{failed} of {total} replications failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("invalid input: {0}")]
    Invalid(String),
}

macro_rules! domain {
    ($($arg:tt)*) => { $crate::Error::Domain(alloc::format!($($arg)*)) };
}
pub(crate) use domain;
