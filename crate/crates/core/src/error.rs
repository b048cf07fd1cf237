use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("SVD did not converge after {sweeps} sweeps")]
    SvdNoConvergence { sweeps: usize },

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error(
        "tall weight matrix ({rows}x{cols}) has column rank {rank} < {cols}; \
         directions outside its range cannot be recovered"
    )]
    RankDeficient {
        rows: usize,
        cols: usize,
        rank: usize,
    },

    #[error("cannot branch a box with zero width in every dimension")]
    DegenerateBox,

    #[error(
        "branch and bound node cap {cap} reached with bounds [{lower}, {upper}] \
         (gap {gap:.3e})",
        gap = upper - lower
    )]
    NodeCapExceeded { cap: usize, lower: f64, upper: f64 },

    #[error("reachability aborted at step {step}, direction {direction}: {source}")]
    ReachAborted {
        step: usize,
        direction: usize,
        #[source]
        source: std::boxed::Box<Error>,
        partial: std::boxed::Box<crate::reach::ReachResult>,
    },

    #[error("enumeration budget exceeded: {neurons} ReLU neurons (limit {limit})")]
    EnumerationBudget { neurons: usize, limit: usize },

    #[error("LP solver failure: {0}")]
    Lp(String),

    #[error("polytope is empty")]
    EmptyPolytope,

    #[error("unbounded: {0}")]
    Unbounded(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            got,
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
