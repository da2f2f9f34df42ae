use thiserror::Error;

/// Errors produced by field construction, solvers and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got} in {context}")]
    ShapeMismatch {
        expected: String,
        got: String,
        context: &'static str,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid class grouping: {0}")]
    InvalidGrouping(String),

    #[error("numerical failure in {term}: {detail}")]
    Numerical { term: &'static str, detail: String },

    #[error("energy increased by more than 10% at outer iteration {iter} ({from:.6e} -> {to:.6e})")]
    EnergyDivergence {
        iter: usize,
        from: f64,
        to: f64,
        trace: Vec<crate::energy::EnergyBreakdown>,
    },

    #[error("malformed field file header: {0}")]
    MalformedHeader(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
