use thiserror::Error;

/// Errors surfaced by the numeric and data layers.
///
/// Shape mismatches in the hot paths (forward passes, matrix products) are
/// programmer errors and panic via `assert!`; only data-dependent failures
/// are reported through this enum.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A pivot of the Cholesky factorization was non-positive. Callers may
    /// retry with diagonal jitter before treating the matrix as indefinite.
    #[error("matrix is not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    /// An IDX file began with a magic number this loader does not know.
    #[error("bad IDX magic: {0:#010x}")]
    BadMagic(u32),

    /// An IDX file ended before the payload its header promised.
    #[error("truncated IDX file: expected {expected} payload bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },

    /// An IDX header declared dimensions whose product overflows or is
    /// implausibly large.
    #[error("IDX dimensions overflow: {0:?}")]
    DimOverflow(Vec<usize>),

    /// A training step produced a non-finite loss; the step is aborted so the
    /// caller can report divergence instead of propagating NaNs.
    #[error("non-finite loss in {context}: {value}")]
    NonFiniteLoss { context: &'static str, value: f64 },

    /// Invalid run configuration detected before any compute.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
