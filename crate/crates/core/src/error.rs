use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A numerical precondition (Hermitian symmetry, conjugate symmetry) was
    /// violated beyond tolerance.
    #[error("numerical contract violated: {0}")]
    NumericalContract(String),

    #[error("decomposition failed: {0}")]
    DecompositionFailure(String),

    #[error("numerical divergence at frame {frame}, bin {bin}, source {source_index}: {what}")]
    NumericalDivergence {
        frame: u64,
        bin: usize,
        source_index: usize,
        what: String,
    },

    #[error("degenerate steering direction at bin {bin} (source {source_index}, step {step})")]
    DegenerateDirection {
        source_index: usize,
        step: usize,
        bin: usize,
    },

    #[error("not ready: {0}")]
    NotReady(String),

    #[error("infeasible specification: {0}")]
    InfeasibleSpec(String),

    #[error("stale filter bank: generation {fresh} does not advance {current}")]
    StaleGeneration { current: u64, fresh: u64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    /// True for errors raised by the adaptive update path.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericalDivergence { .. }
                | Error::DegenerateDirection { .. }
                | Error::NumericalContract(_)
                | Error::DecompositionFailure(_)
        )
    }
}
