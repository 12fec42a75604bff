use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(String),

    #[error("weights are all zero or not finite")]
    ZeroWeights,

    #[error("all particle weights are zero at t = {t}")]
    DegenerateWeights { t: usize },

    #[error("non-finite weight at t = {t}, particle {n}")]
    NonFiniteWeight { t: usize, n: usize },

    #[error("reference trajectory has zero weight at t = {t}")]
    ReferenceIncompatible { t: usize },

    #[error("policy invariant violated at t = {t}: {reason}")]
    PolicyInvariant { t: usize, reason: String },

    #[error("non-finite regression target at t = {t}, support point {n}")]
    NonFiniteTarget { t: usize, n: usize },

    #[error("annealing stage {stage} (lambda = {lambda}) failed: {source}")]
    Stage {
        stage: usize,
        lambda: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("parameter outside support: {0}")]
    OutsideSupport(String),

    #[error("initialization failed: {0}")]
    Initialization(String),
}

impl Error {
    /// True for errors caused by bad inputs rather than numerical breakdown.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_) | Error::Dimension(_) | Error::OutsideSupport(_)
        )
    }
}
