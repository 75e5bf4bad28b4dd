use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix has non-finite entries")]
    NonFinite,

    #[error("matrix is not Hermitian (deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("matrix is not skew-Hermitian (deviation {deviation:.3e})")]
    NotSkewHermitian { deviation: f64 },

    #[error("not a density matrix: {0}")]
    NotDensity(String),

    #[error("Kraus operators are not complete (deviation {deviation:.3e})")]
    NotTracePreserving { deviation: f64 },

    #[error("unknown outcome `{0}`")]
    UnknownOutcome(String),

    #[error("outcome `{0}` has no numeric value")]
    NonNumericOutcome(String),

    #[error("outcome `{outcome}` has probability {probability:.3e}; cannot condition on a null event")]
    NullEvent { outcome: String, probability: f64 },

    #[error("unknown control symbol `{0}`")]
    UnknownSymbol(String),

    #[error("time {t} outside [0, {total}]")]
    TimeOutOfRange { t: f64, total: f64 },

    #[error("need {needed} schedules, got {given}")]
    InsufficientSchedules { needed: usize, given: usize },

    #[error("operator is rank deficient (smallest eigenvalue {min_eig:.3e}, largest {max_eig:.3e})")]
    RankDeficient { min_eig: f64, max_eig: f64 },

    #[error("{samples} samples cannot feed a {nodes}-node quadrature")]
    TooFewSamples { samples: usize, nodes: usize },

    #[error("system is not observable in one step (rank {rank}, need {needed})")]
    NotObservable { rank: usize, needed: usize },

    #[error("control search exhausted after {attempts} attempts (best condition number {best_condition:.3e})")]
    SearchExhausted { attempts: usize, best_condition: f64 },

    #[error("sliding Gramian singular at t = {time} (smallest eigenvalue {min_eig:.3e})")]
    Singular { time: f64, min_eig: f64 },

    #[error("{0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
