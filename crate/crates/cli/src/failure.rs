use std::fmt;
use std::path::Path;

use qobs::scenario::ScenarioError;
use qobs::Error;

/// Command failure, grouped by exit code.
#[derive(Debug)]
pub enum Failure {
    Validation { code: &'static str, message: String },
    Numerical { code: &'static str, message: String },
    Io { message: String },
}

impl Failure {
    pub fn code(&self) -> &'static str {
        match self {
            Failure::Validation { code, .. } | Failure::Numerical { code, .. } => code,
            Failure::Io { .. } => "io",
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Failure::Validation { code: "invalid", message: message.into() }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Failure::Io { message: format!("{}: {err}", path.display()) }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation { message, .. } | Failure::Numerical { message, .. } | Failure::Io { message } => {
                f.write_str(message)
            }
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::Validation { code: e.code(), message: e.to_string() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::RankDeficient { .. } => Failure::Numerical { code: "rank_deficient", message },
            Error::Singular { .. } => Failure::Numerical { code: "singular", message },
            Error::NotObservable { .. } => Failure::Numerical { code: "not_observable", message },
            Error::SearchExhausted { .. } => Failure::Numerical { code: "search_exhausted", message },
            Error::DimensionMismatch { .. } => Failure::Validation { code: "dimension_mismatch", message },
            Error::NotHermitian { .. } => Failure::Validation { code: "not_hermitian", message },
            _ => Failure::Validation { code: "invalid", message },
        }
    }
}
