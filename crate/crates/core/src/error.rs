use thiserror::Error;

use crate::experiment::Arm;

/// Everything that can go wrong between reading a CSV and producing a report.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("input is empty")]
    EmptyFile,

    #[error("cluster `{0}` mixes treated and control units")]
    MixedAssignmentCluster(String),

    #[error("one experiment arm has no units")]
    EmptyArm,

    #[error("expected {expected} residuals, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("matrix is singular")]
    SingularMatrix,

    #[error("{arm} arm has {clusters} cluster(s); sample-mode moments need at least 2")]
    InsufficientClusters { arm: Arm, clusters: usize },

    #[error("{0} arm has zero mean cluster size")]
    DegenerateArm(Arm),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Stable variant name, for machine-readable diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MalformedRow { .. } => "MalformedRow",
            Error::MissingColumn(_) => "MissingColumn",
            Error::EmptyFile => "EmptyFile",
            Error::MixedAssignmentCluster(_) => "MixedAssignmentCluster",
            Error::EmptyArm => "EmptyArm",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::SingularMatrix => "SingularMatrix",
            Error::InsufficientClusters { .. } => "InsufficientClusters",
            Error::DegenerateArm(_) => "DegenerateArm",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::Io(_) => "Io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
