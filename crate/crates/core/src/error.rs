use thiserror::Error;

use crate::graph::Violation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("all-zero vector cannot be normalized")]
    AllZeroVector,

    #[error("KL divergence undefined: q[{index}] = 0 but p[{index}] > 0")]
    SupportMismatch { index: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("index {index} out of range 1..={len}")]
    InvalidIndex { index: usize, len: usize },

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("contradictory evidence at variable `{variable}`{}", sample.map(|n| format!(" (sample {n})")).unwrap_or_default())]
    ContradictoryEvidence {
        variable: String,
        sample: Option<usize>,
    },

    #[error("row {row} has no forward mass in the masked dataset")]
    EmptyRow { row: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid graph: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidGraph(Vec<Violation>),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short category used as the prefix of CLI error lines.
    pub fn category(&self) -> &'static str {
        match self {
            Error::AllZeroVector | Error::SupportMismatch { .. } | Error::LengthMismatch { .. } => {
                "numeric"
            }
            Error::InvalidIndex { .. } | Error::InvalidParameter(_) => "argument",
            Error::UnknownVariable(_) | Error::InvalidGraph(_) => "graph",
            Error::ContradictoryEvidence { .. } | Error::EmptyRow { .. } => "data",
            Error::Parse { .. } => "parse",
            Error::File { .. } | Error::Io(_) | Error::Csv(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
