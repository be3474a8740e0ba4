use thiserror::Error;

use crate::qpsolve::QpError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("invalid design: {0}")]
    Design(String),

    #[error("invalid response pattern {pattern:?}: {reason}")]
    Pattern { pattern: Vec<u16>, reason: String },

    #[error("inestimable combination: {left:?} and {right:?} share question {question}")]
    InestimableCombination {
        left: Vec<u16>,
        right: Vec<u16>,
        question: usize,
    },

    #[error("no eligible respondents for pattern {0:?}")]
    NoEligibleRespondents(Vec<u16>),

    #[error("question {0} has no observed answers")]
    EmptyQuestion(usize),

    #[error("no records")]
    NoRecords,

    #[error("zero-probability pattern {0:?}")]
    ZeroProbabilityPattern(Vec<u16>),

    #[error("insufficient data for pattern {0:?}")]
    InsufficientData(Vec<u16>),

    #[error("invalid basis: {0}")]
    Basis(String),

    #[error("invalid mixing model: {0}")]
    Model(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("point violates per-question sum-to-one by {deviation:e} at question {question}")]
    NotOnSimplex { question: usize, deviation: f64 },

    #[error("no complete minor of size >= 2")]
    NoCompleteMinor,

    #[error("rank collapse: {0}")]
    RankCollapse(String),

    #[error("bases span different subspaces (distance {0:e})")]
    SpanMismatch(f64),

    #[error("clustering: {0}")]
    Cluster(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Qp(#[from] QpError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Input problems (bad files, bad parameters) as opposed to numerical failures.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Design(_)
                | Error::Pattern { .. }
                | Error::NoRecords
                | Error::EmptyQuestion(_)
                | Error::Basis(_)
                | Error::Model(_)
                | Error::Dimension(_)
                | Error::Config(_)
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}
