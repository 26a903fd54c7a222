use thiserror::Error;

use crate::data::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation failed: {0}")]
    Validation(ValidationReport),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("fold assignment error: {0}")]
    Fold(String),

    #[error("weighting error: empty cell {0}")]
    Weighting(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("selection error: {0}")]
    Selection(String),

    #[error("threshold tuning error: {0}")]
    Tuning(String),

    #[error("AUC undefined: {0}")]
    UndefinedAuc(String),

    #[error("missing answers for questions: {}", .0.join(", "))]
    MissingAnswers(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable kind, used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::Validation(_) => "validation",
            Error::Parameter(_) => "parameter",
            Error::Encoding(_) => "encoding",
            Error::Training(_) => "training",
            Error::Contract(_) => "contract",
            Error::Stratification(_) => "stratification",
            Error::Fold(_) => "fold",
            Error::Weighting(_) => "weighting",
            Error::Evaluation(_) => "evaluation",
            Error::Selection(_) => "selection",
            Error::Tuning(_) => "tuning",
            Error::UndefinedAuc(_) => "undefined_auc",
            Error::MissingAnswers(_) => "missing_answers",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
