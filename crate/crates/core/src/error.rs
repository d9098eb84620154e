use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset not found: {}", .0.display())]
    DatasetNotFound(PathBuf),

    #[error("{}:{line}: {msg}", file.display())]
    Parse { file: PathBuf, line: u64, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("end of life undetermined for cell {0}: SoH never crosses the threshold")]
    EolUndetermined(String),

    #[error("degenerate IC curve: {0}")]
    DegenerateCurve(String),

    #[error("feature window not covered: {0}")]
    FeatureWindow(String),

    #[error("no positive IC slope inside the feature window")]
    SlopeUnavailable,

    #[error("correlation undefined for a constant input vector")]
    UndefinedCorrelation,

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("training failed for cell {cell}: {source}")]
    Training {
        cell: String,
        #[source]
        source: Box<Error>,
    },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by bad input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DatasetNotFound(_) | Error::Parse { .. } | Error::Validation(_) | Error::Config(_)
        )
    }
}
