use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in field `{field}`")]
    NonFinite { field: &'static str },

    #[error("{path}:{line}: malformed row: {msg}")]
    MalformedRow {
        path: String,
        line: u64,
        msg: String,
    },

    #[error("unknown class label `{0}` (expected ped, bike or static)")]
    UnknownClass(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("input mismatch: {0}")]
    InputMismatch(String),

    #[error("no candidate split within {tolerance:.0}% of the requested test fraction after {trials} trials; increase trials or relax the fraction")]
    NoViableSplit { trials: usize, tolerance: f64 },

    #[error("training failed{}: {msg}", feature.map(|f| format!(" while scoring feature {f}")).unwrap_or_default())]
    TrainingFailed { feature: Option<usize>, msg: String },

    #[error("feature catalog mismatch: {0}")]
    CatalogMismatch(String),

    #[error("io error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
