use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// LightGBM dump could not be translated. `tree` is `None` for header problems.
    #[error("lightgbm model, line {line}{}: {msg}", tree.map(|t| format!(", tree {t}")).unwrap_or_default())]
    LightGbm {
        tree: Option<usize>,
        line: usize,
        msg: String,
    },

    #[error("portable model schema violation at {path}: {msg}")]
    Schema { path: String, msg: String },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("instance has {got} values, expected {expected}")]
    Width { expected: usize, got: usize },

    #[error("inconsistent fixed values")]
    InconsistentFixed,

    #[error("instance {0:?} does not entail its own prediction at this objective scale; use a larger scale")]
    ScaleTooCoarse(Vec<f64>),

    #[error("leaf value {0} does not fit the scaled integer objective")]
    WeightOverflow(f64),

    #[error("cell enumeration needs {needed} cells, cap is {cap}")]
    CellCap { needed: u128, cap: u128 },

    #[error("ranking mismatch: {0}")]
    Ranking(String),

    #[error("class explanation artifact: {0}")]
    ClassArtifact(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by the environment (files, streams) rather than
    /// by the content of a model or dataset.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::Csv(e) => matches!(e.kind(), csv::ErrorKind::Io(_)),
            _ => false,
        }
    }
}
