use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {path} row {row}: {reason}")]
    MalformedRow {
        path: PathBuf,
        row: usize,
        reason: String,
    },
    #[error("manifest {path} row {row}: unknown label {token:?}")]
    UnknownLabel {
        path: PathBuf,
        row: usize,
        token: String,
    },
    #[error("cannot decode image {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("image has a zero dimension")]
    EmptyImage,
    #[error("class {label} has {count} members; at least 3 are needed to populate every split")]
    ClassTooSmall { label: String, count: usize },
    #[error("image side {side} is not divisible by grid size {n}")]
    NotDivisible { side: usize, n: usize },
    #[error("image is {got_w}x{got_h}, expected {want}x{want}")]
    SizeMismatch {
        want: usize,
        got_w: usize,
        got_h: usize,
    },
    #[error("training set has no {0} images")]
    MissingClass(String),
    #[error("cell ({row}, {col}) has no candidate band with lower < upper")]
    DegenerateCell { row: usize, col: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("not enough normal images: need {needed}, have {available}")]
    InsufficientNormals { needed: usize, available: usize },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
