use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("required GTFS file missing: {0}")]
    MissingRequiredFile(String),

    #[error("{file}: {failed} of {total} rows failed to parse")]
    MalformedRow {
        file: String,
        failed: usize,
        total: usize,
    },

    #[error("feed has no usable service information")]
    NoServiceInfo,

    #[error("could not read archive: {0}")]
    Archive(String),

    #[error("csv error in {file}: {message}")]
    Csv { file: String, message: String },

    #[error("invalid coordinate: lat {lat}, lon {lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },

    #[error("a path needs at least two points, got {0}")]
    PathTooShort(usize),

    #[error("invalid range [{from_m}, {to_m}] on a path of length {length_m} m")]
    InvalidRange {
        from_m: f64,
        to_m: f64,
        length_m: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("load weighting requires a load map")]
    LoadMapMissing,

    #[error("threshold of {threshold_m} m excludes every segment")]
    AllExcluded { threshold_m: f64 },

    #[error("total weight is zero")]
    ZeroTotalWeight,

    #[error("kernel density needs at least two distinct spacings")]
    DegenerateData,

    #[error("segment table is empty")]
    EmptyTable,

    #[error("network unavailable: {0}")]
    NetworkUnavailable(String),

    #[error("HTTP error {0}")]
    HttpError(u16),

    #[error("downloaded payload is not a zip archive")]
    NotAZip,

    #[error("malformed catalog: {0}")]
    MalformedCatalog(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
