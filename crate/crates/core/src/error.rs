use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed raster header {path}: {reason}")]
    Header { path: PathBuf, reason: String },

    #[error("raster payload length mismatch: expected {expected} bytes, found {found}")]
    PayloadLength { expected: usize, found: usize },

    #[error("unsupported dtype `{0}` (expected u8 or f32)")]
    Dtype(String),

    #[error("unsupported CRS `{0}`: a projected CRS in meters is required")]
    Crs(String),

    #[error("invalid geotransform: {0}")]
    Geotransform(String),

    #[error("invalid patch grid: {0}")]
    PatchGrid(String),

    #[error("invalid patch: {0}")]
    Patch(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("invalid road network: {0}")]
    Road(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("missing construction year for barn `{0}`")]
    MissingConstructionYear(String),

    #[error("road distance not computed for object")]
    RoadDistanceUnset,

    #[error("statistic undefined: {0}")]
    Undefined(String),

    #[error("invalid GeoJSON: {0}")]
    GeoJson(String),

    #[error("invalid CSV: {0}")]
    Csv(String),

    #[error(transparent)]
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
