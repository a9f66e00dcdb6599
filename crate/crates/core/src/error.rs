use thiserror::Error;

/// Errors raised anywhere in the segmentation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed data: {0}")]
    Format(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("constraint set is infeasible")]
    Infeasible,

    #[error("columns {a} and {b} intersect (distance {distance:.4} mm)")]
    IntersectingColumns { a: usize, b: usize, distance: f64 },

    #[error("field line trace from vertex {vertex} hit a singularity")]
    DegenerateField { vertex: usize },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("registration is singular: {0}")]
    Singular(String),

    #[error("no intercondylar groove found ({found} of {needed} contours)")]
    NoGroove { found: usize, needed: usize },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<bincode::Error> for Error {
    fn from(e: bincode::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
