use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure modes of a frame source.
#[derive(Debug, Error)]
pub enum SourceError {
    #[error("no frames found in {0}")]
    Empty(String),
    #[error("decoder failed for {uri}: {message}; stderr: {stderr}")]
    Decoder {
        uri: String,
        message: String,
        stderr: String,
    },
    #[error("cannot read {path}: {message}")]
    Unreadable { path: String, message: String },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid video metadata: {0}")]
    InvalidMeta(String),
    #[error("video has no frames")]
    EmptyVideo,
    #[error("requested {requested} frames from a video with {available}")]
    InsufficientFrames { requested: u64, available: u64 },
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error("bad frame index: {0}")]
    Index(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("plan violation: {0}")]
    PlanViolation(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("template error: {0}")]
    Template(String),
    #[error("endpoint error: {0}")]
    Endpoint(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("report error: {0}")]
    Report(String),
    #[error("invalid needle spec: {0}")]
    InvalidSpec(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable class name printed by the CLI and mapped to FFI status codes.
    pub fn class(&self) -> &'static str {
        match self {
            Error::InvalidPolicy(_) => "InvalidPolicy",
            Error::InvalidMeta(_) => "InvalidMeta",
            Error::EmptyVideo | Error::Source(SourceError::Empty(_)) => "EmptyVideo",
            Error::InsufficientFrames { .. } => "InsufficientFrames",
            Error::Source(_) => "SourceError",
            Error::Index(_) => "IndexError",
            Error::InvalidGeometry(_) => "InvalidGeometry",
            Error::PlanViolation(_) => "PlanViolation",
            Error::Dataset(_) => "DatasetError",
            Error::Template(_) => "TemplateError",
            Error::Endpoint(_) => "EndpointError",
            Error::Config(_) => "ConfigError",
            Error::Report(_) => "ReportError",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
        }
    }
}
