use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid geometry {width}x{height}")]
    InvalidGeometry { width: u32, height: u32 },

    #[error("invalid configuration: {0}")]
    InvalidSpec(String),

    #[error("singular fit: {0}")]
    SingularFit(String),

    #[error("label is not valid")]
    NoLabel,

    #[error("heatmap format: {0}")]
    Format(String),

    #[error("stream alignment: {0}")]
    Alignment(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("scene has no visible lane")]
    EmptyScene,

    #[error("mask {path}: {message}")]
    Mask { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
