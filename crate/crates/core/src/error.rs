use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the mapping pipeline.
#[derive(Debug, Error)]
pub enum MapError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("parse error in {context} at {location}: {message}")]
    Parse {
        context: String,
        location: String,
        message: String,
    },

    #[error("scan {0} contains no points")]
    EmptyScan(String),

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("point {0:?} lies outside the field domain")]
    OutOfDomain([f64; 3]),

    #[error("submap lattices are not aligned")]
    Misaligned,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<MapError>,
    },
}

impl MapError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        MapError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(
        context: impl Into<String>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        MapError::Parse {
            context: context.into(),
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn at_frame(self, frame: usize) -> Self {
        match self {
            e @ MapError::Frame { .. } => e,
            e => MapError::Frame {
                frame,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, MapError>;
