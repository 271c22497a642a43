use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the fusion library.
#[derive(Debug, Error)]
pub enum FuseError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: expected {expected_width}x{expected_height}, got {width}x{height}")]
    DimensionMismatch {
        expected_width: usize,
        expected_height: usize,
        width: usize,
        height: usize,
    },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("flow field has no valid pixels to propagate")]
    EmptyFlow,

    #[error("invalid scene: {0}")]
    Scene(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<FuseError>,
    },

    #[error("rectangle {x},{y} {width}x{height} does not fit inside {frame_width}x{frame_height}")]
    RectOutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
        frame_width: usize,
        frame_height: usize,
    },
}

impl FuseError {
    pub fn in_stage(self, stage: &'static str) -> FuseError {
        FuseError::Stage { stage, source: Box::new(self) }
    }
}

pub type Result<T> = std::result::Result<T, FuseError>;

pub(crate) fn check_dims(
    expected: (usize, usize),
    got: (usize, usize),
) -> Result<()> {
    if expected != got {
        return Err(FuseError::DimensionMismatch {
            expected_width: expected.0,
            expected_height: expected.1,
            width: got.0,
            height: got.1,
        });
    }
    Ok(())
}
