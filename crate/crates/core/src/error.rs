use thiserror::Error;

/// Errors raised by shape-checked numerical operations.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ShapeError {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Mismatch { expected: String, actual: String },
    #[error("buffer length {actual} does not match {width}x{height}x{channels}")]
    BadLength {
        width: usize,
        height: usize,
        channels: usize,
        actual: usize,
    },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    Channels(usize),
}

/// Errors raised by position initialization and sampling.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum InitError {
    #[error("heatmap has no positive mass; cannot normalize into a sampling distribution")]
    ZeroMass,
    #[error("heatmap contains a negative or non-finite value at cell ({x}, {y})")]
    InvalidValue { x: usize, y: usize },
    #[error("requested zero samples")]
    ZeroCount,
    #[error("image must be non-empty, got {width}x{height}")]
    EmptyImage { width: usize, height: usize },
    #[error("uniform floor must lie in [0, 1], got {0}")]
    BadFloor(f64),
}
