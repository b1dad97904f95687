use gsimage::codecio::CodecError;
use gsimage::{InitError, ShapeError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("backward already ran on this tape; run the forward pass again")]
    BackwardTwice,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Image(#[from] ShapeError),
    #[error(transparent)]
    Init(#[from] InitError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}
