use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("input has {got} pixels, network expects {expected}")]
    GridMismatch { expected: usize, got: usize },
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFiniteLoss { loss: f64, epoch: usize, step: usize },
    #[error("{0} fold is empty")]
    EmptyFold(&'static str),
    #[error("missing {what} target for {id}")]
    MissingTargets { what: &'static str, id: String },
    #[error("sample count {0} below minimum of 20")]
    TooFewSamples(usize),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Core(#[from] iaa_core::Error),
}
