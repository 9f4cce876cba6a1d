use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("image has zero width or height")]
    ZeroSized,
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("cannot decode {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("colour channels disagree at pixel ({x}, {y}); expected a gray mask")]
    ChannelDisagreement { x: usize, y: usize },
    #[error("mask grids differ: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("Hausdorff distance is undefined when a mask is empty")]
    EmptyMask,
    #[error("need at least two masks for pairwise agreement, got {0}")]
    TooFewMasks(usize),
    #[error("no agreement records to aggregate")]
    NoRecords,
    #[error("every pair has an undefined Hausdorff distance")]
    AllHausdorffUndefined,
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("effect size undefined: pooled standard deviation is zero")]
    UndefinedEffect,
    #[error("bootstrap needs at least {min} iterations, got {got}")]
    TooFewIterations { min: usize, got: usize },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest parse error: {0}")]
    Manifest(String),
    #[error("duplicate image_id {0:?}")]
    DuplicateId(String),
    #[error("unknown {field} code {code:?} for image {image_id:?}")]
    UnknownCode {
        field: &'static str,
        code: String,
        image_id: String,
    },
    #[error("referenced file does not exist: {0}")]
    MissingFile(PathBuf),
    #[error("no IAA score for image {0:?}")]
    MissingScore(String),
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("no records")]
    EmptyInput,
}
