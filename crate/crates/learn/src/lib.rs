//! Compact multi-task networks that jointly predict a lesion diagnosis and its
//! inter-annotator agreement.
//!
//! - [`network`]: convolutional backbone with regression and diagnosis heads
//! - [`loss`]: smooth-L1, focal and weighted multi-task objectives
//! - [`train`]: SGD trainer for the regression-only, diagnosis-only and joint models
//! - [`metrics`]: MAE/MSE, balanced accuracy and AUROC
//! - [`gradcheck`]: finite-difference gradient verification
//! - [`synth`]: synthetic lesions with simulated annotators

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod synth;
pub mod train;

pub use checkpoint::Checkpoint;
pub use data::{Example, FoldData};
pub use error::{Error, Result};
pub use metrics::{evaluate, EvalReport};
pub use network::{Network, NetworkConfig};
pub use train::{train, ModelKind, TrainConfig, Trainer};
