//! Inter-annotator agreement analysis for multi-annotator binary segmentations.
//!
//! - [`mask`]: loading and resampling binary masks onto a square grid
//! - [`agreement`]: pairwise Dice and exact Euclidean Hausdorff, per-image scores
//! - [`stats`]: Mann-Whitney U, Cohen's d, empirical CDFs and stochastic dominance tests
//! - [`dataset`]: manifests, stratified splits and factor-conditioned agreement tables
//! - [`io`]: CSV and JSON report formats

pub mod agreement;
pub mod dataset;
pub mod edt;
pub mod error;
pub mod io;
pub mod mask;
pub mod stats;

pub use agreement::{
    aggregate_hausdorff, aggregate_iaa, dice, hausdorff, pairwise_agreements, AgreementRecord, IaaScore,
};
pub use error::{Error, Result};
pub use mask::{load_mask, resize_nearest, BinaryMask, CanonicalGrid};

use dataset::ImageRecord;

/// Loads an image's masks, resamples them onto `grid` and computes every pairwise agreement.
pub fn image_agreements(record: &ImageRecord, grid: CanonicalGrid) -> Result<Vec<AgreementRecord>> {
    let masks = record
        .masks
        .iter()
        .map(|m| load_mask(&m.mask_path).map(|mask| resize_nearest(&mask, grid)))
        .collect::<Result<Vec<_>>>()?;
    pairwise_agreements(&masks)
}
