//! Pairwise agreement between annotators' masks and per-image aggregation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edt::squared_distance_to_foreground;
use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// Raw pixel counts behind a Dice score.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OverlapCounts {
    /// |A ∩ B|
    pub intersection: usize,
    /// |A| + |B|
    pub total: usize,
}

impl OverlapCounts {
    /// `2|A∩B| / (|A|+|B|)`, with two empty masks counted as perfect agreement.
    pub fn dice(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            (2 * self.intersection) as f64 / self.total as f64
        }
    }
}

pub fn overlap_counts(a: &BinaryMask, b: &BinaryMask) -> Result<OverlapCounts> {
    a.check_same_grid(b)?;
    let mut intersection = 0;
    let mut total = 0;
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        intersection += (x && y) as usize;
        total += x as usize + y as usize;
    }
    Ok(OverlapCounts {
        intersection,
        total,
    })
}

/// Dice similarity coefficient.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    Ok(overlap_counts(a, b)?.dice())
}

/// Largest squared distance from a foreground pixel of `from` to the foreground of `to`,
/// given the squared distance transform of `to`.
fn directed_squared(from: &BinaryMask, to_dt: &[i64]) -> i64 {
    from.bits()
        .iter()
        .zip(to_dt)
        .filter(|(&b, _)| b)
        .map(|(_, &d)| d)
        .max()
        .unwrap_or(0)
}

/// Symmetric Hausdorff distance in pixels, Euclidean metric.
pub fn hausdorff(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.check_same_grid(b)?;
    let dt_a = squared_distance_to_foreground(a).ok_or(Error::EmptyMask)?;
    let dt_b = squared_distance_to_foreground(b).ok_or(Error::EmptyMask)?;
    let d2 = directed_squared(a, &dt_b).max(directed_squared(b, &dt_a));
    Ok((d2 as f64).sqrt())
}

/// Agreement between masks `mask_index_a < mask_index_b` of one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementRecord {
    pub mask_index_a: usize,
    pub mask_index_b: usize,
    pub dice: f64,
    /// `None` when either mask is empty.
    pub hausdorff: Option<f64>,
}

/// Unordered pairs `(i, j)`, `i < j`, in lexicographic order.
pub fn canonical_pairs(k: usize) -> Vec<(usize, usize)> {
    (0..k)
        .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
        .collect()
}

/// Dice and Hausdorff for every unordered pair of masks, in canonical pair order.
pub fn pairwise_agreements(masks: &[BinaryMask]) -> Result<Vec<AgreementRecord>> {
    if masks.len() < 2 {
        return Err(Error::TooFewMasks(masks.len()));
    }
    for m in &masks[1..] {
        masks[0].check_same_grid(m)?;
    }
    // One transform per mask, reused by every pair it belongs to.
    let transforms: Vec<Option<Vec<i64>>> = masks
        .par_iter()
        .map(squared_distance_to_foreground)
        .collect();
    canonical_pairs(masks.len())
        .into_par_iter()
        .map(|(i, j)| {
            let dice = overlap_counts(&masks[i], &masks[j])?.dice();
            let hausdorff = match (&transforms[i], &transforms[j]) {
                (Some(dt_i), Some(dt_j)) => {
                    let d2 = directed_squared(&masks[i], dt_j).max(directed_squared(&masks[j], dt_i));
                    Some((d2 as f64).sqrt())
                }
                _ => None,
            };
            Ok(AgreementRecord {
                mask_index_a: i,
                mask_index_b: j,
                dice,
                hausdorff,
            })
        })
        .collect()
}

/// Per-image agreement: the mean pairwise Dice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IaaScore {
    pub image_id: String,
    pub value: f64,
    pub pair_count: usize,
}

pub fn aggregate_iaa(image_id: impl Into<String>, records: &[AgreementRecord]) -> Result<IaaScore> {
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    let value = records.iter().map(|r| r.dice).sum::<f64>() / records.len() as f64;
    Ok(IaaScore {
        image_id: image_id.into(),
        value,
        pair_count: records.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HausdorffSummary {
    pub mean: f64,
    pub defined: usize,
    pub excluded: usize,
}

/// Mean of the defined pairwise Hausdorff distances.
pub fn aggregate_hausdorff(records: &[AgreementRecord]) -> Result<HausdorffSummary> {
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    let defined: Vec<f64> = records.iter().filter_map(|r| r.hausdorff).collect();
    if defined.is_empty() {
        return Err(Error::AllHausdorffUndefined);
    }
    Ok(HausdorffSummary {
        mean: defined.iter().sum::<f64>() / defined.len() as f64,
        defined: defined.len(),
        excluded: records.len() - defined.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn block(side: usize, r0: usize, c0: usize, size: usize) -> BinaryMask {
        let mut pts = Vec::new();
        for r in r0..r0 + size {
            for c in c0..c0 + size {
                pts.push((r, c));
            }
        }
        BinaryMask::from_points(side, side, &pts).unwrap()
    }

    fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> BinaryMask {
        let p = rng.random_range(0.02..0.6);
        let bits = (0..w * h).map(|_| rng.random_bool(p)).collect();
        BinaryMask::from_bits(w, h, bits).unwrap()
    }

    fn brute_hausdorff(a: &BinaryMask, b: &BinaryMask) -> f64 {
        let directed = |x: &BinaryMask, y: &BinaryMask| {
            let ys: Vec<_> = y.foreground().collect();
            x.foreground()
                .map(|(r, c)| {
                    ys.iter()
                        .map(|&(yr, yc)| {
                            let dr = r as f64 - yr as f64;
                            let dc = c as f64 - yc as f64;
                            (dr * dr + dc * dc).sqrt()
                        })
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max)
        };
        directed(a, b).max(directed(b, a))
    }

    #[test]
    fn dice_identical_and_disjoint() {
        let a = block(4, 0, 0, 2);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &block(4, 2, 2, 2)).unwrap(), 0.0);
    }

    #[test]
    fn dice_half_overlap() {
        assert_eq!(dice(&block(4, 0, 0, 2), &block(4, 0, 1, 2)).unwrap(), 0.5);
    }

    #[test]
    fn dice_empty_conventions() {
        let e = BinaryMask::empty(3, 3).unwrap();
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert_eq!(dice(&e, &block(3, 0, 0, 1)).unwrap(), 0.0);
    }

    #[test]
    fn dice_dimension_mismatch() {
        let a = BinaryMask::empty(3, 3).unwrap();
        let b = BinaryMask::empty(3, 4).unwrap();
        assert!(matches!(dice(&a, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn hausdorff_examples() {
        let a = block(6, 1, 1, 3);
        assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
        let p = BinaryMask::from_points(5, 4, &[(0, 0)]).unwrap();
        let q = BinaryMask::from_points(5, 4, &[(3, 4)]).unwrap();
        assert_eq!(hausdorff(&p, &q).unwrap(), 5.0);
        let q = BinaryMask::from_points(5, 4, &[(0, 0), (0, 3)]).unwrap();
        assert_eq!(hausdorff(&p, &q).unwrap(), 3.0);
        assert_eq!(hausdorff(&q, &p).unwrap(), 3.0);
    }

    #[test]
    fn hausdorff_empty_is_error() {
        let e = BinaryMask::empty(4, 4).unwrap();
        assert!(matches!(hausdorff(&e, &block(4, 0, 0, 1)), Err(Error::EmptyMask)));
    }

    #[test]
    fn pair_counts() {
        let m = block(8, 1, 1, 3);
        assert_eq!(pairwise_agreements(&vec![m.clone(); 2]).unwrap().len(), 1);
        let recs = pairwise_agreements(&vec![m.clone(); 5]).unwrap();
        assert_eq!(recs.len(), 10);
        let pairs: Vec<_> = recs.iter().map(|r| (r.mask_index_a, r.mask_index_b)).collect();
        assert_eq!(pairs, canonical_pairs(5));
        assert!(matches!(pairwise_agreements(&[m]), Err(Error::TooFewMasks(1))));
    }

    #[test]
    fn pairwise_identical_and_disjoint() {
        let m = block(8, 0, 0, 3);
        let far = block(8, 5, 5, 3);
        let recs = pairwise_agreements(&[m.clone(), m, far]).unwrap();
        let dices: Vec<f64> = recs.iter().map(|r| r.dice).collect();
        assert_eq!(dices, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn pairwise_grid_mismatch() {
        let a = BinaryMask::full(4, 4).unwrap();
        let b = BinaryMask::full(5, 4).unwrap();
        assert!(pairwise_agreements(&[a, b]).is_err());
    }

    #[test]
    fn pairwise_marks_empty_masks_undefined() {
        let e = BinaryMask::empty(4, 4).unwrap();
        let m = block(4, 0, 0, 2);
        let recs = pairwise_agreements(&[m.clone(), e, m]).unwrap();
        let hd: Vec<_> = recs.iter().map(|r| r.hausdorff).collect();
        assert_eq!(hd, vec![None, Some(0.0), None]);
    }

    fn rec(dice: f64, hausdorff: Option<f64>) -> AgreementRecord {
        AgreementRecord {
            mask_index_a: 0,
            mask_index_b: 1,
            dice,
            hausdorff,
        }
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate_iaa("x", &[rec(1.0, None)]).unwrap().value, 1.0);
        assert_eq!(aggregate_iaa("x", &[rec(0.0, None)]).unwrap().value, 0.0);
        let s = aggregate_iaa("x", &[rec(1.0, None), rec(0.5, None), rec(0.5, None)]).unwrap();
        assert!((s.value - 2.0 / 3.0).abs() < 1e-9);
        assert_eq!(s.pair_count, 3);
        assert!(matches!(aggregate_iaa("x", &[]), Err(Error::NoRecords)));
    }

    #[test]
    fn aggregate_hausdorff_examples() {
        assert_eq!(aggregate_hausdorff(&[rec(1.0, Some(0.0))]).unwrap().mean, 0.0);
        assert_eq!(
            aggregate_hausdorff(&[rec(1.0, Some(2.0)), rec(1.0, Some(4.0))]).unwrap().mean,
            3.0
        );
        let s = aggregate_hausdorff(&[rec(1.0, Some(5.0)), rec(1.0, None)]).unwrap();
        assert_eq!((s.mean, s.defined, s.excluded), (5.0, 1, 1));
        assert!(matches!(
            aggregate_hausdorff(&[rec(0.0, None)]),
            Err(Error::AllHausdorffUndefined)
        ));
    }

    proptest! {
        #[test]
        fn metrics_symmetric_and_match_oracles(seed: u64, w in 1usize..24, h in 1usize..24) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_mask(&mut rng, w, h);
            let b = random_mask(&mut rng, w, h);
            prop_assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
            let inter = a.bits().iter().zip(b.bits()).filter(|(x, y)| **x && **y).count();
            let c = overlap_counts(&a, &b).unwrap();
            prop_assert_eq!(c.intersection, inter);
            prop_assert_eq!(c.total, a.foreground_count() + b.foreground_count());
            if !a.is_empty() && !b.is_empty() {
                let hd = hausdorff(&a, &b).unwrap();
                prop_assert_eq!(hd, hausdorff(&b, &a).unwrap());
                prop_assert!((hd - brute_hausdorff(&a, &b)).abs() < 1e-9);
                prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
                prop_assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
            }
        }

        #[test]
        fn iaa_permutation_invariant(seed: u64, k in 2usize..6) {
            use rand::seq::SliceRandom;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut masks: Vec<_> = (0..k).map(|_| random_mask(&mut rng, 10, 10)).collect();
            let before = aggregate_iaa("i", &pairwise_agreements(&masks).unwrap()).unwrap();
            masks.shuffle(&mut rng);
            let after = aggregate_iaa("i", &pairwise_agreements(&masks).unwrap()).unwrap();
            prop_assert!((before.value - after.value).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&before.value));
        }
    }
}
