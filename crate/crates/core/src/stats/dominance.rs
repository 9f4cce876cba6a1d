//! One-sided tests of first-order stochastic dominance.
//!
//! The null `F_a(x) <= F_b(x)` for all `x` is tested with the scaled supremum
//! statistic `sqrt(n_a n_b / (n_a + n_b)) * sup_x (F_a(x) - F_b(x))`. Critical
//! values come from a bootstrap that draws both pseudo-samples from the pooled
//! data, which imposes `F_a = F_b`, the least favourable point of the null.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};

pub const MIN_BOOTSTRAP_ITERATIONS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Hypothesis {
    /// `F_a(x) <= F_b(x)` everywhere.
    ADominatesB,
    /// `F_b(x) <= F_a(x)` everywhere.
    BDominatesA,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FosdResult {
    pub statistic: f64,
    pub p_value: f64,
    pub bootstrap_iterations: usize,
    pub hypothesis: Hypothesis,
    pub seed: u64,
    pub n_a: usize,
    pub n_b: usize,
    /// All observations share one value; `p_value` is 1.
    pub degenerate: bool,
}

/// `sup_x (F_hi(x) - F_lo(x))` over the pooled support of two sorted samples.
///
/// Both step functions only jump at observed values, so the supremum over the
/// real line is attained there. The result is never negative because both
/// CDFs reach 1 at the largest pooled value.
pub fn sup_cdf_difference(sorted_a: &[f64], sorted_b: &[f64]) -> f64 {
    let (na, nb) = (sorted_a.len() as f64, sorted_b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best = 0.0f64;
    while i < sorted_a.len() || j < sorted_b.len() {
        let x = match (sorted_a.get(i), sorted_b.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        while i < sorted_a.len() && sorted_a[i] <= x {
            i += 1;
        }
        while j < sorted_b.len() && sorted_b[j] <= x {
            j += 1;
        }
        best = best.max(i as f64 / na - j as f64 / nb);
    }
    best
}

fn scaled_statistic(sorted_a: &[f64], sorted_b: &[f64]) -> f64 {
    let (na, nb) = (sorted_a.len() as f64, sorted_b.len() as f64);
    (na * nb / (na + nb)).sqrt() * sup_cdf_difference(sorted_a, sorted_b)
}

fn draw_sorted(rng: &mut ChaCha8Rng, pooled: &[f64], n: usize) -> Vec<f64> {
    let mut out: Vec<f64> = (0..n).map(|_| pooled[rng.random_range(0..pooled.len())]).collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Tests `H0: a first-order dominates b`, i.e. `F_a(x) <= F_b(x)` for all `x`.
///
/// Replicate `r` draws from its own ChaCha stream (key from `seed`, stream `r`),
/// so the result does not depend on how replicates are scheduled across threads.
pub fn fosd_test(a: &Sample, b: &Sample, iterations: usize, seed: u64) -> Result<FosdResult> {
    run(a, b, iterations, seed, Hypothesis::ADominatesB)
}

/// Runs the test for the requested direction.
pub fn fosd_test_directed(
    a: &Sample,
    b: &Sample,
    hypothesis: Hypothesis,
    iterations: usize,
    seed: u64,
) -> Result<FosdResult> {
    match hypothesis {
        Hypothesis::ADominatesB => run(a, b, iterations, seed, hypothesis),
        Hypothesis::BDominatesA => run(b, a, iterations, seed, hypothesis).map(|mut r| {
            std::mem::swap(&mut r.n_a, &mut r.n_b);
            r
        }),
    }
}

fn run(
    dominant: &Sample,
    dominated: &Sample,
    iterations: usize,
    seed: u64,
    hypothesis: Hypothesis,
) -> Result<FosdResult> {
    if iterations < MIN_BOOTSTRAP_ITERATIONS {
        return Err(Error::TooFewIterations {
            min: MIN_BOOTSTRAP_ITERATIONS,
            got: iterations,
        });
    }
    let sorted_a = dominant.sorted();
    let sorted_b = dominated.sorted();
    let (n_a, n_b) = (sorted_a.len(), sorted_b.len());
    let statistic = scaled_statistic(&sorted_a, &sorted_b);

    let first = sorted_a[0];
    let degenerate = sorted_a.iter().chain(&sorted_b).all(|&v| v == first);
    if degenerate {
        return Ok(FosdResult {
            statistic,
            p_value: 1.0,
            bootstrap_iterations: iterations,
            hypothesis,
            seed,
            n_a,
            n_b,
            degenerate,
        });
    }

    let pooled: Vec<f64> = sorted_a.iter().chain(&sorted_b).copied().collect();
    let exceed: usize = (0..iterations as u64)
        .into_par_iter()
        .map(|replicate| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(replicate);
            let star_a = draw_sorted(&mut rng, &pooled, n_a);
            let star_b = draw_sorted(&mut rng, &pooled, n_b);
            (scaled_statistic(&star_a, &star_b) >= statistic) as usize
        })
        .sum();

    Ok(FosdResult {
        statistic,
        p_value: exceed as f64 / iterations as f64,
        bootstrap_iterations: iterations,
        hypothesis,
        seed,
        n_a,
        n_b,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::empirical_cdf;
    use proptest::prelude::*;

    fn s(v: Vec<f64>) -> Sample {
        Sample::new("s", v).unwrap()
    }

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn hand_computed_statistic() {
        let r = fosd_test(&s(vec![1.0, 2.0]), &s(vec![0.0, 3.0]), 100, 0).unwrap();
        assert_eq!(r.statistic, 0.5);
    }

    #[test]
    fn shifted_grid_directions() {
        let b = grid(200);
        let a: Vec<f64> = b.iter().map(|v| v + 1.0).collect();
        // the oracle: F_a <= F_b everywhere, strictly somewhere
        let (fa, fb) = (empirical_cdf(&s(a.clone())), empirical_cdf(&s(b.clone())));
        assert!(a.iter().chain(&b).all(|&x| fa.eval(x) <= fb.eval(x)));
        assert!(a.iter().chain(&b).any(|&x| fa.eval(x) < fb.eval(x)));

        let holds = fosd_test(&s(a.clone()), &s(b.clone()), 1000, 7).unwrap();
        assert!(holds.p_value > 0.5, "{holds:?}");
        let fails = fosd_test(&s(b), &s(a), 1000, 7).unwrap();
        assert!(fails.p_value < 0.001, "{fails:?}");
    }

    #[test]
    fn equal_samples_fail_to_reject() {
        let v = grid(50);
        let r = fosd_test(&s(v.clone()), &s(v.clone()), 1000, 3).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(r.p_value >= 0.001);
        let r = fosd_test_directed(&s(v.clone()), &s(v), Hypothesis::BDominatesA, 1000, 3).unwrap();
        assert!(r.p_value >= 0.001);
    }

    #[test]
    fn too_few_iterations() {
        assert!(matches!(
            fosd_test(&s(vec![1.0]), &s(vec![2.0]), 99, 0),
            Err(Error::TooFewIterations { .. })
        ));
    }

    #[test]
    fn degenerate_constant() {
        let r = fosd_test(&s(vec![0.5; 4]), &s(vec![0.5; 9]), 100, 0).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn directed_reports_original_sizes() {
        let r = fosd_test_directed(&s(vec![1.0, 2.0]), &s(vec![0.0, 3.0, 4.0]), Hypothesis::BDominatesA, 100, 0)
            .unwrap();
        assert_eq!((r.n_a, r.n_b), (2, 3));
        assert_eq!(r.hypothesis, Hypothesis::BDominatesA);
    }

    #[test]
    fn thread_count_does_not_change_result() {
        let a = s((0..300).map(|i| ((i * 37) % 101) as f64 / 100.0).collect());
        let b = s((0..250).map(|i| ((i * 53) % 89) as f64 / 90.0).collect());
        let run_with = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| fosd_test(&a, &b, 500, 11).unwrap())
        };
        assert_eq!(run_with(1), run_with(4));
    }

    proptest! {
        #[test]
        fn sup_matches_pointwise_search(a in proptest::collection::vec(0i32..20, 1..30),
                                        b in proptest::collection::vec(0i32..20, 1..30)) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let (fa, fb) = (empirical_cdf(&s(a.clone())), empirical_cdf(&s(b.clone())));
            let oracle = a.iter().chain(&b)
                .map(|&x| fa.eval(x) - fb.eval(x))
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sa = a.clone(); sa.sort_by(f64::total_cmp);
            let mut sb = b.clone(); sb.sort_by(f64::total_cmp);
            prop_assert!((sup_cdf_difference(&sa, &sb) - oracle).abs() < 1e-12);
            // sup(F_a - F_b) = -inf(F_b - F_a)
            let inf_rev = a.iter().chain(&b)
                .map(|&x| fb.eval(x) - fa.eval(x))
                .fold(f64::INFINITY, f64::min);
            prop_assert!((oracle + inf_rev).abs() < 1e-12);
        }
    }
}
