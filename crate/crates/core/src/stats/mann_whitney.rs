use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::Sample;

/// Largest per-group size for which the exact null distribution is used.
pub const EXACT_MAX_N: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    TwoSided,
    /// `a` tends to take larger values than `b`.
    AGreater,
    /// `a` tends to take smaller values than `b`.
    ALess,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    NormalApprox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UTestResult {
    /// `U_a = R_a - n_a (n_a + 1) / 2`: pairs with `a > b`, ties counted half.
    pub u_statistic: f64,
    pub p_value: f64,
    pub alternative: Alternative,
    pub method: Method,
    pub n_a: usize,
    pub n_b: usize,
    /// Set when every observation is identical; `p_value` is then 1.
    pub degenerate: bool,
}

/// 1-based ranks of `values`, ties sharing the mean of their positions.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Number of orderings of `n_a` + `n_b` distinct values yielding each `U_a = 0..=n_a*n_b`.
pub fn exact_u_distribution(n_a: usize, n_b: usize) -> Vec<u64> {
    // counts[m][n][u] via f(m, n, u) = f(m-1, n, u-n) + f(m, n-1, u),
    // conditioning on whether the largest value belongs to a or b.
    let max_u = n_a * n_b;
    let mut prev_row: Vec<Vec<u64>> = (0..=n_b).map(|_| one_at_zero(max_u)).collect();
    for _ in 1..=n_a {
        let mut row: Vec<Vec<u64>> = Vec::with_capacity(n_b + 1);
        row.push(one_at_zero(max_u));
        for n in 1..=n_b {
            let mut counts = vec![0u64; max_u + 1];
            for u in 0..=max_u {
                let largest_in_a = if u >= n { prev_row[n][u - n] } else { 0 };
                counts[u] = largest_in_a + row[n - 1][u];
            }
            row.push(counts);
        }
        prev_row = row;
    }
    prev_row.swap_remove(n_b)
}

fn one_at_zero(len: usize) -> Vec<u64> {
    let mut v = vec![0u64; len + 1];
    v[0] = 1;
    v
}

/// Mann-Whitney U test with automatic method selection: exact when both groups
/// have at most [`EXACT_MAX_N`] observations and there are no ties, otherwise a
/// tie-corrected normal approximation with continuity correction.
pub fn mann_whitney(a: &Sample, b: &Sample, alternative: Alternative) -> UTestResult {
    mann_whitney_with(a, b, alternative, None)
}

/// As [`mann_whitney`], optionally forcing a method. Forcing `Exact` on tied data
/// falls back to the normal approximation.
pub fn mann_whitney_with(
    a: &Sample,
    b: &Sample,
    alternative: Alternative,
    method: Option<Method>,
) -> UTestResult {
    let (n_a, n_b) = (a.len(), b.len());
    let pooled: Vec<f64> = a.values().iter().chain(b.values()).copied().collect();
    let ranks = midranks(&pooled);
    let rank_sum_a: f64 = ranks[..n_a].iter().sum();
    let u = rank_sum_a - (n_a * (n_a + 1)) as f64 / 2.0;

    let tie_term = tie_sum(&pooled);
    let has_ties = tie_term > 0.0;
    let degenerate = pooled.iter().all(|&v| v == pooled[0]);

    let method = match method {
        Some(Method::Exact) if !has_ties => Method::Exact,
        Some(_) => Method::NormalApprox,
        None if n_a <= EXACT_MAX_N && n_b <= EXACT_MAX_N && !has_ties => Method::Exact,
        None => Method::NormalApprox,
    };

    let p_value = if degenerate {
        1.0
    } else {
        match method {
            Method::Exact => exact_p(u, n_a, n_b, alternative),
            Method::NormalApprox => normal_p(u, n_a, n_b, tie_term, alternative),
        }
    };

    UTestResult {
        u_statistic: u,
        p_value,
        alternative,
        method,
        n_a,
        n_b,
        degenerate,
    }
}

/// `sum(t^3 - t)` over tie groups.
fn tie_sum(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut total = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        total += t * t * t - t;
        i = j;
    }
    total
}

fn exact_p(u: f64, n_a: usize, n_b: usize, alternative: Alternative) -> f64 {
    let counts = exact_u_distribution(n_a, n_b);
    let total: u64 = counts.iter().sum();
    // tie-free, so u is an integer
    let u = u.round() as usize;
    let lower: u64 = counts[..=u].iter().sum();
    let upper: u64 = counts[u..].iter().sum();
    let p_less = lower as f64 / total as f64;
    let p_greater = upper as f64 / total as f64;
    match alternative {
        Alternative::ALess => p_less,
        Alternative::AGreater => p_greater,
        Alternative::TwoSided => (2.0 * p_less.min(p_greater)).min(1.0),
    }
}

fn normal_p(u: f64, n_a: usize, n_b: usize, tie_term: f64, alternative: Alternative) -> f64 {
    let (na, nb) = (n_a as f64, n_b as f64);
    let n = na + nb;
    let mean = na * nb / 2.0;
    let var = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let sd = var.sqrt();
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let p = match alternative {
        Alternative::AGreater => std_normal.sf((u - mean - 0.5) / sd),
        Alternative::ALess => std_normal.cdf((u - mean + 0.5) / sd),
        Alternative::TwoSided => 2.0 * std_normal.sf(((u - mean).abs() - 0.5) / sd),
    };
    p.clamp(0.0, 1.0)
}
