//! Two-sample statistics used to compare agreement distributions across groups.

mod dominance;
mod mann_whitney;

pub use dominance::{fosd_test, fosd_test_directed, sup_cdf_difference, FosdResult, Hypothesis, MIN_BOOTSTRAP_ITERATIONS};
pub use mann_whitney::{
    exact_u_distribution, mann_whitney, mann_whitney_with, midranks, Alternative, Method, UTestResult,
    EXACT_MAX_N,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A labelled, non-empty set of finite observations.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    values: Vec<f64>,
    label: String,
}

impl Sample {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let label = label.into();
        if values.is_empty() {
            return Err(Error::InvalidSample(format!("{label:?} is empty")));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidSample(format!("{label:?} contains {v}")));
        }
        Ok(Self { values, label })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Unbiased sample variance; zero for a single observation.
    pub fn variance(&self) -> f64 {
        let n = self.values.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        self.values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    pub(crate) fn sorted(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        v
    }
}

/// Right-continuous step function `F(x) = #{v <= x} / n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCdf {
    support: Vec<f64>,
    heights: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = self.support.partition_point(|&s| s <= x);
        if k == 0 {
            0.0
        } else {
            self.heights[k - 1]
        }
    }
}

pub fn empirical_cdf(sample: &Sample) -> EmpiricalCdf {
    let sorted = sample.sorted();
    let n = sorted.len();
    let mut support = Vec::new();
    let mut heights = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        if i + 1 < n && sorted[i + 1] == v {
            continue;
        }
        support.push(v);
        heights.push((i + 1) as f64 / n as f64);
    }
    EmpiricalCdf { support, heights }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectSize {
    pub cohens_d: f64,
    pub pooled_sd: f64,
}

/// Standardised mean difference `(mean_a - mean_b) / pooled_sd`.
pub fn cohens_d(a: &Sample, b: &Sample) -> Result<EffectSize> {
    let (na, nb) = (a.len(), b.len());
    if na < 2 || nb < 2 {
        return Err(Error::InvalidSample(format!(
            "Cohen's d needs two observations per group, got {na} and {nb}"
        )));
    }
    let pooled_var =
        ((na - 1) as f64 * a.variance() + (nb - 1) as f64 * b.variance()) / (na + nb - 2) as f64;
    let pooled_sd = pooled_var.sqrt();
    if pooled_sd == 0.0 {
        return Err(Error::UndefinedEffect);
    }
    Ok(EffectSize {
        cohens_d: (a.mean() - b.mean()) / pooled_sd,
        pooled_sd,
    })
}
