//! Regression, diagnosis and weighted multi-task objectives.

use crate::network::softmax;

pub const DEFAULT_BETA: f64 = 1.0;
pub const DEFAULT_GAMMA: f64 = 2.0;
/// Lower clamp on the true-class probability.
pub const PROB_EPS: f64 = 1e-7;

/// Smooth-L1 of the residual `z - z_hat`.
pub fn smooth_l1(z: f64, z_hat: f64, beta: f64) -> f64 {
    let d = z - z_hat;
    if d.abs() < beta {
        0.5 * d * d / beta
    } else {
        d.abs() - 0.5 * beta
    }
}

/// Derivative of [`smooth_l1`] wrt `z_hat`. At `|d| == beta` the quadratic branch is used.
pub fn smooth_l1_grad(z: f64, z_hat: f64, beta: f64) -> f64 {
    let d = z - z_hat;
    if d.abs() <= beta {
        -d / beta
    } else {
        -d.signum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FocalValue {
    pub loss: f64,
    /// The true-class probability was below [`PROB_EPS`] and was clamped.
    pub clamped: bool,
}

/// Focal loss of class `y` under the probability vector `probs`.
pub fn focal_loss(y: usize, probs: &[f64], gamma: f64) -> FocalValue {
    let raw = probs[y];
    let clamped = raw < PROB_EPS;
    let p = raw.max(PROB_EPS);
    let q = 1.0 - p;
    let weight = if gamma == 0.0 { 1.0 } else { q.powf(gamma) };
    FocalValue {
        loss: -weight * p.ln(),
        clamped,
    }
}

/// Focal loss from raw logits, with its gradient wrt those logits.
pub fn focal_loss_with_grad(y: usize, logits: &[f64], gamma: f64) -> (FocalValue, Vec<f64>) {
    let probs = softmax(logits, logits.len());
    let value = focal_loss(y, &probs, gamma);
    let p = probs[y].max(PROB_EPS);
    let q = 1.0 - p;
    let weight = if gamma == 0.0 { 1.0 } else { q.powf(gamma) };
    // d loss / d p_t, multiplied by p_t.
    let slope = if gamma == 0.0 || q == 0.0 {
        -weight
    } else {
        gamma * q.powf(gamma - 1.0) * p * p.ln() - weight
    };
    let grad = probs
        .iter()
        .enumerate()
        .map(|(j, &pj)| slope * (if j == y { 1.0 } else { 0.0 } - pj))
        .collect();
    (value, grad)
}

/// `alpha * l_d + (1 - alpha) * l_r`, returning the single term exactly at the endpoints.
pub fn weighted(alpha: f64, l_d: f64, l_r: f64) -> f64 {
    if alpha == 1.0 {
        l_d
    } else if alpha == 0.0 {
        l_r
    } else {
        alpha * l_d + (1.0 - alpha) * l_r
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParams {
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            gamma: DEFAULT_GAMMA,
            beta: DEFAULT_BETA,
        }
    }
}

/// Per-example multi-task loss.
pub fn multitask_loss(y: usize, probs: &[f64], z: f64, z_hat: f64, params: LossParams) -> f64 {
    weighted(
        params.alpha,
        focal_loss(y, probs, params.gamma).loss,
        smooth_l1(z, z_hat, params.beta),
    )
}

/// Batch objective and its gradients wrt the head outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchLoss {
    pub loss: f64,
    pub diagnosis: Option<f64>,
    pub regression: Option<f64>,
    pub d_z_hat: Option<Vec<f64>>,
    pub d_logits: Option<Vec<f64>>,
    pub clamped: usize,
}

/// Mean focal loss over the batch and mean smooth-L1 over the examples that
/// carry an agreement target, combined with weight `alpha`.
///
/// A term with zero weight is not evaluated and yields no gradient, as does a
/// regression term with no targets in the batch.
pub fn batch_loss(
    z_hat: Option<&[f64]>,
    logits: Option<&[f64]>,
    labels: &[usize],
    targets: &[Option<f64>],
    n_classes: usize,
    params: LossParams,
) -> BatchLoss {
    let batch = labels.len().max(targets.len());
    let mut clamped = 0;
    let diag = match logits {
        Some(logits) if params.alpha > 0.0 => {
            let mut total = 0.0;
            let mut grad = Vec::with_capacity(logits.len());
            for (row, &y) in logits.chunks(n_classes).zip(labels) {
                let (v, g) = focal_loss_with_grad(y, row, params.gamma);
                total += v.loss;
                clamped += usize::from(v.clamped);
                grad.extend(g.into_iter().map(|g| g / batch as f64));
            }
            Some((total / batch as f64, grad))
        }
        _ => None,
    };
    let labelled = targets.iter().filter(|t| t.is_some()).count();
    let reg = match z_hat {
        Some(z_hat) if params.alpha < 1.0 && labelled > 0 => {
            let mut total = 0.0;
            let mut grad = vec![0.0; z_hat.len()];
            for (i, (&zh, t)) in z_hat.iter().zip(targets).enumerate() {
                if let Some(z) = *t {
                    total += smooth_l1(z, zh, params.beta);
                    grad[i] = smooth_l1_grad(z, zh, params.beta) / labelled as f64;
                }
            }
            Some((total / labelled as f64, grad))
        }
        _ => None,
    };
    let scale = |g: Vec<f64>, w: f64| -> Vec<f64> {
        if w == 1.0 {
            g
        } else {
            g.into_iter().map(|v| v * w).collect()
        }
    };
    let diagnosis = diag.as_ref().map(|(l, _)| *l);
    let regression = reg.as_ref().map(|(l, _)| *l);
    let (loss, d_logits, d_z_hat) = match (diag, reg) {
        (Some((ld, gd)), Some((lr, gr))) => (
            weighted(params.alpha, ld, lr),
            Some(scale(gd, params.alpha)),
            Some(scale(gr, 1.0 - params.alpha)),
        ),
        (Some((ld, gd)), None) => (ld, Some(gd), None),
        (None, Some((lr, gr))) => (lr, None, Some(gr)),
        (None, None) => (0.0, None, None),
    };
    BatchLoss {
        loss,
        diagnosis,
        regression,
        d_z_hat,
        d_logits,
        clamped,
    }
}
