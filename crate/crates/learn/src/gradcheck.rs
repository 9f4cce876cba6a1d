//! Central finite-difference verification of the analytic gradients.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::loss::{self, LossParams};
use crate::network::{ForwardOptions, Mode, Network};

/// Magnitude below which gradients are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// A batch with its diagnosis labels and agreement targets.
pub struct CheckBatch<'a> {
    pub images: &'a [&'a [f64]],
    pub labels: &'a [usize],
    pub targets: &'a [Option<f64>],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because the perturbation flipped a rectifier.
    pub skipped_kinks: usize,
    /// Parameter and index with the largest error.
    pub worst: Option<(String, usize)>,
}

fn loss_at(net: &Network, batch: &CheckBatch<'_>, params: LossParams, mode: Mode) -> Result<(f64, Vec<bool>)> {
    let (out, tape) = net.forward(batch.images, mode, ForwardOptions::default())?;
    let b = loss::batch_loss(
        out.z_hat.as_deref(),
        out.logits.as_deref(),
        batch.labels,
        batch.targets,
        net.config.n_classes,
        params,
    );
    Ok((b.loss, tape.relu_pattern()))
}

/// Compares analytic gradients with central differences of step `epsilon`.
///
/// `sample` limits each parameter tensor to that many randomly chosen
/// coordinates; `None` checks every coordinate.
pub fn gradient_check(
    net: &Network,
    batch: &CheckBatch<'_>,
    params: LossParams,
    mode: Mode,
    epsilon: f64,
    sample: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport> {
    let (out, tape) = net.forward(batch.images, mode, ForwardOptions::default())?;
    let b = loss::batch_loss(
        out.z_hat.as_deref(),
        out.logits.as_deref(),
        batch.labels,
        batch.targets,
        net.config.n_classes,
        params,
    );
    let analytic = net.backward(&tape, b.d_z_hat.as_deref(), b.d_logits.as_deref());
    let base_pattern = tape.relu_pattern();
    let names: Vec<String> = net.params().iter().map(|(id, _)| id.to_string()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = net.clone();
    let mut report = GradCheckReport::default();
    for (t, name) in names.iter().enumerate() {
        let len = analytic[t].len();
        let coords: Vec<usize> = match sample {
            Some(k) if k < len => index::sample(&mut rng, len, k).into_vec(),
            _ => (0..len).collect(),
        };
        for i in coords {
            let original = probe.params_mut()[t].1[i];
            probe.params_mut()[t].1[i] = original + epsilon;
            let (up, up_pattern) = loss_at(&probe, batch, params, mode)?;
            probe.params_mut()[t].1[i] = original - epsilon;
            let (down, down_pattern) = loss_at(&probe, batch, params, mode)?;
            probe.params_mut()[t].1[i] = original;
            if up_pattern != base_pattern || down_pattern != base_pattern {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * epsilon);
            let err = relative_error(analytic[t][i], numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
