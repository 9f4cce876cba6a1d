//! Evaluation metrics for the regression and diagnosis heads.

use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Error, Result};
use crate::network::{softmax, ForwardOptions, Mode, Network};

const EVAL_BATCH: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub n: usize,
    pub mae: Option<f64>,
    pub mse: Option<f64>,
}

impl ErrorStats {
    fn from_residuals(r: &[f64]) -> Self {
        if r.is_empty() {
            return Self::default();
        }
        let n = r.len() as f64;
        Self {
            n: r.len(),
            mae: Some(r.iter().map(|d| d.abs()).sum::<f64>() / n),
            mse: Some(r.iter().map(|d| d * d).sum::<f64>() / n),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub overall: ErrorStats,
    pub benign: ErrorStats,
    pub malignant: ErrorStats,
    pub balanced_accuracy: Option<f64>,
    /// Per-class recall, `None` for classes absent from the fold.
    pub recalls: Vec<Option<f64>>,
    pub auroc: Option<f64>,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn mae(&self) -> Option<f64> {
        self.overall.mae
    }
}

/// Mean recall over the classes present in `truth`.
pub fn balanced_accuracy(predicted: &[usize], truth: &[usize], n_classes: usize) -> (Option<f64>, Vec<Option<f64>>) {
    let mut hits = vec![0usize; n_classes];
    let mut totals = vec![0usize; n_classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        totals[t] += 1;
        hits[t] += usize::from(p == t);
    }
    let recalls: Vec<Option<f64>> = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64))
        .collect();
    let present: Vec<f64> = recalls.iter().flatten().copied().collect();
    let bal = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    (bal, recalls)
}

/// Area under the ROC curve of `scores` for the positive class, with ties
/// counted as one half. `None` unless both classes are present.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Walk ascending score groups, counting negatives strictly below each positive.
    let mut wins = 0.0;
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group = &order[i..j];
        let pos = group.iter().filter(|&&k| positive[k]).count();
        let neg = group.len() - pos;
        wins += pos as f64 * (neg_below as f64 + 0.5 * neg as f64);
        neg_below += neg;
        i = j;
    }
    Some(wins / (n_pos as f64 * n_neg as f64))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode predictions: regression outputs and class probabilities.
pub fn predict(net: &Network, examples: &[Example]) -> Result<(Option<Vec<f64>>, Option<Vec<f64>>)> {
    let mut z = net.regression.as_ref().map(|_| Vec::with_capacity(examples.len()));
    let mut probs = net.diagnosis.as_ref().map(|_| Vec::new());
    for chunk in examples.chunks(EVAL_BATCH) {
        let imgs: Vec<&[f64]> = chunk.iter().map(|e| e.image.as_slice()).collect();
        let (out, _) = net.forward(&imgs, Mode::Eval, ForwardOptions::default())?;
        if let (Some(acc), Some(v)) = (&mut z, out.z_hat) {
            acc.extend(v);
        }
        if let (Some(acc), Some(l)) = (&mut probs, out.logits) {
            acc.extend(softmax(&l, net.config.n_classes));
        }
    }
    Ok((z, probs))
}

pub fn evaluate(net: &Network, examples: &[Example]) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::EmptyFold("evaluation"));
    }
    let (z_hat, probs) = predict(net, examples)?;
    report_from_predictions(examples, z_hat.as_deref(), probs.as_deref(), net.config.n_classes)
}

/// Metrics from precomputed predictions; `probs` is `[n][n_classes]`.
pub fn report_from_predictions(
    examples: &[Example],
    z_hat: Option<&[f64]>,
    probs: Option<&[f64]>,
    n_classes: usize,
) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::EmptyFold("evaluation"));
    }
    let mut warnings = Vec::new();
    let (mut all, mut ben, mut mal) = (Vec::new(), Vec::new(), Vec::new());
    if let Some(z_hat) = z_hat {
        for (e, &zh) in examples.iter().zip(z_hat) {
            if let Some(z) = e.iaa {
                let d = zh - z;
                all.push(d);
                if e.malignant() { &mut mal } else { &mut ben }.push(d);
            }
        }
        if all.is_empty() {
            warnings.push("no agreement targets in fold; regression metrics undefined".to_string());
        }
    }
    let (mut balanced, mut recalls, mut auc) = (None, Vec::new(), None);
    if let Some(probs) = probs {
        let truth: Vec<usize> = examples.iter().map(|e| e.label).collect();
        let predicted: Vec<usize> = probs.chunks(n_classes).map(argmax).collect();
        (balanced, recalls) = balanced_accuracy(&predicted, &truth, n_classes);
        for (c, r) in recalls.iter().enumerate() {
            if r.is_none() {
                warnings.push(format!("class {c} absent from fold; balanced accuracy over present classes"));
            }
        }
        if n_classes == 2 {
            let scores: Vec<f64> = probs.chunks(2).map(|p| p[1]).collect();
            let positive: Vec<bool> = truth.iter().map(|&t| t == 1).collect();
            auc = auroc(&scores, &positive);
        }
    }
    Ok(EvalReport {
        n: examples.len(),
        overall: ErrorStats::from_residuals(&all),
        benign: ErrorStats::from_residuals(&ben),
        malignant: ErrorStats::from_residuals(&mal),
        balanced_accuracy: balanced,
        recalls,
        auroc: auc,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ex(label: usize, iaa: Option<f64>) -> Example {
        Example {
            id: String::new(),
            image: Vec::new(),
            label,
            iaa,
        }
    }

    #[test]
    fn perfect_predictions() {
        let examples = vec![ex(0, Some(0.9)), ex(1, Some(0.6)), ex(1, Some(0.7))];
        let z = [0.9, 0.6, 0.7];
        let probs = [0.9, 0.1, 0.2, 0.8, 0.0, 1.0];
        let r = report_from_predictions(&examples, Some(&z), Some(&probs), 2).unwrap();
        assert_eq!(r.overall.mae, Some(0.0));
        assert_eq!(r.overall.mse, Some(0.0));
        assert_eq!(r.balanced_accuracy, Some(1.0));
        assert_eq!(r.auroc, Some(1.0));
        assert_eq!(r.benign.n, 1);
        assert_eq!(r.malignant.n, 2);
    }

    #[test]
    fn constant_class_is_one_half() {
        let (b, recalls) = balanced_accuracy(&[0, 0, 0, 0], &[0, 1, 1, 0], 2);
        assert_eq!(b, Some(0.5));
        assert_eq!(recalls, vec![Some(1.0), Some(0.0)]);
    }

    #[test]
    fn absent_class_warns() {
        let examples = vec![ex(0, None), ex(0, None)];
        let r = report_from_predictions(&examples, None, Some(&[0.6, 0.4, 0.3, 0.7]), 2).unwrap();
        assert_eq!(r.balanced_accuracy, Some(0.5));
        assert_eq!(r.recalls[1], None);
        assert_eq!(r.auroc, None);
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn auroc_matches_pair_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let n = rng.random_range(2..40);
            let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..8) as f64) / 8.0).collect();
            let mut pos: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            pos[0] = true;
            pos[1] = false;
            let mut wins = 0.0;
            let mut pairs = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if pos[i] && !pos[j] {
                        pairs += 1.0;
                        wins += if scores[i] > scores[j] {
                            1.0
                        } else if scores[i] == scores[j] {
                            0.5
                        } else {
                            0.0
                        };
                    }
                }
            }
            assert!((auroc(&scores, &pos).unwrap() - wins / pairs).abs() < 1e-12);
        }
    }

    #[test]
    fn random_classifier_balanced_accuracy_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth: Vec<usize> = (0..1000).map(|i| i % 2).collect();
        let pred: Vec<usize> = (0..1000).map(|_| rng.random_range(0..2)).collect();
        let (b, _) = balanced_accuracy(&pred, &truth, 2);
        assert!((b.unwrap() - 0.5).abs() < 0.05);
    }

    #[test]
    fn empty_fold_is_an_error() {
        assert!(matches!(report_from_predictions(&[], None, None, 2), Err(Error::EmptyFold(_))));
    }
}
