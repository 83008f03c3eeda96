//! Threshold and ranking metrics for binary outcomes.
//!
//! Degenerate denominators (no predicted or no actual positives) yield 0
//! rather than NaN so that means over seeds stay finite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Predicts positive iff `y_hat >= threshold`.
pub fn confusion(y_hat: &[f64], y: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    if y_hat.len() != y.len() {
        return Err(Error::dim("confusion", &[y_hat.len()], &[y.len()]));
    }
    if y.is_empty() {
        return Err(Error::Contract("confusion needs at least one prediction".into()));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &label) in y_hat.iter().zip(y) {
        match (p >= threshold, label != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// `(1 + β²)·P·R / (β²·P + R)`, zero when there are no true positives.
pub fn f_beta(c: &ConfusionCounts, beta: f64) -> f64 {
    if c.tp == 0 {
        return 0.0;
    }
    f_beta_from(c.precision(), c.recall(), beta)
}

/// F-beta from precision and recall directly.
pub fn f_beta_from(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / den
    }
}

pub fn f2(c: &ConfusionCounts) -> f64 {
    f_beta(c, 2.0)
}

/// Recall on the positive class.
pub fn sensitivity(c: &ConfusionCounts) -> f64 {
    c.recall()
}

/// Area under the ROC curve via the Mann-Whitney statistic, ties counted
/// as one half.
pub fn auc_roc(y_hat: &[f64], y: &[u8]) -> Result<f64> {
    if y_hat.len() != y.len() {
        return Err(Error::dim("auc_roc", &[y_hat.len()], &[y.len()]));
    }
    let positives = y.iter().filter(|&&l| l != 0).count();
    let negatives = y.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs both positive and negative labels".into(),
        ));
    }

    let mut order: Vec<usize> = (0..y_hat.len()).collect();
    order.sort_by(|&a, &b| y_hat[a].total_cmp(&y_hat[b]));

    // Average 1-based ranks over tie groups.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && y_hat[order[j + 1]] == y_hat[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if y[k] != 0 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let (p, n) = (positives as f64, negatives as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Scores for one evaluated prediction set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalScores {
    pub f2: f64,
    pub sensitivity: f64,
    /// `None` when the labels hold a single class.
    pub auc: Option<f64>,
    pub counts: ConfusionCounts,
}

pub fn evaluate(y_hat: &[f64], y: &[u8], threshold: f64) -> Result<EvalScores> {
    let counts = confusion(y_hat, y, threshold)?;
    let auc = match auc_roc(y_hat, y) {
        Ok(a) => Some(a),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalScores {
        f2: f2(&counts),
        sensitivity: sensitivity(&counts),
        auc,
        counts,
    })
}

/// Mean and sample standard deviation; the deviation is 0 for one value.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
