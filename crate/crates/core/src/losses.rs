//! Gradients, Hessians, base scores and loss values for each task.

use serde::{Deserialize, Serialize};

use crate::data::TaskKind;

/// Logits and log-priors are clamped to this magnitude.
pub const MAX_BASE_LOGIT: f64 = 10.0;

/// First and second derivatives of the loss w.r.t. one raw score column.
#[derive(Debug, Clone, PartialEq)]
pub struct GradHess {
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

/// Initial raw score: one value, or one per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BaseScore {
    Scalar(f64),
    PerClass(Vec<f64>),
}

impl BaseScore {
    pub fn values(&self) -> Vec<f64> {
        match self {
            BaseScore::Scalar(v) => vec![*v],
            BaseScore::PerClass(v) => v.clone(),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax of one row with the row maximum subtracted first.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Row-wise softmax; `rows[i]` holds the `K` raw scores of sample `i`.
pub fn softmax_rows(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter().map(|r| softmax(r)).collect()
}

/// Per-class softmax gradients. `scores[k][i]` is the raw score of class `k`
/// for sample `i`; `labels[i]` is the class index of sample `i`.
pub fn multiclass_grad_hess(scores: &[Vec<f64>], labels: &[usize]) -> Vec<GradHess> {
    let k = scores.len();
    let n = labels.len();
    let mut out: Vec<GradHess> = (0..k)
        .map(|_| GradHess {
            grad: Vec::with_capacity(n),
            hess: Vec::with_capacity(n),
        })
        .collect();
    let mut row = vec![0.0; k];
    for (i, &label) in labels.iter().enumerate() {
        for (c, r) in row.iter_mut().enumerate() {
            *r = scores[c][i];
        }
        let p = softmax(&row);
        for (c, gh) in out.iter_mut().enumerate() {
            let y = if c == label { 1.0 } else { 0.0 };
            gh.grad.push(p[c] - y);
            gh.hess.push(p[c] * (1.0 - p[c]));
        }
    }
    out
}

/// Logistic gradients on a single raw score; `y` holds 0/1.
pub fn binary_grad_hess(scores: &[f64], y: &[f64]) -> GradHess {
    let (grad, hess) = scores
        .iter()
        .zip(y)
        .map(|(&f, &y)| {
            let p = sigmoid(f);
            (p - y, p * (1.0 - p))
        })
        .unzip();
    GradHess { grad, hess }
}

/// Squared-error gradients: `g = F - y`, `h = 1`.
pub fn regression_grad_hess(scores: &[f64], y: &[f64]) -> GradHess {
    GradHess {
        grad: scores.iter().zip(y).map(|(f, y)| f - y).collect(),
        hess: vec![1.0; scores.len()],
    }
}

fn logit(p: f64) -> f64 {
    if p <= 0.0 {
        -MAX_BASE_LOGIT
    } else if p >= 1.0 {
        MAX_BASE_LOGIT
    } else {
        (p / (1.0 - p)).ln().clamp(-MAX_BASE_LOGIT, MAX_BASE_LOGIT)
    }
}

/// Base score for the given task. For classification, `y` holds encoded
/// labels: 0/1 for binary, class indices for multiclass.
pub fn init_base_score(y: &[f64], task: &TaskKind) -> BaseScore {
    let n = y.len().max(1) as f64;
    match task {
        TaskKind::Regression => BaseScore::Scalar(y.iter().sum::<f64>() / n),
        TaskKind::BinaryClassification => {
            let positive = y.iter().filter(|&&v| v == 1.0).count() as f64;
            BaseScore::Scalar(logit(positive / n))
        }
        TaskKind::MulticlassClassification(k) => {
            let mut counts = vec![0.0; *k];
            for &v in y {
                counts[v as usize] += 1.0;
            }
            BaseScore::PerClass(
                counts
                    .into_iter()
                    .map(|c| {
                        if c == 0.0 {
                            -MAX_BASE_LOGIT
                        } else {
                            (c / n).ln().clamp(-MAX_BASE_LOGIT, MAX_BASE_LOGIT)
                        }
                    })
                    .collect(),
            )
        }
    }
}

/// Mean logistic loss.
pub fn log_loss(scores: &[f64], y: &[f64]) -> f64 {
    let total: f64 = scores
        .iter()
        .zip(y)
        .map(|(&f, &y)| {
            // log(1 + e^f) - y f, written to avoid overflow
            let softplus = if f > 0.0 {
                f + (-f).exp().ln_1p()
            } else {
                f.exp().ln_1p()
            };
            softplus - y * f
        })
        .sum();
    total / scores.len().max(1) as f64
}

/// Mean softmax cross-entropy; `scores[k][i]` as in [`multiclass_grad_hess`].
pub fn cross_entropy(scores: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let max = scores
            .iter()
            .map(|c| c[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = max + scores.iter().map(|c| (c[i] - max).exp()).sum::<f64>().ln();
        total += lse - scores[label][i];
    }
    total / labels.len().max(1) as f64
}

/// Mean of `½ (F - y)²`.
pub fn squared_error(scores: &[f64], y: &[f64]) -> f64 {
    let total: f64 = scores
        .iter()
        .zip(y)
        .map(|(f, y)| 0.5 * (f - y) * (f - y))
        .sum();
    total / scores.len().max(1) as f64
}
