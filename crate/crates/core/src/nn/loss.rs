use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    /// Expects a softmax output; the gradient is taken w.r.t. the logits.
    CrossEntropy,
}

/// Mean squared error over all entries, and its gradient w.r.t. `pred`.
pub fn mse(pred: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    if pred.shape() != target.shape() {
        return Err(Error::DimensionMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len().max(1) as f64;
    let diff = pred - target;
    let loss = diff.norm_squared() / n;
    Ok((loss, diff * (2.0 / n)))
}

/// Mean negative log-likelihood of `labels` under column-wise probabilities,
/// with the gradient w.r.t. the softmax logits.
pub fn cross_entropy(probs: &DMatrix<f64>, labels: &[usize]) -> Result<(f64, DMatrix<f64>)> {
    if probs.ncols() != labels.len() {
        return Err(Error::DimensionMismatch("one label per column expected".into()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= probs.nrows()) {
        return Err(Error::InvalidArgument(format!("label {l} outside {} classes", probs.nrows())));
    }
    let b = labels.len().max(1) as f64;
    let mut grad = probs.clone();
    let mut loss = 0.0;
    for (j, &l) in labels.iter().enumerate() {
        loss -= probs[(l, j)].max(1e-300).ln();
        grad[(l, j)] -= 1.0;
    }
    grad /= b;
    Ok((loss / b, grad))
}
