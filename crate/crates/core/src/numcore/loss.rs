//! Loss functions with their gradients.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Mean over rows of the summed squared error; gradient w.r.t. predictions.
pub fn squared_loss_batch(pred: &DMatrix<f64>, target: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let n = pred.nrows().max(1) as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    (loss, diff * (2.0 / n))
}

/// Pinball loss `τ·max(y−ŷ,0) + (1−τ)·max(ŷ−y,0)` and its derivative in `ŷ`
/// (0 at the kink).
pub fn pinball_loss(y_hat: f64, y: f64, tau: f64) -> Result<(f64, f64)> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidInput(format!("tau {tau} outside (0, 1)")));
    }
    let r = y - y_hat;
    let loss = tau * r.max(0.0) + (1.0 - tau) * (-r).max(0.0);
    let grad = if r > 0.0 {
        -tau
    } else if r < 0.0 {
        1.0 - tau
    } else {
        0.0
    };
    Ok((loss, grad))
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean softmax cross-entropy over rows of `logits` against integer labels.
pub fn softmax_cross_entropy_batch(logits: &DMatrix<f64>, labels: &[usize]) -> (f64, DMatrix<f64>) {
    let n = logits.nrows().max(1) as f64;
    let mut grad = DMatrix::zeros(logits.nrows(), logits.ncols());
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row: Vec<f64> = logits.row(i).iter().copied().collect();
        let p = softmax(&row);
        loss -= p[label].max(f64::MIN_POSITIVE).ln();
        for (j, pj) in p.iter().enumerate() {
            grad[(i, j)] = (pj - if j == label { 1.0 } else { 0.0 }) / n;
        }
    }
    (loss / n, grad)
}
