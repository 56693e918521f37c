//! Numeric substrate shared by every model in the crate.

pub mod linalg;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod optim;

pub use linalg::{cca, CcaResult, Pca};
pub use loss::{argmax, pinball_loss, softmax, softmax_cross_entropy_batch, squared_loss_batch};
pub use metrics::{regression_metrics, RegressionMetrics};
pub use nn::{Activation, Dense, FeedForwardNet, Gradients};
pub use optim::{train_minibatch, Optimizer, OptimizerKind, TrainConfig};

use nalgebra::DMatrix;

/// Builds an `n × p` matrix from row vectors.
pub fn rows_to_matrix(rows: &[Vec<f64>], p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j])
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d = norm(a) * norm(b);
    if d == 0.0 {
        0.0
    } else {
        dot(a, b) / d
    }
}
