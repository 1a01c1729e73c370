//! Losses used as learner objectives and as master-problem distances.
//! All of them are returned as nonnegative quantities to minimize.

use serde::{Deserialize, Serialize};

use crate::domain::{Matrix, TargetVector};
use crate::error::{usage, Result};
use crate::scalar::Scalar;

/// Probabilities are clamped to `[LOG_CLAMP, 1]` before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    MeanSquaredError,
    HammingDistance,
    CrossEntropy,
}

/// `(1/m) * ||y - y_star||^2`.
pub fn mse<T: Scalar>(y: &[T], y_star: &[T]) -> Result<T> {
    if y.len() != y_star.len() {
        return usage(format!("mse: lengths {} and {}", y.len(), y_star.len()));
    }
    if y.is_empty() {
        return Ok(T::zero());
    }
    let s: T = y.iter().zip(y_star).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok(s / T::from_usize_lossy(y.len()))
}

/// Fraction of positions where the labels disagree.
pub fn hamming(y: &[usize], y_star: &[usize]) -> Result<f64> {
    if y.len() != y_star.len() {
        return usage(format!("hamming: lengths {} and {}", y.len(), y_star.len()));
    }
    if y.is_empty() {
        return Ok(0.0);
    }
    let diff = y.iter().zip(y_star).filter(|(a, b)| a != b).count();
    Ok(diff as f64 / y.len() as f64)
}

/// `-(1/m) * sum_ij y_star_ij * ln p_ij` for a row-stochastic `p`.
pub fn cross_entropy<T: Scalar>(p: &Matrix<T>, y_star_onehot: &Matrix<T>) -> Result<T> {
    if p.rows() != y_star_onehot.rows() || p.cols() != y_star_onehot.cols() {
        return usage("cross_entropy: shape mismatch");
    }
    let tol = T::lit(1e-9).max(T::epsilon() * T::lit(64.0));
    let clamp = T::lit(LOG_CLAMP);
    let mut total = T::zero();
    for i in 0..p.rows() {
        let row = p.row(i);
        let s: T = row.iter().copied().sum();
        if (s - T::one()).abs() > tol {
            return usage(format!("cross_entropy: row {i} sums to {s}"));
        }
        for (&pij, &tij) in row.iter().zip(y_star_onehot.row(i)) {
            if tij != T::zero() {
                total -= tij * pij.max(clamp).min(T::one()).ln();
            }
        }
    }
    if p.rows() == 0 {
        return Ok(T::zero());
    }
    Ok(total / T::from_usize_lossy(p.rows()))
}

/// One-hot encoding of 1-based labels into an `m x c` matrix.
pub fn one_hot<T: Scalar>(labels: &[usize], num_classes: usize) -> Matrix<T> {
    let mut out = Matrix::zeros(labels.len(), num_classes);
    for (i, &l) in labels.iter().enumerate() {
        out.set(i, l - 1, T::one());
    }
    out
}

/// Task loss between two target vectors: Hamming for labels, MSE for values.
pub fn task_loss<T: Scalar>(y: &TargetVector<T>, y_star: &TargetVector<T>) -> Result<f64> {
    match (y, y_star) {
        (TargetVector::ClassLabels(a), TargetVector::ClassLabels(b)) => hamming(a, b),
        (TargetVector::Values(a), TargetVector::Values(b)) => Ok(mse(a, b)?.as_f64()),
        _ => usage("task_loss: mixed target kinds"),
    }
}
