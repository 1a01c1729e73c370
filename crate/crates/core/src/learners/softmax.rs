use serde::{Deserialize, Serialize};

use crate::domain::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Multinomial logistic regression; `weights` is `c x (d + 1)`, bias last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxParams<T> {
    pub num_classes: usize,
    pub num_features: usize,
    pub weights: Vec<T>,
}

pub(crate) fn softmax_in_place<T: Scalar>(v: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

impl<T: Scalar> SoftmaxParams<T> {
    pub fn zeros(num_classes: usize, num_features: usize) -> Self {
        Self {
            num_classes,
            num_features,
            weights: vec![T::zero(); num_classes * (num_features + 1)],
        }
    }

    pub fn proba_row(&self, x: &[T], out: &mut [T]) {
        let w = self.num_features + 1;
        for (j, o) in out.iter_mut().enumerate() {
            let row = &self.weights[j * w..(j + 1) * w];
            *o = row[..self.num_features].iter().zip(x).map(|(&a, &b)| a * b).sum::<T>() + row[self.num_features];
        }
        softmax_in_place(out);
    }

    /// Mean cross-entropy and its gradient on 0-based labels.
    pub fn loss_and_gradient(&self, x: &Matrix<T>, labels: &[usize]) -> (T, Vec<T>) {
        let (m, d, c) = (x.rows(), self.num_features, self.num_classes);
        let w = d + 1;
        let mut grad = vec![T::zero(); self.weights.len()];
        let mut p = vec![T::zero(); c];
        let mut loss = T::zero();
        let clamp = T::lit(crate::losses::LOG_CLAMP);
        for i in 0..m {
            let xi = x.row(i);
            self.proba_row(xi, &mut p);
            loss -= p[labels[i]].max(clamp).ln();
            for j in 0..c {
                let g = p[j] - if j == labels[i] { T::one() } else { T::zero() };
                let row = &mut grad[j * w..(j + 1) * w];
                for (k, &v) in xi.iter().enumerate() {
                    row[k] += g * v;
                }
                row[d] += g;
            }
        }
        let mf = T::from_usize_lossy(m.max(1));
        grad.iter_mut().for_each(|g| *g /= mf);
        (loss / mf, grad)
    }
}

pub(crate) struct SoftmaxFit<T> {
    pub params: SoftmaxParams<T>,
    pub final_loss: f64,
    pub steps: usize,
}

/// Full-batch gradient descent with step `1/L`, where `L = 0.5 * mean ||[x, 1]||^2`
/// bounds the curvature of the mean cross-entropy; the loss never increases.
pub(crate) fn fit_softmax<T: Scalar>(
    x: &Matrix<T>,
    labels: &[usize],
    num_classes: usize,
    max_steps: usize,
    grad_tol: f64,
    start: Option<&SoftmaxParams<T>>,
) -> Result<SoftmaxFit<T>> {
    let m = x.rows();
    let mean_sq: T = (0..m)
        .map(|i| x.row(i).iter().map(|&v| v * v).sum::<T>() + T::one())
        .sum::<T>()
        / T::from_usize_lossy(m.max(1));
    let step = T::one() / (T::lit(0.5) * mean_sq);
    let mut params = match start {
        Some(p) if p.num_classes == num_classes && p.num_features == x.cols() => p.clone(),
        Some(_) => return crate::error::usage("warm start from a softmax model of a different shape"),
        None => SoftmaxParams::zeros(num_classes, x.cols()),
    };
    let mut loss = T::zero();
    let mut steps = 0;
    for s in 0..max_steps {
        let (l, g) = params.loss_and_gradient(x, labels);
        if !l.is_finite() {
            return Err(Error::Numerical {
                message: format!("softmax loss became non-finite at step {s}"),
                residual: l.as_f64(),
            });
        }
        loss = l;
        let norm = g.iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm.as_f64() <= grad_tol {
            break;
        }
        for (w, gv) in params.weights.iter_mut().zip(&g) {
            *w -= step * *gv;
        }
        steps = s + 1;
    }
    if steps == max_steps {
        loss = params.loss_and_gradient(x, labels).0;
    }
    Ok(SoftmaxFit {
        params,
        final_loss: loss.as_f64(),
        steps,
    })
}
