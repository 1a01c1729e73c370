use serde::{Deserialize, Serialize};

use crate::domain::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub(crate) const RIDGE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearParams<T> {
    pub weights: Vec<T>,
    pub bias: T,
}

impl<T: Scalar> LinearParams<T> {
    pub fn predict_row(&self, x: &[T]) -> T {
        self.weights.iter().zip(x).map(|(&w, &v)| w * v).sum::<T>() + self.bias
    }
}

/// In-place Cholesky solve of the SPD system `a x = b` (`a` is n x n row-major).
pub(crate) fn cholesky_solve<T: Scalar>(a: &mut [T], b: &mut [T], n: usize) -> Result<()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > T::zero()) {
            return Err(Error::Numerical {
                message: "normal equations are not positive definite".into(),
                residual: d.as_f64(),
            });
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    Ok(())
}

/// Least squares with an intercept. The slopes come from ridge-regularized
/// normal equations on centred data, so the intercept is never shrunk and a
/// constant target is fitted exactly.
pub(crate) fn fit_linear<T: Scalar>(x: &Matrix<T>, y: &[T]) -> Result<LinearParams<T>> {
    let (m, d) = (x.rows(), x.cols());
    let count = T::from_usize_lossy(m);
    let mut x_mean = vec![T::zero(); d];
    for i in 0..m {
        for (acc, &v) in x_mean.iter_mut().zip(x.row(i)) {
            *acc += v;
        }
    }
    x_mean.iter_mut().for_each(|v| *v /= count);
    let y_mean = y.iter().copied().sum::<T>() / count;

    let mut gram = vec![T::zero(); d * d];
    let mut rhs = vec![T::zero(); d];
    let mut row = vec![T::zero(); d];
    for (i, &yi) in y.iter().enumerate() {
        for ((r, &v), &mu) in row.iter_mut().zip(x.row(i)).zip(&x_mean) {
            *r = v - mu;
        }
        let target = yi - y_mean;
        for a in 0..d {
            rhs[a] += row[a] * target;
            for b in 0..=a {
                gram[a * d + b] += row[a] * row[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            gram[b * d + a] = gram[a * d + b];
        }
        gram[a * d + a] += T::lit(RIDGE);
    }
    cholesky_solve(&mut gram, &mut rhs, d)?;
    let bias = y_mean - rhs.iter().zip(&x_mean).map(|(&w, &mu)| w * mu).sum::<T>();
    Ok(LinearParams { weights: rhs, bias })
}
