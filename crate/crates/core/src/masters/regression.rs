//! Regression masters (MSE loss) under the regression DIDI bound.
//!
//! Both forms reduce to Euclidean projections onto
//! `{z : sum_r |mean(z) - mean_r(z)| <= eps}`. The projection is computed
//! through its dual, which lives in one variable per protected slice: for a
//! penalty level `lambda` the dual is a box-constrained QP solved by
//! coordinate descent, and `lambda` is bisected until the bound is tight.
//! Arithmetic is carried out in `f64` regardless of the target scalar.

use super::{Certificate, MasterForm, MasterProblem, MasterSolution};
use crate::constraints::{didi_regression, ConstraintSpec, DidiRegressionConstraint};
use crate::domain::{ProtectedGroups, TargetVector};
use crate::error::{usage, Error, Result};
use crate::scalar::Scalar;

const MAX_SWEEPS: usize = 100_000;
const KKT_TARGET: f64 = 1e-8;
/// Final DIDI slack accepted on returned regression targets.
const DIDI_SLACK: f64 = 1e-6;

/// Slice structure of the DIDI operator `A`, rows `a_r = 1/m - 1_r/|r|`.
struct SliceOperator {
    m: usize,
    slices: Vec<Vec<usize>>,
    sizes: Vec<f64>,
    /// `A A^T`, row-major.
    gram: Vec<f64>,
}

impl SliceOperator {
    fn new(groups: &ProtectedGroups) -> Self {
        let m = groups.num_examples();
        // Slices covering everything contribute a zero row.
        let slices: Vec<Vec<usize>> = groups
            .slices()
            .filter(|s| s.indices.len() < m)
            .map(|s| s.indices.clone())
            .collect();
        let r = slices.len();
        let sizes: Vec<f64> = slices.iter().map(|s| s.len() as f64).collect();
        let mut member = vec![Vec::new(); m];
        for (k, s) in slices.iter().enumerate() {
            for &i in s {
                member[i].push(k);
            }
        }
        let mut inter = vec![0usize; r * r];
        for mem in &member {
            for &a in mem {
                for &b in mem {
                    inter[a * r + b] += 1;
                }
            }
        }
        let mut gram = vec![0.0; r * r];
        for a in 0..r {
            for b in 0..r {
                gram[a * r + b] = inter[a * r + b] as f64 / (sizes[a] * sizes[b]) - 1.0 / m as f64;
            }
        }
        Self {
            m,
            slices,
            sizes,
            gram,
        }
    }

    fn rows(&self) -> usize {
        self.slices.len()
    }

    /// `A z`.
    fn apply(&self, z: &[f64]) -> Vec<f64> {
        let mean = z.iter().sum::<f64>() / self.m as f64;
        self.slices
            .iter()
            .zip(&self.sizes)
            .map(|(s, &n)| mean - s.iter().map(|&i| z[i]).sum::<f64>() / n)
            .collect()
    }

    /// `A^T u`.
    fn apply_transpose(&self, u: &[f64]) -> Vec<f64> {
        let total = u.iter().sum::<f64>() / self.m as f64;
        let mut out = vec![total; self.m];
        for ((s, &n), &uk) in self.slices.iter().zip(&self.sizes).zip(u) {
            for &i in s {
                out[i] -= uk / n;
            }
        }
        out
    }

    /// `b - G u`, i.e. `A z` for `z = t - A^T u` when `b = A t`.
    fn residual_rows(&self, b: &[f64], u: &[f64]) -> Vec<f64> {
        let r = self.rows();
        (0..r)
            .map(|a| b[a] - (0..r).map(|k| self.gram[a * r + k] * u[k]).sum::<f64>())
            .collect()
    }

    /// Minimizes `0.5 u'Gu - b'u` over `|u_r| <= lambda`, warm-started from `u`.
    fn box_qp(&self, b: &[f64], lambda: f64, u: &mut [f64]) -> Result<()> {
        let r = self.rows();
        for v in u.iter_mut() {
            *v = v.clamp(-lambda, lambda);
        }
        let scale = lambda.max(1.0);
        for _ in 0..MAX_SWEEPS {
            let mut delta = 0.0f64;
            for a in 0..r {
                let d = self.gram[a * r + a];
                if d <= 1e-300 {
                    continue;
                }
                let off: f64 = (0..r).filter(|&k| k != a).map(|k| self.gram[a * r + k] * u[k]).sum();
                let next = ((b[a] - off) / d).clamp(-lambda, lambda);
                // movement of z = t - A^T u, blind to drift along the null space of G
                delta = delta.max((next - u[a]).abs() * d.sqrt());
                u[a] = next;
            }
            if delta <= 1e-14 * scale {
                return Ok(());
            }
        }
        Err(Error::Numerical {
            message: "dual coordinate descent did not converge".into(),
            residual: f64::NAN,
        })
    }
}

/// Result of projecting a point onto the DIDI-feasible set.
pub(crate) struct Projection {
    pub z: Vec<f64>,
    /// Dual variables per slice and the penalty level they are bounded by.
    pub u: Vec<f64>,
    pub lambda: f64,
    pub residual: f64,
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// KKT residual of `min 0.5||z - t||^2 s.t. ||A z||_1 <= eps` at `(z, u, lambda)`.
fn projection_residual(op: &SliceOperator, t: &[f64], eps: f64, z: &[f64], u: &[f64], lambda: f64) -> f64 {
    let atu = op.apply_transpose(u);
    let stationarity = z
        .iter()
        .zip(t)
        .zip(&atu)
        .map(|((zi, ti), ai)| (zi - ti + ai).abs())
        .fold(0.0, f64::max);
    let az = op.apply(z);
    let h = l1(&az);
    let primal = (h - eps).max(0.0);
    let dual = u.iter().map(|uk| (uk.abs() - lambda).max(0.0)).fold(0.0, f64::max);
    let alignment = az
        .iter()
        .zip(u)
        .map(|(a, uk)| (lambda * a.abs() - uk * a).max(0.0))
        .fold(0.0, f64::max);
    let complementarity = lambda * (h - eps).abs();
    stationarity.max(primal).max(dual).max(alignment).max(complementarity)
}

fn project(op: &SliceOperator, t: &[f64], eps: f64) -> Result<Projection> {
    let r = op.rows();
    let b = op.apply(t);
    if l1(&b) <= eps {
        return Ok(Projection {
            z: t.to_vec(),
            u: vec![0.0; r],
            lambda: 0.0,
            residual: 0.0,
        });
    }
    // rounding in the dual leaves a tiny DIDI even when eps = 0 is reachable
    let slack = 1e-12 * l1(&b).max(1.0);
    let h_at = |lambda: f64, u: &mut Vec<f64>| -> Result<f64> {
        op.box_qp(&b, lambda, u)?;
        Ok(l1(&op.residual_rows(&b, u)))
    };
    let mut u_hi = vec![0.0; r];
    let mut hi = b.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-12);
    let mut doublings = 0;
    while h_at(hi, &mut u_hi)? > eps + slack {
        hi *= 2.0;
        doublings += 1;
        if doublings > 200 {
            return Err(Error::Numerical {
                message: "could not bracket the DIDI multiplier".into(),
                residual: f64::INFINITY,
            });
        }
    }
    let mut lo = 0.0;
    let mut u_mid = u_hi.clone();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h_at(mid, &mut u_mid)? > eps + slack {
            lo = mid;
        } else {
            hi = mid;
            u_hi.copy_from_slice(&u_mid);
        }
    }
    let atu = op.apply_transpose(&u_hi);
    let z: Vec<f64> = t.iter().zip(&atu).map(|(ti, ai)| ti - ai).collect();
    let residual = projection_residual(op, t, eps, &z, &u_hi, hi);
    Ok(Projection {
        z,
        u: u_hi,
        lambda: hi,
        residual,
    })
}

fn regression_spec<T: Scalar>(p: &MasterProblem<T>) -> Result<&DidiRegressionConstraint> {
    match &p.spec {
        ConstraintSpec::DidiRegression(d) => {
            if !(d.epsilon >= 0.0) {
                return usage(format!("DIDI threshold must be >= 0, got {}", d.epsilon));
            }
            Ok(d)
        }
        other => usage(format!("expected a DIDI regression constraint, got {}", other.kind_name())),
    }
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn finish<T: Scalar>(d: &DidiRegressionConstraint, z: Vec<f64>, objective: f64, residual: f64) -> Result<MasterSolution<T>> {
    if residual > KKT_TARGET * 100.0 {
        return Err(Error::Numerical {
            message: "regression master did not reach the KKT target".into(),
            residual,
        });
    }
    let z: Vec<T> = z.into_iter().map(T::lit).collect();
    let didi = didi_regression(&d.groups, &z)?.as_f64();
    let slack = DIDI_SLACK.max(T::epsilon().as_f64() * 64.0 * (1.0 + d.epsilon));
    if didi > d.epsilon + slack {
        return Err(Error::Numerical {
            message: format!("regression master violates the DIDI bound ({didi} > {})", d.epsilon),
            residual,
        });
    }
    Ok(MasterSolution {
        z: TargetVector::Values(z),
        objective,
        certificate: Certificate::KktResidual { value: residual },
        wall_time: 0.0,
    })
}

fn inputs<T: Scalar>(p: &MasterProblem<T>, d: &DidiRegressionConstraint) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let y_star = to_f64(p.y_star.values()?);
    if y_star.is_empty() {
        return usage("empty target vector");
    }
    if d.groups.num_examples() != y_star.len() {
        return usage(format!(
            "groups cover {} examples, targets have {}",
            d.groups.num_examples(),
            y_star.len()
        ));
    }
    let pred = match (&p.y_pred, p.form) {
        (_, MasterForm::IdealProjection) | (None, _) => None,
        (Some(y), _) => {
            let y = to_f64(y.values()?);
            if y.len() != y_star.len() {
                return usage("y_pred and y_star lengths differ");
            }
            Some(y)
        }
    };
    Ok((y_star, pred))
}

/// Regression master, alpha form: a convex QP whose minimizer is the
/// projection of `(alpha y* + y) / (alpha + 1)` onto the DIDI-feasible set.
pub fn solve_didi_reg_alpha<T: Scalar>(p: &MasterProblem<T>) -> Result<MasterSolution<T>> {
    let MasterForm::Alpha { alpha } = p.form else {
        return usage("solve_didi_reg_alpha needs the alpha form");
    };
    let d = regression_spec(p)?;
    let (y_star, pred) = inputs(p, d)?;
    let pred = pred.ok_or_else(|| Error::Usage("alpha form needs predictions".into()))?;
    let m = y_star.len() as f64;
    let t: Vec<f64> = y_star
        .iter()
        .zip(&pred)
        .map(|(s, y)| (alpha * s + y) / (alpha + 1.0))
        .collect();
    let op = SliceOperator::new(&d.groups);
    let proj = project(&op, &t, d.epsilon)?;
    let objective = sq_dist(&proj.z, &y_star) / m + sq_dist(&proj.z, &pred) / (alpha * m);
    finish(d, proj.z, objective, proj.residual)
}

pub(crate) fn didi_reg_ideal<T: Scalar>(p: &MasterProblem<T>) -> Result<MasterSolution<T>> {
    let d = regression_spec(p)?;
    let (y_star, _) = inputs(p, d)?;
    let m = y_star.len() as f64;
    let op = SliceOperator::new(&d.groups);
    let proj = project(&op, &y_star, d.epsilon)?;
    let objective = sq_dist(&proj.z, &y_star) / m;
    finish(d, proj.z, objective, proj.residual)
}

/// Regression master, beta form: projection of `y*` onto the DIDI-feasible
/// set intersected with the ball `(1/m)||z - y||^2 <= beta`. The ball
/// multiplier `nu` is bisected; for fixed `nu` the problem is the projection
/// of `(y* + nu y) / (1 + nu)`.
pub fn solve_didi_reg_beta<T: Scalar>(p: &MasterProblem<T>) -> Result<MasterSolution<T>> {
    let MasterForm::Beta { beta } = p.form else {
        return usage("solve_didi_reg_beta needs the beta form");
    };
    let d = regression_spec(p)?;
    let (y_star, pred) = inputs(p, d)?;
    let pred = pred.ok_or_else(|| Error::Usage("beta form needs predictions".into()))?;
    let m = y_star.len() as f64;
    let op = SliceOperator::new(&d.groups);
    let ball = |z: &[f64]| sq_dist(z, &pred) / m;
    let ball_tol = 1e-12 * beta.max(1.0);

    let free = project(&op, &y_star, d.epsilon)?;
    if ball(&free.z) <= beta + ball_tol {
        let objective = sq_dist(&free.z, &y_star) / m;
        return finish(d, free.z, objective, free.residual);
    }
    let nearest = project(&op, &pred, d.epsilon)?;
    if ball(&nearest.z) > beta + ball_tol {
        return Err(Error::Infeasible(format!(
            "the ball of radius {beta} around the predictions misses the DIDI-feasible set"
        )));
    }
    let at = |nu: f64| -> Result<Projection> {
        let t: Vec<f64> = y_star.iter().zip(&pred).map(|(s, y)| (s + nu * y) / (1.0 + nu)).collect();
        project(&op, &t, d.epsilon)
    };
    let mut hi = 1.0;
    let mut best = at(hi)?;
    let mut doublings = 0;
    while ball(&best.z) > beta {
        hi *= 2.0;
        doublings += 1;
        if doublings > 80 {
            // The ball only touches the feasible set; its nearest point is the answer.
            let objective = sq_dist(&nearest.z, &y_star) / m;
            return finish(d, nearest.z, objective, nearest.residual);
        }
        best = at(hi)?;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let cand = at(mid)?;
        if ball(&cand.z) > beta {
            lo = mid;
        } else {
            hi = mid;
            best = cand;
        }
    }
    let g = ball(&best.z);
    let residual = best
        .residual
        .max((g - beta).max(0.0))
        .max(hi * (g - beta).abs() / (1.0 + hi));
    let objective = sq_dist(&best.z, &y_star) / m;
    finish(d, best.z, objective, residual)
}

/// KKT residual of a regression-master solution for the projection problem
/// on target `t` (`(alpha y* + y)/(alpha + 1)` for the alpha form, `y*` for
/// the ideal projection), recomputing the dual from scratch.
pub fn kkt_residual(groups: &ProtectedGroups, epsilon: f64, t: &[f64], z: &[f64]) -> Result<f64> {
    let op = SliceOperator::new(groups);
    let proj = project(&op, t, epsilon)?;
    let dual_residual = projection_residual(&op, t, epsilon, z, &proj.u, proj.lambda);
    Ok(dual_residual)
}
