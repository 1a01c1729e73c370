//! Master steps: constrained label adjustment.
//!
//! * `Alpha` minimizes `L(z, y*) + (1/alpha) L(z, y)` over the feasible set,
//! * `Beta` minimizes `L(z, y*)` over the feasible set intersected with the
//!   ball `L(z, y) <= beta`,
//! * `IdealProjection` projects `y*` itself onto the feasible set.
//!
//! Classification masters use the Hamming distance and regression masters the
//! mean squared error. Every solver returns a certificate describing how far
//! the returned point is from proven optimality.

mod assign;
mod classification;
pub mod flow;
mod regression;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::constraints::{is_feasible, ConstraintSpec};
use crate::domain::TargetVector;
use crate::error::{usage, Error, Result};
use crate::scalar::Scalar;

pub use classification::{
    solve_balance_alpha, solve_balance_beta, solve_didi_class_alpha, solve_didi_class_beta,
};
pub use regression::{kkt_residual, solve_didi_reg_alpha, solve_didi_reg_beta};

/// Relative gap above which a non-exact classification master logs a warning.
pub const GAP_WARN_THRESHOLD: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "form")]
pub enum MasterForm {
    Alpha { alpha: f64 },
    Beta { beta: f64 },
    IdealProjection,
}

impl MasterForm {
    fn validate(&self) -> Result<()> {
        match *self {
            MasterForm::Alpha { alpha } if !(alpha > 0.0) || alpha.is_nan() => {
                usage(format!("alpha must be in (0, inf), got {alpha}"))
            }
            MasterForm::Beta { beta } if !(beta > 0.0) || beta.is_nan() => {
                usage(format!("beta must be in (0, inf), got {beta}"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MasterProblem<T: Scalar> {
    pub form: MasterForm,
    pub spec: ConstraintSpec<T>,
    pub y_star: TargetVector<T>,
    /// Current predictions; unused by the ideal projection.
    pub y_pred: Option<TargetVector<T>>,
}

impl<T: Scalar> MasterProblem<T> {
    pub fn alpha(alpha: f64, spec: ConstraintSpec<T>, y_star: TargetVector<T>, y_pred: TargetVector<T>) -> Self {
        Self {
            form: MasterForm::Alpha { alpha },
            spec,
            y_star,
            y_pred: Some(y_pred),
        }
    }

    pub fn beta(beta: f64, spec: ConstraintSpec<T>, y_star: TargetVector<T>, y_pred: TargetVector<T>) -> Self {
        Self {
            form: MasterForm::Beta { beta },
            spec,
            y_star,
            y_pred: Some(y_pred),
        }
    }

    pub fn ideal(spec: ConstraintSpec<T>, y_star: TargetVector<T>) -> Self {
        Self {
            form: MasterForm::IdealProjection,
            spec,
            y_star,
            y_pred: None,
        }
    }

    pub(crate) fn predictions(&self) -> Result<&TargetVector<T>> {
        self.y_pred
            .as_ref()
            .ok_or_else(|| Error::Usage("master form needs current predictions".into()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Certificate {
    /// Proven optimal.
    Exact,
    /// Best incumbent with a proven lower bound; `upper_bound` equals the objective.
    Gap { lower_bound: f64, upper_bound: f64 },
    /// Convex master solved to the reported KKT residual.
    KktResidual { value: f64 },
    /// Produced by a user-supplied constraint hook.
    External,
}

impl Certificate {
    pub fn relative_gap(&self) -> f64 {
        match *self {
            Certificate::Gap { lower_bound, upper_bound } => {
                (upper_bound - lower_bound) / upper_bound.abs().max(1e-12)
            }
            _ => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MasterSolution<T> {
    pub z: TargetVector<T>,
    pub objective: f64,
    pub certificate: Certificate,
    pub wall_time: f64,
}

/// Solves any master problem, dispatching on the constraint family and form.
/// The returned targets are checked against the constraint before returning.
pub fn solve<T: Scalar>(p: &MasterProblem<T>) -> Result<MasterSolution<T>> {
    p.form.validate()?;
    let start = Instant::now();
    let mut sol = match (&p.spec, p.form) {
        (ConstraintSpec::Balance(_), MasterForm::Alpha { .. }) => solve_balance_alpha(p)?,
        (ConstraintSpec::Balance(_), MasterForm::Beta { .. }) => solve_balance_beta(p)?,
        (ConstraintSpec::Balance(_), MasterForm::IdealProjection) => classification::balance_ideal(p)?,
        (ConstraintSpec::DidiClassification(_), MasterForm::Alpha { .. }) => solve_didi_class_alpha(p)?,
        (ConstraintSpec::DidiClassification(_), MasterForm::Beta { .. }) => solve_didi_class_beta(p)?,
        (ConstraintSpec::DidiClassification(_), MasterForm::IdealProjection) => {
            classification::didi_class_ideal(p)?
        }
        (ConstraintSpec::DidiRegression(_), MasterForm::Alpha { .. }) => solve_didi_reg_alpha(p)?,
        (ConstraintSpec::DidiRegression(_), MasterForm::Beta { .. }) => solve_didi_reg_beta(p)?,
        (ConstraintSpec::DidiRegression(_), MasterForm::IdealProjection) => regression::didi_reg_ideal(p)?,
        (ConstraintSpec::Custom(hook), form) => {
            let z = hook.solve_master(&form, &p.y_star, p.y_pred.as_ref())?;
            let objective = crate::losses::task_loss(&z, &p.y_star)?;
            MasterSolution {
                z,
                objective,
                certificate: Certificate::External,
                wall_time: 0.0,
            }
        }
    };
    if !is_feasible(&p.spec, &sol.z)? && !matches!(p.spec, ConstraintSpec::DidiRegression(_)) {
        return Err(Error::Numerical {
            message: format!("{} master returned an infeasible point", p.spec.kind_name()),
            residual: f64::NAN,
        });
    }
    if let Certificate::Gap { .. } = sol.certificate {
        let gap = sol.certificate.relative_gap();
        if gap > GAP_WARN_THRESHOLD {
            log::warn!("{} master stopped with relative gap {gap:.2e}", p.spec.kind_name());
        }
    }
    sol.wall_time = start.elapsed().as_secs_f64();
    Ok(sol)
}

/// Projection of the true targets onto the feasible set (the "ideal case").
pub fn ideal_projection<T: Scalar>(spec: &ConstraintSpec<T>, y_star: &TargetVector<T>) -> Result<MasterSolution<T>> {
    solve(&MasterProblem::ideal(spec.clone(), y_star.clone()))
}
