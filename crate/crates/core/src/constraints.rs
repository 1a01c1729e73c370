//! Feasible sets for the adjusted targets: class balance and the two DIDI
//! fairness indicators, with feasibility tests and normalized violation scores.

use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{ProtectedGroups, TargetVector};
use crate::error::{usage, Result};
use crate::masters::MasterForm;
use crate::scalar::Scalar;

/// Slack on real-valued DIDI comparisons.
pub const FEAS_TOL: f64 = 1e-9;

/// Fraction of the training DIDI allowed by the default threshold recipe.
pub const DEFAULT_DIDI_FRACTION: f64 = 0.2;

pub const DEFAULT_BALANCE_TOLERANCE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceConstraint {
    /// Relative slack over a perfectly uniform class count.
    pub xi: f64,
    pub num_classes: usize,
}

impl BalanceConstraint {
    pub fn new(xi: f64, num_classes: usize) -> Result<Self> {
        if !(xi >= 0.0) || !xi.is_finite() {
            return usage(format!("balance tolerance must be >= 0, got {xi}"));
        }
        if num_classes == 0 {
            return usage("balance constraint needs at least one class");
        }
        Ok(Self { xi, num_classes })
    }

    /// `ceil((1 + xi) * m / c)`, computed so that representational noise in
    /// `(1 + xi) * m` cannot push an exact integer up by one.
    pub fn capacity(&self, m: usize) -> usize {
        let raw = (1.0 + self.xi) * m as f64 / self.num_classes as f64;
        let cap = (raw - 1e-9 * raw.max(1.0)).ceil().max(0.0) as usize;
        cap.min(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DidiClassificationConstraint {
    pub groups: ProtectedGroups,
    pub num_classes: usize,
    pub epsilon: f64,
    pub didi_train: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DidiRegressionConstraint {
    pub groups: ProtectedGroups,
    pub epsilon: f64,
    pub didi_train: f64,
}

impl DidiClassificationConstraint {
    /// Threshold `0.2 * DIDI(y_train)`.
    pub fn from_training(groups: ProtectedGroups, labels: &[usize], num_classes: usize) -> Result<Self> {
        let didi_train = didi_classification(&groups, labels, num_classes)?;
        Ok(Self {
            groups,
            num_classes,
            epsilon: DEFAULT_DIDI_FRACTION * didi_train,
            didi_train,
        })
    }

    pub fn with_epsilon(groups: ProtectedGroups, num_classes: usize, epsilon: f64, didi_train: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return usage(format!("DIDI threshold must be >= 0, got {epsilon}"));
        }
        Ok(Self {
            groups,
            num_classes,
            epsilon,
            didi_train,
        })
    }
}

impl DidiRegressionConstraint {
    pub fn from_training<T: Scalar>(groups: ProtectedGroups, values: &[T]) -> Result<Self> {
        let didi_train = didi_regression(&groups, values)?.as_f64();
        Ok(Self {
            groups,
            epsilon: DEFAULT_DIDI_FRACTION * didi_train,
            didi_train,
        })
    }

    pub fn with_epsilon(groups: ProtectedGroups, epsilon: f64, didi_train: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return usage(format!("DIDI threshold must be >= 0, got {epsilon}"));
        }
        Ok(Self {
            groups,
            epsilon,
            didi_train,
        })
    }
}

/// Extension point for constraints outside the three built-in families.
/// Implementors supply their own master solver.
pub trait CustomConstraint<T: Scalar>: Debug + Send + Sync {
    fn name(&self) -> &str;
    fn is_feasible(&self, y: &TargetVector<T>) -> bool;
    fn violation(&self, y: &TargetVector<T>) -> ViolationScore;
    /// Adjusted targets for the given master form. `y_pred` is `None` for the
    /// ideal projection.
    fn solve_master(
        &self,
        form: &MasterForm,
        y_star: &TargetVector<T>,
        y_pred: Option<&TargetVector<T>>,
    ) -> Result<TargetVector<T>>;
}

#[derive(Clone, Debug)]
pub enum ConstraintSpec<T: Scalar> {
    Balance(BalanceConstraint),
    DidiClassification(DidiClassificationConstraint),
    DidiRegression(DidiRegressionConstraint),
    Custom(Arc<dyn CustomConstraint<T>>),
}

impl<T: Scalar> ConstraintSpec<T> {
    pub fn kind_name(&self) -> &str {
        match self {
            ConstraintSpec::Balance(_) => "balance",
            ConstraintSpec::DidiClassification(_) => "didi_classification",
            ConstraintSpec::DidiRegression(_) => "didi_regression",
            ConstraintSpec::Custom(c) => c.name(),
        }
    }

    /// Same thresholds, groups taken from another split (e.g. the test fold).
    pub fn rebind_groups(&self, groups: Option<&ProtectedGroups>) -> Result<Self> {
        Ok(match self {
            ConstraintSpec::DidiClassification(c) => {
                let groups = groups.ok_or_else(|| crate::Error::Usage("DIDI constraint needs protected groups".into()))?;
                ConstraintSpec::DidiClassification(DidiClassificationConstraint {
                    groups: groups.clone(),
                    ..c.clone()
                })
            }
            ConstraintSpec::DidiRegression(c) => {
                let groups = groups.ok_or_else(|| crate::Error::Usage("DIDI constraint needs protected groups".into()))?;
                ConstraintSpec::DidiRegression(DidiRegressionConstraint {
                    groups: groups.clone(),
                    ..c.clone()
                })
            }
            other => other.clone(),
        })
    }
}

fn check_groups(groups: &ProtectedGroups, m: usize) -> Result<()> {
    if groups.num_examples() != m {
        return usage(format!(
            "groups cover {} examples, targets have {m}",
            groups.num_examples()
        ));
    }
    if groups.slices().any(|s| s.indices.is_empty()) {
        return usage("empty protected group");
    }
    Ok(())
}

/// Per-class counts of 1-based labels.
pub fn class_counts(labels: &[usize], num_classes: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        if l < 1 || l > num_classes {
            return usage(format!("label {l} outside 1..={num_classes}"));
        }
        counts[l - 1] += 1;
    }
    Ok(counts)
}

/// Sum over protected slices and classes of the gap between the population
/// class frequency and the in-slice class frequency.
pub fn didi_classification(groups: &ProtectedGroups, y: &[usize], num_classes: usize) -> Result<f64> {
    let m = y.len();
    check_groups(groups, m)?;
    let overall = class_counts(y, num_classes)?;
    let mut total = 0.0;
    let mut local = vec![0usize; num_classes];
    for s in groups.slices() {
        local.iter_mut().for_each(|c| *c = 0);
        for &i in &s.indices {
            local[y[i] - 1] += 1;
        }
        let n = s.indices.len() as f64;
        for j in 0..num_classes {
            total += (overall[j] as f64 / m as f64 - local[j] as f64 / n).abs();
        }
    }
    Ok(total)
}

/// Sum over protected slices of the gap between the population mean and the
/// in-slice mean.
pub fn didi_regression<T: Scalar>(groups: &ProtectedGroups, y: &[T]) -> Result<T> {
    let m = y.len();
    check_groups(groups, m)?;
    let mean = y.iter().copied().sum::<T>() / T::from_usize_lossy(m);
    let mut total = T::zero();
    for s in groups.slices() {
        let local = s.indices.iter().map(|&i| y[i]).sum::<T>() / T::from_usize_lossy(s.indices.len());
        total += (mean - local).abs();
    }
    Ok(total)
}

/// Membership test for the feasible set: capacity counts compared exactly,
/// DIDI compared with [`FEAS_TOL`] slack.
pub fn is_feasible<T: Scalar>(spec: &ConstraintSpec<T>, y: &TargetVector<T>) -> Result<bool> {
    match spec {
        ConstraintSpec::Balance(b) => {
            let labels = y.labels()?;
            let cap = b.capacity(labels.len());
            Ok(class_counts(labels, b.num_classes)?.iter().all(|&n| n <= cap))
        }
        ConstraintSpec::DidiClassification(c) => {
            Ok(didi_classification(&c.groups, y.labels()?, c.num_classes)? <= c.epsilon + FEAS_TOL)
        }
        ConstraintSpec::DidiRegression(c) => {
            Ok(didi_regression(&c.groups, y.values()?)?.as_f64() <= c.epsilon + FEAS_TOL)
        }
        ConstraintSpec::Custom(c) => Ok(c.is_feasible(y)),
    }
}

/// Constraint violation normalized so that 1 sits on the satisfaction threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViolationScore {
    /// Uncapped normalized value; `f64::INFINITY` when the threshold is zero.
    pub value: f64,
    pub capped: bool,
}

impl ViolationScore {
    pub fn new(value: f64) -> Self {
        Self {
            value,
            capped: value > 1.0,
        }
    }

    /// Value as displayed: capped at 1.
    pub fn reported(&self) -> f64 {
        self.value.min(1.0)
    }
}

fn population_std(freqs: &[f64]) -> f64 {
    let n = freqs.len() as f64;
    let mean = freqs.iter().sum::<f64>() / n;
    (freqs.iter().map(|f| (f - mean) * (f - mean)).sum::<f64>() / n).sqrt()
}

/// Standard deviation of class frequencies for the most imbalanced
/// distribution that still meets the capacity: as many classes as possible
/// at the cap, the remainder in one class, the rest empty. Every feasible
/// labelling therefore scores at most 1.
pub fn balance_std_threshold(b: &BalanceConstraint, m: usize) -> f64 {
    let c = b.num_classes;
    if c < 2 || m == 0 {
        return 0.0;
    }
    let cap = b.capacity(m);
    let mut left = m;
    let freqs: Vec<f64> = (0..c)
        .map(|_| {
            let n = left.min(cap);
            left -= n;
            n as f64 / m as f64
        })
        .collect();
    population_std(&freqs)
}

fn ratio_score(measured: f64, threshold: f64) -> ViolationScore {
    if threshold <= 0.0 {
        if measured <= FEAS_TOL {
            ViolationScore::new(0.0)
        } else {
            ViolationScore::new(f64::INFINITY)
        }
    } else {
        ViolationScore::new(measured / threshold)
    }
}

/// Normalized violation of `y`: class-frequency stdev over
/// [`balance_std_threshold`] for balance, DIDI over the threshold `epsilon`
/// for the fairness constraints (with the default recipe that is
/// `(DIDI(y) / DIDI_tr) / 0.2`).
pub fn violation_score<T: Scalar>(spec: &ConstraintSpec<T>, y: &TargetVector<T>) -> Result<ViolationScore> {
    match spec {
        ConstraintSpec::Balance(b) => {
            let labels = y.labels()?;
            let m = labels.len();
            if m == 0 {
                return Ok(ViolationScore::new(0.0));
            }
            let freqs: Vec<f64> = class_counts(labels, b.num_classes)?
                .iter()
                .map(|&n| n as f64 / m as f64)
                .collect();
            let measured = population_std(&freqs);
            Ok(ratio_score(measured, balance_std_threshold(b, m)))
        }
        ConstraintSpec::DidiClassification(c) => {
            let d = didi_classification(&c.groups, y.labels()?, c.num_classes)?;
            Ok(ratio_score(d, c.epsilon))
        }
        ConstraintSpec::DidiRegression(c) => {
            let d = didi_regression(&c.groups, y.values()?)?.as_f64();
            Ok(ratio_score(d, c.epsilon))
        }
        ConstraintSpec::Custom(c) => Ok(c.violation(y)),
    }
}
