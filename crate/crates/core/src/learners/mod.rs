//! Learner step: unconstrained supervised models fitted from scratch to a
//! target vector. Learners never see the constraint.

mod linear;
pub mod mlp;
mod softmax;

use serde::{Deserialize, Serialize};

pub use linear::LinearParams;
pub use mlp::{MlpConfig, MlpParams, MlpTargets, OutputKind};
pub use softmax::SoftmaxParams;

use crate::domain::{Matrix, TargetVector, TaskKind};
use crate::error::{usage, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum LearnerKind {
    LinearRegression,
    SoftmaxRegression {
        #[serde(default = "default_softmax_steps")]
        max_steps: usize,
        #[serde(default = "default_softmax_tol")]
        grad_tol: f64,
    },
    Mlp(#[serde(default)] MlpConfig),
}

fn default_softmax_steps() -> usize {
    5000
}

fn default_softmax_tol() -> f64 {
    1e-6
}

impl LearnerKind {
    pub fn softmax() -> Self {
        LearnerKind::SoftmaxRegression {
            max_steps: default_softmax_steps(),
            grad_tol: default_softmax_tol(),
        }
    }

    pub fn mlp() -> Self {
        LearnerKind::Mlp(MlpConfig::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    pub seed: u64,
}

impl LearnerSpec {
    pub fn new(kind: LearnerKind, seed: u64) -> Self {
        Self { kind, seed }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            kind: self.kind.clone(),
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ModelParams<T> {
    Linear(LinearParams<T>),
    Softmax(SoftmaxParams<T>),
    Mlp(MlpParams<T>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub final_loss: f64,
    /// Epochs for the network, gradient steps for softmax, 1 for least squares.
    pub epochs_run: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel<T> {
    pub params: ModelParams<T>,
    pub task: TaskKind,
    pub num_features: usize,
    pub info: TrainingInfo,
    /// Optimizer state needed to continue training (network accumulators).
    pub optimizer_state: Vec<T>,
}

/// Trains a model of the given kind on `(x, z)` from a fresh initialization.
pub fn fit<T: Scalar>(spec: &LearnerSpec, x: &Matrix<T>, z: &TargetVector<T>, task: TaskKind) -> Result<TrainedModel<T>> {
    fit_from(spec, x, z, task, None)
}

/// Like [`fit`], but iterative learners start from `previous` (weights and
/// optimizer state) when given. Least squares ignores it.
pub fn fit_from<T: Scalar>(
    spec: &LearnerSpec,
    x: &Matrix<T>,
    z: &TargetVector<T>,
    task: TaskKind,
    previous: Option<&TrainedModel<T>>,
) -> Result<TrainedModel<T>> {
    if x.rows() != z.len() {
        return usage(format!("{} feature rows for {} targets", x.rows(), z.len()));
    }
    if x.rows() == 0 {
        return usage("cannot fit on an empty dataset");
    }
    if !z.matches(task) {
        return usage("target kind does not match the task");
    }
    if let Some(p) = previous {
        if p.num_features != x.cols() || p.task != task {
            return usage("warm start from a model trained on a different problem");
        }
    }
    let mut optimizer_state = Vec::new();
    let (params, info) = match (&spec.kind, task) {
        (LearnerKind::LinearRegression, TaskKind::Regression) => {
            let y = z.values()?;
            let p = linear::fit_linear(x, y)?;
            let pred: Vec<T> = (0..x.rows()).map(|i| p.predict_row(x.row(i))).collect();
            let loss = crate::losses::mse(&pred, y)?.as_f64();
            (ModelParams::Linear(p), TrainingInfo { final_loss: loss, epochs_run: 1 })
        }
        (LearnerKind::SoftmaxRegression { max_steps, grad_tol }, TaskKind::Classification { num_classes }) => {
            let labels = zero_based(z.labels()?, num_classes)?;
            let start = match previous.map(|p| &p.params) {
                Some(ModelParams::Softmax(p)) => Some(p),
                _ => None,
            };
            let f = softmax::fit_softmax(x, &labels, num_classes, *max_steps, *grad_tol, start)?;
            (
                ModelParams::Softmax(f.params),
                TrainingInfo {
                    final_loss: f.final_loss,
                    epochs_run: f.steps,
                },
            )
        }
        (LearnerKind::Mlp(cfg), TaskKind::Classification { num_classes }) => {
            let labels = zero_based(z.labels()?, num_classes)?;
            let f = mlp::fit_mlp(
                cfg,
                x,
                MlpTargets::Classes(&labels),
                num_classes,
                OutputKind::Softmax,
                spec.seed,
                mlp_start(previous),
            )?;
            optimizer_state = f.cache;
            (
                ModelParams::Mlp(f.params),
                TrainingInfo {
                    final_loss: f.final_loss,
                    epochs_run: f.epochs,
                },
            )
        }
        (LearnerKind::Mlp(cfg), TaskKind::Regression) => {
            let f = mlp::fit_mlp(
                cfg,
                x,
                MlpTargets::Values(z.values()?),
                1,
                OutputKind::Linear,
                spec.seed,
                mlp_start(previous),
            )?;
            optimizer_state = f.cache;
            (
                ModelParams::Mlp(f.params),
                TrainingInfo {
                    final_loss: f.final_loss,
                    epochs_run: f.epochs,
                },
            )
        }
        (kind, task) => return usage(format!("learner {kind:?} does not support task {task:?}")),
    };
    Ok(TrainedModel {
        params,
        task,
        num_features: x.cols(),
        info,
        optimizer_state,
    })
}

fn mlp_start<T: Scalar>(previous: Option<&TrainedModel<T>>) -> Option<mlp::MlpStart<'_, T>> {
    match previous {
        Some(TrainedModel {
            params: ModelParams::Mlp(p),
            optimizer_state,
            ..
        }) => Some(mlp::MlpStart {
            params: p,
            cache: optimizer_state,
        }),
        _ => None,
    }
}

fn zero_based(labels: &[usize], c: usize) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&l| {
            if (1..=c).contains(&l) {
                Ok(l - 1)
            } else {
                usage(format!("label {l} outside 1..={c}"))
            }
        })
        .collect()
}

/// Index of the largest entry; ties go to the lowest index.
fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for j in 1..row.len() {
        if row[j] > row[best] {
            best = j;
        }
    }
    best
}

impl<T: Scalar> TrainedModel<T> {
    fn check_width(&self, x: &Matrix<T>) -> Result<()> {
        if x.cols() != self.num_features {
            return usage(format!(
                "model expects {} features, got {}",
                self.num_features,
                x.cols()
            ));
        }
        Ok(())
    }

    /// Class probabilities, `m x c` (classification models only).
    pub fn predict_proba(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_width(x)?;
        match &self.params {
            ModelParams::Softmax(p) => {
                let mut out = Matrix::zeros(x.rows(), p.num_classes);
                for i in 0..x.rows() {
                    p.proba_row(x.row(i), out.row_mut(i));
                }
                Ok(out)
            }
            ModelParams::Mlp(p) if p.output == OutputKind::Softmax => Ok(p.outputs(x)),
            _ => usage("predict_proba called on a regression model"),
        }
    }

    /// Hard labels (argmax of probabilities, ties to the lowest class) or values.
    pub fn predict(&self, x: &Matrix<T>) -> Result<TargetVector<T>> {
        self.check_width(x)?;
        match &self.params {
            ModelParams::Linear(p) => Ok(TargetVector::Values(
                (0..x.rows()).map(|i| p.predict_row(x.row(i))).collect(),
            )),
            ModelParams::Mlp(p) if p.output == OutputKind::Linear => {
                Ok(TargetVector::Values(p.outputs(x).as_slice().to_vec()))
            }
            _ => {
                let proba = self.predict_proba(x)?;
                Ok(TargetVector::ClassLabels(
                    (0..proba.rows()).map(|i| argmax(proba.row(i)) + 1).collect(),
                ))
            }
        }
    }
}
