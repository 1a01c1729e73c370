//! Constrained supervised learning by alternating label adjustment and
//! unconstrained retraining.
//!
//! A run pretrains a learner on the true targets, then alternates a master
//! step, which moves the targets towards the feasible set while staying
//! close to the true targets and the current predictions, with a learner
//! step that refits the model on the adjusted targets.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`.
//!
//! ```no_run
//! use moving_targets::{data, run, BalanceConstraint, ConstraintSpec, LearnerKind, LearnerSpec, MovingTargetsConfig};
//!
//! # fn main() -> moving_targets::Result<()> {
//! let d = data::synth_classification::<f64>(400, 2, 0.8, 0)?;
//! let constraint = ConstraintSpec::Balance(BalanceConstraint::new(0.05, 2)?);
//! let mut cfg = MovingTargetsConfig::new(LearnerSpec::new(LearnerKind::mlp(), 0), constraint);
//! cfg.alpha = 1.0;
//! cfg.beta = 0.1;
//! let (model, history) = run(&cfg, &d)?;
//! # let _ = (model, history);
//! # Ok(())
//! # }
//! ```

// `!(a <= b)` is used on purpose so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithm;
pub mod cli;
pub mod constraints;
pub mod data;
pub mod domain;
pub mod error;
pub mod evaluation;
pub mod learners;
pub mod losses;
pub mod masters;
pub mod scalar;

pub use algorithm::{run, run_pretrain_only, run_preprocessing_baseline, ModelSelection, MovingTargetsConfig};
pub use constraints::{
    is_feasible, violation_score, BalanceConstraint, ConstraintSpec, CustomConstraint, DidiClassificationConstraint,
    DidiRegressionConstraint, ViolationScore,
};
pub use domain::{
    validate_dataset, Dataset, IterationRecord, MasterMode, Matrix, ProtectedGroups, RunHistory, TargetVector, TaskKind,
};
pub use error::{Error, Result};
pub use evaluation::{cross_validate, generalization_ratios, score_s, ConstraintRecipe, CvConfig, Experiment, Method, ScoreReport};
pub use learners::{fit, LearnerKind, LearnerSpec, TrainedModel};
pub use losses::LossKind;
pub use masters::{ideal_projection, solve, Certificate, MasterForm, MasterProblem, MasterSolution};
pub use scalar::Scalar;

pub type MatrixF64 = Matrix<f64>;
pub type TargetVectorF64 = TargetVector<f64>;
pub type DatasetF64 = Dataset<f64>;
pub type ConstraintSpecF64 = ConstraintSpec<f64>;
pub type MasterProblemF64 = MasterProblem<f64>;
pub type MasterSolutionF64 = MasterSolution<f64>;
pub type TrainedModelF64 = TrainedModel<f64>;
pub type RunHistoryF64 = RunHistory<f64>;
pub type MovingTargetsConfigF64 = MovingTargetsConfig<f64>;
