//! The alternating loop: pretrain on the true targets, then repeatedly adjust
//! the targets with a master step and refit the learner on them.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::constraints::{is_feasible, violation_score, ConstraintSpec};
use crate::domain::{Dataset, IterationRecord, MasterMode, RunHistory, TargetVector, TaskKind};
use crate::error::{usage, Error, Result};
use crate::learners::{fit_from, LearnerSpec, TrainedModel};
use crate::losses::task_loss;
use crate::masters::{solve, MasterProblem, MasterSolution};
use crate::scalar::Scalar;

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_BETA: f64 = 0.1;
pub const DEFAULT_ITERATIONS: usize = 15;

/// Which learner step's model `run` returns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSelection {
    #[default]
    Final,
    /// Lowest loss to the true targets among feasible iterates, or the
    /// smallest violation when none is feasible. Ties keep the earlier one.
    BestIterate,
}

#[derive(Clone, Debug)]
pub struct MovingTargetsConfig<T: Scalar> {
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub learner: LearnerSpec,
    pub constraint: ConstraintSpec<T>,
    /// Root seed; every learner step gets a seed derived from it.
    pub seed: u64,
    /// Start the first master step from the true targets instead of a
    /// pretrained model's predictions.
    pub skip_pretraining: bool,
    pub selection: ModelSelection,
    /// Continue each learner step from the previous step's model instead of
    /// a fresh initialization.
    pub warm_start: bool,
}

impl<T: Scalar> MovingTargetsConfig<T> {
    pub fn new(learner: LearnerSpec, constraint: ConstraintSpec<T>) -> Self {
        let seed = learner.seed;
        Self {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            iterations: DEFAULT_ITERATIONS,
            learner,
            constraint,
            seed,
            skip_pretraining: false,
            selection: ModelSelection::Final,
            warm_start: false,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v > 0.0 && v.is_finite()) {
                return usage(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.skip_pretraining && self.iterations == 0 {
            return usage("skipping pretraining needs at least one iteration");
        }
        Ok(())
    }
}

/// Seed for learner step `k`; step 0 uses the root seed unchanged so a run
/// with no iterations matches a plain fit.
pub fn iteration_seed(root: u64, k: usize) -> u64 {
    if k == 0 {
        return root;
    }
    // splitmix64 finalizer
    let mut z = root.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Errors unless the constraint applies to the dataset's task.
pub fn check_compatible<T: Scalar>(spec: &ConstraintSpec<T>, task: TaskKind, m: usize) -> Result<()> {
    let ok = match (spec, task) {
        (ConstraintSpec::Balance(b), TaskKind::Classification { num_classes }) => b.num_classes == num_classes,
        (ConstraintSpec::DidiClassification(d), TaskKind::Classification { num_classes }) => {
            d.num_classes == num_classes && d.groups.num_examples() == m
        }
        (ConstraintSpec::DidiRegression(d), TaskKind::Regression) => d.groups.num_examples() == m,
        (ConstraintSpec::Custom(_), _) => true,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        usage(format!(
            "{} constraint does not fit a {task:?} dataset of {m} examples",
            spec.kind_name()
        ))
    }
}

struct Step<T> {
    model: TrainedModel<T>,
    predictions: TargetVector<T>,
    seconds: f64,
}

fn learner_step<T: Scalar>(
    learner: &LearnerSpec,
    data: &Dataset<T>,
    z: &TargetVector<T>,
    previous: Option<&TrainedModel<T>>,
) -> Result<Step<T>> {
    let start = Instant::now();
    let model = fit_from(learner, &data.features, z, data.task, previous)?;
    let predictions = model.predict(&data.features)?;
    Ok(Step {
        model,
        predictions,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn record<T: Scalar>(
    k: usize,
    spec: &ConstraintSpec<T>,
    y_star: &TargetVector<T>,
    predictions: TargetVector<T>,
    learner_wall_time: f64,
) -> Result<IterationRecord<T>> {
    Ok(IterationRecord {
        k,
        adjusted_targets: None,
        loss_to_ground_truth: task_loss(&predictions, y_star)?,
        constraint_violation: violation_score(spec, &predictions)?.value,
        predictions_feasible: is_feasible(spec, &predictions)?,
        predictions,
        master_mode: MasterMode::Skipped,
        beta_fallback: false,
        master_objective: None,
        master_wall_time: 0.0,
        learner_wall_time,
    })
}

fn at_iteration<R>(k: usize, r: Result<R>) -> Result<R> {
    r.map_err(|e| Error::Iteration {
        iteration: k,
        source: Box::new(e),
    })
}

/// Whether `cand` beats `best` under [`ModelSelection::BestIterate`].
fn better<T>(cand: &IterationRecord<T>, best: &IterationRecord<T>) -> bool {
    match (cand.predictions_feasible, best.predictions_feasible) {
        (true, false) => true,
        (false, true) => false,
        (true, true) => cand.loss_to_ground_truth < best.loss_to_ground_truth,
        (false, false) => cand.constraint_violation < best.constraint_violation,
    }
}

/// Master step on the current predictions: alpha when they are infeasible,
/// beta otherwise, falling back to alpha if the beta ball misses the
/// feasible set. Returns the solution, the mode that ran and the fallback flag.
fn master_step<T: Scalar>(
    cfg: &MovingTargetsConfig<T>,
    y_star: &TargetVector<T>,
    y: &TargetVector<T>,
) -> Result<(MasterSolution<T>, MasterMode, bool)> {
    let spec = cfg.constraint.clone();
    if !is_feasible(&cfg.constraint, y)? {
        let p = MasterProblem::alpha(cfg.alpha, spec, y_star.clone(), y.clone());
        return Ok((solve(&p)?, MasterMode::Alpha, false));
    }
    let p = MasterProblem::beta(cfg.beta, spec.clone(), y_star.clone(), y.clone());
    match solve(&p) {
        Ok(sol) => Ok((sol, MasterMode::Beta, false)),
        Err(Error::Infeasible(why)) => {
            log::info!("beta master infeasible ({why}), falling back to alpha");
            let p = MasterProblem::alpha(cfg.alpha, spec, y_star.clone(), y.clone());
            Ok((solve(&p)?, MasterMode::Alpha, true))
        }
        Err(e) => Err(e),
    }
}

/// Runs the full alternating loop and returns the selected model with the
/// complete history (`iterations + 1` records).
pub fn run<T: Scalar>(cfg: &MovingTargetsConfig<T>, data: &Dataset<T>) -> Result<(TrainedModel<T>, RunHistory<T>)> {
    cfg.validate()?;
    check_compatible(&cfg.constraint, data.task, data.len())?;
    let y_star = &data.targets;
    let spec = &cfg.constraint;
    let mut history = RunHistory::default();
    let mut chosen: Option<(TrainedModel<T>, usize)> = None;
    let mut last: Option<TrainedModel<T>> = None;

    let mut y = if cfg.skip_pretraining {
        history.iterations.push(at_iteration(0, record(0, spec, y_star, y_star.clone(), 0.0))?);
        y_star.clone()
    } else {
        let step = at_iteration(
            0,
            learner_step(&cfg.learner.with_seed(iteration_seed(cfg.seed, 0)), data, y_star, None),
        )?;
        history
            .iterations
            .push(at_iteration(0, record(0, spec, y_star, step.predictions.clone(), step.seconds))?);
        chosen = Some((step.model.clone(), 0));
        last = Some(step.model);
        step.predictions
    };

    for k in 1..=cfg.iterations {
        let (sol, mode, fallback) = at_iteration(k, master_step(cfg, y_star, &y))?;
        let learner = cfg.learner.with_seed(iteration_seed(cfg.seed, k));
        let previous = if cfg.warm_start { last.as_ref() } else { None };
        let step = at_iteration(k, learner_step(&learner, data, &sol.z, previous))?;
        let mut rec = at_iteration(k, record(k, spec, y_star, step.predictions.clone(), step.seconds))?;
        rec.adjusted_targets = Some(sol.z);
        rec.master_mode = mode;
        rec.beta_fallback = fallback;
        rec.master_objective = Some(sol.objective);
        rec.master_wall_time = sol.wall_time;
        log::debug!(
            "iteration {k}: {mode:?}, loss {:.6}, violation {:.6}",
            rec.loss_to_ground_truth,
            rec.constraint_violation
        );

        let keep = match (cfg.selection, &chosen) {
            (ModelSelection::Final, _) | (_, None) => true,
            (ModelSelection::BestIterate, Some((_, idx))) => better(&rec, &history.iterations[*idx]),
        };
        if keep {
            chosen = Some((step.model.clone(), k));
        }
        last = Some(step.model);
        y = step.predictions;
        history.iterations.push(rec);
    }
    let (model, _) = chosen.expect("at least one learner step ran");
    Ok((model, history))
}

/// The pretraining baseline: one fit on the true targets.
pub fn run_pretrain_only<T: Scalar>(
    learner: &LearnerSpec,
    constraint: &ConstraintSpec<T>,
    data: &Dataset<T>,
) -> Result<(TrainedModel<T>, IterationRecord<T>)> {
    check_compatible(constraint, data.task, data.len())?;
    let step = learner_step(learner, data, &data.targets, None)?;
    let rec = record(0, constraint, &data.targets, step.predictions, step.seconds)?;
    Ok((step.model, rec))
}

/// The preprocessing baseline: project the true targets onto the feasible
/// set once, then fit on the projection.
pub fn run_preprocessing_baseline<T: Scalar>(
    learner: &LearnerSpec,
    constraint: &ConstraintSpec<T>,
    data: &Dataset<T>,
) -> Result<(TrainedModel<T>, IterationRecord<T>)> {
    check_compatible(constraint, data.task, data.len())?;
    let sol = crate::masters::ideal_projection(constraint, &data.targets)?;
    let step = learner_step(learner, data, &sol.z, None)?;
    let mut rec = record(0, constraint, &data.targets, step.predictions, step.seconds)?;
    rec.adjusted_targets = Some(sol.z);
    rec.master_objective = Some(sol.objective);
    rec.master_wall_time = sol.wall_time;
    Ok((step.model, rec))
}
