//! Scoring (S for quality, C for constraint violation), k-fold
//! cross-validation with per-fold thresholds, and test/train ratios.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithm::{run, run_pretrain_only, run_preprocessing_baseline, ModelSelection, MovingTargetsConfig};
use crate::constraints::{
    violation_score, BalanceConstraint, ConstraintSpec, CustomConstraint, DidiClassificationConstraint,
    DidiRegressionConstraint, ViolationScore, DEFAULT_BALANCE_TOLERANCE, DEFAULT_DIDI_FRACTION,
};
use crate::data::{FeatureStats, Scaling};
use crate::domain::{Dataset, RunHistory, TargetVector, TaskKind};
use crate::error::{usage, Result};
use crate::learners::{LearnerSpec, TrainedModel};
use crate::losses::hamming;
use crate::masters::ideal_projection;
use crate::scalar::Scalar;

/// Stand-in for R² when the truth is constant and the prediction is not.
pub const R2_SENTINEL: f64 = -1e12;
/// Denominators below this make a ratio undefined.
pub const RATIO_GUARD: f64 = 1e-12;

/// Accuracy for class labels, R² for real values.
pub fn score_s<T: Scalar>(y_pred: &TargetVector<T>, y_true: &TargetVector<T>) -> Result<f64> {
    match (y_pred, y_true) {
        (TargetVector::ClassLabels(p), TargetVector::ClassLabels(t)) => Ok(1.0 - hamming(p, t)?),
        (TargetVector::Values(p), TargetVector::Values(t)) => {
            if p.len() != t.len() {
                return usage(format!("length mismatch: {} vs {}", p.len(), t.len()));
            }
            if t.is_empty() {
                return usage("R² of an empty vector");
            }
            let mean = t.iter().map(|v| v.as_f64()).sum::<f64>() / t.len() as f64;
            let ss_tot: f64 = t.iter().map(|v| (v.as_f64() - mean).powi(2)).sum();
            let ss_res: f64 = p.iter().zip(t).map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2)).sum();
            Ok(if ss_tot == 0.0 {
                if ss_res == 0.0 {
                    1.0
                } else {
                    R2_SENTINEL
                }
            } else {
                1.0 - ss_res / ss_tot
            })
        }
        _ => usage("score of mismatched target kinds"),
    }
}

/// How a DIDI threshold is derived from the training targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    /// `epsilon = fraction * DIDI(training targets)`.
    Fraction(f64),
    Absolute(f64),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Fraction(DEFAULT_DIDI_FRACTION)
    }
}

/// A constraint described independently of any particular split, so its
/// thresholds can be recomputed from each training fold.
#[derive(Clone, Debug)]
pub enum ConstraintRecipe<T: Scalar> {
    Balance { xi: f64 },
    DidiClassification { threshold: Threshold },
    DidiRegression { threshold: Threshold },
    /// Used verbatim on every split.
    Custom(Arc<dyn CustomConstraint<T>>),
}

impl<T: Scalar> ConstraintRecipe<T> {
    pub fn balance() -> Self {
        ConstraintRecipe::Balance {
            xi: DEFAULT_BALANCE_TOLERANCE,
        }
    }

    /// Binds the recipe to a training split.
    pub fn build(&self, train: &Dataset<T>) -> Result<ConstraintSpec<T>> {
        let need_groups = || {
            train
                .groups
                .clone()
                .ok_or_else(|| crate::Error::Usage("DIDI constraint needs protected groups".into()))
        };
        let epsilon = |threshold: Threshold, didi: f64| match threshold {
            Threshold::Fraction(f) => f * didi,
            Threshold::Absolute(e) => e,
        };
        Ok(match (self, train.task) {
            (ConstraintRecipe::Balance { xi }, TaskKind::Classification { num_classes }) => {
                ConstraintSpec::Balance(BalanceConstraint::new(*xi, num_classes)?)
            }
            (ConstraintRecipe::DidiClassification { threshold }, TaskKind::Classification { num_classes }) => {
                let groups = need_groups()?;
                let base = DidiClassificationConstraint::from_training(groups, train.targets.labels()?, num_classes)?;
                let eps = epsilon(*threshold, base.didi_train);
                ConstraintSpec::DidiClassification(DidiClassificationConstraint::with_epsilon(
                    base.groups,
                    num_classes,
                    eps,
                    base.didi_train,
                )?)
            }
            (ConstraintRecipe::DidiRegression { threshold }, TaskKind::Regression) => {
                let groups = need_groups()?;
                let base = DidiRegressionConstraint::from_training(groups, train.targets.values()?)?;
                let eps = epsilon(*threshold, base.didi_train);
                ConstraintSpec::DidiRegression(DidiRegressionConstraint::with_epsilon(base.groups, eps, base.didi_train)?)
            }
            (ConstraintRecipe::Custom(c), _) => ConstraintSpec::Custom(c.clone()),
            (_, task) => return usage(format!("constraint recipe does not apply to task {task:?}")),
        })
    }
}

/// What produces the evaluated predictions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum Method {
    /// A single fit on the true targets.
    Pretrain,
    /// Fit on the projection of the true targets.
    Preprocessing,
    MovingTargets { alpha: f64, beta: f64, iterations: usize },
    /// The projection itself, no learner: the projection of each split's own
    /// targets under that split's constraint.
    Ideal,
}

#[derive(Clone, Debug)]
pub struct Experiment<T: Scalar> {
    pub method: Method,
    pub learner: LearnerSpec,
    pub constraint: ConstraintRecipe<T>,
    pub skip_pretraining: bool,
    pub selection: ModelSelection,
    pub warm_start: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
    pub scaling: Scaling,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 0,
            scaling: Scaling::Standardize,
        }
    }
}

/// Test-fold index sets. Classification folds are stratified: each class is
/// shuffled and dealt round-robin, continuing the deal across classes.
pub fn fold_assignment(targets: &TargetVector<impl Scalar>, task: TaskKind, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let m = targets.len();
    if folds < 2 {
        return usage(format!("need at least 2 folds, got {folds}"));
    }
    if folds > m {
        return usage(format!("{folds} folds for {m} examples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strata: Vec<Vec<usize>> = match task {
        TaskKind::Classification { num_classes } => {
            if m / folds < num_classes {
                return usage(format!(
                    "folds of {} examples cannot be stratified over {num_classes} classes",
                    m / folds
                ));
            }
            let labels = targets.labels()?;
            (1..=num_classes)
                .map(|j| (0..m).filter(|&i| labels[i] == j).collect())
                .collect()
        }
        TaskKind::Regression => vec![(0..m).collect()],
    };
    let mut out = vec![Vec::new(); folds];
    let mut next = 0;
    for mut s in strata {
        s.shuffle(&mut rng);
        for i in s {
            out[next].push(i);
            next = (next + 1) % folds;
        }
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

/// Thresholds a fold ran with, as derived from its training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldThresholds {
    pub epsilon: Option<f64>,
    pub didi_train: Option<f64>,
    pub capacity: Option<usize>,
}

impl FoldThresholds {
    pub fn of<T: Scalar>(spec: &ConstraintSpec<T>, m: usize) -> Self {
        match spec {
            ConstraintSpec::Balance(b) => Self {
                epsilon: None,
                didi_train: None,
                capacity: Some(b.capacity(m)),
            },
            ConstraintSpec::DidiClassification(c) => Self {
                epsilon: Some(c.epsilon),
                didi_train: Some(c.didi_train),
                capacity: None,
            },
            ConstraintSpec::DidiRegression(c) => Self {
                epsilon: Some(c.epsilon),
                didi_train: Some(c.didi_train),
                capacity: None,
            },
            ConstraintSpec::Custom(_) => Self {
                epsilon: None,
                didi_train: None,
                capacity: None,
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct FoldOutcome<T> {
    pub fold: usize,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub thresholds: FoldThresholds,
    pub train_s: f64,
    pub test_s: f64,
    pub train_c: ViolationScore,
    pub test_c: ViolationScore,
    /// Present for moving-targets runs.
    pub history: Option<RunHistory<T>>,
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub s: Vec<f64>,
    pub c: Vec<ViolationScore>,
    pub s_mean: f64,
    pub s_std: f64,
    /// Mean and spread of the displayed (capped) C values.
    pub c_mean: f64,
    pub c_std: f64,
    pub any_capped: bool,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl ScoreReport {
    pub fn new(s: Vec<f64>, c: Vec<ViolationScore>) -> Self {
        let (s_mean, s_std) = mean_std(&s);
        let shown: Vec<f64> = c.iter().map(|v| v.reported()).collect();
        let (c_mean, c_std) = mean_std(&shown);
        let any_capped = c.iter().any(|v| v.capped);
        Self {
            s,
            c,
            s_mean,
            s_std,
            c_mean,
            c_std,
            any_capped,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CvResult<T> {
    pub train: ScoreReport,
    pub test: ScoreReport,
    pub folds: Vec<FoldOutcome<T>>,
}

fn predictions<T: Scalar>(model: &TrainedModel<T>, d: &Dataset<T>) -> Result<TargetVector<T>> {
    model.predict(&d.features)
}

fn run_fold<T: Scalar>(
    exp: &Experiment<T>,
    data: &Dataset<T>,
    cv: &CvConfig,
    fold: usize,
    test_idx: &[usize],
) -> Result<FoldOutcome<T>> {
    let start = std::time::Instant::now();
    let mut is_test = vec![false; data.len()];
    for &i in test_idx {
        is_test[i] = true;
    }
    let train_idx: Vec<usize> = (0..data.len()).filter(|&i| !is_test[i]).collect();
    let stats = FeatureStats::fit(&data.features, &train_idx, cv.scaling)?;
    let mut scaled = data.clone();
    scaled.features = stats.apply(&data.features);
    let train = scaled.subset(&train_idx);
    let test = scaled.subset(test_idx);

    let train_spec = exp.constraint.build(&train)?;
    let test_spec = train_spec.rebind_groups(test.groups.as_ref())?;

    let mut history = None;
    let (train_pred, test_pred) = match exp.method {
        Method::Ideal => (
            ideal_projection(&train_spec, &train.targets)?.z,
            ideal_projection(&test_spec, &test.targets)?.z,
        ),
        Method::Pretrain => {
            let (model, _) = run_pretrain_only(&exp.learner, &train_spec, &train)?;
            (predictions(&model, &train)?, predictions(&model, &test)?)
        }
        Method::Preprocessing => {
            let (model, _) = run_preprocessing_baseline(&exp.learner, &train_spec, &train)?;
            (predictions(&model, &train)?, predictions(&model, &test)?)
        }
        Method::MovingTargets { alpha, beta, iterations } => {
            let mut cfg = MovingTargetsConfig::new(exp.learner.clone(), train_spec.clone());
            cfg.alpha = alpha;
            cfg.beta = beta;
            cfg.iterations = iterations;
            cfg.skip_pretraining = exp.skip_pretraining;
            cfg.selection = exp.selection;
            cfg.warm_start = exp.warm_start;
            let (model, h) = run(&cfg, &train)?;
            history = Some(h);
            (predictions(&model, &train)?, predictions(&model, &test)?)
        }
    };
    Ok(FoldOutcome {
        fold,
        thresholds: FoldThresholds::of(&train_spec, train.len()),
        train_s: score_s(&train_pred, &train.targets)?,
        test_s: score_s(&test_pred, &test.targets)?,
        train_c: violation_score(&train_spec, &train_pred)?,
        test_c: violation_score(&test_spec, &test_pred)?,
        train_indices: train_idx,
        test_indices: test_idx.to_vec(),
        history,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// k-fold cross-validation of one experiment. Feature scaling and constraint
/// thresholds are fitted on each training split; the test C score reuses
/// the training threshold with the test split's groups. Folds run in
/// parallel and are reported in fold order.
pub fn cross_validate<T: Scalar>(exp: &Experiment<T>, data: &Dataset<T>, cv: &CvConfig) -> Result<CvResult<T>> {
    let folds = fold_assignment(&data.targets, data.task, cv.folds, cv.seed)?;
    let outcomes: Vec<FoldOutcome<T>> = folds
        .par_iter()
        .enumerate()
        .map(|(k, test_idx)| run_fold(exp, data, cv, k, test_idx))
        .collect::<Result<_>>()?;
    let train = ScoreReport::new(
        outcomes.iter().map(|o| o.train_s).collect(),
        outcomes.iter().map(|o| o.train_c).collect(),
    );
    let test = ScoreReport::new(
        outcomes.iter().map(|o| o.test_s).collect(),
        outcomes.iter().map(|o| o.test_c).collect(),
    );
    Ok(CvResult {
        train,
        test,
        folds: outcomes,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    /// Mean of the defined per-fold ratios; `None` when no fold is defined.
    pub value: Option<f64>,
    /// Folds with a zero denominator and nonzero numerator, left out of the mean.
    pub undefined_folds: usize,
    /// Folds where both sides were zero, counted as 1.
    pub zero_over_zero_folds: usize,
}

impl Ratio {
    pub fn flagged(&self) -> bool {
        self.undefined_folds > 0 || self.zero_over_zero_folds > 0
    }
}

fn mean_ratio(num: &[f64], den: &[f64]) -> Ratio {
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut undefined = 0;
    let mut zero_zero = 0;
    for (&a, &b) in num.iter().zip(den) {
        if b.abs() < RATIO_GUARD {
            if a.abs() < RATIO_GUARD {
                zero_zero += 1;
                sum += 1.0;
                n += 1;
            } else {
                undefined += 1;
            }
        } else {
            sum += a / b;
            n += 1;
        }
    }
    Ratio {
        value: (n > 0).then(|| sum / n as f64),
        undefined_folds: undefined,
        zero_over_zero_folds: zero_zero,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationRatios {
    pub s: Ratio,
    pub c: Ratio,
}

/// Per-fold test/train ratios of S and of the displayed C, averaged.
pub fn generalization_ratios(train: &ScoreReport, test: &ScoreReport) -> Result<GeneralizationRatios> {
    if train.s.len() != test.s.len() || train.c.len() != test.c.len() {
        return usage("train and test reports cover different fold counts");
    }
    let shown = |r: &ScoreReport| r.c.iter().map(|v| v.reported()).collect::<Vec<_>>();
    Ok(GeneralizationRatios {
        s: mean_ratio(&test.s, &train.s),
        c: mean_ratio(&shown(test), &shown(train)),
    })
}
