//! Experiment configuration documents (TOML).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algorithm::{ModelSelection, DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_ITERATIONS};
use crate::constraints::DEFAULT_BALANCE_TOLERANCE;
use crate::data::{load_csv, regression_toy, synth_classification, synth_regression_with_groups, Scaling, Schema, TaskSchema};
use crate::domain::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{ConstraintRecipe, Method, Threshold};
use crate::learners::LearnerKind;
use crate::scalar::Scalar;

/// Stand-in for the `alpha -> 0+` column of the default grid.
pub const ALPHA_ZERO_PLUS: f64 = 1e-6;

fn default_name() -> String {
    "experiment".into()
}
fn default_folds() -> usize {
    5
}
fn default_iterations() -> usize {
    DEFAULT_ITERATIONS
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_beta() -> f64 {
    DEFAULT_BETA
}
fn default_xi() -> f64 {
    DEFAULT_BALANCE_TOLERANCE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// Iteration count for moving-targets runs that do not set their own.
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    pub learner: LearnerKind,
    #[serde(default)]
    pub skip_pretraining: bool,
    #[serde(default)]
    pub selection: ModelSelection,
    /// Learner steps continue from the previous model.
    #[serde(default)]
    pub warm_start: bool,
    #[serde(rename = "dataset")]
    pub datasets: Vec<DatasetConfig>,
    /// Cells for `run`; a single default moving-targets cell when empty.
    #[serde(default)]
    pub runs: Vec<RunConfig>,
    #[serde(default)]
    pub grid: GridConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub source: SourceConfig,
    pub constraint: ConstraintConfig,
    #[serde(default)]
    pub scaling: Scaling,
    /// Overrides the experiment-wide learner.
    #[serde(default)]
    pub learner: Option<LearnerKind>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum SourceConfig {
    Csv {
        /// Relative paths resolve against the config file's directory.
        path: PathBuf,
        target: String,
        task: TaskSchema,
        #[serde(default)]
        categorical: Vec<String>,
        #[serde(default)]
        protected: Vec<String>,
        #[serde(default)]
        drop: Vec<String>,
        #[serde(default)]
        include_protected: bool,
    },
    SyntheticClassification {
        m: usize,
        c: usize,
        skew: f64,
        #[serde(default)]
        seed: u64,
    },
    SyntheticRegression {
        m: usize,
        group_bias: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Four examples, two groups, targets `[0, 0, b, b]`.
    RegressionToy { group_bias: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum ConstraintConfig {
    Balance {
        #[serde(default = "default_xi")]
        xi: f64,
    },
    /// `epsilon` is absolute; otherwise `fraction` (default 0.2) of the
    /// training DIDI.
    DidiClassification {
        #[serde(default)]
        fraction: Option<f64>,
        #[serde(default)]
        epsilon: Option<f64>,
    },
    DidiRegression {
        #[serde(default)]
        fraction: Option<f64>,
        #[serde(default)]
        epsilon: Option<f64>,
    },
}

fn threshold(fraction: Option<f64>, epsilon: Option<f64>) -> Threshold {
    match epsilon {
        Some(e) => Threshold::Absolute(e),
        None => fraction.map(Threshold::Fraction).unwrap_or_default(),
    }
}

impl ConstraintConfig {
    pub fn recipe<T: Scalar>(&self) -> ConstraintRecipe<T> {
        match *self {
            ConstraintConfig::Balance { xi } => ConstraintRecipe::Balance { xi },
            ConstraintConfig::DidiClassification { fraction, epsilon } => ConstraintRecipe::DidiClassification {
                threshold: threshold(fraction, epsilon),
            },
            ConstraintConfig::DidiRegression { fraction, epsilon } => ConstraintRecipe::DidiRegression {
                threshold: threshold(fraction, epsilon),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method", deny_unknown_fields)]
pub enum RunConfig {
    Ptr,
    Pp,
    Ideal,
    MovingTargets {
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_beta")]
        beta: f64,
        #[serde(default)]
        iterations: Option<usize>,
    },
}

impl RunConfig {
    pub fn method(&self, default_iterations: usize) -> Method {
        match *self {
            RunConfig::Ptr => Method::Pretrain,
            RunConfig::Pp => Method::Preprocessing,
            RunConfig::Ideal => Method::Ideal,
            RunConfig::MovingTargets { alpha, beta, iterations } => Method::MovingTargets {
                alpha,
                beta,
                iterations: iterations.unwrap_or(default_iterations),
            },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Restricts the grid to these cell labels, in grid order.
    #[serde(default)]
    pub cells: Option<Vec<String>>,
    /// Adds the preprocessing baseline as a column.
    #[serde(default)]
    pub include_preprocessing: bool,
}

/// Stable label of a cell, e.g. `mt_a1_b0.1_n15`.
pub fn cell_label(method: &Method) -> String {
    match method {
        Method::Pretrain => "ptr".into(),
        Method::Preprocessing => "pp".into(),
        Method::Ideal => "ideal".into(),
        Method::MovingTargets { alpha, beta, iterations } => format!("mt_a{alpha}_b{beta}_n{iterations}"),
    }
}

/// The default grid: ptr, five (alpha, beta) pairs, the ideal case, and the
/// preprocessing baseline when requested.
pub fn grid_methods(cfg: &ExperimentConfig) -> Result<Vec<Method>> {
    let n = cfg.iterations;
    let mt = |alpha, beta| Method::MovingTargets {
        alpha,
        beta,
        iterations: n,
    };
    let mut all = vec![
        Method::Pretrain,
        mt(1.0, 0.01),
        mt(1.0, 0.05),
        mt(1.0, 0.1),
        mt(0.1, 0.01),
        mt(ALPHA_ZERO_PLUS, 0.1),
        Method::Ideal,
    ];
    if cfg.grid.include_preprocessing {
        all.push(Method::Preprocessing);
    }
    let Some(wanted) = &cfg.grid.cells else {
        return Ok(all);
    };
    let labels: Vec<String> = all.iter().map(cell_label).collect();
    for w in wanted {
        if !labels.contains(w) {
            return Err(Error::Config {
                field: "grid.cells".into(),
                message: format!("unknown cell '{w}'; expected one of {}", labels.join(", ")),
            });
        }
    }
    Ok(all.into_iter().filter(|m| wanted.contains(&cell_label(m))).collect())
}

/// Cells for `run`.
pub fn run_methods(cfg: &ExperimentConfig) -> Vec<Method> {
    if cfg.runs.is_empty() {
        vec![Method::MovingTargets {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            iterations: cfg.iterations,
        }]
    } else {
        cfg.runs.iter().map(|r| r.method(cfg.iterations)).collect()
    }
}

fn config_error(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

/// Parses a config document. Errors name the offending field path and
/// carry the parser's line/column diagnostics.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    match toml::from_str::<ExperimentConfig>(text) {
        Ok(cfg) => {
            check_ranges(&cfg)?;
            Ok(cfg)
        }
        Err(err) => {
            let field = toml::from_str::<toml::Table>(text)
                .ok()
                .and_then(|table| {
                    serde_path_to_error::deserialize::<_, ExperimentConfig>(toml::Value::Table(table))
                        .err()
                        .map(|e| e.path().to_string())
                })
                .unwrap_or_else(|| ".".into());
            Err(config_error(field, err.to_string().trim_end()))
        }
    }
}

pub fn read_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

fn positive(field: String, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config_error(field, format!("must be in (0, inf), got {v}")))
    }
}

fn nonnegative(field: String, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config_error(field, format!("must be finite and >= 0, got {v}")))
    }
}

/// Value checks the type system cannot express.
pub fn check_ranges(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.folds < 2 {
        return Err(config_error("folds", format!("need at least 2, got {}", cfg.folds)));
    }
    if cfg.datasets.is_empty() {
        return Err(config_error("dataset", "at least one [[dataset]] is required"));
    }
    let mut names = BTreeSet::new();
    for (i, d) in cfg.datasets.iter().enumerate() {
        if !names.insert(&d.name) {
            return Err(config_error(format!("dataset[{i}].name"), format!("duplicate name '{}'", d.name)));
        }
        match &d.constraint {
            ConstraintConfig::Balance { xi } => nonnegative(format!("dataset[{i}].constraint.xi"), *xi)?,
            ConstraintConfig::DidiClassification { fraction, epsilon }
            | ConstraintConfig::DidiRegression { fraction, epsilon } => {
                if fraction.is_some() && epsilon.is_some() {
                    return Err(config_error(
                        format!("dataset[{i}].constraint"),
                        "set either fraction or epsilon, not both",
                    ));
                }
                if let Some(f) = fraction {
                    nonnegative(format!("dataset[{i}].constraint.fraction"), *f)?;
                }
                if let Some(e) = epsilon {
                    nonnegative(format!("dataset[{i}].constraint.epsilon"), *e)?;
                }
            }
        }
        if let SourceConfig::SyntheticClassification { skew, .. } = &d.source {
            if !(0.0..=1.0).contains(skew) {
                return Err(config_error(format!("dataset[{i}].source.skew"), format!("must be in [0, 1], got {skew}")));
            }
        }
    }
    for (i, r) in cfg.runs.iter().enumerate() {
        if let RunConfig::MovingTargets { alpha, beta, .. } = r {
            positive(format!("runs[{i}].alpha"), *alpha)?;
            positive(format!("runs[{i}].beta"), *beta)?;
        }
    }
    Ok(())
}

/// Loads the dataset a config entry describes.
pub fn load_dataset<T: Scalar>(d: &DatasetConfig, base_dir: &Path) -> Result<Dataset<T>> {
    match &d.source {
        SourceConfig::Csv {
            path,
            target,
            task,
            categorical,
            protected,
            drop,
            include_protected,
        } => {
            let schema = Schema {
                target: target.clone(),
                task: *task,
                categorical: categorical.clone(),
                protected: protected.clone(),
                drop: drop.clone(),
                include_protected: *include_protected,
            };
            let full = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
            if !full.exists() {
                return Err(Error::Schema(format!("dataset file {} not found", full.display())));
            }
            load_csv(&full, &schema)
        }
        SourceConfig::SyntheticClassification { m, c, skew, seed } => synth_classification(*m, *c, *skew, *seed),
        SourceConfig::SyntheticRegression { m, group_bias, seed } => synth_regression_with_groups(*m, *group_bias, *seed),
        SourceConfig::RegressionToy { group_bias } => Ok(regression_toy(*group_bias)),
    }
}
