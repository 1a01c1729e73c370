//! CSV ingestion, feature scaling fitted on training rows, and synthetic
//! fixtures.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, Matrix, ProtectedGroups, TargetVector, TaskKind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const SCALE_FLOOR: f64 = 1e-12;
pub const MISSING_CATEGORY: &str = "missing";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSchema {
    Classification,
    Regression,
}

/// How to turn a CSV file into a dataset. Columns not named anywhere are
/// numeric features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub target: String,
    pub task: TaskSchema,
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default)]
    pub protected: Vec<String>,
    #[serde(default)]
    pub drop: Vec<String>,
    /// Also one-hot encode the protected columns as features.
    #[serde(default)]
    pub include_protected: bool,
}

impl Schema {
    pub fn new(target: &str, task: TaskSchema) -> Self {
        Self {
            target: target.to_string(),
            task,
            categorical: Vec::new(),
            protected: Vec::new(),
            drop: Vec::new(),
            include_protected: false,
        }
    }
}

enum Column {
    Numeric(usize),
    Categorical(usize, Vec<String>),
}

/// Class names in label order: numeric when every name parses as a number,
/// lexicographic otherwise.
fn class_order(names: &BTreeSet<String>) -> Vec<String> {
    let mut v: Vec<String> = names.iter().cloned().collect();
    let numeric: Option<Vec<f64>> = v.iter().map(|s| s.parse::<f64>().ok()).collect();
    if let Some(keys) = numeric {
        let mut pairs: Vec<(f64, String)> = keys.into_iter().zip(v).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        v = pairs.into_iter().map(|p| p.1).collect();
    }
    v
}

/// Reads a headed, comma-separated file. Classification targets are mapped
/// to labels `1..=c` in sorted class order; see [`class_order`].
pub fn load_csv<T: Scalar>(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset<T>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let position = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column '{name}' not found")))
    };
    let target_col = position(&schema.target)?;
    let mut protected_cols = Vec::new();
    for name in &schema.protected {
        protected_cols.push(position(name)?);
    }
    let mut categorical_cols = BTreeSet::new();
    for name in &schema.categorical {
        categorical_cols.insert(position(name)?);
    }
    let mut skipped = BTreeSet::from([target_col]);
    for name in &schema.drop {
        skipped.insert(position(name)?);
    }
    if !schema.include_protected {
        skipped.extend(protected_cols.iter().copied());
    } else {
        categorical_cols.extend(protected_cols.iter().copied());
    }

    let records: Vec<csv::StringRecord> = reader.records().collect::<std::result::Result<_, _>>()?;
    if records.is_empty() {
        return Err(Error::Schema("file has no data rows".into()));
    }
    let cell = |r: &csv::StringRecord, j: usize| r.get(j).unwrap_or("").trim().to_string();
    let categorical_value = |r: &csv::StringRecord, j: usize| {
        let v = cell(r, j);
        if v.is_empty() {
            MISSING_CATEGORY.to_string()
        } else {
            v
        }
    };

    let mut columns = Vec::new();
    let mut feature_names = Vec::new();
    for (j, name) in header.iter().enumerate() {
        if skipped.contains(&j) {
            continue;
        }
        if categorical_cols.contains(&j) {
            let levels: BTreeSet<String> = records.iter().map(|r| categorical_value(r, j)).collect();
            let levels: Vec<String> = levels.into_iter().collect();
            feature_names.extend(levels.iter().map(|l| format!("{name}={l}")));
            columns.push(Column::Categorical(j, levels));
        } else {
            feature_names.push(name.clone());
            columns.push(Column::Numeric(j));
        }
    }

    let m = records.len();
    let d = feature_names.len();
    let mut features = Matrix::zeros(m, d);
    for (i, r) in records.iter().enumerate() {
        let row = features.row_mut(i);
        let mut at = 0;
        for col in &columns {
            match col {
                Column::Numeric(j) => {
                    let raw = cell(r, *j);
                    let v: f64 = raw.parse().map_err(|_| Error::Parse {
                        row: i + 1,
                        column: header[*j].clone(),
                        message: format!("'{raw}' is not a number"),
                    })?;
                    row[at] = T::lit(v);
                    at += 1;
                }
                Column::Categorical(j, levels) => {
                    let v = categorical_value(r, *j);
                    let k = levels.binary_search(&v).expect("level collected above");
                    row[at + k] = T::one();
                    at += levels.len();
                }
            }
        }
    }

    let raw_targets: Vec<String> = records.iter().map(|r| cell(r, target_col)).collect();
    if let Some(i) = raw_targets.iter().position(|t| t.is_empty()) {
        return Err(Error::Parse {
            row: i + 1,
            column: schema.target.clone(),
            message: "missing target".into(),
        });
    }
    let (targets, task) = match schema.task {
        TaskSchema::Classification => {
            let names: BTreeSet<String> = raw_targets.iter().cloned().collect();
            let order = class_order(&names);
            let index: BTreeMap<&str, usize> = order.iter().enumerate().map(|(k, n)| (n.as_str(), k + 1)).collect();
            let labels = raw_targets.iter().map(|t| index[t.as_str()]).collect();
            (
                TargetVector::ClassLabels(labels),
                TaskKind::Classification {
                    num_classes: order.len(),
                },
            )
        }
        TaskSchema::Regression => {
            let mut values = Vec::with_capacity(m);
            for (i, t) in raw_targets.iter().enumerate() {
                let v: f64 = t.parse().map_err(|_| Error::Parse {
                    row: i + 1,
                    column: schema.target.clone(),
                    message: format!("'{t}' is not a number"),
                })?;
                values.push(T::lit(v));
            }
            (TargetVector::Values(values), TaskKind::Regression)
        }
    };

    let groups = if protected_cols.is_empty() {
        None
    } else {
        let cols: Vec<(String, Vec<String>)> = protected_cols
            .iter()
            .map(|&j| (header[j].clone(), records.iter().map(|r| categorical_value(r, j)).collect()))
            .collect();
        Some(ProtectedGroups::from_columns(&cols)?)
    };

    let mut data = Dataset::new(features, targets, task, groups);
    data.feature_names = feature_names;
    Ok(data)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    #[default]
    Standardize,
    MinMax,
    None,
}

/// Per-feature affine map `x -> (x - shift) / scale` fitted on some rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureStats {
    pub fn fit<T: Scalar>(x: &Matrix<T>, rows: &[usize], scaling: Scaling) -> Result<Self> {
        if rows.is_empty() {
            return crate::error::usage("feature statistics need at least one row");
        }
        let d = x.cols();
        let n = rows.len() as f64;
        let mut shift = vec![0.0; d];
        let mut scale = vec![1.0; d];
        for j in 0..d {
            let col = || rows.iter().map(|&i| x.get(i, j).as_f64());
            match scaling {
                Scaling::Standardize => {
                    let mean = col().sum::<f64>() / n;
                    let var = col().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    shift[j] = mean;
                    scale[j] = var.sqrt().max(SCALE_FLOOR);
                }
                Scaling::MinMax => {
                    let lo = col().fold(f64::INFINITY, f64::min);
                    let hi = col().fold(f64::NEG_INFINITY, f64::max);
                    shift[j] = lo;
                    scale[j] = (hi - lo).max(SCALE_FLOOR);
                }
                Scaling::None => {}
            }
        }
        Ok(Self { shift, scale })
    }

    pub fn apply<T: Scalar>(&self, x: &Matrix<T>) -> Matrix<T> {
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = T::lit((v.as_f64() - self.shift[j]) / self.scale[j]);
            }
        }
        out
    }
}

fn rescale<T: Scalar>(d: &Dataset<T>, rows: &[usize], scaling: Scaling) -> Result<(Dataset<T>, FeatureStats)> {
    let stats = FeatureStats::fit(&d.features, rows, scaling)?;
    let mut out = d.clone();
    out.features = stats.apply(&d.features);
    Ok((out, stats))
}

/// Zero mean, unit (population) variance per feature, with statistics taken
/// from `stats_from` only and applied to every row.
pub fn standardize<T: Scalar>(d: &Dataset<T>, stats_from: &[usize]) -> Result<(Dataset<T>, FeatureStats)> {
    rescale(d, stats_from, Scaling::Standardize)
}

/// Maps the `stats_from` rows into `[0, 1]`; other rows are not clipped.
pub fn minmax_normalize<T: Scalar>(d: &Dataset<T>, stats_from: &[usize]) -> Result<(Dataset<T>, FeatureStats)> {
    rescale(d, stats_from, Scaling::MinMax)
}

/// Class counts for `m` examples under priors that move from uniform
/// (`skew = 0`) to all mass on class 1 (`skew = 1`). Largest remainder
/// rounding, so counts are exact rather than sampled.
fn skewed_counts(m: usize, c: usize, skew: f64) -> Vec<usize> {
    let priors: Vec<f64> = (0..c)
        .map(|j| (1.0 - skew) / c as f64 + if j == 0 { skew } else { 0.0 })
        .collect();
    let raw: Vec<f64> = priors.iter().map(|p| p * m as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let short = m - counts.iter().sum::<usize>();
    for &j in order.iter().take(short) {
        counts[j] += 1;
    }
    counts
}

/// Gaussian blobs in two dimensions, one per class, centred on a circle of
/// radius 2.5 with unit noise. Carries one protected feature `group` that
/// alternates a/b over the shuffled rows.
pub fn synth_classification<T: Scalar>(m: usize, c: usize, skew: f64, seed: u64) -> Result<Dataset<T>> {
    if m == 0 || c < 2 || !(0.0..=1.0).contains(&skew) {
        return crate::error::usage(format!("need m >= 1, c >= 2 and skew in [0, 1]; got {m}, {c}, {skew}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = skewed_counts(m, c, skew);
    let mut labels: Vec<usize> = counts.iter().enumerate().flat_map(|(j, &n)| std::iter::repeat_n(j + 1, n)).collect();
    labels.shuffle(&mut rng);
    let noise = Normal::new(0.0, 1.0).expect("valid normal");
    let mut features = Matrix::zeros(m, 2);
    for (i, &l) in labels.iter().enumerate() {
        let angle = std::f64::consts::TAU * (l - 1) as f64 / c as f64;
        let row = features.row_mut(i);
        row[0] = T::lit(2.5 * angle.cos() + noise.sample(&mut rng));
        row[1] = T::lit(2.5 * angle.sin() + noise.sample(&mut rng));
    }
    let group: Vec<String> = (0..m).map(|i| if i % 2 == 0 { "a" } else { "b" }.to_string()).collect();
    let groups = ProtectedGroups::from_columns(&[("group".to_string(), group)])?;
    Ok(Dataset::new(
        features,
        TargetVector::ClassLabels(labels),
        TaskKind::Classification { num_classes: c },
        Some(groups),
    ))
}

/// Linear targets on three Gaussian features plus a group indicator
/// feature. The first `ceil(m/2)` rows form group `a`, the rest group `b`;
/// the noise-free part is centred within each group so group `b`'s mean
/// sits exactly `group_bias` above group `a`'s and the DIDI of the targets
/// equals `group_bias` up to rounding.
pub fn synth_regression_with_groups<T: Scalar>(m: usize, group_bias: f64, seed: u64) -> Result<Dataset<T>> {
    if m < 2 || !group_bias.is_finite() || group_bias < 0.0 {
        return crate::error::usage(format!("need m >= 2 and a finite group_bias >= 0; got {m}, {group_bias}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let w = [1.0, -0.5, 0.25];
    let split = m.div_ceil(2);
    let mut x = vec![[0.0f64; 3]; m];
    let mut base = vec![0.0f64; m];
    for i in 0..m {
        for v in x[i].iter_mut() {
            *v = normal.sample(&mut rng);
        }
        base[i] = x[i].iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + 0.1 * normal.sample(&mut rng);
    }
    for range in [0..split, split..m] {
        let mean = base[range.clone()].iter().sum::<f64>() / range.len() as f64;
        for v in &mut base[range] {
            *v -= mean;
        }
    }
    let mut features = Matrix::zeros(m, 4);
    let mut y = Vec::with_capacity(m);
    for i in 0..m {
        let g = if i < split { 0.0 } else { 1.0 };
        let row = features.row_mut(i);
        for k in 0..3 {
            row[k] = T::lit(x[i][k]);
        }
        row[3] = T::lit(g);
        y.push(T::lit(base[i] + group_bias * g));
    }
    let groups = ProtectedGroups::from_index_sets(m, &[("group", vec![(0..split).collect(), (split..m).collect()])]);
    let mut d = Dataset::new(features, TargetVector::Values(y), TaskKind::Regression, Some(groups));
    d.feature_names = vec!["x0".into(), "x1".into(), "x2".into(), "group".into()];
    Ok(d)
}

/// Four examples, groups {0,1} and {2,3}, targets `[0, 0, b, b]` and the
/// group indicator as the only feature.
pub fn regression_toy<T: Scalar>(group_bias: f64) -> Dataset<T> {
    let b = T::lit(group_bias);
    let features = Matrix::new(4, 1, vec![T::zero(), T::zero(), T::one(), T::one()]).expect("4 x 1");
    let groups = ProtectedGroups::from_index_sets(4, &[("group", vec![vec![0, 1], vec![2, 3]])]);
    Dataset::new(
        features,
        TargetVector::Values(vec![T::zero(), T::zero(), b, b]),
        TaskKind::Regression,
        Some(groups),
    )
}
