//! Shared data model: feature matrices, target vectors, protected groups and
//! the per-iteration run history.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix; rows are examples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return usage(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return usage(format!("row {i} has {} columns, expected {cols}", r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TaskKind {
    Classification { num_classes: usize },
    Regression,
}

impl TaskKind {
    pub fn num_classes(&self) -> Option<usize> {
        match self {
            TaskKind::Classification { num_classes } => Some(*num_classes),
            TaskKind::Regression => None,
        }
    }
}

/// Labels (1-based classes) or real-valued targets. This is the only object
/// exchanged between master and learner steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetVector<T> {
    ClassLabels(Vec<usize>),
    Values(Vec<T>),
}

impl<T: Scalar> TargetVector<T> {
    pub fn len(&self) -> usize {
        match self {
            TargetVector::ClassLabels(v) => v.len(),
            TargetVector::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> Result<&[usize]> {
        match self {
            TargetVector::ClassLabels(v) => Ok(v),
            TargetVector::Values(_) => usage("expected class labels, got real values"),
        }
    }

    pub fn values(&self) -> Result<&[T]> {
        match self {
            TargetVector::Values(v) => Ok(v),
            TargetVector::ClassLabels(_) => usage("expected real values, got class labels"),
        }
    }

    pub fn matches(&self, task: TaskKind) -> bool {
        matches!(
            (self, task),
            (TargetVector::ClassLabels(_), TaskKind::Classification { .. })
                | (TargetVector::Values(_), TaskKind::Regression)
        )
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        match self {
            TargetVector::ClassLabels(v) => {
                TargetVector::ClassLabels(idx.iter().map(|&i| v[i]).collect())
            }
            TargetVector::Values(v) => TargetVector::Values(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// One value `v` of a protected feature and the examples carrying it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSlice {
    pub value: String,
    /// 0-based example indices.
    pub indices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtectedFeature {
    pub name: String,
    pub slices: Vec<GroupSlice>,
}

/// For every protected feature, the partition of the examples by value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtectedGroups {
    num_examples: usize,
    features: Vec<ProtectedFeature>,
}

impl ProtectedGroups {
    /// Wraps the given slices without checking that they partition
    /// `0..num_examples`; see [`ProtectedGroups::violations`].
    pub fn from_slices(num_examples: usize, features: Vec<ProtectedFeature>) -> Self {
        Self {
            num_examples,
            features,
        }
    }

    /// Convenience constructor from per-feature index sets.
    pub fn from_index_sets(num_examples: usize, sets: &[(&str, Vec<Vec<usize>>)]) -> Self {
        let features = sets
            .iter()
            .map(|(name, groups)| ProtectedFeature {
                name: name.to_string(),
                slices: groups
                    .iter()
                    .enumerate()
                    .map(|(v, idx)| GroupSlice {
                        value: v.to_string(),
                        indices: idx.clone(),
                    })
                    .collect(),
            })
            .collect();
        Self::from_slices(num_examples, features)
    }

    /// Groups examples by the raw value of each protected column. Slices are
    /// ordered by value.
    pub fn from_columns(columns: &[(String, Vec<String>)]) -> Result<Self> {
        let m = columns.first().map_or(0, |c| c.1.len());
        let mut features = Vec::with_capacity(columns.len());
        for (name, values) in columns {
            if values.len() != m {
                return usage(format!("protected column '{name}' has wrong length"));
            }
            let mut by_value: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
            for (i, v) in values.iter().enumerate() {
                by_value.entry(v.as_str()).or_default().push(i);
            }
            features.push(ProtectedFeature {
                name: name.clone(),
                slices: by_value
                    .into_iter()
                    .map(|(value, indices)| GroupSlice {
                        value: value.to_string(),
                        indices,
                    })
                    .collect(),
            });
        }
        Ok(Self::from_slices(m, features))
    }

    pub fn num_examples(&self) -> usize {
        self.num_examples
    }

    pub fn features(&self) -> &[ProtectedFeature] {
        &self.features
    }

    /// All slices across all features, in feature order.
    pub fn slices(&self) -> impl Iterator<Item = &GroupSlice> {
        self.features.iter().flat_map(|f| f.slices.iter())
    }

    pub fn num_slices(&self) -> usize {
        self.features.iter().map(|f| f.slices.len()).sum()
    }

    /// Restricts the groups to the examples `idx` (renumbered `0..idx.len()`).
    /// Values with no remaining example are dropped.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut pos = vec![usize::MAX; self.num_examples];
        for (new, &old) in idx.iter().enumerate() {
            pos[old] = new;
        }
        let features = self
            .features
            .iter()
            .map(|f| ProtectedFeature {
                name: f.name.clone(),
                slices: f
                    .slices
                    .iter()
                    .filter_map(|s| {
                        let mut indices: Vec<usize> = s
                            .indices
                            .iter()
                            .filter_map(|&i| (pos[i] != usize::MAX).then_some(pos[i]))
                            .collect();
                        indices.sort_unstable();
                        (!indices.is_empty()).then(|| GroupSlice {
                            value: s.value.clone(),
                            indices,
                        })
                    })
                    .collect(),
            })
            .collect();
        Self::from_slices(idx.len(), features)
    }

    /// Partition breaches: overlaps, uncovered or out-of-range indices, empty slices.
    pub fn violations(&self) -> Vec<Violation> {
        let m = self.num_examples;
        let mut out = Vec::new();
        for f in &self.features {
            let mut seen = vec![0usize; m];
            let mut out_of_range = Vec::new();
            for s in &f.slices {
                if s.indices.is_empty() {
                    out.push(Violation::new(
                        format!("protected feature '{}': value '{}' has no examples", f.name, s.value),
                        vec![],
                    ));
                }
                for &i in &s.indices {
                    if i < m {
                        seen[i] += 1;
                    } else {
                        out_of_range.push(i);
                    }
                }
            }
            if !out_of_range.is_empty() {
                out.push(Violation::new(
                    format!("protected feature '{}': indices out of range", f.name),
                    out_of_range,
                ));
            }
            let missing: Vec<usize> = (0..m).filter(|&i| seen[i] == 0).collect();
            if !missing.is_empty() {
                out.push(Violation::new(
                    format!("protected feature '{}': partition does not cover every example", f.name),
                    missing,
                ));
            }
            let dup: Vec<usize> = (0..m).filter(|&i| seen[i] > 1).collect();
            if !dup.is_empty() {
                out.push(Violation::new(
                    format!("protected feature '{}': slices overlap", f.name),
                    dup,
                ));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset<T> {
    pub features: Matrix<T>,
    pub targets: TargetVector<T>,
    pub task: TaskKind,
    pub groups: Option<ProtectedGroups>,
    pub feature_names: Vec<String>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(
        features: Matrix<T>,
        targets: TargetVector<T>,
        task: TaskKind,
        groups: Option<ProtectedGroups>,
    ) -> Self {
        let feature_names = (0..features.cols()).map(|j| format!("x{j}")).collect();
        Self {
            features,
            targets,
            task,
            groups,
            feature_names,
        }
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            targets: self.targets.select(idx),
            task: self.task,
            groups: self.groups.as_ref().map(|g| g.subset(idx)),
            feature_names: self.feature_names.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub message: String,
    /// 0-based example indices involved, when applicable.
    pub indices: Vec<usize>,
}

impl Violation {
    pub fn new(message: impl Into<String>, indices: Vec<usize>) -> Self {
        Self {
            message: message.into(),
            indices,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.indices.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{} (examples {:?})", self.message, self.indices)
        }
    }
}

/// Lists every invariant breach of `d`. An empty list means the dataset is valid.
pub fn validate_dataset<T: Scalar>(d: &Dataset<T>) -> Vec<Violation> {
    let m = d.features.rows();
    let mut out = Vec::new();
    if m == 0 {
        out.push(Violation::new("dataset has no examples", vec![]));
    }
    if d.targets.len() != m {
        out.push(Violation::new(
            format!("{} targets for {m} feature rows", d.targets.len()),
            vec![],
        ));
    }
    let non_finite: Vec<usize> = (0..m)
        .filter(|&i| d.features.row(i).iter().any(|v| !v.is_finite()))
        .collect();
    if !non_finite.is_empty() {
        out.push(Violation::new("non-finite feature values", non_finite));
    }
    match (&d.targets, d.task) {
        (TargetVector::ClassLabels(labels), TaskKind::Classification { num_classes }) => {
            if num_classes == 0 {
                out.push(Violation::new("classification task with zero classes", vec![]));
            }
            let bad: Vec<usize> = labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l < 1 || l > num_classes)
                .map(|(i, _)| i)
                .collect();
            if !bad.is_empty() {
                out.push(Violation::new(
                    format!("class labels outside 1..={num_classes}"),
                    bad,
                ));
            }
        }
        (TargetVector::Values(values), TaskKind::Regression) => {
            let bad: Vec<usize> = values
                .iter()
                .enumerate()
                .filter(|(_, v)| !v.is_finite())
                .map(|(i, _)| i)
                .collect();
            if !bad.is_empty() {
                out.push(Violation::new("non-finite regression targets", bad));
            }
        }
        _ => out.push(Violation::new("target vector kind does not match task", vec![])),
    }
    if let Some(g) = &d.groups {
        if g.num_examples() != m {
            out.push(Violation::new(
                format!("protected groups cover {} examples, dataset has {m}", g.num_examples()),
                vec![],
            ));
        }
        out.extend(g.violations());
    }
    out
}

/// Which master form ran at an iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MasterMode {
    Alpha,
    Beta,
    /// Pretraining record, no master step.
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord<T> {
    /// 0 for pretraining, then 1..=n.
    pub k: usize,
    /// `None` on the pretraining record.
    pub adjusted_targets: Option<TargetVector<T>>,
    /// Predictions produced by the learner step of this record.
    pub predictions: TargetVector<T>,
    pub loss_to_ground_truth: f64,
    /// Normalized violation of `predictions` (uncapped).
    pub constraint_violation: f64,
    pub predictions_feasible: bool,
    pub master_mode: MasterMode,
    /// Set when the beta master was infeasible and alpha ran instead.
    pub beta_fallback: bool,
    pub master_objective: Option<f64>,
    pub master_wall_time: f64,
    pub learner_wall_time: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunHistory<T> {
    pub iterations: Vec<IterationRecord<T>>,
}
