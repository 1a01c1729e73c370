//! Exact and bounded search over class assignments with side constraints:
//! depth-first branch and bound, Lagrangian bounds for the DIDI coupling,
//! and a greedy feasibility repair.

use crate::constraints::FEAS_TOL;
use crate::domain::ProtectedGroups;

/// Instances above this size never enter branch and bound.
pub(crate) const MAX_SEARCH_EXAMPLES: usize = 64;
pub(crate) const NODE_LIMIT: u64 = 20_000_000;

/// Slice membership in a layout suited to incremental DIDI updates.
#[derive(Clone, Debug)]
pub(crate) struct DidiIndex {
    pub m: usize,
    pub c: usize,
    pub epsilon: f64,
    pub slice_sizes: Vec<usize>,
    /// Slices containing each example.
    pub member: Vec<Vec<usize>>,
}

impl DidiIndex {
    pub fn new(groups: &ProtectedGroups, c: usize, epsilon: f64) -> Self {
        let m = groups.num_examples();
        let mut member = vec![Vec::new(); m];
        let mut slice_sizes = Vec::new();
        for (r, s) in groups.slices().enumerate() {
            slice_sizes.push(s.indices.len());
            for &i in &s.indices {
                member[i].push(r);
            }
        }
        Self {
            m,
            c,
            epsilon,
            slice_sizes,
            member,
        }
    }

    pub fn num_slices(&self) -> usize {
        self.slice_sizes.len()
    }
}

#[derive(Clone, Debug)]
pub(crate) struct DidiCounts {
    overall: Vec<usize>,
    local: Vec<usize>,
    c: usize,
}

impl DidiCounts {
    pub fn new(index: &DidiIndex) -> Self {
        Self {
            overall: vec![0; index.c],
            local: vec![0; index.num_slices() * index.c],
            c: index.c,
        }
    }

    pub fn from_assignment(index: &DidiIndex, z: &[usize]) -> Self {
        let mut s = Self::new(index);
        for (i, &j) in z.iter().enumerate() {
            s.add(index, i, j);
        }
        s
    }

    pub fn add(&mut self, index: &DidiIndex, i: usize, j: usize) {
        self.overall[j] += 1;
        for &r in &index.member[i] {
            self.local[r * self.c + j] += 1;
        }
    }

    pub fn remove(&mut self, index: &DidiIndex, i: usize, j: usize) {
        self.overall[j] -= 1;
        for &r in &index.member[i] {
            self.local[r * self.c + j] -= 1;
        }
    }

    /// Same expression and summation order as `constraints::didi_classification`.
    pub fn didi(&self, index: &DidiIndex) -> f64 {
        let m = index.m as f64;
        let mut total = 0.0;
        for (r, &n) in index.slice_sizes.iter().enumerate() {
            let n = n as f64;
            for j in 0..self.c {
                total += (self.overall[j] as f64 / m - self.local[r * self.c + j] as f64 / n).abs();
            }
        }
        total
    }

    pub fn feasible(&self, index: &DidiIndex) -> bool {
        self.didi(index) <= index.epsilon + FEAS_TOL
    }
}

/// Side constraints on top of one-class-per-example.
#[derive(Clone, Debug, Default)]
pub(crate) struct Side<'a> {
    pub capacity: Option<usize>,
    /// Reference labels (0-based) and the maximum number of changes from them.
    pub budget: Option<(&'a [usize], usize)>,
    pub didi: Option<&'a DidiIndex>,
}

impl Side<'_> {
    pub fn admits(&self, z: &[usize], c: usize) -> bool {
        if let Some(cap) = self.capacity {
            let mut load = vec![0usize; c];
            for &j in z {
                load[j] += 1;
                if load[j] > cap {
                    return false;
                }
            }
        }
        if let Some((reference, b)) = self.budget {
            if changes(z, reference) > b {
                return false;
            }
        }
        if let Some(index) = self.didi {
            if !DidiCounts::from_assignment(index, z).feasible(index) {
                return false;
            }
        }
        true
    }
}

pub(crate) fn changes(z: &[usize], reference: &[usize]) -> usize {
    z.iter().zip(reference).filter(|(a, b)| a != b).count()
}

pub(crate) fn total_cost(cost: &[f64], c: usize, z: &[usize]) -> f64 {
    z.iter().enumerate().map(|(i, &j)| cost[i * c + j]).sum()
}

/// Per-example argmin with ties to the lowest class.
pub(crate) fn unconstrained_argmin(cost: &[f64], m: usize, c: usize) -> Vec<usize> {
    (0..m)
        .map(|i| {
            let row = &cost[i * c..(i + 1) * c];
            let mut best = 0;
            for j in 1..c {
                if row[j] < row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// A valid lower bound of the form `sum_i modified[i][z_i] + constant`.
#[derive(Clone, Debug)]
pub(crate) struct LinearBound {
    pub modified: Vec<f64>,
    pub constant: f64,
}

struct Bounds {
    plain_suffix: Vec<f64>,
    extra: Vec<(Vec<f64>, Vec<f64>, f64)>,
}

impl Bounds {
    fn new(cost: &[f64], m: usize, c: usize, linear: &[LinearBound]) -> Self {
        let suffix = |w: &[f64]| {
            let mut s = vec![0.0; m + 1];
            for i in (0..m).rev() {
                let row = &w[i * c..(i + 1) * c];
                s[i] = s[i + 1] + row.iter().copied().fold(f64::INFINITY, f64::min);
            }
            s
        };
        Self {
            plain_suffix: suffix(cost),
            extra: linear
                .iter()
                .map(|b| (b.modified.clone(), suffix(&b.modified), b.constant))
                .collect(),
        }
    }
}

pub(crate) struct SearchOutcome {
    pub best: Option<(f64, Vec<usize>)>,
    pub complete: bool,
    pub nodes: u64,
}

struct Search<'a> {
    cost: &'a [f64],
    m: usize,
    c: usize,
    side: &'a Side<'a>,
    bounds: Bounds,
    tol: f64,
    z: Vec<usize>,
    load: Vec<usize>,
    used_changes: usize,
    counts: Option<DidiCounts>,
    best: Option<(f64, Vec<usize>)>,
    nodes: u64,
    limit: u64,
    aborted: bool,
}

impl Search<'_> {
    fn dfs(&mut self, i: usize, fixed_plain: f64, fixed_extra: &mut Vec<f64>) {
        if self.aborted {
            return;
        }
        self.nodes += 1;
        if self.nodes > self.limit {
            self.aborted = true;
            return;
        }
        let best_val = self.best.as_ref().map_or(f64::INFINITY, |b| b.0);
        let mut bound = fixed_plain + self.bounds.plain_suffix[i];
        for (k, (_, suffix, constant)) in self.bounds.extra.iter().enumerate() {
            bound = bound.max(fixed_extra[k] + suffix[i] + constant);
        }
        if bound > best_val + self.tol {
            return;
        }
        if i == self.m {
            if let (Some(counts), Some(index)) = (&self.counts, self.side.didi) {
                if !counts.feasible(index) {
                    return;
                }
            }
            let replace = match &self.best {
                None => true,
                Some((v, bz)) => fixed_plain < v - self.tol || (fixed_plain <= v + self.tol && self.z < *bz),
            };
            if replace {
                self.best = Some((fixed_plain, self.z.clone()));
            }
            return;
        }
        for j in 0..self.c {
            if let Some(cap) = self.side.capacity {
                if self.load[j] >= cap {
                    continue;
                }
            }
            let changed = match self.side.budget {
                Some((reference, b)) => {
                    let ch = usize::from(reference[i] != j);
                    if self.used_changes + ch > b {
                        continue;
                    }
                    ch
                }
                None => 0,
            };
            self.z[i] = j;
            self.load[j] += 1;
            self.used_changes += changed;
            if let (Some(counts), Some(index)) = (&mut self.counts, self.side.didi) {
                counts.add(index, i, j);
            }
            for (k, (modified, _, _)) in self.bounds.extra.iter().enumerate() {
                fixed_extra[k] += modified[i * self.c + j];
            }
            self.dfs(i + 1, fixed_plain + self.cost[i * self.c + j], fixed_extra);
            for (k, (modified, _, _)) in self.bounds.extra.iter().enumerate() {
                fixed_extra[k] -= modified[i * self.c + j];
            }
            if let (Some(counts), Some(index)) = (&mut self.counts, self.side.didi) {
                counts.remove(index, i, j);
            }
            self.used_changes -= changed;
            self.load[j] -= 1;
            if self.aborted {
                return;
            }
        }
    }
}

/// Depth-first search in lexicographic order. Among optimal assignments the
/// lexicographically smallest is returned. `incumbent` only seeds pruning.
pub(crate) fn branch_and_bound(
    cost: &[f64],
    m: usize,
    c: usize,
    side: &Side<'_>,
    linear: &[LinearBound],
    incumbent: Option<(f64, Vec<usize>)>,
    limit: u64,
) -> SearchOutcome {
    let mut search = Search {
        cost,
        m,
        c,
        side,
        bounds: Bounds::new(cost, m, c, linear),
        tol: 1e-9,
        z: vec![0; m],
        load: vec![0; c],
        used_changes: 0,
        counts: side.didi.map(DidiCounts::new),
        best: incumbent,
        nodes: 0,
        limit,
        aborted: false,
    };
    let mut extra = vec![0.0; linear.len()];
    search.dfs(0, 0.0, &mut extra);
    SearchOutcome {
        best: search.best,
        complete: !search.aborted,
        nodes: search.nodes,
    }
}

/// Lagrangian dual of the DIDI (and optional budget) coupling, maximized by
/// projected subgradient ascent with Polyak steps. Returns the best bound
/// found and any feasible assignment met along the way.
pub(crate) struct DidiDual {
    pub bound: LinearBound,
    pub value: f64,
    pub feasible: Option<(f64, Vec<usize>)>,
}

pub(crate) fn didi_dual(
    cost: &[f64],
    index: &DidiIndex,
    budget: Option<(&[usize], usize)>,
    upper: f64,
    iterations: usize,
) -> DidiDual {
    let (m, c, r_count) = (index.m, index.c, index.num_slices());
    let mut eta = vec![0.0f64; r_count * c];
    let mut mu = 0.0;
    let mut best: Option<DidiDual> = None;
    let side = Side {
        capacity: None,
        budget,
        didi: Some(index),
    };
    let inv_m = 1.0 / m as f64;
    for _ in 0..iterations.max(1) {
        let lambda = eta.iter().fold(0.0f64, |a, &e| a.max(e.abs()));
        let col_sum: Vec<f64> = (0..c)
            .map(|j| (0..r_count).map(|r| eta[r * c + j]).sum::<f64>() * inv_m)
            .collect();
        let mut modified = vec![0.0; m * c];
        for i in 0..m {
            for j in 0..c {
                let mut v = cost[i * c + j] + col_sum[j];
                for &r in &index.member[i] {
                    v -= eta[r * c + j] / index.slice_sizes[r] as f64;
                }
                if let Some((reference, _)) = budget {
                    if reference[i] != j {
                        v += mu;
                    }
                }
                modified[i * c + j] = v;
            }
        }
        let b = budget.map_or(0.0, |(_, b)| b as f64);
        let constant = -lambda * index.epsilon - mu * b;
        let z = unconstrained_argmin(&modified, m, c);
        let value = total_cost(&modified, c, &z) + constant;

        let true_cost = total_cost(cost, c, &z);
        let mut feasible = best.as_ref().and_then(|d| d.feasible.clone());
        if side.admits(&z, c) && feasible.as_ref().is_none_or(|f| true_cost < f.0) {
            feasible = Some((true_cost, z.clone()));
        }
        let improved = best.as_ref().is_none_or(|d| value > d.value);
        if improved {
            best = Some(DidiDual {
                bound: LinearBound { modified, constant },
                value,
                feasible,
            });
        } else if let Some(d) = best.as_mut() {
            d.feasible = feasible;
        }

        // subgradient
        let counts = DidiCounts::from_assignment(index, &z);
        let mut g_eta = vec![0.0; r_count * c];
        for r in 0..r_count {
            let n = index.slice_sizes[r] as f64;
            for j in 0..c {
                g_eta[r * c + j] = counts.overall[j] as f64 * inv_m - counts.local[r * c + j] as f64 / n;
            }
        }
        if lambda > 0.0 {
            if let Some((k, _)) = eta
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            {
                g_eta[k] -= index.epsilon * eta[k].signum();
            }
        }
        let g_mu = budget.map_or(0.0, |(reference, b)| changes(&z, reference) as f64 - b as f64);
        let norm2: f64 = g_eta.iter().map(|g| g * g).sum::<f64>() + g_mu * g_mu;
        let target = best.as_ref().map_or(value, |d| d.value);
        let gap = (upper - target).max(1e-6);
        if norm2 < 1e-18 {
            break;
        }
        let step = gap / norm2;
        for (e, g) in eta.iter_mut().zip(&g_eta) {
            *e += step * g;
        }
        if budget.is_some() {
            mu = (mu + step * g_mu).max(0.0);
        }
    }
    best.expect("at least one iteration")
}

/// Moves single examples to other classes, best cost-per-DIDI-reduction
/// first, until the DIDI bound holds. Returns `None` if stuck.
pub(crate) fn greedy_repair(
    cost: &[f64],
    index: &DidiIndex,
    budget: Option<(&[usize], usize)>,
    start: &[usize],
) -> Option<Vec<usize>> {
    let c = index.c;
    let mut z = start.to_vec();
    let mut counts = DidiCounts::from_assignment(index, &z);
    let mut used = budget.map_or(0, |(reference, _)| changes(&z, reference));
    if let Some((_, b)) = budget {
        if used > b {
            return None;
        }
    }
    let mut current = counts.didi(index);
    let max_steps = 4 * index.m * c + 16;
    for _ in 0..max_steps {
        if current <= index.epsilon + FEAS_TOL {
            return Some(z);
        }
        let mut pick: Option<(f64, usize, usize, f64)> = None;
        for i in 0..index.m {
            let from = z[i];
            for j in 0..c {
                if j == from {
                    continue;
                }
                if let Some((reference, b)) = budget {
                    let before = usize::from(reference[i] != from);
                    let after = usize::from(reference[i] != j);
                    if used + after > b + before {
                        continue;
                    }
                }
                counts.remove(index, i, from);
                counts.add(index, i, j);
                let next = counts.didi(index);
                counts.remove(index, i, j);
                counts.add(index, i, from);
                let reduction = current - next;
                if reduction <= 1e-15 {
                    continue;
                }
                let dcost = cost[i * c + j] - cost[i * c + from];
                let score = dcost / reduction;
                if pick.as_ref().is_none_or(|p| score < p.0 - 1e-15) {
                    pick = Some((score, i, j, next));
                }
            }
        }
        let (_, i, j, next) = pick?;
        if let Some((reference, _)) = budget {
            used = used + usize::from(reference[i] != j) - usize::from(reference[i] != z[i]);
        }
        counts.remove(index, i, z[i]);
        counts.add(index, i, j);
        z[i] = j;
        current = next;
    }
    (current <= index.epsilon + FEAS_TOL).then_some(z)
}
