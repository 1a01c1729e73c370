//! Independent reference solvers shared by the integration tests. Nothing
//! here calls into the solver code under test; only data types are shared.

#![allow(dead_code)]

pub mod grad;
pub mod props;
pub mod suites;

use moving_targets::ProtectedGroups;
use num_rational::Ratio;
use rand::Rng;

pub type Q = Ratio<i64>;

/// Calls `f` on every labelling of `m` examples over `c` classes (0-based),
/// in lexicographic order.
pub fn for_each_labelling(m: usize, c: usize, mut f: impl FnMut(&[usize])) {
    let mut z = vec![0usize; m];
    loop {
        f(&z);
        let mut i = m;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            z[i] += 1;
            if z[i] < c {
                break;
            }
            z[i] = 0;
        }
    }
}

pub fn mismatches(a: &[usize], b: &[usize]) -> i64 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as i64
}

/// Exact classification DIDI of 0-based labels.
pub fn didi_exact(slices: &[Vec<usize>], z: &[usize], c: usize) -> Q {
    let m = z.len() as i64;
    let mut total = Q::from_integer(0);
    for s in slices {
        for j in 0..c {
            let overall = z.iter().filter(|&&v| v == j).count() as i64;
            let inside = s.iter().filter(|&&i| z[i] == j).count() as i64;
            let d = Q::new(overall, m) - Q::new(inside, s.len() as i64);
            total += if d < Q::from_integer(0) { -d } else { d };
        }
    }
    total
}

pub fn slices_of(groups: &ProtectedGroups) -> Vec<Vec<usize>> {
    groups.slices().map(|s| s.indices.clone()).collect()
}

/// Random partition of `0..m` into `k` non-empty blocks (requires k <= m).
pub fn random_partition(rng: &mut impl Rng, m: usize, k: usize) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..m).collect();
    for i in (1..m).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let mut blocks: Vec<Vec<usize>> = (0..k).map(|b| vec![perm[b]]).collect();
    for &i in &perm[k..] {
        blocks[rng.random_range(0..k)].push(i);
    }
    for b in &mut blocks {
        b.sort_unstable();
    }
    blocks
}

pub fn random_groups(rng: &mut impl Rng, m: usize) -> ProtectedGroups {
    let features = if m >= 4 && rng.random_bool(0.3) { 2 } else { 1 };
    let sets: Vec<(String, Vec<Vec<usize>>)> = (0..features)
        .map(|f| {
            let k = rng.random_range(1..=m.min(3));
            (format!("g{f}"), random_partition(rng, m, k))
        })
        .collect();
    let borrowed: Vec<(&str, Vec<Vec<usize>>)> = sets.iter().map(|(n, s)| (n.as_str(), s.clone())).collect();
    ProtectedGroups::from_index_sets(m, &borrowed)
}

/// What the enumeration oracle optimizes.
#[derive(Clone, Copy, Debug)]
pub enum Objective {
    /// `(a + b / alpha) / m` with `a`, `b` the mismatches to truth and prediction.
    Alpha { alpha: Q },
    /// `a / m` subject to at most `budget` mismatches to the prediction.
    Beta { budget: i64 },
    /// `a / m`.
    Ideal,
}

/// Exhaustive search: the optimal objective and the lexicographically first
/// optimal labelling, or `None` when no labelling is admissible.
pub fn enumerate_best(
    m: usize,
    c: usize,
    truth: &[usize],
    pred: &[usize],
    objective: Objective,
    feasible: impl Fn(&[usize]) -> bool,
) -> Option<(Q, Vec<usize>)> {
    let mut best: Option<(Q, Vec<usize>)> = None;
    for_each_labelling(m, c, |z| {
        let a = mismatches(z, truth);
        let value = match objective {
            Objective::Alpha { alpha } => (Q::from_integer(a) + Q::from_integer(mismatches(z, pred)) / alpha) / m as i64,
            Objective::Beta { budget } => {
                if mismatches(z, pred) > budget {
                    return;
                }
                Q::new(a, m as i64)
            }
            Objective::Ideal => Q::new(a, m as i64),
        };
        if best.as_ref().is_some_and(|(b, _)| value >= *b) {
            return;
        }
        if feasible(z) {
            best = Some((value, z.to_vec()));
        }
    });
    best
}

pub fn q_to_f64(q: Q) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

/// Row vectors `a_r` with `a_r . z = mean(z) - mean_r(z)`, skipping slices
/// that cover every example (their row is zero).
pub fn didi_rows(slices: &[Vec<usize>], m: usize) -> Vec<Vec<f64>> {
    slices
        .iter()
        .filter(|s| s.len() < m)
        .map(|s| {
            let mut row = vec![1.0 / m as f64; m];
            for &i in s {
                row[i] -= 1.0 / s.len() as f64;
            }
            row
        })
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn didi_value(rows: &[Vec<f64>], z: &[f64]) -> f64 {
    rows.iter().map(|r| dot(r, z).abs()).sum()
}

/// The sign-pattern halfspaces `sum_r s_r a_r . z <= eps`. Patterns whose
/// normal cancels to rounding noise are dropped.
pub fn halfspaces(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    (0..(1usize << k))
        .map(|mask| {
            let mut n = vec![0.0; m];
            for (r, row) in rows.iter().enumerate() {
                let s = if mask >> r & 1 == 1 { -1.0 } else { 1.0 };
                for i in 0..m {
                    n[i] += s * row[i];
                }
            }
            n
        })
        .filter(|n| dot(n, n).sqrt() > 1e-9)
        .collect()
}

/// Dykstra's alternating projections of `t` onto the intersection of the
/// halfspaces `n . z <= eps` and, optionally, the ball
/// `||z - center||^2 <= radius_sq`.
pub fn dykstra(t: &[f64], normals: &[Vec<f64>], eps: f64, ball: Option<(&[f64], f64)>, sweeps: usize) -> Vec<f64> {
    let m = t.len();
    let sets = normals.len() + usize::from(ball.is_some());
    let mut x = t.to_vec();
    let mut incr = vec![vec![0.0; m]; sets];
    for _ in 0..sweeps {
        let before = x.clone();
        let mut shift = 0.0f64;
        for s in 0..sets {
            let y: Vec<f64> = (0..m).map(|i| x[i] + incr[s][i]).collect();
            let p = if s < normals.len() {
                let n = &normals[s];
                let nn = dot(n, n);
                let excess = dot(n, &y) - eps;
                if nn == 0.0 || excess <= 0.0 {
                    y.clone()
                } else {
                    (0..m).map(|i| y[i] - excess / nn * n[i]).collect()
                }
            } else {
                let (center, radius_sq) = ball.expect("ball set");
                let d: Vec<f64> = (0..m).map(|i| y[i] - center[i]).collect();
                let dist = dot(&d, &d).sqrt();
                let r = radius_sq.max(0.0).sqrt();
                if dist <= r {
                    y.clone()
                } else {
                    (0..m).map(|i| center[i] + d[i] * r / dist).collect()
                }
            };
            for i in 0..m {
                let next = y[i] - p[i];
                shift = shift.max((next - incr[s][i]).abs());
                incr[s][i] = next;
            }
            x = p;
        }
        let moved: f64 = x.iter().zip(&before).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if moved.max(shift) < 1e-15 {
            break;
        }
    }
    x
}

/// Least-squares fit of `target` by a nonnegative combination of the
/// columns `normals`, by projected coordinate descent. Returns the residual norm.
pub fn nnls_residual(target: &[f64], normals: &[Vec<f64>]) -> f64 {
    let k = normals.len();
    let mut w = vec![0.0; k];
    let mut r = target.to_vec();
    for _ in 0..20_000 {
        let mut change = 0.0f64;
        for j in 0..k {
            let n = &normals[j];
            let nn = dot(n, n);
            if nn == 0.0 {
                continue;
            }
            let step = dot(n, &r) / nn;
            let new = (w[j] + step).max(0.0);
            let delta = new - w[j];
            if delta != 0.0 {
                for (ri, ni) in r.iter_mut().zip(n) {
                    *ri -= delta * ni;
                }
                w[j] = new;
                change = change.max(delta.abs());
            }
        }
        if change < 1e-16 {
            break;
        }
    }
    dot(&r, &r).sqrt()
}

/// Optimality residual of `z` as the projection of `t` onto
/// `{sum_r |a_r . z| <= eps}` (intersected with the ball when given): the
/// distance of `t - z` from the normal cone spanned by the active
/// constraints, relative to `max(1, ||t - z||)`, plus any infeasibility.
pub fn projection_kkt(t: &[f64], z: &[f64], rows: &[Vec<f64>], eps: f64, ball: Option<(&[f64], f64)>, active_tol: f64) -> f64 {
    let m = t.len();
    let infeasible = (didi_value(rows, z) - eps).max(0.0);
    let mut normals = Vec::new();
    if didi_value(rows, z) >= eps - active_tol {
        // subgradients of the l1 term at z: each row contributes sign(a_r z),
        // or either sign when a_r z vanishes
        let mut patterns: Vec<Vec<f64>> = vec![vec![0.0; m]];
        for row in rows {
            let v = dot(row, z);
            let signs: Vec<f64> = if v.abs() <= active_tol { vec![1.0, -1.0] } else { vec![v.signum()] };
            let mut next = Vec::new();
            for p in &patterns {
                for &s in &signs {
                    next.push((0..m).map(|i| p[i] + s * row[i]).collect::<Vec<f64>>());
                }
            }
            patterns = next;
        }
        normals.extend(patterns);
    }
    let mut ball_gap = 0.0;
    if let Some((center, radius_sq)) = ball {
        let d: Vec<f64> = (0..m).map(|i| z[i] - center[i]).collect();
        let sq = dot(&d, &d);
        ball_gap = (sq - radius_sq).max(0.0).sqrt();
        if sq >= radius_sq - active_tol.max(1e-9 * radius_sq) {
            normals.push(d);
        }
    }
    let g: Vec<f64> = (0..m).map(|i| t[i] - z[i]).collect();
    let scale = dot(&g, &g).sqrt().max(1.0);
    nnls_residual(&g, &normals) / scale + infeasible + ball_gap
}
