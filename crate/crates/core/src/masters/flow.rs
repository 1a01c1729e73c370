//! Min-cost flow by successive shortest augmenting paths.
//!
//! Generic over the cost type so the same engine runs on `f64` costs in the
//! masters and on exact integer or rational costs in tests.

use std::collections::VecDeque;
use std::ops::{Add, Neg, Sub};

use num_traits::Zero;

pub trait FlowCost: Copy + PartialOrd + Zero + Add<Output = Self> + Sub<Output = Self> + Neg<Output = Self> {}

impl<C> FlowCost for C where C: Copy + PartialOrd + Zero + Add<Output = C> + Sub<Output = C> + Neg<Output = C> {}

#[derive(Clone, Debug)]
struct Arc<C> {
    to: usize,
    residual: i64,
    cost: C,
}

#[derive(Clone, Debug)]
pub struct MinCostFlow<C> {
    arcs: Vec<Arc<C>>,
    adj: Vec<Vec<usize>>,
    /// Relaxations must improve a label by more than this.
    tol: C,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowResult<C> {
    pub flow: i64,
    pub cost: C,
}

impl<C: FlowCost> MinCostFlow<C> {
    pub fn new(nodes: usize) -> Self {
        Self::with_tolerance(nodes, C::zero())
    }

    pub fn with_tolerance(nodes: usize, tol: C) -> Self {
        Self {
            arcs: Vec::new(),
            adj: vec![Vec::new(); nodes],
            tol,
        }
    }

    /// Adds arc `u -> v`; returns its id (the reverse arc is `id ^ 1`).
    pub fn add_arc(&mut self, u: usize, v: usize, cap: i64, cost: C) -> usize {
        let id = self.arcs.len();
        self.arcs.push(Arc { to: v, residual: cap, cost });
        self.arcs.push(Arc { to: u, residual: 0, cost: -cost });
        self.adj[u].push(id);
        self.adj[v].push(id + 1);
        id
    }

    /// Flow currently carried by arc `id`.
    pub fn flow_on(&self, id: usize) -> i64 {
        self.arcs[id ^ 1].residual
    }

    /// Sends up to `limit` units from `s` to `t` at minimum cost.
    pub fn run(&mut self, s: usize, t: usize, limit: i64) -> FlowResult<C> {
        let n = self.adj.len();
        let mut total = FlowResult { flow: 0, cost: C::zero() };
        let mut dist: Vec<Option<C>> = vec![None; n];
        let mut parent = vec![usize::MAX; n];
        let mut queued = vec![false; n];
        while total.flow < limit {
            dist.iter_mut().for_each(|d| *d = None);
            parent.iter_mut().for_each(|p| *p = usize::MAX);
            dist[s] = Some(C::zero());
            let mut queue = VecDeque::from([s]);
            queued[s] = true;
            while let Some(u) = queue.pop_front() {
                queued[u] = false;
                let du = dist[u].expect("queued nodes are labelled");
                for &a in &self.adj[u] {
                    let arc = &self.arcs[a];
                    if arc.residual <= 0 {
                        continue;
                    }
                    let cand = du + arc.cost;
                    let better = match dist[arc.to] {
                        None => true,
                        Some(dv) => cand + self.tol < dv,
                    };
                    if better {
                        dist[arc.to] = Some(cand);
                        parent[arc.to] = a;
                        if !queued[arc.to] {
                            queued[arc.to] = true;
                            queue.push_back(arc.to);
                        }
                    }
                }
            }
            if dist[t].is_none() {
                break;
            }
            let mut push = limit - total.flow;
            let mut v = t;
            while v != s {
                let a = parent[v];
                push = push.min(self.arcs[a].residual);
                v = self.arcs[a ^ 1].to;
            }
            let mut v = t;
            while v != s {
                let a = parent[v];
                self.arcs[a].residual -= push;
                self.arcs[a ^ 1].residual += push;
                for _ in 0..push {
                    total.cost = total.cost + self.arcs[a].cost;
                }
                v = self.arcs[a ^ 1].to;
            }
            total.flow += push;
        }
        total
    }
}

/// Assignment of `m` examples to `c` classes with per-class capacity at
/// minimum total cost. `cost[i * c + j]` is the cost of class `j` (0-based)
/// for example `i`. Returns `None` when `c * capacity < m`.
pub fn transportation(cost: &[f64], m: usize, c: usize, capacity: usize) -> Option<Vec<usize>> {
    if c * capacity < m {
        return None;
    }
    let source = 0;
    let sink = m + c + 1;
    let mut g = MinCostFlow::with_tolerance(m + c + 2, 1e-12);
    let mut ids = Vec::with_capacity(m * c);
    for i in 0..m {
        g.add_arc(source, 1 + i, 1, 0.0);
        for j in 0..c {
            ids.push(g.add_arc(1 + i, 1 + m + j, 1, cost[i * c + j]));
        }
    }
    for j in 0..c {
        g.add_arc(1 + m + j, sink, capacity as i64, 0.0);
    }
    let res = g.run(source, sink, m as i64);
    if res.flow < m as i64 {
        return None;
    }
    let mut z = vec![0usize; m];
    for i in 0..m {
        z[i] = (0..c)
            .find(|&j| g.flow_on(ids[i * c + j]) == 1)
            .expect("every example carries one unit");
    }
    Some(z)
}

/// Rewrites an optimal capacitated assignment into the lexicographically
/// smallest optimal one. For each example in order, tries smaller classes and
/// accepts the first for which some exchange through later examples keeps the
/// total cost unchanged. Such an exchange is a walk `src -> .. -> home`, the
/// move of the example itself, then `j -> .. -> dst`, where every other step
/// moves one later example between classes and `dst` has spare room unless
/// the walk closes (`dst == src`).
pub fn lex_minimize(cost: &[f64], m: usize, c: usize, capacity: usize, z: &mut [usize], tol: f64) {
    let mut load = vec![0usize; c];
    for &j in z.iter() {
        load[j] += 1;
    }
    // best[k * c + k2] = (delta, example) for moving some later example from k to k2
    let mut best: Vec<(f64, usize)> = vec![(f64::INFINITY, usize::MAX); c * c];
    let mut dist = vec![f64::INFINITY; c * c];
    let mut next = vec![usize::MAX; c * c];
    for i in 0..m {
        if z[i] == 0 {
            continue;
        }
        best.iter_mut().for_each(|b| *b = (f64::INFINITY, usize::MAX));
        for e in i + 1..m {
            let k = z[e];
            for k2 in 0..c {
                if k2 == k {
                    continue;
                }
                let d = cost[e * c + k2] - cost[e * c + k];
                let slot = &mut best[k * c + k2];
                if d < slot.0 {
                    *slot = (d, e);
                }
            }
        }
        // all-pairs shortest exchange chains (no negative cycles: z is optimal)
        for a in 0..c {
            for b in 0..c {
                let (d, _) = best[a * c + b];
                dist[a * c + b] = if a == b { 0.0 } else { d };
                next[a * c + b] = if a == b || d.is_finite() { b } else { usize::MAX };
            }
        }
        for k in 0..c {
            for a in 0..c {
                for b in 0..c {
                    let via = dist[a * c + k] + dist[k * c + b];
                    if via < dist[a * c + b] - 1e-15 {
                        dist[a * c + b] = via;
                        next[a * c + b] = next[a * c + k];
                    }
                }
            }
        }
        let home = z[i];
        for j in 0..home {
            let base = cost[i * c + j] - cost[i * c + home];
            let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
            for src in 0..c {
                let back = dist[src * c + home];
                if !back.is_finite() {
                    continue;
                }
                for dst in 0..c {
                    let fwd = dist[j * c + dst];
                    if !fwd.is_finite() || (dst != src && load[dst] >= capacity) {
                        continue;
                    }
                    let total = back + base + fwd;
                    if total <= tol {
                        candidates.push((total, src, dst));
                    }
                }
            }
            candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
            let accepted = candidates.iter().find_map(|&(_, src, dst)| {
                let mut moves = chain(&next, &best, c, src, home);
                moves.push((i, j));
                moves.extend(chain(&next, &best, c, j, dst));
                let mut trial = z.to_vec();
                let mut seen = Vec::with_capacity(moves.len());
                let mut delta = 0.0;
                for &(e, to) in &moves {
                    if seen.contains(&e) {
                        return None;
                    }
                    seen.push(e);
                    delta += cost[e * c + to] - cost[e * c + trial[e]];
                    trial[e] = to;
                }
                let mut trial_load = vec![0usize; c];
                trial.iter().for_each(|&k| trial_load[k] += 1);
                (delta <= tol && trial_load.iter().all(|&l| l <= capacity)).then_some((trial, trial_load))
            });
            let Some((trial, trial_load)) = accepted else { continue };
            z.copy_from_slice(&trial);
            load = trial_load;
            break;
        }
    }
}

/// Example moves along the shortest class chain `from -> .. -> to`.
fn chain(next: &[usize], best: &[(f64, usize)], c: usize, from: usize, to: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut cur = from;
    while cur != to {
        let step = next[cur * c + to];
        out.push((best[cur * c + step].1, step));
        cur = step;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    fn brute(cost: &[f64], m: usize, c: usize, cap: usize) -> (f64, Vec<usize>) {
        let mut best = (f64::INFINITY, vec![]);
        let total = c.pow(m as u32);
        for code in 0..total {
            let mut z = vec![0; m];
            let mut x = code;
            for i in (0..m).rev() {
                z[i] = x % c;
                x /= c;
            }
            let mut load = vec![0; c];
            z.iter().for_each(|&j| load[j] += 1);
            if load.iter().any(|&l| l > cap) {
                continue;
            }
            let v: f64 = (0..m).map(|i| cost[i * c + z[i]]).sum();
            if v < best.0 - 1e-12 {
                best = (v, z);
            }
        }
        best
    }

    #[test]
    fn integer_costs() {
        // two sources, two sinks, crossing is cheaper
        let mut g = MinCostFlow::<i64>::new(4);
        g.add_arc(0, 1, 2, 0);
        g.add_arc(1, 2, 1, 5);
        g.add_arc(1, 3, 2, 1);
        g.add_arc(2, 3, 1, -3);
        g.add_arc(0, 2, 1, 1);
        let r = g.run(0, 3, 3);
        assert_eq!(r.flow, 3);
        // 0->1->3 twice (cost 2), 0->2->3 (cost -2)
        assert_eq!(r.cost, 0);
    }

    #[test]
    fn rational_costs_are_exact() {
        let third = Ratio::new(1i64, 3);
        let mut g = MinCostFlow::<Ratio<i64>>::new(3);
        g.add_arc(0, 1, 3, third);
        g.add_arc(1, 2, 3, third);
        g.add_arc(0, 2, 1, Ratio::new(2, 3));
        let r = g.run(0, 2, 4);
        assert_eq!(r.flow, 4);
        assert_eq!(r.cost, Ratio::new(8, 3));
    }

    #[test]
    fn transportation_matches_brute_force_and_is_lex_smallest() {
        let mut state = 7u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 40) % 3
        };
        for _ in 0..300 {
            let m = 1 + next() as usize * 3 + next() as usize;
            let c = 2 + next() as usize % 2;
            let cap = m.div_ceil(c) + next() as usize % 2;
            let cost: Vec<f64> = (0..m * c).map(|_| next() as f64 * 0.5).collect();
            let (opt, zb) = brute(&cost, m, c, cap);
            let mut z = transportation(&cost, m, c, cap).unwrap();
            let v: f64 = (0..m).map(|i| cost[i * c + z[i]]).sum();
            assert!((v - opt).abs() < 1e-9);
            lex_minimize(&cost, m, c, cap, &mut z, 1e-9);
            let v: f64 = (0..m).map(|i| cost[i * c + z[i]]).sum();
            assert!((v - opt).abs() < 1e-9);
            assert_eq!(z, zb, "cost {cost:?} cap {cap}");
        }
    }

    #[test]
    fn transportation_detects_short_capacity() {
        assert!(transportation(&[0.0; 6], 3, 2, 1).is_none());
    }
}
