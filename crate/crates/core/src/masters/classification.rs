//! Classification masters (Hamming loss) for the balance and DIDI constraints.

use super::assign::{
    branch_and_bound, changes, didi_dual, greedy_repair, total_cost, unconstrained_argmin, DidiIndex,
    LinearBound, Side, MAX_SEARCH_EXAMPLES, NODE_LIMIT,
};
use super::flow::{lex_minimize, transportation};
use super::{Certificate, MasterForm, MasterProblem, MasterSolution};
use crate::constraints::{BalanceConstraint, ConstraintSpec, DidiClassificationConstraint};
use crate::domain::TargetVector;
use crate::error::{usage, Error, Result};
use crate::scalar::Scalar;

/// Instances this small always go through branch and bound, so the
/// lexicographic tie-break holds even when the dual bound already closes the gap.
const ALWAYS_SEARCH_EXAMPLES: usize = 16;
const GAP_TOL: f64 = 1e-9;

/// Labels converted to 0-based class indices after a range check.
fn zero_based(labels: &[usize], c: usize, what: &str) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&l| {
            if (1..=c).contains(&l) {
                Ok(l - 1)
            } else {
                usage(format!("{what}: label {l} outside 1..={c}"))
            }
        })
        .collect()
}

/// Budget of label changes allowed by a Hamming ball of radius `beta`.
pub(crate) fn hamming_budget(beta: f64, m: usize) -> usize {
    ((beta * m as f64) + 1e-9).floor().min(m as f64) as usize
}

struct Instance {
    m: usize,
    c: usize,
    truth: Vec<usize>,
    pred: Option<Vec<usize>>,
    /// Weight of the prediction term, 1/alpha, when present.
    weight: Option<f64>,
    cost: Vec<f64>,
}

impl Instance {
    fn new<T: Scalar>(p: &MasterProblem<T>, c: usize, with_pred_term: bool) -> Result<Self> {
        let truth = zero_based(p.y_star.labels()?, c, "y_star")?;
        let m = truth.len();
        if m == 0 {
            return usage("empty target vector");
        }
        let pred = match &p.y_pred {
            Some(y) if !matches!(p.form, MasterForm::IdealProjection) => {
                let v = zero_based(y.labels()?, c, "y_pred")?;
                if v.len() != m {
                    return usage(format!("y_pred has {} entries, y_star {m}", v.len()));
                }
                Some(v)
            }
            _ => None,
        };
        let weight = match p.form {
            MasterForm::Alpha { alpha } if with_pred_term => Some(1.0 / alpha),
            _ => None,
        };
        let mut cost = vec![0.0; m * c];
        for i in 0..m {
            for j in 0..c {
                let mut v = if j != truth[i] { 1.0 } else { 0.0 };
                if let (Some(w), Some(pred)) = (weight, &pred) {
                    if j != pred[i] {
                        v += w;
                    }
                }
                cost[i * c + j] = v;
            }
        }
        Ok(Self {
            m,
            c,
            truth,
            pred,
            weight,
            cost,
        })
    }

    /// Objective recomputed from mismatch counts: `(a + b / alpha) / m`.
    fn objective(&self, z: &[usize]) -> f64 {
        let a = changes(z, &self.truth) as f64;
        let b = match (&self.pred, self.weight) {
            (Some(pred), Some(w)) => changes(z, pred) as f64 * w,
            _ => 0.0,
        };
        (a + b) / self.m as f64
    }

    fn solution<T: Scalar>(&self, z: Vec<usize>, certificate: Certificate) -> MasterSolution<T> {
        let objective = self.objective(&z);
        MasterSolution {
            z: TargetVector::ClassLabels(z.into_iter().map(|j| j + 1).collect()),
            objective,
            certificate,
            wall_time: 0.0,
        }
    }

    fn scaled(&self, v: f64) -> f64 {
        v / self.m as f64
    }
}

fn balance_spec<T: Scalar>(p: &MasterProblem<T>) -> Result<BalanceConstraint> {
    match &p.spec {
        ConstraintSpec::Balance(b) => Ok(*b),
        other => usage(format!("expected a balance constraint, got {}", other.kind_name())),
    }
}

fn didi_spec<T: Scalar>(p: &MasterProblem<T>) -> Result<&DidiClassificationConstraint> {
    match &p.spec {
        ConstraintSpec::DidiClassification(d) => {
            if !(d.epsilon >= 0.0) {
                return usage(format!("DIDI threshold must be >= 0, got {}", d.epsilon));
            }
            Ok(d)
        }
        other => usage(format!("expected a DIDI classification constraint, got {}", other.kind_name())),
    }
}

fn capacity_assignment(inst: &Instance, cap: usize) -> Result<Vec<usize>> {
    let mut z = transportation(&inst.cost, inst.m, inst.c, cap).ok_or_else(|| {
        Error::Infeasible(format!(
            "{} classes with capacity {cap} cannot hold {} examples",
            inst.c, inst.m
        ))
    })?;
    lex_minimize(&inst.cost, inst.m, inst.c, cap, &mut z, GAP_TOL);
    Ok(z)
}

/// Balance master, alpha form: a transportation problem from examples to
/// capacity-limited classes, solved exactly by min-cost flow.
pub fn solve_balance_alpha<T: Scalar>(p: &MasterProblem<T>) -> Result<MasterSolution<T>> {
    let MasterForm::Alpha { .. } = p.form else {
        return usage("solve_balance_alpha needs the alpha form");
    };
    p.predictions()?;
    let b = balance_spec(p)?;
    let inst = Instance::new(p, b.num_classes, true)?;
    let z = capacity_assignment(&inst, b.capacity(inst.m))?;
    Ok(inst.solution(z, Certificate::Exact))
}

pub(crate) fn balance_ideal<T: Scalar>(p: &MasterProblem<T>) -> Result<MasterSolution<T>> {
    let b = balance_spec(p)?;
    let inst = Instance::new(p, b.num_classes, false)?;
    let z = capacity_assignment(&inst, b.capacity(inst.m))?;
    Ok(inst.solution(z, Certificate::Exact))
}

/// Balance master, beta form: capacity-limited assignment closest to `y*`
/// with at most `floor(beta * m)` changes from the predictions. The change
/// budget is dualized (bisection on its multiplier, min-cost-flow
/// subproblems); a remaining gap is closed by branch and bound where the
/// instance size allows it.
pub fn solve_balance_beta<T: Scalar>(p: &MasterProblem<T>) -> Result<MasterSolution<T>> {
    let MasterForm::Beta { beta } = p.form else {
        return usage("solve_balance_beta needs the beta form");
    };
    p.predictions()?;
    let b = balance_spec(p)?;
    let inst = Instance::new(p, b.num_classes, false)?;
    let (m, c) = (inst.m, inst.c);
    let cap = b.capacity(m);
    let pred = inst.pred.clone().expect("checked above");
    let budget = hamming_budget(beta, m);

    let relaxed = capacity_assignment(&inst, cap)?;
    if changes(&relaxed, &pred) <= budget {
        return Ok(inst.solution(relaxed, Certificate::Exact));
    }

    let with_multiplier = |mu: f64| -> Result<(Vec<usize>, f64)> {
        let mut shifted = inst.cost.clone();
        for i in 0..m {
            for j in 0..c {
                if j != pred[i] {
                    shifted[i * c + j] += mu;
                }
            }
        }
        let mut z = transportation(&shifted, m, c, cap).expect("capacity checked");
        lex_minimize(&shifted, m, c, cap, &mut z, GAP_TOL);
        let dual = total_cost(&shifted, c, &z) - mu * budget as f64;
        Ok((z, dual))
    };

    // A multiplier above m makes every change cost more than any loss gain,
    // so this assignment uses the fewest changes possible.
    let mu_max = m as f64 + 1.0;
    let (z_hi, dual_hi) = with_multiplier(mu_max)?;
    if changes(&z_hi, &pred) > budget {
        return Err(Error::Infeasible(format!(
            "no balanced labelling within {budget} changes of the predictions"
        )));
    }
    let mut lower = dual_hi.max(total_cost(&inst.cost, c, &relaxed));
    let mut best_mu = mu_max;
    let mut incumbent = (total_cost(&inst.cost, c, &z_hi), z_hi);
    let (mut lo, mut hi) = (0.0, mu_max);
    for _ in 0..60 {
        if hi - lo < 1e-7 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let (z, dual) = with_multiplier(mid)?;
        if dual > lower {
            lower = dual;
            best_mu = mid;
        }
        if changes(&z, &pred) > budget {
            lo = mid;
        } else {
            let v = total_cost(&inst.cost, c, &z);
            if v < incumbent.0 - GAP_TOL || (v <= incumbent.0 + GAP_TOL && z < incumbent.1) {
                incumbent = (v, z);
            }
            hi = mid;
        }
    }

    let closed = incumbent.0 - lower <= GAP_TOL;
    if m <= ALWAYS_SEARCH_EXAMPLES || (!closed && m <= MAX_SEARCH_EXAMPLES) {
        let side = Side {
            capacity: Some(cap),
            budget: Some((&pred, budget)),
            didi: None,
        };
        let mut modified = inst.cost.clone();
        for i in 0..m {
            for j in 0..c {
                if j != pred[i] {
                    modified[i * c + j] += best_mu;
                }
            }
        }
        let bound = LinearBound {
            modified,
            constant: -best_mu * budget as f64,
        };
        let out = branch_and_bound(&inst.cost, m, c, &side, &[bound], Some(incumbent.clone()), NODE_LIMIT);
        log::debug!("branch and bound: {} nodes, complete {}", out.nodes, out.complete);
        if out.complete {
            let (_, z) = out.best.expect("incumbent is feasible");
            return Ok(inst.solution(z, Certificate::Exact));
        }
        if let Some(best) = out.best {
            incumbent = best;
        }
    }
    if incumbent.0 - lower <= GAP_TOL {
        return Ok(inst.solution(incumbent.1, Certificate::Exact));
    }
    let cert = Certificate::Gap {
        lower_bound: inst.scaled(lower),
        upper_bound: inst.objective(&incumbent.1),
    };
    Ok(inst.solution(incumbent.1, cert))
}

fn solve_didi<T: Scalar>(p: &MasterProblem<T>, with_pred_term: bool, budget_radius: Option<f64>) -> Result<MasterSolution<T>> {
    let d = didi_spec(p)?;
    let inst = Instance::new(p, d.num_classes, with_pred_term)?;
    let (m, c) = (inst.m, inst.c);
    if d.groups.num_examples() != m {
        return usage(format!("groups cover {} examples, targets have {m}", d.groups.num_examples()));
    }
    let index = DidiIndex::new(&d.groups, c, d.epsilon);
    let budget_labels = inst.pred.clone();
    let budget = budget_radius.map(|beta| {
        (
            budget_labels.as_deref().expect("beta form has predictions"),
            hamming_budget(beta, m),
        )
    });
    let side = Side {
        capacity: None,
        budget,
        didi: Some(&index),
    };

    let relaxed = unconstrained_argmin(&inst.cost, m, c);
    if side.admits(&relaxed, c) {
        return Ok(inst.solution(relaxed, Certificate::Exact));
    }

    // Incumbents: greedy repair from the relaxed optimum and from the
    // predictions, plus constant labellings (DIDI zero).
    let mut incumbent: Option<(f64, Vec<usize>)> = None;
    let offer = |z: Vec<usize>, inc: &mut Option<(f64, Vec<usize>)>| {
        if side.admits(&z, c) {
            let v = total_cost(&inst.cost, c, &z);
            if inc.as_ref().is_none_or(|b| v < b.0 - GAP_TOL || (v <= b.0 + GAP_TOL && z < b.1)) {
                *inc = Some((v, z));
            }
        }
    };
    if let Some(z) = greedy_repair(&inst.cost, &index, budget, &relaxed) {
        offer(z, &mut incumbent);
    }
    if let Some(pred) = &inst.pred {
        if let Some(z) = greedy_repair(&inst.cost, &index, budget, pred) {
            offer(z, &mut incumbent);
        }
    }
    for j in 0..c {
        offer(vec![j; m], &mut incumbent);
    }

    let upper = incumbent.as_ref().map_or(m as f64 * 2.0, |b| b.0);
    let dual = didi_dual(&inst.cost, &index, budget, upper, 300);
    if let Some(f) = dual.feasible.clone() {
        offer(f.1, &mut incumbent);
    }
    let lower = dual.value;

    let closed = incumbent.as_ref().is_some_and(|b| b.0 - lower <= GAP_TOL);
    if m <= ALWAYS_SEARCH_EXAMPLES || (!closed && m <= MAX_SEARCH_EXAMPLES) {
        let out = branch_and_bound(&inst.cost, m, c, &side, &[dual.bound], incumbent.clone(), NODE_LIMIT);
        log::debug!("branch and bound: {} nodes, complete {}", out.nodes, out.complete);
        if out.complete {
            return match out.best {
                Some((_, z)) => Ok(inst.solution(z, Certificate::Exact)),
                None => Err(Error::Infeasible(
                    "no labelling meets the DIDI bound within the change budget".into(),
                )),
            };
        }
        if let Some(best) = out.best {
            incumbent = Some(best);
        }
    }
    let Some((v, z)) = incumbent else {
        return Err(Error::Infeasible(
            "no labelling found that meets the DIDI bound within the change budget".into(),
        ));
    };
    if v - lower <= GAP_TOL {
        return Ok(inst.solution(z, Certificate::Exact));
    }
    let cert = Certificate::Gap {
        lower_bound: inst.scaled(lower.max(0.0)),
        upper_bound: inst.objective(&z),
    };
    Ok(inst.solution(z, cert))
}

/// DIDI classification master, alpha form.
pub fn solve_didi_class_alpha<T: Scalar>(p: &MasterProblem<T>) -> Result<MasterSolution<T>> {
    let MasterForm::Alpha { .. } = p.form else {
        return usage("solve_didi_class_alpha needs the alpha form");
    };
    p.predictions()?;
    solve_didi(p, true, None)
}

/// DIDI classification master, beta form (Hamming ball around the predictions).
pub fn solve_didi_class_beta<T: Scalar>(p: &MasterProblem<T>) -> Result<MasterSolution<T>> {
    let MasterForm::Beta { beta } = p.form else {
        return usage("solve_didi_class_beta needs the beta form");
    };
    p.predictions()?;
    if beta >= 1.0 {
        return solve_didi(p, false, None);
    }
    solve_didi(p, false, Some(beta))
}

pub(crate) fn didi_class_ideal<T: Scalar>(p: &MasterProblem<T>) -> Result<MasterSolution<T>> {
    solve_didi(p, false, None)
}
