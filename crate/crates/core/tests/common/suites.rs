//! Randomized master-versus-oracle suites. Each returns the number of
//! admissible cases checked, or a description of the first disagreement.

use moving_targets::{
    solve, BalanceConstraint, ConstraintSpec, DidiClassificationConstraint, DidiRegressionConstraint, Error,
    MasterProblem, ProtectedGroups, TargetVector,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

pub const ALPHAS: [(i64, i64); 5] = [(1, 4), (1, 2), (1, 1), (2, 1), (4, 1)];
pub const BETAS: [(i64, i64); 5] = [(1, 20), (1, 10), (1, 5), (3, 10), (1, 2)];
const XIS: [(i64, i64); 5] = [(0, 1), (1, 20), (1, 10), (1, 4), (1, 2)];
const FRACTIONS: [(i64, i64); 4] = [(0, 1), (1, 5), (1, 2), (1, 1)];

/// Largest instance per class count: `c^m` labellings stay enumerable.
const MAX_M_TWO_CLASSES: usize = 10;
const MAX_M_THREE_CLASSES: usize = 7;

#[derive(Clone, Copy, Debug)]
pub enum Form {
    Alpha,
    Beta,
    Ideal,
}

#[derive(Clone, Copy, Debug)]
pub enum Family {
    Balance,
    Didi,
}

struct Case {
    m: usize,
    c: usize,
    truth: Vec<usize>,
    pred: Vec<usize>,
    alpha: Q,
    beta: Q,
}

fn q(p: (i64, i64)) -> Q {
    Q::new(p.0, p.1)
}

fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let c = rng.random_range(2..=3);
    let max_m = if c == 2 { MAX_M_TWO_CLASSES } else { MAX_M_THREE_CLASSES };
    let m = rng.random_range(1..=max_m);
    Case {
        m,
        c,
        truth: (0..m).map(|_| rng.random_range(0..c)).collect(),
        pred: (0..m).map(|_| rng.random_range(0..c)).collect(),
        alpha: q(ALPHAS[rng.random_range(0..ALPHAS.len())]),
        beta: q(BETAS[rng.random_range(0..BETAS.len())]),
    }
}

fn one_based(z: &[usize]) -> TargetVector<f64> {
    TargetVector::ClassLabels(z.iter().map(|&l| l + 1).collect())
}

fn problem(form: Form, case: &Case, spec: ConstraintSpec<f64>) -> MasterProblem<f64> {
    let truth = one_based(&case.truth);
    let pred = one_based(&case.pred);
    match form {
        Form::Alpha => MasterProblem::alpha(q_to_f64(case.alpha), spec, truth, pred),
        Form::Beta => MasterProblem::beta(q_to_f64(case.beta), spec, truth, pred),
        Form::Ideal => MasterProblem::ideal(spec, truth),
    }
}

fn objective(form: Form, case: &Case) -> Objective {
    match form {
        Form::Alpha => Objective::Alpha { alpha: case.alpha },
        Form::Beta => Objective::Beta {
            budget: (case.beta * case.m as i64).floor().to_integer(),
        },
        Form::Ideal => Objective::Ideal,
    }
}

/// Master and oracle on one case: same admissibility, exactly the same
/// optimal objective, the same tie-broken labelling, and a feasible result.
fn check(
    form: Form,
    case: &Case,
    spec: ConstraintSpec<f64>,
    feasible: impl Fn(&[usize]) -> bool,
    tag: &str,
) -> Result<bool, String> {
    let expected = enumerate_best(case.m, case.c, &case.truth, &case.pred, objective(form, case), &feasible);
    let got = solve(&problem(form, case, spec));
    let context = format!("truth {:?}, pred {:?}", case.truth, case.pred);
    match (expected, got) {
        (None, Err(Error::Infeasible(_))) => Ok(false),
        (None, other) => Err(format!("{tag}: oracle finds no admissible labelling, master gave {other:?} ({context})")),
        (Some((value, z)), Ok(sol)) => {
            let labels: Vec<usize> = sol.z.labels().unwrap().iter().map(|&l| l - 1).collect();
            if !feasible(&labels) {
                return Err(format!("{tag}: master labelling {labels:?} is infeasible ({context})"));
            }
            if (sol.objective - q_to_f64(value)).abs() > 1e-12 {
                return Err(format!("{tag}: objective {} vs exact {value} ({context})", sol.objective));
            }
            if labels != z {
                return Err(format!("{tag}: labelling {labels:?} vs lexicographic optimum {z:?} ({context})"));
            }
            Ok(true)
        }
        (Some(_), Err(e)) => Err(format!("{tag}: master failed on an admissible case: {e} ({context})")),
    }
}

/// Checks `count` random instances and returns how many were admissible.
pub fn classification_suite(family: Family, form: Form, seed: u64, count: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut solved = 0;
    for n in 0..count {
        let case = random_case(&mut rng);
        let c = case.c;
        let tag = format!("{family:?} {form:?} #{n}");
        let ok = match family {
            Family::Balance => {
                let xi = q(XIS[rng.random_range(0..XIS.len())]);
                let cap = ((Q::from_integer(1) + xi) * case.m as i64 / c as i64).ceil().to_integer() as usize;
                let spec = ConstraintSpec::Balance(BalanceConstraint::new(q_to_f64(xi), c).unwrap());
                let feasible = |z: &[usize]| (0..c).all(|j| z.iter().filter(|&&v| v == j).count() <= cap);
                check(form, &case, spec, feasible, &tag)?
            }
            Family::Didi => {
                let groups: ProtectedGroups = random_groups(&mut rng, case.m);
                let slices = slices_of(&groups);
                let eps = q(FRACTIONS[rng.random_range(0..FRACTIONS.len())]) * didi_exact(&slices, &case.truth, c);
                let spec = ConstraintSpec::DidiClassification(
                    DidiClassificationConstraint::with_epsilon(groups, c, q_to_f64(eps), 0.0).unwrap(),
                );
                let feasible = |z: &[usize]| didi_exact(&slices, z, c) <= eps;
                check(form, &case, spec, feasible, &tag)?
            }
        };
        solved += usize::from(ok);
    }
    if solved * 2 <= count {
        return Err(format!("too few admissible cases: {solved}/{count}"));
    }
    Ok(solved)
}

struct RegCase {
    groups: ProtectedGroups,
    rows: Vec<Vec<f64>>,
    truth: Vec<f64>,
    pred: Vec<f64>,
    eps: f64,
}

fn reg_case(rng: &mut ChaCha8Rng) -> RegCase {
    let m = rng.random_range(2..=8);
    let groups = random_groups(rng, m);
    let rows = didi_rows(&slices_of(&groups), m);
    let truth: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
    let pred: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
    let fraction = [0.0, 0.2, 0.5, 1.0][rng.random_range(0..4)];
    let eps = fraction * didi_value(&rows, &truth);
    RegCase {
        groups,
        rows,
        truth,
        pred,
        eps,
    }
}

fn reg_spec(case: &RegCase) -> ConstraintSpec<f64> {
    ConstraintSpec::DidiRegression(DidiRegressionConstraint::with_epsilon(case.groups.clone(), case.eps, 0.0).unwrap())
}

pub fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

const SWEEPS: usize = 200_000;
const POINT_TOL: f64 = 1e-5;
const OBJECTIVE_TOL: f64 = 1e-6;
const KKT_TOL: f64 = 1e-6;

/// Worst deviations seen over a regression suite.
#[derive(Clone, Copy, Debug, Default)]
pub struct RegressionStats {
    pub cases: usize,
    pub infeasible: usize,
    pub max_objective_gap: f64,
    pub max_kkt: f64,
}

impl RegressionStats {
    fn record(&mut self, objective_gap: f64, kkt: f64) {
        self.cases += 1;
        self.max_objective_gap = self.max_objective_gap.max(objective_gap);
        self.max_kkt = self.max_kkt.max(kkt);
    }
}

/// Projection of `y*` onto the DIDI set intersected with the ball, by
/// bisection on the ball multiplier with alternating projections inside.
/// `None` when the ball misses the DIDI set.
fn beta_reference(case: &RegCase, radius_sq: f64) -> Option<Vec<f64>> {
    let halves = halfspaces(&case.rows);
    let project = |t: &[f64]| dykstra(t, &halves, case.eps, None, SWEEPS);
    let free = project(&case.truth);
    if sq(&free, &case.pred) <= radius_sq {
        return Some(free);
    }
    if sq(&project(&case.pred), &case.pred) > radius_sq {
        return None;
    }
    let at = |nu: f64| -> Vec<f64> {
        let t: Vec<f64> = case.truth.iter().zip(&case.pred).map(|(s, y)| (s + nu * y) / (1.0 + nu)).collect();
        project(&t)
    };
    let mut hi = 1.0;
    while sq(&at(hi), &case.pred) > radius_sq {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if sq(&at(mid), &case.pred) > radius_sq {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(at(hi))
}

/// Alpha, beta or ideal regression master on `count` random instances.
pub fn regression_suite(form: Form, seed: u64, count: usize) -> Result<RegressionStats, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = RegressionStats::default();
    for n in 0..count {
        let case = reg_case(&mut rng);
        let m = case.truth.len() as f64;
        let tag = format!("regression {form:?} #{n}");
        let truth = TargetVector::Values(case.truth.clone());
        let pred = TargetVector::Values(case.pred.clone());
        let (got, t, ball, reference) = match form {
            Form::Alpha => {
                let alpha = q_to_f64(q(ALPHAS[rng.random_range(0..ALPHAS.len())]));
                let t: Vec<f64> = case
                    .truth
                    .iter()
                    .zip(&case.pred)
                    .map(|(s, y)| (alpha * s + y) / (alpha + 1.0))
                    .collect();
                let reference = dykstra(&t, &halfspaces(&case.rows), case.eps, None, SWEEPS);
                (solve(&MasterProblem::alpha(alpha, reg_spec(&case), truth, pred)), t, None, Some((reference, alpha)))
            }
            Form::Ideal => {
                let reference = dykstra(&case.truth, &halfspaces(&case.rows), case.eps, None, SWEEPS);
                let got = solve(&MasterProblem::ideal(reg_spec(&case), truth));
                (got, case.truth.clone(), None, Some((reference, f64::INFINITY)))
            }
            Form::Beta => {
                let beta = [0.05, 0.1, 0.2, 0.5, 1.0][rng.random_range(0..5)];
                let radius_sq = beta * m;
                let got = solve(&MasterProblem::beta(beta, reg_spec(&case), truth, pred));
                let reference = beta_reference(&case, radius_sq);
                let nearest = dykstra(&case.pred, &halfspaces(&case.rows), case.eps, None, SWEEPS);
                // the two solvers may disagree on a ball that only grazes the set
                if (sq(&nearest, &case.pred) - radius_sq).abs() <= 1e-6 * radius_sq.max(1.0) {
                    continue;
                }
                match reference {
                    None => {
                        if !matches!(got, Err(Error::Infeasible(_))) {
                            return Err(format!("{tag}: expected an empty intersection, got {got:?}"));
                        }
                        stats.infeasible += 1;
                        continue;
                    }
                    Some(r) => (got, case.truth.clone(), Some(radius_sq), Some((r, f64::INFINITY))),
                }
            }
        };
        let sol = got.map_err(|e| format!("{tag}: {e}"))?;
        let z = sol.z.values().unwrap();
        let (reference, alpha) = reference.expect("reference computed");
        let gap = z.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if gap > POINT_TOL {
            return Err(format!("{tag}: master {z:?} vs reference {reference:?} (gap {gap:.2e})"));
        }
        let value = |v: &[f64]| {
            let fit = sq(v, &case.truth) / m;
            if alpha.is_finite() {
                fit + sq(v, &case.pred) / (alpha * m)
            } else {
                fit
            }
        };
        if (sol.objective - value(z)).abs() > 1e-9 {
            return Err(format!("{tag}: reported objective {} vs {} at the returned point", sol.objective, value(z)));
        }
        let objective_gap = (sol.objective - value(&reference)).abs();
        if objective_gap > OBJECTIVE_TOL {
            return Err(format!("{tag}: objective {} vs reference {}", sol.objective, value(&reference)));
        }
        if let Some(r2) = ball {
            if sq(z, &case.pred) > r2 * (1.0 + 1e-9) + 1e-12 {
                return Err(format!("{tag}: outside the ball"));
            }
        }
        let kkt = projection_kkt(&t, z, &case.rows, case.eps, ball.map(|r2| (&case.pred[..], r2)), 1e-7);
        if kkt > KKT_TOL {
            return Err(format!("{tag}: KKT residual {kkt:.2e}"));
        }
        stats.record(objective_gap, kkt);
    }
    Ok(stats)
}
