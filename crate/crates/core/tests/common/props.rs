//! Randomized invariants of losses, constraint measures and masters. Each
//! property takes a case count and runs on a fixed-seed generator.

use moving_targets::constraints::{didi_classification, didi_regression, FEAS_TOL};
use moving_targets::losses::{cross_entropy, hamming, mse, one_hot};
use moving_targets::{
    ideal_projection, is_feasible, solve, violation_score, BalanceConstraint, ConstraintSpec,
    DidiClassificationConstraint, DidiRegressionConstraint, Error, MasterProblem, Matrix, ProtectedGroups,
    TargetVector,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

type Outcome = Result<(), TestCaseError>;

fn check<S: Strategy>(cases: u32, strategy: S, body: impl Fn(S::Value) -> Outcome) -> Result<(), String> {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, body).map_err(|e| e.to_string())
}

/// Groups from a per-example group index; empty groups are dropped.
fn groups_from(assign: &[usize], k: usize) -> ProtectedGroups {
    let slices: Vec<Vec<usize>> = (0..k)
        .map(|g| (0..assign.len()).filter(|&i| assign[i] == g).collect::<Vec<_>>())
        .filter(|s| !s.is_empty())
        .collect();
    ProtectedGroups::from_index_sets(assign.len(), &[("g", slices)])
}

/// Class count, 1-based labels, a group index per example, group count.
fn labelled(max_m: usize, max_c: usize) -> impl Strategy<Value = (usize, Vec<usize>, Vec<usize>, usize)> {
    (1..=max_m, 2..=max_c, 1..=4usize).prop_flat_map(|(m, c, k)| {
        (
            Just(c),
            prop::collection::vec(1..=c, m),
            prop::collection::vec(0..k, m),
            Just(k),
        )
    })
}

fn indicator(labels: &[usize], j: usize) -> Vec<f64> {
    labels.iter().map(|&l| if l == j { 1.0 } else { 0.0 }).collect()
}

fn labels(v: Vec<usize>) -> TargetVector<f64> {
    TargetVector::ClassLabels(v)
}

/// Two vectors that agree except on a random subset of positions.
fn pair<T: std::fmt::Debug + Clone>(
    element: impl Strategy<Value = T> + Clone,
) -> impl Strategy<Value = (Vec<T>, Vec<T>, Vec<bool>)> {
    (1..40usize).prop_flat_map(move |m| {
        (
            prop::collection::vec(element.clone(), m),
            prop::collection::vec(element.clone(), m),
            prop::collection::vec(prop::bool::weighted(0.2), m),
        )
    })
}

pub fn mse_is_a_premetric(cases: u32) -> Result<(), String> {
    check(cases, pair(-1e3..1e3f64), |(a, b, mask)| {
        let b: Vec<f64> = a.iter().zip(&b).zip(&mask).map(|((x, y), &m)| if m { *y } else { *x }).collect();
        let l = mse(&a, &b).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l == 0.0, a == b);
        prop_assert_eq!(mse(&a, &a).unwrap(), 0.0);
        Ok(())
    })
}

pub fn hamming_is_a_premetric(cases: u32) -> Result<(), String> {
    check(cases, pair(1..=4usize), |(a, b, mask)| {
        let b: Vec<usize> = a.iter().zip(&b).zip(&mask).map(|((x, y), &m)| if m { *y } else { *x }).collect();
        let l = hamming(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&l));
        prop_assert_eq!(l == 0.0, a == b);
        prop_assert_eq!(l, hamming(&b, &a).unwrap());
        Ok(())
    })
}

pub fn cross_entropy_is_a_premetric(cases: u32) -> Result<(), String> {
    let strategy = (1..20usize, 2..=4usize).prop_flat_map(|(m, c)| {
        (
            Just(c),
            prop::collection::vec(1..=c, m),
            prop::collection::vec(-4.0..4.0f64, m * c),
            prop::collection::vec(any::<bool>(), m),
        )
    });
    check(cases, strategy, |(c, y, logits, exact)| {
        let m = y.len();
        // rows are either the exact one-hot truth or a strictly positive softmax
        let mut p = vec![0.0; m * c];
        for i in 0..m {
            if exact[i] {
                p[i * c + y[i] - 1] = 1.0;
            } else {
                let row = &logits[i * c..(i + 1) * c];
                let top = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = row.iter().map(|v| (v - top).exp()).collect();
                let s: f64 = e.iter().sum();
                for j in 0..c {
                    p[i * c + j] = e[j] / s;
                }
            }
        }
        let truth: Matrix<f64> = one_hot(&y, c);
        let l = cross_entropy(&Matrix::new(m, c, p).unwrap(), &truth).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l == 0.0, exact.iter().all(|&e| e));
        prop_assert_eq!(cross_entropy(&truth, &truth).unwrap(), 0.0);
        Ok(())
    })
}

pub fn classification_didi_is_the_sum_of_indicator_didi(cases: u32) -> Result<(), String> {
    check(cases, labelled(30, 5), |(c, y, assign, k)| {
        let g = groups_from(&assign, k);
        let class = didi_classification(&g, &y, c).unwrap();
        let per_class: f64 = (1..=c).map(|j| didi_regression(&g, &indicator(&y, j)).unwrap()).sum();
        prop_assert!((class - per_class).abs() <= 1e-12, "{} vs {}", class, per_class);
        Ok(())
    })
}

pub fn didi_vanishes_on_group_balanced_vectors(cases: u32) -> Result<(), String> {
    let strategy = (
        prop::collection::vec(1..=4usize, 1..8),
        prop::collection::vec(-5.0..5.0f64, 1..8),
        1..=4usize,
        0..8usize,
    );
    check(cases, strategy, |(base, values, k, shift)| {
        // k copies of the same content, rotated per copy, one copy per group
        let m = base.len();
        let y: Vec<usize> = (0..k * m).map(|p| base[(p % m + (p / m) * shift) % m]).collect();
        let assign: Vec<usize> = (0..k * m).map(|p| p / m).collect();
        prop_assert!(didi_classification(&groups_from(&assign, k), &y, 4).unwrap() <= 1e-12);

        let n = values.len();
        let v: Vec<f64> = (0..k * n).map(|p| values[(p % n + (p / n) * shift) % n]).collect();
        let assign: Vec<usize> = (0..k * n).map(|p| p / n).collect();
        prop_assert!(didi_regression(&groups_from(&assign, k), &v).unwrap().abs() <= 1e-12);
        Ok(())
    })
}

pub fn didi_score_crosses_one_at_feasibility(cases: u32) -> Result<(), String> {
    check(cases, (labelled(30, 4), 0.0..1.5f64), |((c, y, assign, k), fraction)| {
        let g = groups_from(&assign, k);
        let eps = fraction * didi_classification(&g, &y, c).unwrap().max(0.1);
        let spec =
            ConstraintSpec::DidiClassification(DidiClassificationConstraint::with_epsilon(g, c, eps, 0.0).unwrap());
        let y = labels(y);
        let score = violation_score(&spec, &y).unwrap();
        let feasible = is_feasible(&spec, &y).unwrap();
        if score.value <= 1.0 {
            prop_assert!(feasible);
        }
        if feasible && eps > 0.0 {
            prop_assert!(score.value <= 1.0 + FEAS_TOL / eps);
        }
        prop_assert_eq!(score.capped, score.value > 1.0);
        prop_assert!(score.reported() <= 1.0);
        Ok(())
    })
}

pub fn capacity_admits_a_balanced_split(cases: u32) -> Result<(), String> {
    check(cases, (1..500usize, 1..8usize, 0.0..1.0f64), |(m, c, xi)| {
        let cap = BalanceConstraint::new(xi, c).unwrap().capacity(m);
        prop_assert!(cap * c >= m);
        prop_assert!(cap <= m);
        prop_assert!(cap as f64 >= ((1.0 + xi) * m as f64 / c as f64).min(m as f64) - 1e-6);
        prop_assert!(cap as f64 <= (1.0 + xi) * m as f64 / c as f64 + 1.0);
        Ok(())
    })
}

pub fn classification_masters_are_feasible_and_ordered(cases: u32) -> Result<(), String> {
    let strategy = (
        labelled(12, 4),
        prop::collection::vec(0..4usize, 12),
        0.05..5.0f64,
        0.05..1.0f64,
        0.0..0.5f64,
        0.0..1.0f64,
        any::<bool>(),
    );
    check(cases, strategy, |((c, y_star, assign, k), pred_seed, alpha, beta, xi, didi_fraction, use_balance)| {
        let m = y_star.len();
        let pred: Vec<usize> = pred_seed[..m].iter().map(|&v| v % c + 1).collect();
        let spec = if use_balance {
            ConstraintSpec::Balance(BalanceConstraint::new(xi, c).unwrap())
        } else {
            let g = groups_from(&assign, k);
            let eps = didi_fraction * didi_classification(&g, &y_star, c).unwrap();
            ConstraintSpec::DidiClassification(DidiClassificationConstraint::with_epsilon(g, c, eps, 0.0).unwrap())
        };
        let truth = labels(y_star.clone());
        let ideal = ideal_projection(&spec, &truth).unwrap();
        prop_assert!(is_feasible(&spec, &ideal.z).unwrap());
        let best = hamming(ideal.z.labels().unwrap(), &y_star).unwrap();
        if is_feasible(&spec, &truth).unwrap() {
            prop_assert_eq!(best, 0.0);
        }

        let a = solve(&MasterProblem::alpha(alpha, spec.clone(), truth.clone(), labels(pred.clone()))).unwrap();
        prop_assert!(is_feasible(&spec, &a.z).unwrap());
        prop_assert!(hamming(a.z.labels().unwrap(), &y_star).unwrap() >= best - 1e-12);
        // the ideal labels are a feasible candidate for the alpha objective
        let at_ideal = best + hamming(ideal.z.labels().unwrap(), &pred).unwrap() / alpha;
        prop_assert!(a.objective <= at_ideal + 1e-12);

        match solve(&MasterProblem::beta(beta, spec.clone(), truth.clone(), labels(pred.clone()))) {
            Ok(b) => {
                prop_assert!(is_feasible(&spec, &b.z).unwrap());
                let zb = b.z.labels().unwrap();
                let budget = ((beta * m as f64) + 1e-9).floor() as usize;
                prop_assert!(zb.iter().zip(&pred).filter(|(x, y)| x != y).count() <= budget);
                prop_assert!(hamming(zb, &y_star).unwrap() >= best - 1e-12);
            }
            Err(Error::Infeasible(_)) => {
                prop_assert!(!is_feasible(&spec, &labels(pred.clone())).unwrap());
            }
            Err(e) => prop_assert!(false, "beta master failed: {}", e),
        }
        Ok(())
    })
}

pub fn regression_masters_are_feasible_and_preserve_the_mean(cases: u32) -> Result<(), String> {
    let strategy = (
        (2..16usize).prop_flat_map(|m| {
            (
                prop::collection::vec(-3.0..3.0f64, m),
                prop::collection::vec(-3.0..3.0f64, m),
                prop::collection::vec(0..3usize, m),
            )
        }),
        0.0..1.0f64,
        0.05..5.0f64,
    );
    check(cases, strategy, |((values, pred, assign), fraction, alpha)| {
        let g = groups_from(&assign, 3);
        let eps = fraction * didi_regression(&g, &values).unwrap();
        let spec = ConstraintSpec::DidiRegression(DidiRegressionConstraint::with_epsilon(g.clone(), eps, 0.0).unwrap());
        let truth = TargetVector::Values(values.clone());
        let ideal = ideal_projection(&spec, &truth).unwrap();
        let z = ideal.z.values().unwrap();
        prop_assert!(didi_regression(&g, z).unwrap() <= eps + 1e-6);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        // the feasible set is invariant under adding a constant
        prop_assert!((mean(z) - mean(&values)).abs() <= 1e-9);

        let a = solve(&MasterProblem::alpha(alpha, spec.clone(), truth, TargetVector::Values(pred.clone()))).unwrap();
        let za = a.z.values().unwrap();
        prop_assert!(didi_regression(&g, za).unwrap() <= eps + 1e-6);
        prop_assert!(mse(za, &values).unwrap() >= mse(z, &values).unwrap() - 1e-9);
        let at_ideal = mse(z, &values).unwrap() + mse(z, &pred).unwrap() / alpha;
        prop_assert!(a.objective <= at_ideal + 1e-9);
        Ok(())
    })
}

/// Every property with its name, for batch runners.
pub type Property = fn(u32) -> Result<(), String>;

pub const ALL: [(&str, Property); 10] = [
    ("mse is a premetric", mse_is_a_premetric),
    ("hamming is a premetric", hamming_is_a_premetric),
    ("cross-entropy is a premetric", cross_entropy_is_a_premetric),
    ("classification DIDI = sum of indicator DIDI", classification_didi_is_the_sum_of_indicator_didi),
    ("DIDI = 0 on group-balanced vectors", didi_vanishes_on_group_balanced_vectors),
    ("DIDI score crosses 1 at feasibility", didi_score_crosses_one_at_feasibility),
    ("capacity admits a balanced split", capacity_admits_a_balanced_split),
    ("classification masters feasible and ordered", classification_masters_are_feasible_and_ordered),
    ("regression masters feasible, mean preserved", regression_masters_are_feasible_and_preserve_the_mean),
    ("balance score of feasible labels at most 1", balance_score_of_feasible_labels_is_at_most_one),
];

pub fn balance_score_of_feasible_labels_is_at_most_one(cases: u32) -> Result<(), String> {
    check(cases, (prop::collection::vec(1..=5usize, 1..60), 2..=5usize, 0.0..0.6f64), |(raw, c, xi)| {
        let y: Vec<usize> = raw.iter().map(|&v| (v - 1) % c + 1).collect();
        let spec = ConstraintSpec::Balance(BalanceConstraint::new(xi, c).unwrap());
        let y = labels(y);
        if is_feasible(&spec, &y).unwrap() {
            prop_assert!(violation_score(&spec, &y).unwrap().value <= 1.0 + 1e-12);
        }
        Ok(())
    })
}
