mod common;

use common::rng;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use simplex_score::assembly::{DeltaPolicy, LossConfig};
use simplex_score::evaluation::{
    cross_validate, fold_partition, norm_errors, roc_from_fits, tpr_fpr, trapezoid_auc, NormErrors,
    ZERO_TOL,
};
use simplex_score::model::{Dataset, Mode, ModelSpec, ParameterSet};
use simplex_score::sampling::{banded_k, sample_logistic_normal};
use simplex_score::solver::{
    coordinate_descent, loss_lambda_max, unpenalized_solution, variables_for, FitResult, PathGrid,
    SolverOptions,
};
use simplex_score::weights::WeightSpec;

fn support(m: usize, pairs: &[(usize, usize)]) -> ParameterSet {
    let mut k = DMatrix::zeros(m, m);
    for &(r, c) in pairs {
        k[(r, c)] = 0.5;
    }
    ParameterSet::new(k, DVector::zeros(m)).unwrap()
}

fn fit_of(params: ParameterSet) -> FitResult {
    FitResult {
        params,
        lambda_k: 0.0,
        lambda_eta: 0.0,
        sweeps_used: 0,
        converged: true,
        kkt_violation: 0.0,
        objective: 0.0,
    }
}

/// Area under the closed ROC polygon by the shoelace formula.
fn shoelace_auc(points: &[(f64, f64)]) -> f64 {
    let mut pts = points.to_vec();
    pts.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap().then(p.1.partial_cmp(&q.1).unwrap()));
    let mut poly = vec![(0.0, 0.0)];
    poly.extend(pts);
    poly.push((1.0, 1.0));
    poly.push((1.0, 0.0));
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % poly.len()];
        twice += x0 * y1 - x1 * y0;
    }
    twice.abs() / 2.0
}

#[test]
fn roc_examples() {
    let truth = support(4, &[(0, 1), (1, 0), (2, 3), (3, 2)]);
    // nested supports, all true edges before any false one
    let nested = [
        support(4, &[]),
        support(4, &[(0, 1), (1, 0)]),
        support(4, &[(0, 1), (1, 0), (2, 3), (3, 2)]),
        support(4, &[(0, 1), (1, 0), (2, 3), (3, 2), (0, 2), (2, 0)]),
    ];
    let fits: Vec<FitResult> = nested.into_iter().map(fit_of).collect();
    assert_eq!(roc_from_fits(&fits, &truth).unwrap().auc, 1.0);
    assert_eq!(roc_from_fits(&fits[..1], &truth).unwrap().auc, 0.5);

    let three = [(0.1, 0.4), (0.5, 0.6), (0.3, 0.9)];
    assert!((trapezoid_auc(&three) - shoelace_auc(&three)).abs() < 1e-15);
}

#[test]
fn rate_examples() {
    let truth = support(3, &[(0, 1), (1, 0)]);
    let est = support(3, &[(0, 1), (1, 0), (0, 2)]);
    assert_eq!(tpr_fpr(&est, &truth, ZERO_TOL).unwrap(), (1.0, 0.25));
    assert!(tpr_fpr(&support(4, &[]), &truth, ZERO_TOL).is_err());
}

#[test]
fn norm_error_examples() {
    let truth = support(3, &[(0, 1)]);
    let same = norm_errors(&truth, &truth, false).unwrap();
    assert_eq!((same.max, same.frobenius, same.spectral), (0.0, 0.0, 0.0));
    let mut e = truth.clone();
    e.k[(0, 1)] += 1.0;
    let unit = norm_errors(&e, &truth, false).unwrap();
    assert!((unit.max - 1.0).abs() < 1e-15 && (unit.frobenius - 1.0).abs() < 1e-15);
    assert!((unit.spectral - 1.0).abs() < 1e-12);
    let normalized = norm_errors(&e, &truth, true).unwrap();
    assert!((normalized.frobenius - 2.0).abs() < 1e-12);
}

#[test]
fn spectral_norm_matches_eigen_oracle() {
    let mut r = rng(4);
    for _ in 0..20 {
        let d: DMatrix<f64> = DMatrix::from_fn(4, 4, |_, _| r.random_range(-2.0..2.0));
        let ev = SymmetricEigen::new(d.transpose() * &d).eigenvalues;
        let oracle = ev.max().sqrt();
        assert!((NormErrors::of(&d).spectral - oracle).abs() < 1e-10);
    }
}

fn logistic_config(m: usize) -> LossConfig {
    LossConfig {
        spec: ModelSpec::am1(),
        weights: WeightSpec::power(m, 2.0),
        removed: (0..m).collect(),
        delta: DeltaPolicy::Bound(4.0),
    }
}

fn logistic_data(m: usize, n: usize, seed: u64) -> Dataset {
    let mut p = banded_k(m, 1).unwrap();
    p.eta = DVector::from_element(m, -1.0);
    sample_logistic_normal(&p, n, seed).unwrap()
}

#[test]
fn leave_one_out_runs() {
    let data = logistic_data(4, 12, 1);
    let cfg = logistic_config(4);
    let grid = PathGrid { n_lambda: 8, ratio: 0.05 };
    let cv = cross_validate(&data, &cfg, &SolverOptions::default(), &grid, 12, 3).unwrap();
    assert_eq!(cv.fold_scores.len(), 12);
    assert!(cv.lambdas.contains(&cv.lambda_star));
    assert!(cross_validate(&data, &cfg, &SolverOptions::default(), &grid, 13, 3).is_err());
}

#[test]
fn top_of_grid_scores_the_unpenalized_block() {
    let data = logistic_data(5, 100, 2);
    let cfg = logistic_config(5);
    let opts = SolverOptions::default();
    let folds = 5;
    let cv = cross_validate(&data, &cfg, &opts, &PathGrid { n_lambda: 6, ratio: 0.1 }, folds, 9).unwrap();
    let parts = fold_partition(&data, folds, 9).unwrap();
    let mut checked = 0;
    for f in 0..folds {
        let train_idx: Vec<usize> = (0..folds).filter(|&o| o != f).flat_map(|o| parts[o].clone()).collect();
        let train = cfg.build(&data.select(&train_idx)).unwrap();
        let test = cfg.build_undamped(&data.select(&parts[f])).unwrap();
        // cold fit at the top penalty through the public solver
        let cold = coordinate_descent(&train, &opts.clone().with_lambda(cv.lambdas[0]), None).unwrap();
        let direct = test.value(&test.theta_from_params(&cold.params).unwrap());
        assert!((direct - cv.fold_scores[f][0]).abs() < 1e-8 * (1.0 + direct.abs()));
        if loss_lambda_max(&train, &opts).unwrap() <= cv.lambdas[0] {
            let vars = variables_for(&train, &opts);
            let zero = train.params_from_theta(&unpenalized_solution(&train, &vars).unwrap());
            let v = test.value(&test.theta_from_params(&zero).unwrap());
            assert!((v - cv.fold_scores[f][0]).abs() < 1e-8 * (1.0 + v.abs()));
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn cv_is_invariant_to_sample_order() {
    let data = logistic_data(4, 60, 5);
    let cfg = logistic_config(4);
    let grid = PathGrid { n_lambda: 10, ratio: 0.05 };
    let a = cross_validate(&data, &cfg, &SolverOptions::default(), &grid, 5, 1).unwrap();
    let mut order: Vec<usize> = (0..60).collect();
    order.shuffle(&mut rng(8));
    let b = cross_validate(&data.select(&order), &cfg, &SolverOptions::default(), &grid, 5, 1).unwrap();
    assert_eq!(a, b);
}

#[test]
fn folds_are_balanced() {
    let data = logistic_data(3, 23, 6);
    let parts = fold_partition(&data, 5, 0).unwrap();
    let mut sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
    sizes.sort_unstable();
    assert_eq!(sizes, vec![4, 4, 5, 5, 5]);
    let mut all: Vec<usize> = parts.concat();
    all.sort_unstable();
    assert_eq!(all, (0..23).collect::<Vec<_>>());
}

#[test]
fn selected_lambda_is_interior() {
    let reps = 20;
    let mut interior = 0;
    // no diagonal multiplier: it shrinks on its own and pushes λ* to the grid
    // floor. The grid goes below the default ratio because at this n the
    // held-out optimum sits near 0.005 λ_max.
    let cfg = LossConfig { delta: DeltaPolicy::Fixed(1.0), ..logistic_config(5) };
    let grid = PathGrid { n_lambda: 50, ratio: 1e-3 };
    for seed in 0..reps {
        let data = logistic_data(5, 500, 100 + seed);
        let cv = cross_validate(&data, &cfg, &SolverOptions::default(), &grid, 5, seed).unwrap();
        if cv.best_index > 0 && cv.best_index + 1 < cv.lambdas.len() {
            interior += 1;
        }
    }
    assert!(interior as f64 >= 0.8 * reps as f64, "{interior}/{reps}");
}

fn random_support(r: &mut rand_chacha::ChaCha8Rng, m: usize, p: f64, symmetric: bool) -> ParameterSet {
    let mut k = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            if i != j && (!symmetric || i < j) && r.random_bool(p) {
                k[(i, j)] = 1.0;
                if symmetric {
                    k[(j, i)] = 1.0;
                }
            }
        }
    }
    ParameterSet::new(k, DVector::zeros(m)).unwrap()
}

fn complement(p: &ParameterSet) -> ParameterSet {
    let m = p.m();
    let k = DMatrix::from_fn(m, m, |i, j| if i != j && p.k[(i, j)] == 0.0 { 1.0 } else { 0.0 });
    ParameterSet::new(k, DVector::zeros(m)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rates_in_unit_square_and_even_when_symmetric(seed in 0u64..10_000, m in 3usize..8) {
        let mut r = rng(seed);
        let truth = random_support(&mut r, m, 0.4, true);
        let est = random_support(&mut r, m, 0.5, true);
        if let Ok((tpr, fpr)) = tpr_fpr(&est, &truth, ZERO_TOL) {
            prop_assert!((0.0..=1.0).contains(&tpr) && (0.0..=1.0).contains(&fpr));
            let edges = (0..m).flat_map(|i| (0..m).map(move |j| (i, j)))
                .filter(|&(i, j)| i != j && truth.k[(i, j)] != 0.0).count();
            let tp = (tpr * edges as f64).round() as usize;
            prop_assert_eq!(tp % 2, 0);
        }
    }

    #[test]
    fn complement_path_reflects_auc(seed in 0u64..10_000, m in 3usize..7, len in 1usize..8) {
        let mut r = rng(seed);
        let truth = random_support(&mut r, m, 0.4, false);
        prop_assume!(tpr_fpr(&truth, &truth, ZERO_TOL).is_ok());
        let fits: Vec<FitResult> = (0..len)
            .map(|_| {
                let p = r.random_range(0.0..1.0);
                fit_of(random_support(&mut r, m, p, false))
            })
            .collect();
        let flipped: Vec<FitResult> = fits.iter().map(|f| fit_of(complement(&f.params))).collect();
        let a = roc_from_fits(&fits, &truth).unwrap();
        let b = roc_from_fits(&flipped, &truth).unwrap();
        prop_assert!((0.0..=1.0).contains(&a.auc));
        prop_assert!((a.auc + b.auc - 1.0).abs() < 1e-12, "{} + {}", a.auc, b.auc);
        prop_assert!((a.auc - shoelace_auc(&a.points[2..])).abs() < 1e-12);
    }

    #[test]
    fn norm_ordering(seed in 0u64..10_000, m in 1usize..7) {
        let mut r = rng(seed);
        let d = DMatrix::from_fn(m, m, |_, _| r.random_range(-3.0..3.0));
        let e = NormErrors::of(&d);
        prop_assert!(e.max <= e.frobenius * (1.0 + 1e-12));
        prop_assert!(e.spectral <= e.frobenius * (1.0 + 1e-12));
    }
}

#[test]
fn general_mode_loss_config_is_accepted() {
    let spec = ModelSpec::new(0.5, 0.5, Mode::Symmetric).unwrap();
    let data = logistic_data(4, 40, 11);
    let cfg = LossConfig { spec, weights: WeightSpec::power(4, 1.5), removed: vec![0, 3], delta: DeltaPolicy::Fixed(1.2) };
    let cv = cross_validate(&data, &cfg, &SolverOptions::default(), &PathGrid { n_lambda: 5, ratio: 0.1 }, 4, 0).unwrap();
    assert!(cv.cv_curve.iter().all(|v| v.is_finite()));
}
