//! Acceptance criteria, one PASS/FAIL line each. Criteria 1–7 return their
//! numeric results as JSON; criterion 9 reruns them on a single worker
//! thread and compares the serialized output byte for byte.

mod common;

use std::time::Instant;

use common::{batch_means_se, column, log_ratios, mean, moments, proximal_gradient, random_data, random_params, reduced, rng};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde_json::{json, Value};
use simplex_score::assembly::{
    assemble, diagonal_multiplier_bound, empirical_loss_direct, sample_removed, DeltaPolicy, LossConfig,
};
use simplex_score::evaluation::{cv_fit, norm_errors, roc_auc};
use simplex_score::inference::{by_adjust, permutation_test, PermTestConfig};
use simplex_score::model::{
    check_identifiability, check_normalizability, Condition, IdentifiabilityException, Mode, ModelSpec,
    Normalizability, ParameterSet,
};
use simplex_score::sampling::{banded_k, run_mcmc, sample_ab_mcmc, sample_logistic_normal, McmcOptions};
use simplex_score::solver::{coordinate_descent, fit_path, loss_lambda_max, variables_for, PathGrid, SolverOptions};
use simplex_score::weights::{Truncation, WeightSpec};

struct Outcome {
    pass: bool,
    summary: String,
    data: Value,
}

fn outcome(pass: bool, summary: String, data: Value) -> Outcome {
    Outcome { pass, summary, data }
}

// 1. quadratic loss against the direct oracle
fn loss_oracle() -> Outcome {
    let mut r = rng(2024);
    let grid = [0.0, 0.5, 1.0, 2.0];
    let mut worst: f64 = 0.0;
    let mut errors = Vec::new();
    for _ in 0..100 {
        let (a, b) = (grid[r.random_range(0..4)], grid[r.random_range(0..4)]);
        let spec = ModelSpec::new(a, b, Mode::General).unwrap();
        let m = r.random_range(2..=6);
        let n = r.random_range(1..=50);
        let data = random_data(&mut r, n, m, &spec);
        let w = WeightSpec::power(m, 2.0).with_truncation(Truncation::Quantile(1.0));
        let j: Vec<usize> = (0..m).filter(|_| r.random_bool(0.5)).collect();
        let j = if j.is_empty() { vec![r.random_range(0..m)] } else { j };
        let loss = assemble(&data, &spec, &w, &j).unwrap();
        let p0 = random_params(&mut r, m, Mode::General);
        let p1 = random_params(&mut r, m, Mode::General);
        let dq = loss.value(&loss.theta_from_params(&p1).unwrap()) - loss.value(&loss.theta_from_params(&p0).unwrap());
        let dd = empirical_loss_direct(&data, &spec, &w, &p1, &j).unwrap()
            - empirical_loss_direct(&data, &spec, &w, &p0, &j).unwrap();
        let rel = (dq - dd).abs() / dq.abs().max(dd.abs()).max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
        errors.push(rel);
    }
    outcome(worst <= 1e-8, format!("max relative difference {worst:.2e} over 100 instances"), json!(errors))
}

// 2. diagonal-multiplier bound
fn multiplier_bound() -> Outcome {
    let small = diagonal_multiplier_bound(80, 100, 4.0).unwrap();
    let large = diagonal_multiplier_bound(1000, 100, 4.0).unwrap();
    let pass = (small - 1.3518).abs() <= 5e-4 && (large - 1.0995).abs() <= 5e-4;
    outcome(pass, format!("bound(80) = {small:.5}, bound(1000) = {large:.5}"), json!([small, large]))
}

// 3. solver against accelerated proximal gradient
fn solver_oracle() -> Outcome {
    let modes = [
        (Mode::General, 0.5, 0.5),
        (Mode::Symmetric, 1.0, 0.0),
        (Mode::Am1, 0.0, 0.0),
        (Mode::Centered, 0.5, 0.0),
        (Mode::Symmetric, 0.0, 1.0),
    ];
    let mut worst_kkt: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    let mut all_converged = true;
    let mut rows = Vec::new();
    for i in 0..20u64 {
        let (mode, a, b) = modes[i as usize % modes.len()];
        let mut r = rng(300 + i);
        let spec = ModelSpec::new(a, b, mode).unwrap();
        let m = 3 + (i as usize % 3);
        let data = random_data(&mut r, 40, m, &spec);
        let cfg = LossConfig {
            spec,
            weights: WeightSpec::power(m, 2.0),
            removed: vec![0, m - 1],
            delta: DeltaPolicy::Bound(4.0),
        };
        let loss = cfg.build(&data).unwrap();
        assert!(loss.dim() <= 50);
        let base = SolverOptions::default();
        let frac = [0.05, 0.2, 0.5][i as usize % 3];
        let opts = base.clone().with_lambda(frac * loss_lambda_max(&loss, &base).unwrap());
        let fit = coordinate_descent(&loss, &opts, None).unwrap();
        let vars = variables_for(&loss, &opts);
        let (q, g, w) = reduced(&loss, &vars, &opts);
        let (_, reference) = proximal_gradient(&q, &g, &w);
        all_converged &= fit.converged;
        if fit.converged {
            worst_kkt = worst_kkt.max(fit.kkt_violation);
        }
        let gap = (fit.objective - reference).abs();
        worst_gap = worst_gap.max(gap);
        rows.push(json!([fit.objective, fit.kkt_violation, fit.sweeps_used]));
    }
    let pass = all_converged && worst_kkt < 1e-6 && worst_gap < 1e-6;
    outcome(
        pass,
        format!("20 instances, converged {all_converged}, max KKT {worst_kkt:.2e}, max objective gap {worst_gap:.2e}"),
        json!(rows),
    )
}

// 4. sampler calibration
fn sampler_calibration() -> Outcome {
    let alpha = [1.0, 2.0, 4.0, 3.0];
    let m = alpha.len();
    let spec = ModelSpec::new(0.0, 0.0, Mode::General).unwrap();
    let params = ParameterSet::new(DMatrix::zeros(m, m), DVector::from_iterator(m, alpha.iter().map(|a| a - 1.0))).unwrap();
    let run = run_mcmc(&spec, &params, 5000, &McmcOptions { seed: 41, thin: 5, ..McmcOptions::default() }).unwrap();
    let a0: f64 = alpha.iter().sum();
    let mut worst_z: f64 = 0.0;
    for (j, &a) in alpha.iter().enumerate() {
        let x = column(&run.data, j);
        worst_z = worst_z.max((mean(&x) - a / a0).abs() / batch_means_se(&x, 50));
        let x2: Vec<f64> = x.iter().map(|v| v * v).collect();
        let second = a * (a + 1.0) / (a0 * (a0 + 1.0));
        worst_z = worst_z.max((mean(&x2) - second).abs() / batch_means_se(&x2, 50));
    }

    let mut ln = banded_k(4, 2).unwrap();
    ln.eta = DVector::from_vec(vec![-0.5, -1.5, -1.2, -0.8]);
    let data = sample_logistic_normal(&ln, 20_000, 42).unwrap();
    let (_, cov) = moments(&log_ratios(&data));
    let prec = ln.k.view((0, 0), (3, 3)).into_owned();
    let rel = (cov.try_inverse().unwrap() - &prec).norm() / prec.norm();

    let pass = worst_z <= 4.0 && rel <= 0.10;
    outcome(
        pass,
        format!("Dirichlet moments max |z| {worst_z:.2} (limit 4), logistic-normal precision error {:.1}%", 100.0 * rel),
        json!({"max_z": worst_z, "precision_rel": rel, "acceptance": run.acceptance}),
    )
}

const M_STUDY: usize = 20;

fn study_truth() -> ParameterSet {
    banded_k(M_STUDY, 2).unwrap()
}

fn study_data(n: usize, seed: u64) -> simplex_score::model::Dataset {
    let opts = McmcOptions { seed, ..McmcOptions::default() };
    sample_ab_mcmc(&ModelSpec::am1(), &study_truth(), n, &opts).unwrap()
}

fn study_config(c: f64, seed: u64) -> LossConfig {
    LossConfig {
        spec: ModelSpec::am1(),
        weights: WeightSpec::power(M_STUDY, c).with_truncation(Truncation::Quantile(1.0)),
        removed: sample_removed(M_STUDY, 5, seed).unwrap(),
        delta: DeltaPolicy::Bound(4.0),
    }
}

fn study_solver() -> SolverOptions {
    SolverOptions { eta_known_zero: true, ..SolverOptions::default() }
}

// 5. support recovery, h = x² against h = 1
fn support_recovery() -> Outcome {
    let truth = study_truth();
    let aucs: Vec<(f64, f64)> = (0..10u64)
        .into_par_iter()
        .map(|seed| {
            let data = study_data(1000, 500 + seed);
            let auc = |c: f64| {
                let loss = study_config(c, seed).build(&data).unwrap();
                let path = fit_path(&loss, &study_solver(), &PathGrid::default()).unwrap();
                roc_auc(&path, &truth).unwrap().auc
            };
            (auc(2.0), auc(0.0))
        })
        .collect();
    let sq = aucs.iter().map(|p| p.0).sum::<f64>() / aucs.len() as f64;
    let one = aucs.iter().map(|p| p.1).sum::<f64>() / aucs.len() as f64;
    let pass = sq >= 0.80 && sq >= one - 0.02;
    outcome(pass, format!("mean AUC h=x² {sq:.4}, h=1 {one:.4}"), json!(aucs))
}

// 6. estimation error with CV-selected penalty
fn estimation_error() -> Outcome {
    let truth = study_truth();
    let errors = |n: usize| -> Vec<f64> {
        (0..10u64)
            .into_par_iter()
            .map(|seed| {
                let data = study_data(n, 700 + seed);
                let fit = cv_fit(&data, &study_config(2.0, seed), &study_solver(), &PathGrid::default(), 5, seed).unwrap();
                norm_errors(&fit.selected().params, &truth, true).unwrap().frobenius
            })
            .collect()
    };
    let e250 = errors(250);
    let e1000 = errors(1000);
    let (m250, m1000) = (mean(&e250), mean(&e1000));
    let pass = m250 < 1.0 && m1000 < 1.0 && m1000 < m250;
    outcome(
        pass,
        format!("mean normalized Frobenius error n=250 {m250:.4}, n=1000 {m1000:.4}"),
        json!({"n250": e250, "n1000": e1000}),
    )
}

// 7. permutation test under the null
fn permutation_null() -> Outcome {
    let m = 4;
    let mut truth = banded_k(m, 1).unwrap();
    truth.eta = DVector::from_element(m, -1.0);
    let cfg = |seed: u64| PermTestConfig {
        loss: LossConfig {
            spec: ModelSpec::am1(),
            weights: WeightSpec::power(m, 2.0),
            removed: (0..m).collect(),
            delta: DeltaPolicy::Bound(4.0),
        },
        solver: SolverOptions::default(),
        grid: PathGrid::default(),
        folds: 5,
        replicates: 99,
        seed,
    };
    let ps: Vec<f64> = (0..100u64)
        .into_par_iter()
        .map(|rep| {
            let d1 = sample_logistic_normal(&truth, 40, 10_000 + 2 * rep).unwrap();
            let d2 = sample_logistic_normal(&truth, 40, 10_001 + 2 * rep).unwrap();
            permutation_test(&d1, &d2, &cfg(rep)).unwrap().global_p
        })
        .collect();
    let rate = ps.iter().filter(|&&p| p <= 0.05).count() as f64 / ps.len() as f64;
    let adj = by_adjust(&[0.01, 0.04]).unwrap();
    let exact = adj == vec![0.03, 0.06];
    let pass = rate <= 0.08 && exact;
    outcome(
        pass,
        format!("null rejection rate {rate:.2} at 0.05 (limit 0.08), BY example {adj:?}"),
        json!({"p": ps, "by": adj}),
    )
}

// 8. validity tables
fn validity_tables() -> Outcome {
    use IdentifiabilityException::*;
    let ident: [((f64, f64), Option<IdentifiabilityException>); 10] = [
        ((0.0, 0.0), None),
        ((1.0, 1.0), Some(I)),
        ((1.0, 2.0), Some(II)),
        ((1.0, 0.0), Some(III)),
        ((1.0, 0.5), Some(III)),
        ((0.5, 1.0), Some(IV)),
        ((1.5, 3.0), Some(IV)),
        ((0.25, 0.5), Some(IV)),
        ((2.0, 1.0), None),
        ((0.0, 1.0), None),
    ];
    let mut failures = Vec::new();
    for ((a, b), want) in ident {
        let got = check_identifiability(a, b);
        if got.exception_case != want || got.identifiable != want.is_none() {
            failures.push(format!("identifiability ({a}, {b})"));
        }
    }

    let spec = |a: f64, b: f64, mode: Mode| ModelSpec::new(a, b, mode).unwrap();
    let p = |k: DMatrix<f64>, eta: Vec<f64>| ParameterSet::new(k, DVector::from_vec(eta)).unwrap();
    let laplacian = banded_k(4, 1).unwrap().k;
    use Normalizability::*;
    let norm: Vec<(&str, ModelSpec, ParameterSet, Normalizability, Option<Condition>)> = vec![
        ("a,b>0", spec(1.0, 1.0, Mode::General), p(-DMatrix::identity(3, 3), vec![5.0, -9.0, 0.0]), Proven, Some(Condition::CC1)),
        ("b=0, eta>-1", spec(0.5, 0.0, Mode::General), p(DMatrix::zeros(3, 3), vec![0.0, 0.5, -0.5]), Proven, Some(Condition::CC2)),
        ("b=0, eta=-1", spec(0.5, 0.0, Mode::General), p(DMatrix::zeros(3, 3), vec![-1.0, 0.0, 0.0]), Violated, None),
        ("laplacian", spec(0.0, 0.0, Mode::Am1), p(laplacian.clone(), vec![0.0; 4]), Proven, Some(Condition::Thm4II)),
        ("laplacian, 1'eta+m=1", spec(0.0, 0.0, Mode::Am1), p(laplacian.clone(), vec![-3.0, 0.0, 0.0, 0.0]), Proven, Some(Condition::Thm4II)),
        ("laplacian, 1'eta+m<0", spec(0.0, 0.0, Mode::Am1), p(laplacian, vec![-5.0, 0.0, 0.0, 0.0]), Unproven, None),
        ("K=0, eta=-2", spec(0.0, 0.0, Mode::General), p(DMatrix::zeros(3, 3), vec![-2.0, 0.0, 0.0]), Unproven, None),
        ("K=I", spec(0.0, 0.0, Mode::Symmetric), p(DMatrix::identity(3, 3), vec![-4.0, 0.0, 0.0]), Proven, Some(Condition::Thm4I)),
        ("K=0, eta>-1", spec(0.0, 0.0, Mode::General), p(DMatrix::zeros(3, 3), vec![-0.5; 3]), Proven, Some(Condition::Thm4III)),
        ("a=0, b>0, K=-I", spec(0.0, 1.0, Mode::General), p(-DMatrix::identity(3, 3), vec![0.0; 3]), Unproven, None),
    ];
    for (name, s, params, want, cond) in &norm {
        let got = check_normalizability(s, params);
        if got.normalizable != *want || got.condition_hit != *cond {
            failures.push(format!("normalizability {name}: {:?}/{:?}", got.normalizable, got.condition_hit));
        }
    }
    let pass = failures.is_empty();
    outcome(pass, format!("20 cases, mismatches: {failures:?}"), json!(failures))
}

type Criterion = (usize, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 8] = [
    (1, "loss assembly matches direct oracle", loss_oracle),
    (2, "diagonal-multiplier bound values", multiplier_bound),
    (3, "solver KKT and proximal-gradient agreement", solver_oracle),
    (4, "sampler calibration", sampler_calibration),
    (5, "support recovery AUC", support_recovery),
    (6, "estimation error decreases with n", estimation_error),
    (7, "permutation-test null calibration", permutation_null),
    (8, "identifiability and normalizability tables", validity_tables),
];

fn main() {
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get()).max(2);
    let wide = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let narrow = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let mut all_pass = true;
    let mut first_json = Vec::new();
    for (id, name, run) in CRITERIA {
        let start = Instant::now();
        let out = wide.install(run);
        let secs = start.elapsed().as_secs_f64();
        all_pass &= out.pass;
        println!(
            "{} criterion {id} ({name}): {} [{secs:.1}s]",
            if out.pass { "PASS" } else { "FAIL" },
            out.summary
        );
        first_json.push(serde_json::to_string(&out.data).unwrap());
    }

    let start = Instant::now();
    let mut mismatched = Vec::new();
    for (i, (id, _, run)) in CRITERIA.iter().enumerate().take(7) {
        let again = serde_json::to_string(&narrow.install(run).data).unwrap();
        if again != first_json[i] {
            mismatched.push(*id);
        }
    }
    let pass = mismatched.is_empty();
    all_pass &= pass;
    println!(
        "{} criterion 9 (determinism across thread counts): criteria 1-7 rerun on 1 thread vs {threads}, mismatched {mismatched:?} [{:.1}s]",
        if pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    if !all_pass {
        std::process::exit(1);
    }
}
