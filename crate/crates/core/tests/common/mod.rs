//! Shared helpers for integration tests: random instances and reference
//! solvers written independently of the library's optimization code.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simplex_score::model::{Dataset, Mode, ModelSpec, ParameterSet};
use simplex_score::solver::{PenaltyKind, Quadratic, SolverOptions, Variable};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Rows with entries bounded below by roughly `0.05 / m`.
pub fn random_data(rng: &mut ChaCha8Rng, n: usize, m: usize, spec: &ModelSpec) -> Dataset {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        })
        .collect();
    Dataset::from_rows(&rows, spec).unwrap()
}

pub fn random_params(rng: &mut ChaCha8Rng, m: usize, mode: Mode) -> ParameterSet {
    let mut p = ParameterSet::zeros(m);
    for r in 0..m {
        for c in 0..m {
            p.k[(r, c)] = rng.random_range(-1.0..1.0);
        }
        p.eta[r] = rng.random_range(-1.0..1.0);
    }
    if mode.symmetric_k() {
        p.k = (&p.k + p.k.transpose()) * 0.5;
    }
    if mode == Mode::Am1 {
        for c in 0..m {
            p.k[(c, c)] = 0.0;
            let s: f64 = p.k.column(c).sum();
            p.k[(c, c)] = -s;
        }
    }
    if !mode.has_eta() {
        p.eta.fill(0.0);
    }
    p
}

/// Accelerated proximal gradient with restarts for
/// `½ xᵀQx − gᵀx + Σ w_i |x_i|`. Returns the minimizer and its objective.
pub fn proximal_gradient(q: &DMatrix<f64>, g: &DVector<f64>, w: &[f64]) -> (DVector<f64>, f64) {
    let lmax = SymmetricEigen::new(q.clone()).eigenvalues.max().max(1e-12);
    let step = 1.0 / lmax;
    let obj = |x: &DVector<f64>| -> f64 {
        0.5 * x.dot(&(q * x)) - g.dot(x) + x.iter().zip(w).map(|(v, wi)| wi * v.abs()).sum::<f64>()
    };
    let prox = |z: DVector<f64>| -> DVector<f64> {
        DVector::from_iterator(
            z.len(),
            z.iter().zip(w).map(|(v, wi)| {
                let t = wi * step;
                v.signum() * (v.abs() - t).max(0.0)
            }),
        )
    };
    let n = g.len();
    let mut x = DVector::zeros(n);
    let mut y = x.clone();
    let mut t = 1.0_f64;
    let mut fx = obj(&x);
    for _ in 0..2_000_000 {
        let grad = q * &y - g;
        let xn = prox(&y - grad * step);
        let fnew = obj(&xn);
        if fnew > fx {
            // restart momentum
            y = x.clone();
            t = 1.0;
            continue;
        }
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let change = (&xn - &x).amax();
        y = &xn + (&xn - &x) * ((t - 1.0) / tn);
        x = xn;
        t = tn;
        fx = fnew;
        if change <= 1e-13 * (1.0 + x.amax()) {
            break;
        }
    }
    (x.clone(), obj(&x))
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Standard error of the mean from `batches` non-overlapping batch means.
pub fn batch_means_se(v: &[f64], batches: usize) -> f64 {
    let size = v.len() / batches;
    let means: Vec<f64> = (0..batches).map(|b| mean(&v[b * size..(b + 1) * size])).collect();
    let mu = mean(&means);
    let var = means.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

/// Column `j` of a dataset.
pub fn column(data: &Dataset, j: usize) -> Vec<f64> {
    data.rows().map(|r| r[j]).collect()
}

/// Additive log-ratios against the last component, as an `n × (m−1)` matrix.
pub fn log_ratios(data: &Dataset) -> DMatrix<f64> {
    let m = data.m();
    DMatrix::from_fn(data.n(), m - 1, |i, j| (data.row(i)[j] / data.row(i)[m - 1]).ln())
}

/// Sample mean and (biased) covariance of the rows of `y`.
pub fn moments(y: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = y.nrows() as f64;
    let mu = DVector::from_iterator(y.ncols(), (0..y.ncols()).map(|j| y.column(j).sum() / n));
    let mut centered = y.clone();
    for j in 0..y.ncols() {
        for i in 0..y.nrows() {
            centered[(i, j)] -= mu[j];
        }
    }
    let cov = centered.transpose() * &centered / n;
    (mu, cov)
}

/// Reduced problem over variables: `θ = P φ`.
pub fn reduced(q: &dyn Quadratic, vars: &[Variable], opts: &SolverOptions) -> (DMatrix<f64>, DVector<f64>, Vec<f64>) {
    let dim = q.dim();
    let mut p = DMatrix::zeros(dim, vars.len());
    let mut w = Vec::new();
    for (i, v) in vars.iter().enumerate() {
        p[(v.first, i)] = 1.0;
        let mut slots = 1.0;
        if let Some(s) = v.second {
            p[(s, i)] = 1.0;
            slots = 2.0;
        }
        w.push(match v.kind {
            PenaltyKind::None => 0.0,
            PenaltyKind::K => opts.lambda_k * slots,
            PenaltyKind::Eta => opts.lambda_eta * slots,
        });
    }
    let full = DMatrix::from_fn(dim, dim, |a, b| q.entry(a, b));
    let g = DVector::from_column_slice(q.linear());
    (p.transpose() * full * &p, p.transpose() * g, w)
}

