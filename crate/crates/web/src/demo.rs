//! Native implementations behind the browser exports.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use simplex_score::assembly::{sample_removed, DeltaPolicy, LossConfig};
use simplex_score::evaluation::{cv_fit, roc_from_fits};
use simplex_score::model::{log_kernel, Mode, ModelSpec, ParameterSet};
use simplex_score::sampling::{banded_k, run_mcmc, McmcOptions};
use simplex_score::solver::{PathGrid, SolverOptions};
use simplex_score::weights::{hphi_and_deriv, Truncation, WeightSpec};

pub const MAX_RESOLUTION: usize = 200;
pub const MAX_M: usize = 15;
pub const MAX_N: usize = 2000;

/// Interior points `(i, j, k) / r` with `i, j, k ≥ 1` and `i + j + k = r`.
pub fn simplex_grid(resolution: usize) -> Result<Vec<[f64; 3]>, String> {
    if !(3..=MAX_RESOLUTION).contains(&resolution) {
        return Err(format!("resolution must lie in [3, {MAX_RESOLUTION}]"));
    }
    let r = resolution as f64;
    let mut pts = Vec::new();
    for i in 1..resolution {
        for j in 1..resolution - i {
            let k = resolution - i - j;
            pts.push([i as f64 / r, j as f64 / r, k as f64 / r]);
        }
    }
    Ok(pts)
}

#[derive(Debug, Clone, Serialize)]
pub struct Field {
    pub points: Vec<[f64; 3]>,
    /// One value per point.
    pub values: Vec<f64>,
    /// Second channel when the view has one.
    pub derivatives: Option<Vec<f64>>,
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Log-kernel shifted so its largest grid value is 0. The mode is am1 when
/// `a = b = 0` and general otherwise.
pub fn density_grid(a: f64, b: f64, k: &[f64], eta: &[f64], resolution: usize) -> Result<Field, String> {
    if k.len() != 9 || eta.len() != 3 {
        return Err("need a 3×3 K (row-major) and 3 values of η".into());
    }
    let mode = if a == 0.0 && b == 0.0 { Mode::Am1 } else { Mode::General };
    let spec = ModelSpec::new(a, b, mode).map_err(err)?;
    let params = ParameterSet::new(DMatrix::from_row_slice(3, 3, k), DVector::from_column_slice(eta)).map_err(err)?;
    params.check_mode(mode).map_err(err)?;
    let points = simplex_grid(resolution)?;
    let mut values = points
        .iter()
        .map(|x| log_kernel(&spec, &params, x).map_err(err))
        .collect::<Result<Vec<_>, _>>()?;
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err("log-density is not finite on the grid".into());
    }
    values.iter_mut().for_each(|v| *v -= top);
    Ok(Field { points, values, derivatives: None })
}

/// `h_j(φ_j(x))` with `h(t) = t^c` and the derivative along `x_j` with
/// `x_dropped` absorbing the change.
pub fn weight_field(h_exponent: f64, c: f64, j: usize, dropped: usize, resolution: usize) -> Result<Field, String> {
    if j >= 3 || dropped >= 3 || j == dropped {
        return Err("j and the dropped coordinate must be distinct indices in 0..3".into());
    }
    if !(h_exponent >= 0.0 && h_exponent.is_finite()) {
        return Err("h exponent must be a finite nonnegative number".into());
    }
    if !(c > 0.0 && c <= 1.0) {
        return Err("truncation constant must lie in (0, 1]".into());
    }
    let points = simplex_grid(resolution)?;
    let (values, derivatives) = points
        .iter()
        .map(|x| hphi_and_deriv(x, j, h_exponent, c, dropped))
        .unzip();
    Ok(Field { points, values, derivatives: Some(derivatives) })
}

#[derive(Debug, Clone, Serialize)]
pub struct Recovery {
    pub m: usize,
    pub mcmc_acceptance: f64,
    pub delta: f64,
    /// `(fpr, tpr)` per path fit, closing corners first.
    pub roc: Vec<(f64, f64)>,
    pub auc: f64,
    pub lambdas: Vec<f64>,
    pub cv_curve: Vec<f64>,
    pub lambda_star: f64,
    /// Row-major `m × m`.
    pub k_true: Vec<f64>,
    pub k_hat: Vec<f64>,
}

fn row_major(k: &DMatrix<f64>) -> Vec<f64> {
    k.transpose().as_slice().to_vec()
}

/// Banded graph-Laplacian truth in the am1 model, sampled by MCMC and
/// fitted over a 20-point path with 3-fold cross validation.
pub fn recovery(m: usize, n: usize, bandwidth: usize, h_exponent: f64, seed: u64) -> Result<Recovery, String> {
    if !(4..=MAX_M).contains(&m) {
        return Err(format!("m must lie in [4, {MAX_M}]"));
    }
    if !(30..=MAX_N).contains(&n) {
        return Err(format!("n must lie in [30, {MAX_N}]"));
    }
    if bandwidth == 0 || bandwidth >= m / 2 {
        return Err("bandwidth must lie in [1, m/2)".into());
    }
    let spec = ModelSpec::am1();
    let truth = banded_k(m, bandwidth).map_err(err)?;
    let mcmc = McmcOptions { burn_in: 1000, thin: 5, step_size: 0.5, seed };
    let run = run_mcmc(&spec, &truth, n, &mcmc).map_err(err)?;
    let cfg = LossConfig {
        spec,
        weights: WeightSpec::power(m, h_exponent).with_truncation(Truncation::Quantile(1.0)),
        removed: sample_removed(m, m.min(5), seed).map_err(err)?,
        delta: DeltaPolicy::Bound(4.0),
    };
    cfg.weights.check(m).map_err(err)?;
    let delta = cfg.build(&run.data).map_err(err)?.delta();
    let solver = SolverOptions { eta_known_zero: true, ..SolverOptions::default() };
    let grid = PathGrid { n_lambda: 20, ratio: 0.01 };
    let fit = cv_fit(&run.data, &cfg, &solver, &grid, 3, seed).map_err(err)?;
    let curve = roc_from_fits(&fit.path.fits, &truth).map_err(err)?;
    Ok(Recovery {
        m,
        mcmc_acceptance: run.acceptance,
        delta,
        roc: curve.points,
        auc: curve.auc,
        lambdas: fit.cv.lambdas.clone(),
        cv_curve: fit.cv.cv_curve.clone(),
        lambda_star: fit.cv.lambda_star,
        k_true: row_major(&truth.k),
        k_hat: row_major(&fit.selected().params.k),
    })
}
