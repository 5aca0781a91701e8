//! Support-recovery metrics, estimation-error norms and cross validation
//! over a regularization path.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assembly::LossConfig;
use crate::error::{Error, Result};
use crate::model::{Dataset, ParameterSet};
use crate::parallel::map_ordered;
use crate::solver::{fit_path_at, loss_lambda_max, FitPath, FitResult, PathGrid, SolverOptions};

/// Support threshold: coordinate descent yields exact zeros, this only guards
/// against drift.
pub const ZERO_TOL: f64 = 1e-10;

fn off_support(k: &DMatrix<f64>, zero_tol: f64) -> Vec<bool> {
    let m = k.nrows();
    let mut s = Vec::with_capacity(m * (m - 1));
    for r in 0..m {
        for c in 0..m {
            if r != c {
                s.push(k[(r, c)].abs() > zero_tol);
            }
        }
    }
    s
}

/// True and false positive rates of the off-diagonal support of `estimated`
/// against `truth`, over ordered pairs.
pub fn tpr_fpr(estimated: &ParameterSet, truth: &ParameterSet, zero_tol: f64) -> Result<(f64, f64)> {
    if estimated.m() != truth.m() {
        return Err(Error::DimensionMismatch {
            expected: truth.m(),
            got: estimated.m(),
        });
    }
    let est = off_support(&estimated.k, zero_tol);
    let tru = off_support(&truth.k, zero_tol);
    let edges = tru.iter().filter(|&&t| t).count();
    let non_edges = tru.len() - edges;
    if edges == 0 || non_edges == 0 {
        return Err(Error::DegenerateTruth);
    }
    let tp = est.iter().zip(&tru).filter(|&(&e, &t)| e && t).count();
    let fp = est.iter().zip(&tru).filter(|&(&e, &t)| e && !t).count();
    Ok((tp as f64 / edges as f64, fp as f64 / non_edges as f64))
}

/// ROC points of a path, closed at `(0, 0)` and `(1, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)`: the closing corners, then one point per fit in path order.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Area under the polygon through `points` sorted by `(fpr, tpr)`.
///
/// Vertical runs at equal fpr contribute nothing, so the polygon visits
/// points sharing an fpr from lowest to highest tpr. Reflecting every point
/// through `(½, ½)` reverses this order, which makes the area of the
/// reflected curve exactly one minus the original.
pub fn trapezoid_auc(points: &[(f64, f64)]) -> f64 {
    let mut pts = points.to_vec();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));
    pts.windows(2)
        .map(|w| (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1))
        .sum()
}

pub fn roc_auc(path: &FitPath, truth: &ParameterSet) -> Result<RocCurve> {
    roc_from_fits(&path.fits, truth)
}

pub fn roc_from_fits(fits: &[FitResult], truth: &ParameterSet) -> Result<RocCurve> {
    let mut points = vec![(0.0, 0.0), (1.0, 1.0)];
    for f in fits {
        let (tpr, fpr) = tpr_fpr(&f.params, truth, ZERO_TOL)?;
        points.push((fpr, tpr));
    }
    let auc = trapezoid_auc(&points[2..]);
    Ok(RocCurve { points, auc })
}

/// Norms of `K̂ − K₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormErrors {
    pub max: f64,
    pub frobenius: f64,
    pub spectral: f64,
}

impl NormErrors {
    pub fn of(d: &DMatrix<f64>) -> Self {
        let spectral = if d.is_empty() {
            0.0
        } else {
            d.clone().singular_values().max()
        };
        Self {
            max: d.amax(),
            frobenius: d.norm(),
            spectral,
        }
    }
}

/// Errors of `estimated.k` against `truth.k`, optionally divided by the same
/// norm of `truth.k`.
pub fn norm_errors(estimated: &ParameterSet, truth: &ParameterSet, normalize: bool) -> Result<NormErrors> {
    if estimated.m() != truth.m() {
        return Err(Error::DimensionMismatch {
            expected: truth.m(),
            got: estimated.m(),
        });
    }
    let raw = NormErrors::of(&(&estimated.k - &truth.k));
    if !normalize {
        return Ok(raw);
    }
    let base = NormErrors::of(&truth.k);
    if base.max == 0.0 {
        return Err(Error::Domain("cannot normalize by a zero truth".into()));
    }
    Ok(NormErrors {
        max: raw.max / base.max,
        frobenius: raw.frobenius / base.frobenius,
        spectral: raw.spectral / base.spectral,
    })
}

/// Cross-validation summary over a shared penalty grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// Decreasing penalties, taken from the full-data loss.
    pub lambdas: Vec<f64>,
    /// Mean held-out loss per penalty.
    pub cv_curve: Vec<f64>,
    /// Held-out loss per fold and penalty.
    pub fold_scores: Vec<Vec<f64>>,
    pub best_index: usize,
    pub lambda_star: f64,
}

/// Rows ranked by a seeded content hash, so the ranking does not depend on
/// the order rows arrive in.
fn content_rank(data: &Dataset, seed: u64) -> Vec<usize> {
    let keys: Vec<([u8; 32], Vec<u64>)> = data
        .rows()
        .map(|row| {
            let mut h = Sha256::new();
            h.update(seed.to_le_bytes());
            let bits: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
            for b in &bits {
                h.update(b.to_le_bytes());
            }
            (h.finalize().into(), bits)
        })
        .collect();
    let mut order: Vec<usize> = (0..data.n()).collect();
    order.sort_by(|&i, &j| keys[i].cmp(&keys[j]));
    order
}

/// Balanced fold assignment: the rows of fold `f`, in rank order.
pub fn fold_partition(data: &Dataset, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::InvalidOptions("need at least 2 folds".into()));
    }
    if data.n() < folds {
        return Err(Error::TooFewSamples { n: data.n(), folds });
    }
    let mut out = vec![Vec::new(); folds];
    for (rank, i) in content_rank(data, seed).into_iter().enumerate() {
        out[rank % folds].push(i);
    }
    Ok(out)
}

/// Penalty grid from the full-data loss.
pub fn full_data_grid(
    data: &Dataset,
    cfg: &LossConfig,
    opts: &SolverOptions,
    grid: &PathGrid,
) -> Result<Vec<f64>> {
    let loss = cfg.build(data)?;
    grid.lambdas(loss_lambda_max(&loss, opts)?)
}

/// K-fold cross validation over the grid built from the full-data loss.
pub fn cross_validate(
    data: &Dataset,
    cfg: &LossConfig,
    opts: &SolverOptions,
    grid: &PathGrid,
    folds: usize,
    seed: u64,
) -> Result<CvResult> {
    // canonical row order makes every floating-point sum order-independent
    let ranked = data.select(&content_rank(data, seed));
    let lambdas = full_data_grid(&ranked, cfg, opts, grid)?;
    cv_ranked(&ranked, cfg, opts, lambdas, folds, seed)
}

/// K-fold cross validation over explicit, strictly decreasing penalties.
/// Each fold fits the path on its training part and scores every fit by the
/// undamped quadratic loss of the held-out part. The smallest mean score
/// wins, ties going to the larger penalty.
pub fn cross_validate_at(
    data: &Dataset,
    cfg: &LossConfig,
    opts: &SolverOptions,
    lambdas: &[f64],
    folds: usize,
    seed: u64,
) -> Result<CvResult> {
    let ranked = data.select(&content_rank(data, seed));
    cv_ranked(&ranked, cfg, opts, lambdas.to_vec(), folds, seed)
}

fn cv_ranked(
    data: &Dataset,
    cfg: &LossConfig,
    opts: &SolverOptions,
    lambdas: Vec<f64>,
    folds: usize,
    seed: u64,
) -> Result<CvResult> {
    let parts = fold_partition(data, folds, seed)?;
    if lambdas.is_empty() {
        return Err(Error::InvalidOptions("empty penalty list".into()));
    }
    let fold_ids: Vec<usize> = (0..folds).collect();
    let scores = map_ordered(&fold_ids, |&f| -> Result<Vec<f64>> {
        let train_idx: Vec<usize> = (0..folds)
            .filter(|&o| o != f)
            .flat_map(|o| parts[o].iter().copied())
            .collect();
        let train = cfg.build(&data.select(&train_idx))?;
        let test = cfg.build_undamped(&data.select(&parts[f]))?;
        let path = fit_path_at(&train, opts, &lambdas)?;
        path.fits
            .iter()
            .map(|fit| Ok(test.value(&test.theta_from_params(&fit.params)?)))
            .collect()
    });
    let fold_scores: Vec<Vec<f64>> = scores.into_iter().collect::<Result<_>>()?;
    let cv_curve: Vec<f64> = (0..lambdas.len())
        .map(|l| fold_scores.iter().map(|s| s[l]).sum::<f64>() / folds as f64)
        .collect();
    // lambdas decrease, so the first minimum is the largest penalty
    let mut best_index = 0;
    for (l, &v) in cv_curve.iter().enumerate() {
        if v < cv_curve[best_index] {
            best_index = l;
        }
    }
    Ok(CvResult {
        lambda_star: lambdas[best_index],
        lambdas,
        cv_curve,
        fold_scores,
        best_index,
    })
}

/// A cross-validated estimate: the full-data path over the CV grid and the
/// fit at the selected penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvFit {
    pub cv: CvResult,
    pub path: FitPath,
}

impl CvFit {
    pub fn selected(&self) -> &FitResult {
        &self.path.fits[self.cv.best_index]
    }
}

pub fn cv_fit(
    data: &Dataset,
    cfg: &LossConfig,
    opts: &SolverOptions,
    grid: &PathGrid,
    folds: usize,
    seed: u64,
) -> Result<CvFit> {
    let cv = cross_validate(data, cfg, opts, grid, folds, seed)?;
    let ranked = data.select(&content_rank(data, seed));
    let path = fit_path_at(&cfg.build(&ranked)?, opts, &cv.lambdas)?;
    Ok(CvFit { cv, path })
}

/// [`cv_fit`] over explicit penalties.
pub fn cv_fit_at(
    data: &Dataset,
    cfg: &LossConfig,
    opts: &SolverOptions,
    lambdas: &[f64],
    folds: usize,
    seed: u64,
) -> Result<CvFit> {
    let cv = cross_validate_at(data, cfg, opts, lambdas, folds, seed)?;
    let ranked = data.select(&content_rank(data, seed));
    let path = fit_path_at(&cfg.build(&ranked)?, opts, &cv.lambdas)?;
    Ok(CvFit { cv, path })
}
