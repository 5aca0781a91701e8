//! Permutation tests for differences between the interaction graphs of two
//! groups, and Benjamini–Yekutieli adjustment of the per-edge p-values.
//!
//! Both groups are fitted with a penalty chosen by cross validation. Each
//! replicate pools the samples, reshuffles them into groups of the original
//! sizes and refits both, again choosing penalties by cross validation. One
//! set of replicate fits serves the global and the per-edge statistic.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assembly::{hex, DeltaPolicy, LossConfig};
use crate::error::{Error, Result};
use crate::evaluation::{cv_fit, ZERO_TOL};
use crate::model::{Dataset, ParameterSet};
use crate::parallel::map_ordered;
use crate::sampling::stream_rng;
use crate::solver::{PathGrid, SolverOptions};

/// Everything a fit inside the test needs. The same configuration serves the
/// observed and all permuted fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermTestConfig {
    pub loss: LossConfig,
    pub solver: SolverOptions,
    pub grid: PathGrid,
    pub folds: usize,
    /// Number of permutation replicates `B`.
    pub replicates: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermTestResult {
    pub global_p: f64,
    /// Raw per-pair p-values; `None` on the diagonal.
    pub local_p: Vec<Vec<Option<f64>>>,
    pub local_p_adjusted: Vec<Vec<Option<f64>>>,
    pub b: usize,
    /// Number of off-diagonal entries in exactly one of the two supports.
    pub observed_stat: usize,
    pub replicate_stats: Vec<usize>,
    /// Cross-validated estimates of the two groups.
    pub estimates: [ParameterSet; 2],
    pub lambda_star: [f64; 2],
    /// Hash of the frozen pipeline configuration of both groups.
    pub fingerprint: String,
}

/// Per-group loss configurations with the multiplier fixed at the value the
/// observed group size gives. Permuted groups have the same sizes, so the
/// freeze only matters for the training parts inside cross validation.
fn frozen_configs(cfg: &LossConfig, n1: usize, n2: usize, m: usize) -> Result<[LossConfig; 2]> {
    let freeze = |n: usize| -> Result<LossConfig> {
        let mut c = cfg.clone();
        c.delta = DeltaPolicy::Fixed(cfg.delta.resolve(n, m)?);
        Ok(c)
    };
    Ok([freeze(n1)?, freeze(n2)?])
}

fn config_fingerprint(cfgs: &[LossConfig; 2], test: &PermTestConfig) -> String {
    let mut h = Sha256::new();
    h.update(b"cv-per-group-and-replicate;");
    for c in cfgs {
        h.update(format!("{c:?};").as_bytes());
    }
    h.update(format!("{:?};{:?};{};", test.solver, test.grid, test.folds).as_bytes());
    hex(&h.finalize())
}

fn fit_pair(d1: &Dataset, d2: &Dataset, cfgs: &[LossConfig; 2], test: &PermTestConfig) -> Result<[(ParameterSet, f64); 2]> {
    let one = |d: &Dataset, cfg: &LossConfig| -> Result<(ParameterSet, f64)> {
        let fit = cv_fit(d, cfg, &test.solver, &test.grid, test.folds, test.seed)?;
        Ok((fit.selected().params.clone(), fit.cv.lambda_star))
    };
    Ok([one(d1, &cfgs[0])?, one(d2, &cfgs[1])?])
}

/// `|S(K₁) △ S(K₂)|` over off-diagonal ordered pairs.
pub fn support_difference(k1: &DMatrix<f64>, k2: &DMatrix<f64>) -> usize {
    let m = k1.nrows();
    let mut count = 0;
    for r in 0..m {
        for c in 0..m {
            if r != c && ((k1[(r, c)].abs() > ZERO_TOL) != (k2[(r, c)].abs() > ZERO_TOL)) {
                count += 1;
            }
        }
    }
    count
}

/// Global and per-pair permutation tests from one set of replicate fits.
pub fn permutation_test(d1: &Dataset, d2: &Dataset, test: &PermTestConfig) -> Result<PermTestResult> {
    let m = d1.m();
    if d2.m() != m {
        return Err(Error::DimensionMismatch { expected: m, got: d2.m() });
    }
    if test.replicates == 0 {
        return Err(Error::InvalidOptions("need at least one replicate".into()));
    }
    let (n1, n2) = (d1.n(), d2.n());
    let cfgs = frozen_configs(&test.loss, n1, n2, m)?;
    let fingerprint = config_fingerprint(&cfgs, test);

    let [(e1, l1), (e2, l2)] = fit_pair(d1, d2, &cfgs, test)?;
    let observed_stat = support_difference(&e1.k, &e2.k);
    let observed_diff = (&e1.k - &e2.k).abs();

    let pooled = d1.concat(d2)?;
    let ids: Vec<u64> = (0..test.replicates as u64).collect();
    let reps = map_ordered(&ids, |&b| -> Result<(usize, DMatrix<f64>)> {
        let mut order: Vec<usize> = (0..n1 + n2).collect();
        order.shuffle(&mut stream_rng(test.seed, b));
        let g1 = pooled.select(&order[..n1]);
        let g2 = pooled.select(&order[n1..]);
        let [(p1, _), (p2, _)] = fit_pair(&g1, &g2, &cfgs, test)?;
        Ok((support_difference(&p1.k, &p2.k), (&p1.k - &p2.k).abs()))
    });
    let reps: Vec<(usize, DMatrix<f64>)> = reps.into_iter().collect::<Result<_>>()?;

    let b = test.replicates as f64;
    let global_p = reps.iter().filter(|(s, _)| observed_stat <= *s).count() as f64 / b;

    let symmetric = test.loss.spec.mode.symmetric_k();
    let mut local = vec![vec![None; m]; m];
    let mut pairs = Vec::new();
    for r in 0..m {
        for c in 0..m {
            if r == c || (symmetric && c < r) {
                continue;
            }
            let obs = observed_diff[(r, c)];
            let p = reps.iter().filter(|(_, d)| obs <= d[(r, c)]).count() as f64 / b;
            local[r][c] = Some(p);
            if symmetric {
                local[c][r] = Some(p);
            }
            pairs.push((r, c));
        }
    }
    let raw: Vec<f64> = pairs.iter().map(|&(r, c)| local[r][c].unwrap()).collect();
    let adjusted = by_adjust(&raw)?;
    let mut local_adj = vec![vec![None; m]; m];
    for (&(r, c), &p) in pairs.iter().zip(&adjusted) {
        local_adj[r][c] = Some(p);
        if symmetric {
            local_adj[c][r] = Some(p);
        }
    }

    Ok(PermTestResult {
        global_p,
        local_p: local,
        local_p_adjusted: local_adj,
        b: test.replicates,
        observed_stat,
        replicate_stats: reps.iter().map(|(s, _)| *s).collect(),
        estimates: [e1, e2],
        lambda_star: [l1, l2],
        fingerprint,
    })
}

pub fn global_perm_test(d1: &Dataset, d2: &Dataset, test: &PermTestConfig) -> Result<f64> {
    Ok(permutation_test(d1, d2, test)?.global_p)
}

pub fn local_perm_test(d1: &Dataset, d2: &Dataset, test: &PermTestConfig) -> Result<Vec<Vec<Option<f64>>>> {
    Ok(permutation_test(d1, d2, test)?.local_p)
}

/// Benjamini–Yekutieli step-up adjustment, returned in input order.
pub fn by_adjust(p: &[f64]) -> Result<Vec<f64>> {
    if let Some(&bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::POutOfRange(bad));
    }
    let k = p.len();
    let c: f64 = (1..=k).map(|l| 1.0 / l as f64).sum();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| p[i].total_cmp(&p[j]));
    let mut out = vec![0.0; k];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min(k as f64 * c * p[i] / (rank + 1) as f64);
        out[i] = running;
    }
    Ok(out)
}

/// Pairs `(r, c)` with `r < c` whose adjusted p-value is at most `level`,
/// and the resulting node degrees.
pub fn differential_edges(result: &PermTestResult, level: f64) -> (Vec<(usize, usize, f64)>, Vec<usize>) {
    let m = result.local_p_adjusted.len();
    let mut edges = Vec::new();
    let mut degree = vec![0; m];
    for r in 0..m {
        for c in r + 1..m {
            let p = match (result.local_p_adjusted[r][c], result.local_p_adjusted[c][r]) {
                (Some(x), Some(y)) => x.min(y),
                (Some(x), None) | (None, Some(x)) => x,
                (None, None) => continue,
            };
            if p <= level {
                edges.push((r, c, p));
                degree[r] += 1;
                degree[c] += 1;
            }
        }
    }
    (edges, degree)
}
