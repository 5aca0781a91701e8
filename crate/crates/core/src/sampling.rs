//! Synthetic compositional data: exact Dirichlet and logistic-normal
//! samplers, a random-walk Metropolis sampler for general a-b models, and
//! banded ground-truth interaction matrices.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    alr_inverse, check_normalizability, exponent_coefficient, log_kernel, Composition, Dataset,
    ModelSpec, ParameterSet,
};

/// Independent stream `stream` of the generator seeded by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `n` draws from `Dirichlet(alpha)`, normalized Gamma variates. Rows with an
/// entry that underflows to zero are redrawn.
pub fn sample_dirichlet(alpha: &[f64], n: usize, seed: u64) -> Result<Dataset> {
    if alpha.len() < 2 {
        return Err(Error::TooFewComponents(alpha.len()));
    }
    if n == 0 {
        return Err(Error::NonpositiveN);
    }
    let gammas = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).map_err(|_| Error::NonpositiveAlpha(a)))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    while rows.len() < n {
        let draw: Vec<f64> = gammas.iter().map(|g| g.sample(&mut rng)).collect();
        let total: f64 = draw.iter().sum();
        let row: Vec<f64> = draw.iter().map(|v| v / total).collect();
        if total > 0.0 && total.is_finite() && row.iter().all(|&v| v > 0.0) {
            rows.push(Composition::from_normalized(row));
        }
    }
    Dataset::from_compositions(rows)
}

fn check_logistic_normal(params: &ParameterSet) -> Result<()> {
    let m = params.m();
    let k = &params.k;
    let scale = 1.0 + k.amax();
    if (k - k.transpose()).amax() > 1e-10 * scale {
        return Err(Error::ConstraintViolated("K must be symmetric".into()));
    }
    for i in 0..m {
        let s: f64 = k.row(i).sum();
        if s.abs() > 1e-10 * scale {
            return Err(Error::ConstraintViolated(format!("row {i} of K sums to {s}")));
        }
    }
    let total: f64 = params.eta.sum();
    if (total + m as f64).abs() > 1e-10 * (1.0 + m as f64) {
        return Err(Error::ConstraintViolated(format!(
            "logistic normal needs 1'eta = -m, got {total}"
        )));
    }
    Ok(())
}

/// Exact sampler for the `a = b = 0` model with `K 1 = 0` and `1ᵀη = −m`.
///
/// The additive log-ratios `y_j = log(x_j / x_m)` are Gaussian with precision
/// `K_{−m,−m}` and mean `K_{−m,−m}⁻¹ (η_{−m} + 1)`; the `+1` is the Jacobian
/// of the log-ratio map.
pub fn sample_logistic_normal(params: &ParameterSet, n: usize, seed: u64) -> Result<Dataset> {
    check_logistic_normal(params)?;
    if n == 0 {
        return Err(Error::NonpositiveN);
    }
    let m = params.m();
    let p = m - 1;
    let prec = params.k.view((0, 0), (p, p)).into_owned();
    let chol = prec.cholesky().ok_or(Error::NotPositiveDefinite)?;
    let shift = DVector::from_iterator(p, params.eta.iter().take(p).map(|e| e + 1.0));
    let mean = chol.solve(&shift);
    let l_t = chol.l().transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let z = DVector::from_iterator(p, (0..p).map(|_| StandardNormal.sample(&mut rng)));
        // L⁻ᵀ z has covariance (L Lᵀ)⁻¹
        let noise = l_t
            .solve_upper_triangular(&z)
            .ok_or(Error::NotPositiveDefinite)?;
        let y = &mean + noise;
        rows.push(alr_inverse(y.as_slice(), m - 1)?);
    }
    Dataset::from_compositions(rows)
}

/// Random-walk Metropolis settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcOptions {
    /// Sweeps discarded before the first kept state; step sizes adapt only
    /// during these.
    pub burn_in: usize,
    /// Sweeps between kept states.
    pub thin: usize,
    /// Initial proposal standard deviation in log-ratio coordinates.
    pub step_size: f64,
    pub seed: u64,
}

impl Default for McmcOptions {
    fn default() -> Self {
        Self {
            burn_in: 2000,
            thin: 10,
            step_size: 0.5,
            seed: 0,
        }
    }
}

/// Draws and sampler diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct McmcRun {
    pub data: Dataset,
    /// Acceptance rate after burn-in, over all single-site proposals.
    pub acceptance: f64,
    pub step_sizes: Vec<f64>,
}

const TARGET_ACCEPTANCE: f64 = 0.3;
const ADAPT_BATCH: usize = 25;

fn log_sum_exp(y: &[f64]) -> f64 {
    let mx = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    mx + y.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
}

/// Log target in log-ratio coordinates `y` (length `m`, `y_{m−1} = 0`):
/// the kernel at `x = exp(y − L)` plus the log-Jacobian `Σ log x_j`.
trait Target {
    fn value(&self) -> f64;
    /// Value after `y_j += step`, without committing.
    fn propose(&self, j: usize, step: f64) -> f64;
    fn commit(&mut self, j: usize, step: f64, value: f64);
    fn point(&self) -> Vec<f64>;
}

/// Generic target: recomputes the kernel from scratch.
struct DirectTarget<'a> {
    spec: &'a ModelSpec,
    params: &'a ParameterSet,
    y: Vec<f64>,
    current: f64,
}

impl<'a> DirectTarget<'a> {
    fn new(spec: &'a ModelSpec, params: &'a ParameterSet, y: Vec<f64>) -> Self {
        let mut t = Self {
            spec,
            params,
            y,
            current: 0.0,
        };
        t.current = t.eval(&t.y);
        t
    }

    fn eval(&self, y: &[f64]) -> f64 {
        let l = log_sum_exp(y);
        let x: Vec<f64> = y.iter().map(|v| (v - l).exp()).collect();
        if x.iter().any(|&v| !(v > 0.0)) {
            return f64::NEG_INFINITY;
        }
        let jac: f64 = y.iter().map(|v| v - l).sum();
        match log_kernel(self.spec, self.params, &x) {
            Ok(k) if k.is_finite() => k + jac,
            _ => f64::NEG_INFINITY,
        }
    }
}

impl Target for DirectTarget<'_> {
    fn value(&self) -> f64 {
        self.current
    }

    fn propose(&self, j: usize, step: f64) -> f64 {
        let mut y = self.y.clone();
        y[j] += step;
        self.eval(&y)
    }

    fn commit(&mut self, j: usize, step: f64, value: f64) {
        self.y[j] += step;
        self.current = value;
    }

    fn point(&self) -> Vec<f64> {
        self.y.clone()
    }
}

/// `a = 0` target with `z = y − L 1`, so
/// `zᵀKz = yᵀKy − L (1ᵀKy + yᵀK1) + L² 1ᵀK1` and every proposal is `O(m)`.
struct LogTarget<'a> {
    spec: &'a ModelSpec,
    params: &'a ParameterSet,
    y: Vec<f64>,
    /// `K y` and `Kᵀ y`.
    ky: Vec<f64>,
    kty: Vec<f64>,
    yky: f64,
    sum_ky: f64,
    sum_kty: f64,
    col_sums: Vec<f64>,
    row_sums: Vec<f64>,
    total: f64,
    eta_y: f64,
    eta_sum: f64,
    current: f64,
}

impl<'a> LogTarget<'a> {
    fn new(spec: &'a ModelSpec, params: &'a ParameterSet, y: Vec<f64>) -> Self {
        let m = y.len();
        let k = &params.k;
        let yv = DVector::from_column_slice(&y);
        let ky: Vec<f64> = (k * &yv).iter().copied().collect();
        let kty: Vec<f64> = k.tr_mul(&yv).iter().copied().collect();
        let yky = y.iter().zip(&ky).map(|(a, b)| a * b).sum();
        let col_sums: Vec<f64> = (0..m).map(|j| k.column(j).sum()).collect();
        let row_sums: Vec<f64> = (0..m).map(|i| k.row(i).sum()).collect();
        let has_eta = spec.mode.has_eta();
        let eta_y = if has_eta {
            params.eta.iter().zip(&y).map(|(e, v)| e * v).sum()
        } else {
            0.0
        };
        let mut t = Self {
            spec,
            params,
            sum_ky: ky.iter().sum(),
            sum_kty: kty.iter().sum(),
            ky,
            kty,
            yky,
            total: row_sums.iter().sum(),
            col_sums,
            row_sums,
            eta_y,
            eta_sum: if has_eta { params.eta.sum() } else { 0.0 },
            y,
            current: 0.0,
        };
        t.current = t.eval(&t.y, t.yky, t.sum_ky, t.sum_kty, t.eta_y);
        t
    }

    fn eval(&self, y: &[f64], yky: f64, sum_ky: f64, sum_kty: f64, eta_y: f64) -> f64 {
        let m = y.len() as f64;
        let l = log_sum_exp(y);
        let quad = yky - l * (sum_ky + sum_kty) + l * l * self.total;
        let lin = if !self.spec.mode.has_eta() {
            0.0
        } else if self.spec.b == 0.0 {
            eta_y - l * self.eta_sum
        } else {
            let b = self.spec.b;
            self.params
                .eta
                .iter()
                .zip(y)
                .map(|(e, v)| e * ((v - l) * b).exp())
                .sum::<f64>()
                / exponent_coefficient(b)
        };
        let jac = y.iter().sum::<f64>() - m * l;
        let v = -0.5 * quad + lin + jac;
        if v.is_finite() {
            v
        } else {
            f64::NEG_INFINITY
        }
    }
}

impl Target for LogTarget<'_> {
    fn value(&self) -> f64 {
        self.current
    }

    fn propose(&self, j: usize, step: f64) -> f64 {
        let k = &self.params.k;
        let yky = self.yky + step * (self.ky[j] + self.kty[j]) + step * step * k[(j, j)];
        let sum_ky = self.sum_ky + step * self.col_sums[j];
        let sum_kty = self.sum_kty + step * self.row_sums[j];
        let eta_y = if self.spec.mode.has_eta() {
            self.eta_y + step * self.params.eta[j]
        } else {
            0.0
        };
        let mut y = self.y.clone();
        y[j] += step;
        self.eval(&y, yky, sum_ky, sum_kty, eta_y)
    }

    fn commit(&mut self, j: usize, step: f64, value: f64) {
        let k = &self.params.k;
        self.yky += step * (self.ky[j] + self.kty[j]) + step * step * k[(j, j)];
        self.sum_ky += step * self.col_sums[j];
        self.sum_kty += step * self.row_sums[j];
        if self.spec.mode.has_eta() {
            self.eta_y += step * self.params.eta[j];
        }
        for i in 0..self.y.len() {
            self.ky[i] += step * k[(i, j)];
            self.kty[i] += step * k[(j, i)];
        }
        self.y[j] += step;
        self.current = value;
    }

    fn point(&self) -> Vec<f64> {
        self.y.clone()
    }
}

fn run_chain<T: Target>(
    target: &mut T,
    m: usize,
    n: usize,
    opts: &McmcOptions,
) -> Result<McmcRun> {
    let reference = m - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut steps = vec![opts.step_size; reference];
    let mut batch_accept = vec![0usize; reference];
    let mut accepted = 0usize;
    let mut proposed = 0usize;
    let mut rows = Vec::with_capacity(n);
    let total_sweeps = opts.burn_in + n * opts.thin;
    for sweep in 0..total_sweeps {
        let adapting = sweep < opts.burn_in;
        for j in 0..reference {
            let z: f64 = StandardNormal.sample(&mut rng);
            let step = steps[j] * z;
            let cand = target.propose(j, step);
            let log_u = rng.random::<f64>().ln();
            let ok = cand > f64::NEG_INFINITY && log_u < cand - target.value();
            if ok {
                target.commit(j, step, cand);
            }
            if adapting {
                batch_accept[j] += ok as usize;
            } else {
                proposed += 1;
                accepted += ok as usize;
            }
        }
        if adapting && (sweep + 1) % ADAPT_BATCH == 0 {
            for j in 0..reference {
                let rate = batch_accept[j] as f64 / ADAPT_BATCH as f64;
                steps[j] *= (2.0 * (rate - TARGET_ACCEPTANCE)).exp();
                batch_accept[j] = 0;
            }
        }
        if !adapting && (sweep + 1 - opts.burn_in).is_multiple_of(opts.thin) {
            let y = target.point();
            rows.push(alr_inverse(&y[..reference], reference)?);
        }
    }
    let acceptance = if proposed == 0 {
        0.0
    } else {
        accepted as f64 / proposed as f64
    };
    if acceptance < 0.01 {
        return Err(Error::ZeroAcceptance(acceptance));
    }
    Ok(McmcRun {
        data: Dataset::from_compositions(rows)?,
        acceptance,
        step_sizes: steps,
    })
}

/// Single-site random-walk Metropolis in additive log-ratio coordinates with
/// the last component as reference.
pub fn run_mcmc(
    spec: &ModelSpec,
    params: &ParameterSet,
    n: usize,
    opts: &McmcOptions,
) -> Result<McmcRun> {
    let report = check_normalizability(spec, params);
    if !report.is_proven() {
        return Err(Error::NotNormalizable(report.details));
    }
    if n == 0 {
        return Err(Error::NonpositiveN);
    }
    if opts.thin == 0 || !(opts.step_size > 0.0) || !opts.step_size.is_finite() {
        return Err(Error::InvalidOptions(
            "thin must be >= 1 and step_size > 0".into(),
        ));
    }
    let m = params.m();
    let y0 = vec![0.0; m];
    if spec.a == 0.0 {
        let mut t = LogTarget::new(spec, params, y0);
        run_chain(&mut t, m, n, opts)
    } else {
        let mut t = DirectTarget::new(spec, params, y0);
        run_chain(&mut t, m, n, opts)
    }
}

/// [`run_mcmc`] returning only the draws.
pub fn sample_ab_mcmc(
    spec: &ModelSpec,
    params: &ParameterSet,
    n: usize,
    opts: &McmcOptions,
) -> Result<Dataset> {
    run_mcmc(spec, params, n, opts).map(|r| r.data)
}

/// Banded graph Laplacian: `κ_ij = −(1 − |i−j|/(s+1))` for `1 ≤ |i−j| ≤ s`,
/// diagonal set so that `K 1 = 0`; `η = 0`.
pub fn banded_k(m: usize, s: usize) -> Result<ParameterSet> {
    if s >= m {
        return Err(Error::BandwidthTooLarge { s, m });
    }
    let mut k = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let d = i.abs_diff(j);
            if d >= 1 && d <= s {
                let w = 1.0 - d as f64 / (s + 1) as f64;
                k[(i, j)] = -w;
                k[(i, i)] += w;
            }
        }
    }
    ParameterSet::new(k, DVector::zeros(m))
}
