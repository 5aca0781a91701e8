//! Coordinate descent for `½ θᵀΓθ − gᵀθ + Σ_v w_v |θ_v|` and warm-started
//! regularization paths.
//!
//! A variable is one coordinate, or two tied coordinates `κ_jk = κ_kj` in the
//! symmetric modes. A tied pair carries both of its penalty entries, so its
//! weight is `2λ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assembly::{ParamId, QuadraticScoreLoss};
use crate::error::{Error, Result};
use crate::model::ParameterSet;

/// `sign(z) · max(|z| − t, 0)`.
#[inline]
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// A convex quadratic `½ θᵀQθ − gᵀθ` with column access.
pub trait Quadratic {
    fn dim(&self) -> usize;
    fn entry(&self, t: usize, s: usize) -> f64;
    fn linear(&self) -> &[f64];
    /// `out += alpha · Q[:, t]`.
    fn axpy_column(&self, t: usize, alpha: f64, out: &mut [f64]);
    fn matvec(&self, x: &[f64]) -> Vec<f64>;

    fn diag(&self, t: usize) -> f64 {
        self.entry(t, t)
    }

    fn objective(&self, theta: &[f64]) -> f64 {
        let r = self.matvec(theta);
        smooth_value(&r, self.linear(), theta)
    }
}

fn smooth_value(r: &[f64], g: &[f64], theta: &[f64]) -> f64 {
    let mut v = 0.0;
    for ((ri, gi), ti) in r.iter().zip(g).zip(theta) {
        v += (0.5 * ri - gi) * ti;
    }
    v
}

impl Quadratic for QuadraticScoreLoss {
    fn dim(&self) -> usize {
        QuadraticScoreLoss::dim(self)
    }

    fn entry(&self, t: usize, s: usize) -> f64 {
        self.gamma().entry(t, s)
    }

    fn diag(&self, t: usize) -> f64 {
        self.gamma().diag_entry(t)
    }

    fn linear(&self) -> &[f64] {
        self.g()
    }

    fn axpy_column(&self, t: usize, alpha: f64, out: &mut [f64]) {
        self.gamma().axpy_column(t, alpha, out);
    }

    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        self.gamma().matvec(x)
    }
}

/// Dense quadratic, mainly for reference computations.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseQuadratic {
    pub q: DMatrix<f64>,
    pub g: Vec<f64>,
}

impl Quadratic for DenseQuadratic {
    fn dim(&self) -> usize {
        self.g.len()
    }

    fn entry(&self, t: usize, s: usize) -> f64 {
        self.q[(t, s)]
    }

    fn linear(&self) -> &[f64] {
        &self.g
    }

    fn axpy_column(&self, t: usize, alpha: f64, out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(self.q.column(t).iter()) {
            *o += alpha * v;
        }
    }

    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (&self.q * DVector::from_column_slice(x)).as_slice().to_vec()
    }
}

/// Which penalty applies to a variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    None,
    K,
    Eta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variable {
    pub first: usize,
    pub second: Option<usize>,
    pub kind: PenaltyKind,
}

impl Variable {
    pub fn single(t: usize, kind: PenaltyKind) -> Self {
        Self {
            first: t,
            second: None,
            kind,
        }
    }

    pub fn pair(t: usize, s: usize, kind: PenaltyKind) -> Self {
        Self {
            first: t,
            second: Some(s),
            kind,
        }
    }

    fn slots(&self) -> f64 {
        if self.second.is_some() {
            2.0
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_sweeps: usize,
    /// Stop when a full sweep moves no coordinate by more than
    /// `tol · max|θ|`.
    pub tol: f64,
    /// A converged fit must also have KKT residual at most this.
    pub kkt_tol: f64,
    pub penalize_eta: bool,
    /// Hold every `η_j` at 0, as when `η₀ = 0` is known.
    #[serde(default)]
    pub eta_known_zero: bool,
    /// Only honoured in general mode.
    pub penalize_k_diagonal: bool,
    pub lambda_k: f64,
    pub lambda_eta: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 1000,
            tol: 1e-8,
            kkt_tol: 1e-7,
            penalize_eta: true,
            eta_known_zero: false,
            penalize_k_diagonal: false,
            lambda_k: 0.0,
            lambda_eta: 0.0,
        }
    }
}

impl SolverOptions {
    /// Sets `λ_K = λ_η = lambda`.
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda_k = lambda;
        self.lambda_eta = lambda;
        self
    }

    pub fn check(&self) -> Result<()> {
        if self.max_sweeps == 0 {
            return Err(Error::InvalidOptions("max_sweeps must be >= 1".into()));
        }
        if !(self.tol > 0.0) || !(self.kkt_tol > 0.0) {
            return Err(Error::InvalidOptions("tolerances must be > 0".into()));
        }
        if !(self.lambda_k >= 0.0) || !(self.lambda_eta >= 0.0) {
            return Err(Error::InvalidOptions("penalties must be >= 0".into()));
        }
        Ok(())
    }

    fn weight(&self, v: &Variable) -> f64 {
        let per_slot = match v.kind {
            PenaltyKind::None => 0.0,
            PenaltyKind::K => self.lambda_k,
            PenaltyKind::Eta => self.lambda_eta,
        };
        per_slot * v.slots()
    }
}

/// The optimization variables of a score-matching loss under `opts`.
pub fn variables_for(loss: &QuadraticScoreLoss, opts: &SolverOptions) -> Vec<Variable> {
    let symmetric = loss.spec().mode.symmetric_k();
    let mut out = Vec::with_capacity(loss.dim());
    for t in 0..loss.dim() {
        match loss.param_id(t) {
            ParamId::Eta(_) if opts.eta_known_zero => {}
            ParamId::Eta(_) => {
                let kind = if opts.penalize_eta {
                    PenaltyKind::Eta
                } else {
                    PenaltyKind::None
                };
                out.push(Variable::single(t, kind));
            }
            ParamId::K(r, c) if r == c => {
                let kind = if opts.penalize_k_diagonal && !symmetric {
                    PenaltyKind::K
                } else {
                    PenaltyKind::None
                };
                out.push(Variable::single(t, kind));
            }
            ParamId::K(r, c) => {
                if !symmetric {
                    out.push(Variable::single(t, PenaltyKind::K));
                } else if r < c {
                    let s = loss
                        .index_of(ParamId::K(c, r))
                        .expect("transposed entry exists");
                    out.push(Variable::pair(t, s, PenaltyKind::K));
                }
            }
        }
    }
    out
}

/// Outcome of a single minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub theta: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    pub kkt_violation: f64,
    /// Penalized objective after each sweep.
    pub history: Vec<f64>,
}

fn var_value(theta: &[f64], v: &Variable) -> f64 {
    theta[v.first]
}

fn var_grad(r: &[f64], g: &[f64], v: &Variable) -> f64 {
    let mut grad = r[v.first] - g[v.first];
    if let Some(s) = v.second {
        grad += r[s] - g[s];
    }
    grad
}

fn var_curvature<Q: Quadratic + ?Sized>(q: &Q, v: &Variable) -> f64 {
    match v.second {
        None => q.diag(v.first),
        Some(s) => q.diag(v.first) + q.diag(s) + 2.0 * q.entry(v.first, s),
    }
}

fn penalty(theta: &[f64], vars: &[Variable], weights: &[f64]) -> f64 {
    vars.iter()
        .zip(weights)
        .map(|(v, w)| w * var_value(theta, v).abs())
        .sum()
}

/// Maximum KKT residual, with pairs reported per entry (halved).
pub fn kkt_residual<Q: Quadratic + ?Sized>(
    q: &Q,
    vars: &[Variable],
    weights: &[f64],
    theta: &[f64],
) -> f64 {
    let r = q.matvec(theta);
    kkt_from_residual(&r, q.linear(), vars, weights, theta)
}

fn kkt_from_residual(
    r: &[f64],
    g: &[f64],
    vars: &[Variable],
    weights: &[f64],
    theta: &[f64],
) -> f64 {
    let mut worst: f64 = 0.0;
    for (v, &w) in vars.iter().zip(weights) {
        let ns = v.slots();
        let grad = var_grad(r, g, v) / ns;
        let lam = w / ns;
        let x = var_value(theta, v);
        let viol = if x != 0.0 {
            (grad + lam * x.signum()).abs()
        } else {
            (grad.abs() - lam).max(0.0)
        };
        worst = worst.max(viol);
    }
    worst
}

const THRESHOLD_SLACK: f64 = 1e-12;

/// Largest active set for which the exact restricted solve is attempted.
const NEWTON_MAX: usize = 2000;
/// Sweeps between restricted solves while the active set is settling.
const NEWTON_EVERY: usize = 10;

struct State<'a, Q: Quadratic + ?Sized> {
    q: &'a Q,
    vars: &'a [Variable],
    weights: &'a [f64],
    curv: Vec<f64>,
    theta: Vec<f64>,
    r: Vec<f64>,
}

impl<Q: Quadratic + ?Sized> State<'_, Q> {
    fn update(&mut self, i: usize) -> Result<f64> {
        let v = self.vars[i];
        let w = self.weights[i];
        let c = self.curv[i];
        let old = var_value(&self.theta, &v);
        let grad = var_grad(&self.r, self.q.linear(), &v);
        if !(c > 0.0) {
            if old == 0.0 && grad.abs() <= w {
                return Ok(0.0);
            }
            return Err(Error::ZeroDiagonal(v.first));
        }
        let z = c * old - grad;
        // values within rounding of the threshold go to exactly zero
        let new = if w > 0.0 && z.abs() <= w * (1.0 + THRESHOLD_SLACK) {
            0.0
        } else {
            soft_threshold(z, w) / c
        };
        let delta = new - old;
        if delta != 0.0 {
            self.theta[v.first] = new;
            self.q.axpy_column(v.first, delta, &mut self.r);
            if let Some(s) = v.second {
                self.theta[s] = new;
                self.q.axpy_column(s, delta, &mut self.r);
            }
        }
        Ok(delta.abs())
    }

    fn sweep(&mut self, order: &[usize]) -> Result<f64> {
        let mut max_delta: f64 = 0.0;
        for &i in order {
            max_delta = max_delta.max(self.update(i)?);
        }
        Ok(max_delta)
    }

    fn objective(&self) -> f64 {
        smooth_value(&self.r, self.q.linear(), &self.theta)
            + penalty(&self.theta, self.vars, self.weights)
    }

    /// Solves the smooth problem restricted to the current signs of the
    /// nonzero or unpenalized variables. Accepted only if no sign changes and
    /// the objective does not increase.
    fn newton_refine(&mut self) -> bool {
        let active: Vec<usize> = (0..self.vars.len())
            .filter(|&i| self.weights[i] == 0.0 || var_value(&self.theta, &self.vars[i]) != 0.0)
            .collect();
        let k = active.len();
        if k == 0 || k > NEWTON_MAX {
            return false;
        }
        let g = self.q.linear();
        let slots = |v: &Variable| std::iter::once(v.first).chain(v.second);
        let mut qa = DMatrix::zeros(k, k);
        let mut rhs = DVector::zeros(k);
        for (a, &i) in active.iter().enumerate() {
            let v = &self.vars[i];
            let sign = var_value(&self.theta, v).signum();
            rhs[a] = slots(v).map(|t| g[t]).sum::<f64>() - self.weights[i] * sign;
            for (b, &j) in active.iter().enumerate().skip(a) {
                let u = &self.vars[j];
                let e: f64 = slots(v)
                    .flat_map(|t| slots(u).map(move |s| (t, s)))
                    .map(|(t, s)| self.q.entry(t, s))
                    .sum();
                qa[(a, b)] = e;
                qa[(b, a)] = e;
            }
        }
        let Some(chol) = qa.cholesky() else {
            return false;
        };
        let phi = chol.solve(&rhs);
        for (a, &i) in active.iter().enumerate() {
            if !phi[a].is_finite() {
                return false;
            }
            if self.weights[i] > 0.0 && phi[a] * var_value(&self.theta, &self.vars[i]) <= 0.0 {
                return false;
            }
        }
        let before = self.objective();
        let saved = self.theta.clone();
        for (a, &i) in active.iter().enumerate() {
            let v = self.vars[i];
            self.theta[v.first] = phi[a];
            if let Some(s) = v.second {
                self.theta[s] = phi[a];
            }
        }
        self.r = self.q.matvec(&self.theta);
        if self.objective() > before {
            self.theta = saved;
            self.r = self.q.matvec(&self.theta);
            return false;
        }
        true
    }

    fn scale(&self) -> f64 {
        self.theta.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }
}

/// Cyclic coordinate descent over `vars` in the given order.
///
/// After each full sweep the residual `Qθ` is recomputed, and further sweeps
/// visit only variables that are nonzero or unpenalized until they settle.
pub fn minimize<Q: Quadratic + ?Sized>(
    q: &Q,
    vars: &[Variable],
    opts: &SolverOptions,
    init: Option<Vec<f64>>,
) -> Result<Solution> {
    opts.check()?;
    let dim = q.dim();
    let theta = match init {
        Some(t) if t.len() == dim => t,
        Some(t) => {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: t.len(),
            })
        }
        None => unpenalized_solution(q, vars)?,
    };
    let weights: Vec<f64> = vars.iter().map(|v| opts.weight(v)).collect();
    let curv = vars.iter().map(|v| var_curvature(q, v)).collect();
    let r = q.matvec(&theta);
    let mut st = State {
        q,
        vars,
        weights: &weights,
        curv,
        theta,
        r,
    };
    let all: Vec<usize> = (0..vars.len()).collect();
    let mut history = vec![st.objective()];
    let mut sweeps = 0;
    let mut converged = false;
    let mut kkt = f64::INFINITY;

    while sweeps < opts.max_sweeps {
        st.r = q.matvec(&st.theta);
        let change = st.sweep(&all)?;
        sweeps += 1;
        history.push(st.objective());
        if change <= opts.tol * st.scale() {
            kkt = kkt_residual(q, vars, &weights, &st.theta);
            if kkt <= opts.kkt_tol {
                converged = true;
                break;
            }
        }
        let active: Vec<usize> = all
            .iter()
            .copied()
            .filter(|&i| weights[i] == 0.0 || var_value(&st.theta, &vars[i]) != 0.0)
            .collect();
        while sweeps < opts.max_sweeps {
            let change = st.sweep(&active)?;
            sweeps += 1;
            history.push(st.objective());
            if change <= opts.tol * st.scale() {
                break;
            }
            if sweeps % NEWTON_EVERY == 0 && st.newton_refine() {
                history.push(st.objective());
                break;
            }
        }
        if st.newton_refine() {
            history.push(st.objective());
        }
    }
    if !converged {
        kkt = kkt_residual(q, vars, &weights, &st.theta);
    }
    Ok(Solution {
        theta: st.theta,
        sweeps,
        converged,
        kkt_violation: kkt,
        history,
    })
}

/// Minimizer over the unpenalized coordinates with every penalized one at 0.
pub fn unpenalized_solution<Q: Quadratic + ?Sized>(q: &Q, vars: &[Variable]) -> Result<Vec<f64>> {
    let unpenalized: Vec<usize> = vars
        .iter()
        .filter(|v| v.kind == PenaltyKind::None)
        .flat_map(|v| std::iter::once(v.first).chain(v.second))
        .collect();
    let mut theta = vec![0.0; q.dim()];
    let g = q.linear();
    if !unpenalized.is_empty() {
        let u = unpenalized.len();
        let quu = DMatrix::from_fn(u, u, |a, b| q.entry(unpenalized[a], unpenalized[b]));
        let gu = DVector::from_iterator(u, unpenalized.iter().map(|&t| g[t]));
        let sol = quu
            .clone()
            .cholesky()
            .map(|c| c.solve(&gu))
            .or_else(|| quu.lu().solve(&gu))
            .ok_or(Error::SingularUnpenalizedBlock)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularUnpenalizedBlock);
        }
        for (&t, &v) in unpenalized.iter().zip(sol.iter()) {
            theta[t] = v;
        }
    }
    Ok(theta)
}

/// Smallest `λ` (with `λ_η = λ_K`) at which every penalized variable is zero.
pub fn lambda_max<Q: Quadratic + ?Sized>(q: &Q, vars: &[Variable]) -> Result<f64> {
    let g = q.linear();
    let theta = unpenalized_solution(q, vars)?;
    let r = q.matvec(&theta);
    Ok(vars
        .iter()
        .filter(|v| v.kind != PenaltyKind::None)
        .map(|v| var_grad(&r, g, v).abs() / v.slots())
        .fold(0.0, f64::max))
}

/// One penalized fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ParameterSet,
    pub lambda_k: f64,
    pub lambda_eta: f64,
    pub sweeps_used: usize,
    pub converged: bool,
    pub kkt_violation: f64,
    /// Penalized objective at the solution.
    pub objective: f64,
}

/// Minimizes the penalized score-matching loss at `opts.lambda_k`,
/// `opts.lambda_eta`.
pub fn coordinate_descent(
    loss: &QuadraticScoreLoss,
    opts: &SolverOptions,
    init: Option<&ParameterSet>,
) -> Result<FitResult> {
    let vars = variables_for(loss, opts);
    let init = init.map(|p| loss.theta_from_params(p)).transpose()?;
    let sol = minimize(loss, &vars, opts, init)?;
    Ok(fit_result(loss, opts, sol))
}

fn fit_result(loss: &QuadraticScoreLoss, opts: &SolverOptions, sol: Solution) -> FitResult {
    FitResult {
        params: loss.params_from_theta(&sol.theta),
        lambda_k: opts.lambda_k,
        lambda_eta: opts.lambda_eta,
        sweeps_used: sol.sweeps,
        converged: sol.converged,
        kkt_violation: sol.kkt_violation,
        objective: *sol.history.last().unwrap_or(&0.0),
    }
}

/// Geometric grid from `λ_max` down to `ratio · λ_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathGrid {
    pub n_lambda: usize,
    pub ratio: f64,
}

impl Default for PathGrid {
    fn default() -> Self {
        Self {
            n_lambda: 50,
            ratio: 0.01,
        }
    }
}

impl PathGrid {
    pub fn lambdas(&self, lambda_max: f64) -> Result<Vec<f64>> {
        if self.n_lambda == 0 {
            return Err(Error::InvalidOptions("n_lambda must be >= 1".into()));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::InvalidOptions(format!(
                "ratio {} outside (0, 1)",
                self.ratio
            )));
        }
        if !(lambda_max > 0.0) || self.n_lambda == 1 {
            return Ok(vec![lambda_max.max(0.0)]);
        }
        let step = self.ratio.ln() / (self.n_lambda - 1) as f64;
        Ok((0..self.n_lambda)
            .map(|i| lambda_max * (step * i as f64).exp())
            .collect())
    }
}

/// Fits along a decreasing grid of penalties, warm-starting each fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitPath {
    pub fits: Vec<FitResult>,
    pub loss_fingerprint: String,
}

impl FitPath {
    pub fn lambdas(&self) -> Vec<f64> {
        self.fits.iter().map(|f| f.lambda_k).collect()
    }

    pub fn all_converged(&self) -> bool {
        self.fits.iter().all(|f| f.converged)
    }
}

/// `λ_max` of the loss under `opts`' penalty pattern.
pub fn loss_lambda_max(loss: &QuadraticScoreLoss, opts: &SolverOptions) -> Result<f64> {
    lambda_max(loss, &variables_for(loss, opts))
}

pub fn fit_path(loss: &QuadraticScoreLoss, opts: &SolverOptions, grid: &PathGrid) -> Result<FitPath> {
    let lmax = loss_lambda_max(loss, opts)?;
    fit_path_at(loss, opts, &grid.lambdas(lmax)?)
}

/// Path over an explicit, strictly decreasing list of penalties.
pub fn fit_path_at(loss: &QuadraticScoreLoss, opts: &SolverOptions, lambdas: &[f64]) -> Result<FitPath> {
    if lambdas.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::InvalidOptions("penalties must be strictly decreasing".into()));
    }
    let vars = variables_for(loss, opts);
    let mut fits = Vec::with_capacity(lambdas.len());
    let mut warm: Option<Vec<f64>> = None;
    for &lambda in lambdas {
        let o = opts.clone().with_lambda(lambda);
        let sol = minimize(loss, &vars, &o, warm.take())?;
        warm = Some(sol.theta.clone());
        fits.push(fit_result(loss, &o, sol));
    }
    Ok(FitPath {
        fits,
        loss_fingerprint: loss.fingerprint(),
    })
}
