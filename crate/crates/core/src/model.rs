//! Domain types for power-interaction (a-b) models on the probability simplex,
//! together with the density kernel, validity checks, the Aitchison
//! parameterization and additive log-ratio coordinates.
//!
//! Throughout, `x^0` is read as `log x` and `1/0` as `1`, so the `a = b = 0`
//! family is the log-log model
//! `exp(-½ log(x)ᵀ K log(x) + ηᵀ log(x))`.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for `Σ x_j = 1`.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// How the interaction matrix and linear term are constrained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Unconstrained `K` (each column estimated separately) and free `η`.
    General,
    /// `K = Kᵀ`, free `η`.
    Symmetric,
    /// Aitchison's log-log model: `a = b = 0`, `K = Kᵀ`, `K 1 = 0`.
    Am1,
    /// Symmetric `K` with `η ≡ 0` known.
    Centered,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::General => "general",
            Mode::Symmetric => "symmetric",
            Mode::Am1 => "am1",
            Mode::Centered => "centered",
        }
    }

    /// Whether `κ_jk` and `κ_kj` are a single parameter.
    pub fn symmetric_k(&self) -> bool {
        !matches!(self, Mode::General)
    }

    pub fn has_eta(&self) -> bool {
        !matches!(self, Mode::Centered)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "general" => Ok(Mode::General),
            "symmetric" => Ok(Mode::Symmetric),
            "am1" => Ok(Mode::Am1),
            "centered" => Ok(Mode::Centered),
            other => Err(Error::InvalidSpec(format!("unknown mode {other:?}"))),
        }
    }
}

/// Exponents `(a, b)` and parameter mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub a: f64,
    pub b: f64,
    pub mode: Mode,
}

impl ModelSpec {
    pub fn new(a: f64, b: f64, mode: Mode) -> Result<Self> {
        if !(a >= 0.0 && a.is_finite()) || !(b >= 0.0 && b.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "exponents must be finite and nonnegative, got a = {a}, b = {b}"
            )));
        }
        if mode == Mode::Am1 && (a != 0.0 || b != 0.0) {
            return Err(Error::InvalidSpec(format!(
                "am1 mode requires a = b = 0, got a = {a}, b = {b}"
            )));
        }
        Ok(Self { a, b, mode })
    }

    pub fn am1() -> Self {
        Self {
            a: 0.0,
            b: 0.0,
            mode: Mode::Am1,
        }
    }

    /// True when some sufficient statistic is a logarithm.
    pub fn takes_logs(&self) -> bool {
        self.a == 0.0 || (self.b == 0.0 && self.mode.has_eta())
    }
}

/// `x^p`, with `x^0 ≡ log x`.
#[inline]
pub(crate) fn power(x: f64, p: f64) -> f64 {
    if p == 0.0 {
        x.ln()
    } else {
        x.powf(p)
    }
}

/// Coefficient that replaces `a` in derivative formulas (`1` when `a = 0`).
#[inline]
pub(crate) fn exponent_coefficient(p: f64) -> f64 {
    if p == 0.0 {
        1.0
    } else {
        p
    }
}

/// A point of the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Composition(Vec<f64>);

impl Composition {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub(crate) fn from_normalized(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl AsRef<[f64]> for Composition {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Checks that `x` lies on the simplex. Within tolerance the entries are
/// rescaled to sum to exactly one.
pub fn validate_composition(x: &[f64], spec: &ModelSpec, tol: f64) -> Result<Composition> {
    if x.len() < 2 {
        return Err(Error::TooFewComponents(x.len()));
    }
    for (index, &value) in x.iter().enumerate() {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(Error::NegativeEntry { index, value });
        }
    }
    let sum: f64 = x.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::SumOutOfTolerance { sum, tol });
    }
    if spec.takes_logs() {
        if let Some(index) = x.iter().position(|&v| v == 0.0) {
            return Err(Error::ZeroEntryWithLogModel { index });
        }
    }
    Ok(Composition(x.iter().map(|v| v / sum).collect()))
}

/// Closes a vector of counts into proportions after adding `pseudocount`.
pub fn close_counts(counts: &[u64], pseudocount: f64) -> Result<Composition> {
    if counts.len() < 2 {
        return Err(Error::TooFewComponents(counts.len()));
    }
    if !(pseudocount >= 0.0) || !pseudocount.is_finite() {
        return Err(Error::Domain(format!("pseudocount must be >= 0, got {pseudocount}")));
    }
    let shifted: Vec<f64> = counts.iter().map(|&c| c as f64 + pseudocount).collect();
    let total: f64 = shifted.iter().sum();
    if total <= 0.0 {
        return Err(Error::AllZeroNoPseudocount);
    }
    Ok(Composition(shifted.into_iter().map(|v| v / total).collect()))
}

/// `n × m` matrix of compositions, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
    n: usize,
    m: usize,
    labels: Option<Vec<String>>,
}

impl Dataset {
    pub fn from_compositions(rows: Vec<Composition>) -> Result<Self> {
        let first = rows.first().ok_or(Error::NonpositiveN)?;
        let m = first.len();
        let mut values = Vec::with_capacity(rows.len() * m);
        for row in &rows {
            if row.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: row.len(),
                });
            }
            values.extend_from_slice(row.values());
        }
        Ok(Self {
            values,
            n: rows.len(),
            m,
            labels: None,
        })
    }

    /// Validates every row against `spec`.
    pub fn from_rows(rows: &[Vec<f64>], spec: &ModelSpec) -> Result<Self> {
        let comps = rows
            .iter()
            .map(|r| validate_composition(r, spec, SIMPLEX_TOL))
            .collect::<Result<Vec<_>>>()?;
        Self::from_compositions(comps)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.m)
    }

    /// New dataset made of the listed rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.m);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self {
            values,
            n: indices.len(),
            m: self.m,
            labels: self.labels.clone(),
        }
    }

    /// Concatenates the rows of `self` and `other`.
    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if other.m != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: other.m,
            });
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Ok(Self {
            values,
            n: self.n + other.n,
            m: self.m,
            labels: self.labels.clone(),
        })
    }

    /// Checks that every row is admissible under `spec`.
    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        for row in self.rows() {
            validate_composition(row, spec, SIMPLEX_TOL)?;
        }
        Ok(())
    }
}

/// Interaction matrix `K` and linear term `η`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ParameterSetRepr", try_from = "ParameterSetRepr")]
pub struct ParameterSet {
    pub k: DMatrix<f64>,
    pub eta: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParameterSetRepr {
    k: Vec<Vec<f64>>,
    eta: Vec<f64>,
}

impl From<ParameterSet> for ParameterSetRepr {
    fn from(p: ParameterSet) -> Self {
        let k = (0..p.k.nrows())
            .map(|i| p.k.row(i).iter().copied().collect())
            .collect();
        Self {
            k,
            eta: p.eta.iter().copied().collect(),
        }
    }
}

impl TryFrom<ParameterSetRepr> for ParameterSet {
    type Error = Error;

    fn try_from(r: ParameterSetRepr) -> Result<Self> {
        let m = r.k.len();
        if r.k.iter().any(|row| row.len() != m) {
            return Err(Error::InvalidParameters("K must be square".into()));
        }
        if r.eta.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: r.eta.len(),
            });
        }
        Ok(Self {
            k: DMatrix::from_fn(m, m, |i, j| r.k[i][j]),
            eta: DVector::from_vec(r.eta),
        })
    }
}

impl ParameterSet {
    pub fn zeros(m: usize) -> Self {
        Self {
            k: DMatrix::zeros(m, m),
            eta: DVector::zeros(m),
        }
    }

    pub fn new(k: DMatrix<f64>, eta: DVector<f64>) -> Result<Self> {
        if k.nrows() != k.ncols() {
            return Err(Error::InvalidParameters("K must be square".into()));
        }
        if eta.len() != k.nrows() {
            return Err(Error::DimensionMismatch {
                expected: k.nrows(),
                got: eta.len(),
            });
        }
        Ok(Self { k, eta })
    }

    pub fn m(&self) -> usize {
        self.eta.len()
    }

    /// Checks the mode-dependent invariants.
    pub fn check_mode(&self, mode: Mode) -> Result<()> {
        let m = self.m();
        if mode.symmetric_k() && self.k != self.k.transpose() {
            return Err(Error::ConstraintViolated("K must be symmetric".into()));
        }
        if mode == Mode::Am1 {
            let worst = row_sum_violation(&self.k);
            if worst > 1e-12 * (1.0 + self.k.amax()) {
                return Err(Error::ConstraintViolated(format!(
                    "K 1 = 0 violated by {worst:e}"
                )));
            }
        }
        if mode == Mode::Centered && self.eta.iter().any(|&e| e != 0.0) {
            return Err(Error::ConstraintViolated("centered mode needs eta = 0".into()));
        }
        debug_assert_eq!(self.k.nrows(), m);
        Ok(())
    }
}

fn row_sum_violation(k: &DMatrix<f64>) -> f64 {
    (0..k.nrows())
        .map(|i| k.row(i).sum().abs())
        .fold(0.0, f64::max)
}

/// Unnormalized log-density `−(1/2a) x^aᵀ K x^a + (1/b) ηᵀ x^b`.
pub fn log_kernel(spec: &ModelSpec, params: &ParameterSet, x: &[f64]) -> Result<f64> {
    let m = params.m();
    if x.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: x.len(),
        });
    }
    if spec.takes_logs() {
        if let Some(j) = x.iter().position(|&v| v <= 0.0) {
            return Err(Error::Domain(format!(
                "component {j} is {} but the model takes logarithms",
                x[j]
            )));
        }
    }
    let xa: Vec<f64> = x.iter().map(|&v| power(v, spec.a)).collect();
    let mut quad = 0.0;
    for c in 0..m {
        let col = params.k.column(c);
        let inner: f64 = col.iter().zip(&xa).map(|(k, v)| k * v).sum();
        quad += xa[c] * inner;
    }
    let mut lin = 0.0;
    if spec.mode.has_eta() {
        for (e, &v) in params.eta.iter().zip(x) {
            lin += e * power(v, spec.b);
        }
    }
    Ok(-quad / (2.0 * exponent_coefficient(spec.a)) + lin / exponent_coefficient(spec.b))
}

/// Outcome of a normalizability check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalizability {
    Proven,
    Unproven,
    Violated,
}

/// Sufficient condition that established normalizability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    CC1,
    CC2,
    CC3,
    CC4,
    #[serde(rename = "Thm4-I")]
    Thm4I,
    #[serde(rename = "Thm4-II")]
    Thm4II,
    #[serde(rename = "Thm4-III")]
    Thm4III,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub normalizable: Normalizability,
    pub condition_hit: Option<Condition>,
    pub details: String,
}

impl ValidityReport {
    fn proven(condition: Condition, details: impl Into<String>) -> Self {
        Self {
            normalizable: Normalizability::Proven,
            condition_hit: Some(condition),
            details: details.into(),
        }
    }

    fn unproven(details: impl Into<String>) -> Self {
        Self {
            normalizable: Normalizability::Unproven,
            condition_hit: None,
            details: details.into(),
        }
    }

    pub fn is_proven(&self) -> bool {
        self.normalizable == Normalizability::Proven
    }
}

const EIGEN_TOL: f64 = 1e-10;

fn symmetric_eigenvalues(k: &DMatrix<f64>) -> DVector<f64> {
    let sym = (k + k.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues
}

fn eig_scale(ev: &DVector<f64>) -> f64 {
    ev.amax().max(1.0)
}

pub(crate) fn is_positive_definite(k: &DMatrix<f64>) -> bool {
    if k.nrows() == 0 {
        return true;
    }
    let ev = symmetric_eigenvalues(k);
    ev.min() > EIGEN_TOL * eig_scale(&ev)
}

pub(crate) fn is_positive_semidefinite(k: &DMatrix<f64>) -> bool {
    if k.nrows() == 0 {
        return true;
    }
    let ev = symmetric_eigenvalues(k);
    ev.min() >= -EIGEN_TOL * eig_scale(&ev)
}

fn drop_index(k: &DMatrix<f64>, idx: usize) -> DMatrix<f64> {
    k.clone().remove_row(idx).remove_column(idx)
}

/// Tri-state normalizability test based on checkable sufficient conditions.
///
/// The conditions that quantify `log(x)ᵀ K log(x)` over the whole simplex are
/// only established through positive (semi-)definiteness of `K`.
pub fn check_normalizability(spec: &ModelSpec, params: &ParameterSet) -> ValidityReport {
    let (a, b) = (spec.a, spec.b);
    let eta_known_zero = !spec.mode.has_eta();
    let m = params.m();

    if a > 0.0 {
        if b > 0.0 || eta_known_zero {
            return ValidityReport::proven(Condition::CC1, "a > 0 and b > 0 (or eta = 0 known)");
        }
        if let Some(j) = params.eta.iter().position(|&e| e <= -1.0) {
            return ValidityReport {
                normalizable: Normalizability::Violated,
                condition_hit: None,
                details: format!(
                    "a > 0, b = 0 needs eta_j > -1 for all j; eta_{j} = {}",
                    params.eta[j]
                ),
            };
        }
        return ValidityReport::proven(Condition::CC2, "a > 0, b = 0, all eta_j > -1");
    }

    // a = 0
    let symmetric = params.k == params.k.transpose();
    if b > 0.0 || eta_known_zero {
        if is_positive_semidefinite(&params.k) {
            return ValidityReport::proven(
                Condition::CC4,
                "a = 0 and symmetric part of K is positive semidefinite",
            );
        }
        return ValidityReport::unproven("a = 0, b > 0: K is not positive semidefinite");
    }

    // a = b = 0
    if symmetric {
        if is_positive_definite(&params.k) {
            return ValidityReport::proven(Condition::Thm4I, "K symmetric positive definite");
        }
        let zero_rows = row_sum_violation(&params.k) <= 1e-10 * (1.0 + params.k.amax());
        if zero_rows {
            let eta_sum: f64 = params.eta.sum();
            if eta_sum + m as f64 >= 0.0 {
                if let Some(k) = (0..m).find(|&k| is_positive_definite(&drop_index(&params.k, k))) {
                    return ValidityReport::proven(
                        Condition::Thm4II,
                        format!("K 1 = 0, K without row/column {k} is positive definite, 1'eta + m >= 0"),
                    );
                }
            }
            if is_positive_semidefinite(&params.k) && params.eta.iter().all(|&e| e > -1.0) {
                return ValidityReport::proven(
                    Condition::Thm4III,
                    "K 1 = 0, K positive semidefinite, eta > -1",
                );
            }
        }
    } else if is_positive_definite(&params.k) {
        return ValidityReport::proven(
            Condition::CC3,
            "symmetric part of K positive definite, so log(x)'K log(x) > 0 on the simplex",
        );
    }
    ValidityReport::unproven("a = b = 0: no checkable sufficient condition holds")
}

/// Exception cases under which `(K, η)` are not identified from the density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdentifiabilityException {
    /// `a = b = 1`
    I,
    /// `a = 1, b = 2`
    II,
    /// `a = 1` (η identified, K not)
    III,
    /// `2a = b > 0`
    IV,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub identifiable: bool,
    pub exception_case: Option<IdentifiabilityException>,
}

pub fn check_identifiability(a: f64, b: f64) -> IdentifiabilityReport {
    use IdentifiabilityException::*;
    let exception = if a == 1.0 && b == 1.0 {
        Some(I)
    } else if a == 1.0 && b == 2.0 {
        Some(II)
    } else if a == 1.0 {
        Some(III)
    } else if 2.0 * a == b && b > 0.0 {
        Some(IV)
    } else {
        None
    };
    IdentifiabilityReport {
        identifiable: exception.is_none(),
        exception_case: exception,
    }
}

/// Maps Aitchison's `(β, γ)` parameters to `(K, η)` with `K 1 = 0`.
pub fn am1_from_aitchison(beta: &DVector<f64>, gamma: &DMatrix<f64>) -> Result<ParameterSet> {
    let m = beta.len();
    if gamma.nrows() != m || gamma.ncols() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: gamma.nrows(),
        });
    }
    if *gamma != gamma.transpose() || gamma.diagonal().iter().any(|&d| d != 0.0) {
        return Err(Error::AsymmetricGamma);
    }
    let mut k = DMatrix::zeros(m, m);
    for j in 0..m {
        let mut diag = 0.0;
        for i in 0..m {
            if i != j {
                k[(i, j)] = -2.0 * gamma[(i, j)];
                diag += gamma[(j, i)];
            }
        }
        k[(j, j)] = 2.0 * diag;
    }
    let eta = beta.map(|v| v - 1.0);
    Ok(ParameterSet { k, eta })
}

/// `y_j = log(x_j / x_ref)` for `j ≠ ref`, in increasing `j`.
pub fn alr_transform(x: &[f64], reference: usize) -> Result<DVector<f64>> {
    let m = x.len();
    if reference >= m {
        return Err(Error::IndexOutOfRange {
            index: reference,
            len: m,
        });
    }
    if let Some(j) = x.iter().position(|&v| v <= 0.0) {
        return Err(Error::Domain(format!("alr needs positive entries, x_{j} = {}", x[j])));
    }
    let lref = x[reference].ln();
    Ok(DVector::from_iterator(
        m - 1,
        x.iter()
            .enumerate()
            .filter(|&(j, _)| j != reference)
            .map(|(_, v)| v.ln() - lref),
    ))
}

/// Additive logistic transform, the inverse of [`alr_transform`].
pub fn alr_inverse(y: &[f64], reference: usize) -> Result<Composition> {
    let m = y.len() + 1;
    if reference >= m {
        return Err(Error::IndexOutOfRange {
            index: reference,
            len: m,
        });
    }
    // shift by the max exponent for stability
    let shift = y.iter().copied().fold(0.0_f64, f64::max);
    let mut out = Vec::with_capacity(m);
    let mut it = y.iter();
    for j in 0..m {
        if j == reference {
            out.push((-shift).exp());
        } else {
            out.push((it.next().copied().unwrap_or_default() - shift).exp());
        }
    }
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    Ok(Composition(out))
}
