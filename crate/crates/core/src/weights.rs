//! Boundary-distance functions and power weights `h_j(φ_j(x)) = φ_j(x)^{α_j}`.
//!
//! On the simplex with coordinate `d` profiled out, the distance of `x_j` to
//! the boundary of its section is `min{x_j, x_d}`, optionally truncated at
//! `C_j`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Mode, ModelSpec};

/// How truncation constants `C_j` are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum Truncation {
    /// `C_j = ∞`.
    None,
    /// `C_j` is the empirical π-quantile of `min{x_j, x_d, 1}`.
    Quantile(f64),
    /// Fixed `C_j` per coordinate (length `m`; the entry of the removed
    /// coordinate is ignored).
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub alpha: Vec<f64>,
    pub truncation: Truncation,
}

impl WeightSpec {
    /// `h(x) = x^c` for every coordinate, no truncation.
    pub fn power(m: usize, c: f64) -> Self {
        Self {
            alpha: vec![c; m],
            truncation: Truncation::None,
        }
    }

    pub fn with_truncation(mut self, truncation: Truncation) -> Self {
        self.truncation = truncation;
        self
    }

    pub fn check(&self, m: usize) -> Result<()> {
        if self.alpha.len() != m {
            return Err(Error::InvalidWeights(format!(
                "need {m} exponents, got {}",
                self.alpha.len()
            )));
        }
        if let Some(a) = self.alpha.iter().find(|a| !(**a >= 0.0) || !a.is_finite()) {
            return Err(Error::InvalidWeights(format!("exponent {a} is not >= 0")));
        }
        match &self.truncation {
            Truncation::None => {}
            Truncation::Quantile(pi) => {
                if !(*pi > 0.0 && *pi <= 1.0) {
                    return Err(Error::InvalidWeights(format!("quantile {pi} outside (0, 1]")));
                }
            }
            Truncation::Explicit(c) => {
                if c.len() != m {
                    return Err(Error::InvalidWeights(format!(
                        "need {m} truncation constants, got {}",
                        c.len()
                    )));
                }
                if c.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::InvalidWeights("truncation constants must be > 0".into()));
                }
            }
        }
        Ok(())
    }

    /// Truncation constants for every coordinate when `dropped` is removed;
    /// the `dropped` entry is `∞`.
    pub fn truncation_for(&self, data: &Dataset, dropped: usize) -> Result<Vec<f64>> {
        let m = data.m();
        let mut out = match &self.truncation {
            Truncation::None => vec![f64::INFINITY; m],
            Truncation::Explicit(c) => c.clone(),
            Truncation::Quantile(pi) => {
                let free = select_truncation(data, *pi, dropped)?;
                let mut out = Vec::with_capacity(m);
                let mut it = free.into_iter();
                for j in 0..m {
                    out.push(if j == dropped {
                        f64::INFINITY
                    } else {
                        it.next().unwrap_or(f64::INFINITY)
                    });
                }
                out
            }
        };
        out[dropped] = f64::INFINITY;
        Ok(out)
    }
}

/// `min{C_j, x_j, x_dropped}`.
#[inline]
pub fn phi(x: &[f64], j: usize, c_j: f64, dropped: usize) -> f64 {
    x[j].min(x[dropped]).min(c_j)
}

/// Value of `h_j ∘ φ_j` and its derivative along `x_j` with `x_dropped`
/// absorbing the change.
///
/// When `x_j = x_dropped` the derivative is 0. When `C_j` is strictly the
/// smallest it is 0 as well; a tie between `C_j` and a coordinate follows the
/// coordinate, so a quantile of 1 behaves exactly like no truncation.
pub fn hphi_and_deriv(x: &[f64], j: usize, alpha_j: f64, c_j: f64, dropped: usize) -> (f64, f64) {
    if alpha_j == 0.0 {
        return (1.0, 0.0);
    }
    let (xj, xd) = (x[j], x[dropped]);
    let nearest = xj.min(xd);
    if c_j < nearest {
        return (c_j.powf(alpha_j), 0.0);
    }
    let value = nearest.powf(alpha_j);
    let sign = if xj < xd {
        1.0
    } else if xd < xj {
        -1.0
    } else {
        0.0
    };
    if sign == 0.0 {
        return (value, 0.0);
    }
    let slope = if alpha_j == 1.0 {
        1.0
    } else {
        alpha_j * nearest.powf(alpha_j - 1.0)
    };
    (value, sign * slope)
}

/// Type-1 empirical quantile: the `⌈πn⌉`-th smallest value.
pub(crate) fn lower_quantile(values: &mut [f64], pi: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let k = ((pi * n as f64).ceil() as usize).clamp(1, n);
    values[k - 1]
}

/// Per-coordinate truncation constants for removed coordinate `dropped`, as
/// the π sample quantile of `min{x_j, x_dropped, 1}`. Returns the `m − 1`
/// free coordinates in increasing index order.
pub fn select_truncation(data: &Dataset, pi: f64, dropped: usize) -> Result<Vec<f64>> {
    let m = data.m();
    if dropped >= m {
        return Err(Error::IndexOutOfRange {
            index: dropped,
            len: m,
        });
    }
    if !(pi > 0.0 && pi <= 1.0) {
        return Err(Error::InvalidWeights(format!("quantile {pi} outside (0, 1]")));
    }
    let mut out = Vec::with_capacity(m - 1);
    let mut column = Vec::with_capacity(data.n());
    for j in (0..m).filter(|&j| j != dropped) {
        column.clear();
        column.extend(data.rows().map(|x| phi(x, j, 1.0, dropped)));
        out.push(lower_quantile(&mut column, pi));
    }
    Ok(out)
}

/// Result of checking weight exponents against the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentReport {
    /// Exponents satisfy the conditions that make the empirical loss valid.
    pub pass: bool,
    /// The constraint that decided the outcome.
    pub binding: String,
    /// The stronger `α_j ≥ max{1, 2 − a, 2 − b}` used by the finite-sample
    /// theory for `a > 0`; `None` when `a = 0`.
    pub theory_grade: Option<bool>,
    pub notes: Vec<String>,
}

/// Checks the power-weight exponents against the score-matching assumptions.
///
/// `eta0`, when known, refines the `a > 0, b = 0` case; otherwise `η_0 = 0`
/// is assumed there.
pub fn validate_h_exponents(
    spec: &ModelSpec,
    weights: &WeightSpec,
    eta0: Option<&[f64]>,
) -> ExponentReport {
    let (a, b) = (spec.a, spec.b);
    let mut notes = Vec::new();
    if let Some(a) = weights.alpha.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return ExponentReport {
            pass: false,
            binding: format!("alpha_j >= 0 (got {a})"),
            theory_grade: None,
            notes,
        };
    }
    let eta_known_zero = !spec.mode.has_eta();

    let mut failure: Option<String> = None;
    let binding;
    if a == 0.0 {
        binding = "a = 0: alpha_j >= 0".to_string();
        if spec.mode == Mode::Am1 {
            if weights.alpha.contains(&0.0) {
                notes.push(
                    "alpha_j = 0: only the a = 0 condition alpha_j >= 0 holds; the A^{m-1} \
                     condition alpha_j > 0 is not met"
                        .into(),
                );
            }
            if let Some(eta0) = eta0 {
                let m = eta0.len();
                let worst = eta0.iter().map(|e| 1.0 - e).fold(f64::NEG_INFINITY, f64::max);
                if weights.alpha.iter().take(m).any(|&v| v <= worst) {
                    notes.push(format!(
                        "under K PSD with eta0 > -1 only, alpha_j > {worst} would be needed"
                    ));
                }
            }
        }
    } else if b > 0.0 || eta_known_zero {
        let bound = if eta_known_zero {
            (1.0 - a).max(0.0)
        } else {
            (1.0 - a).max(1.0 - b).max(0.0)
        };
        binding = format!("alpha_j > {bound}");
        if let Some(v) = weights.alpha.iter().find(|&&v| v <= bound) {
            failure = Some(format!("alpha_j = {v} must exceed {bound}"));
        }
    } else {
        // a > 0, b = 0
        let eta: Vec<f64> = match eta0 {
            Some(e) => e.to_vec(),
            None => {
                notes.push("eta0 unknown; assumed 0".into());
                vec![0.0; weights.alpha.len()]
            }
        };
        binding = "alpha_j > 1 - eta0_j".to_string();
        for (j, (&v, e)) in weights.alpha.iter().zip(&eta).enumerate() {
            if v <= 1.0 - e {
                failure = Some(format!("alpha_{j} = {v} must exceed 1 - eta0_{j} = {}", 1.0 - e));
                break;
            }
        }
    }

    let theory_grade = (a > 0.0).then(|| {
        let bound = 1.0_f64.max(2.0 - a).max(2.0 - b);
        weights.alpha.iter().all(|&v| v >= bound)
    });
    if theory_grade == Some(false) {
        notes.push("below the alpha_j >= max{1, 2-a, 2-b} level used by the sample-complexity bounds".into());
    }

    match failure {
        Some(f) => ExponentReport {
            pass: false,
            binding: f,
            theory_grade,
            notes,
        },
        None => ExponentReport {
            pass: true,
            binding,
            theory_grade,
            notes,
        },
    }
}
