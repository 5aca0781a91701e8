//! The quadratic score-matching loss `½ θᵀΓθ − gᵀθ` over `θ = (K, η)`.
//!
//! Parameters are grouped by column of `K`: group `c` holds
//! `(κ_{0,c}, …, κ_{m−1,c}, η_c)`. With one coordinate `d` removed, the loss
//! couples group `j` only with itself and with group `d`, so `Γ` is stored as
//! its diagonal blocks plus the off-diagonal blocks `(j, d)` for `d ∈ J`.
//!
//! After [`transform_am1`] group `c` holds the off-diagonal entries
//! `κ_{k,c}, k ≠ c`, followed by `η_c`; the diagonal `κ_{c,c} = −Σ_{k≠c} κ_{k,c}`
//! is implied.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{exponent_coefficient, power, Dataset, Mode, ModelSpec, ParameterSet};
use crate::parallel::map_ordered;
use crate::weights::{hphi_and_deriv, validate_h_exponents, WeightSpec};

/// Block-sparse symmetric matrix with square diagonal blocks of equal size.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGamma {
    group_size: usize,
    diag: Vec<DMatrix<f64>>,
    /// Blocks `(p, q)` with `p < q`; rows index group `p`.
    off: BTreeMap<(usize, usize), DMatrix<f64>>,
    /// For each group, the partner groups with a stored block.
    neighbors: Vec<Vec<usize>>,
}

impl BlockGamma {
    fn zeros(groups: usize, group_size: usize) -> Self {
        Self {
            group_size,
            diag: vec![DMatrix::zeros(group_size, group_size); groups],
            off: BTreeMap::new(),
            neighbors: vec![Vec::new(); groups],
        }
    }

    fn off_mut(&mut self, p: usize, q: usize) -> &mut DMatrix<f64> {
        debug_assert!(p < q);
        let gs = self.group_size;
        let neighbors = &mut self.neighbors;
        self.off.entry((p, q)).or_insert_with(|| {
            neighbors[p].push(q);
            neighbors[q].push(p);
            DMatrix::zeros(gs, gs)
        })
    }

    /// Adds `block` as the `(r, c)` block, `r ≠ c`.
    fn add_off(&mut self, r: usize, c: usize, block: &DMatrix<f64>) {
        if r < c {
            *self.off_mut(r, c) += block;
        } else {
            *self.off_mut(c, r) += block.transpose();
        }
    }

    fn finish(&mut self) {
        for list in &mut self.neighbors {
            list.sort_unstable();
        }
    }

    pub fn groups(&self) -> usize {
        self.diag.len()
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn dim(&self) -> usize {
        self.groups() * self.group_size
    }

    pub fn diag_block(&self, c: usize) -> &DMatrix<f64> {
        &self.diag[c]
    }

    /// The `(r, c)` block, if stored.
    pub fn block(&self, r: usize, c: usize) -> Option<DMatrix<f64>> {
        if r == c {
            return Some(self.diag[r].clone());
        }
        if r < c {
            self.off.get(&(r, c)).cloned()
        } else {
            self.off.get(&(c, r)).map(|b| b.transpose())
        }
    }

    /// Number of stored off-diagonal blocks (each counted once).
    pub fn off_block_count(&self) -> usize {
        self.off.len()
    }

    pub fn entry(&self, t: usize, s: usize) -> f64 {
        let gs = self.group_size;
        let (ct, lt, cs, ls) = (t / gs, t % gs, s / gs, s % gs);
        if ct == cs {
            self.diag[ct][(lt, ls)]
        } else if ct < cs {
            self.off.get(&(ct, cs)).map_or(0.0, |b| b[(lt, ls)])
        } else {
            self.off.get(&(cs, ct)).map_or(0.0, |b| b[(ls, lt)])
        }
    }

    pub fn diag_entry(&self, t: usize) -> f64 {
        let gs = self.group_size;
        self.diag[t / gs][(t % gs, t % gs)]
    }

    /// `out += alpha · Γ[:, t]`.
    pub fn axpy_column(&self, t: usize, alpha: f64, out: &mut [f64]) {
        let gs = self.group_size;
        let (c, l) = (t / gs, t % gs);
        let col = self.diag[c].column(l);
        for (o, v) in out[c * gs..(c + 1) * gs].iter_mut().zip(col.iter()) {
            *o += alpha * v;
        }
        for &q in &self.neighbors[c] {
            let target = &mut out[q * gs..(q + 1) * gs];
            if q < c {
                let b = &self.off[&(q, c)];
                for (o, v) in target.iter_mut().zip(b.column(l).iter()) {
                    *o += alpha * v;
                }
            } else {
                let b = &self.off[&(c, q)];
                for (k, o) in target.iter_mut().enumerate() {
                    *o += alpha * b[(l, k)];
                }
            }
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let gs = self.group_size;
        let mut out = vec![0.0; self.dim()];
        for (c, d) in self.diag.iter().enumerate() {
            let xc = DVector::from_column_slice(&x[c * gs..(c + 1) * gs]);
            let y = d * &xc;
            for (o, v) in out[c * gs..(c + 1) * gs].iter_mut().zip(y.iter()) {
                *o += v;
            }
        }
        for (&(p, q), b) in &self.off {
            let xq = DVector::from_column_slice(&x[q * gs..(q + 1) * gs]);
            let xp = DVector::from_column_slice(&x[p * gs..(p + 1) * gs]);
            let yp = b * &xq;
            let yq = b.tr_mul(&xp);
            for (o, v) in out[p * gs..(p + 1) * gs].iter_mut().zip(yp.iter()) {
                *o += v;
            }
            for (o, v) in out[q * gs..(q + 1) * gs].iter_mut().zip(yq.iter()) {
                *o += v;
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let gs = self.group_size;
        let mut out = DMatrix::zeros(self.dim(), self.dim());
        for (c, d) in self.diag.iter().enumerate() {
            out.view_mut((c * gs, c * gs), (gs, gs)).copy_from(d);
        }
        for (&(p, q), b) in &self.off {
            out.view_mut((p * gs, q * gs), (gs, gs)).copy_from(b);
            out.view_mut((q * gs, p * gs), (gs, gs)).copy_from(&b.transpose());
        }
        out
    }

    fn scale(&mut self, s: f64) {
        for d in &mut self.diag {
            *d *= s;
        }
        for b in self.off.values_mut() {
            *b *= s;
        }
    }

    fn add_assign(&mut self, other: &BlockGamma) {
        for (d, o) in self.diag.iter_mut().zip(&other.diag) {
            *d += o;
        }
        for (&(p, q), b) in &other.off {
            *self.off_mut(p, q) += b;
        }
    }

    fn all_finite(&self) -> bool {
        self.diag.iter().chain(self.off.values()).all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn hash_into(&self, hasher: &mut Sha256) {
        for d in &self.diag {
            for v in d.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        for (&(p, q), b) in &self.off {
            hasher.update((p as u64).to_le_bytes());
            hasher.update((q as u64).to_le_bytes());
            for v in b.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
    }
}

/// Identifies one scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamId {
    /// `κ_{row, col}`.
    K(usize, usize),
    Eta(usize),
}

/// Assembled loss `½ θᵀ Γ_δ θ − gᵀ θ` plus the metadata that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticScoreLoss {
    spec: ModelSpec,
    weights: WeightSpec,
    j_set: Vec<usize>,
    m: usize,
    n: usize,
    gamma: BlockGamma,
    /// Diagonal of `Γ` before the multiplier.
    base_diag: Vec<f64>,
    g: Vec<f64>,
    delta: f64,
    transformed: bool,
}

impl QuadraticScoreLoss {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn weights(&self) -> &WeightSpec {
        &self.weights
    }

    pub fn removed(&self) -> &[usize] {
        &self.j_set
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Whether the `K 1 = 0` reparameterization has been applied.
    pub fn is_transformed(&self) -> bool {
        self.transformed
    }

    pub fn gamma(&self) -> &BlockGamma {
        &self.gamma
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn dim(&self) -> usize {
        self.gamma.dim()
    }

    fn has_eta(&self) -> bool {
        self.spec.mode.has_eta()
    }

    /// Number of `K` entries per group.
    fn k_slots(&self) -> usize {
        if self.transformed {
            self.m - 1
        } else {
            self.m
        }
    }

    pub fn param_id(&self, t: usize) -> ParamId {
        let gs = self.gamma.group_size();
        let (c, l) = (t / gs, t % gs);
        if l >= self.k_slots() {
            return ParamId::Eta(c);
        }
        let row = if self.transformed && l >= c { l + 1 } else { l };
        ParamId::K(row, c)
    }

    pub fn index_of(&self, id: ParamId) -> Option<usize> {
        let gs = self.gamma.group_size();
        match id {
            ParamId::Eta(c) if c < self.m && self.has_eta() => Some(c * gs + self.k_slots()),
            ParamId::K(r, c) if r < self.m && c < self.m => {
                if !self.transformed {
                    Some(c * gs + r)
                } else if r == c {
                    None
                } else {
                    Some(c * gs + if r < c { r } else { r - 1 })
                }
            }
            _ => None,
        }
    }

    /// Flattens `params` into this loss's coordinates. After the `K 1 = 0`
    /// transform the diagonal of `K` is dropped.
    pub fn theta_from_params(&self, params: &ParameterSet) -> Result<Vec<f64>> {
        if params.m() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: params.m(),
            });
        }
        Ok((0..self.dim())
            .map(|t| match self.param_id(t) {
                ParamId::K(r, c) => params.k[(r, c)],
                ParamId::Eta(c) => params.eta[c],
            })
            .collect())
    }

    pub fn params_from_theta(&self, theta: &[f64]) -> ParameterSet {
        let mut p = ParameterSet::zeros(self.m);
        for (t, &v) in theta.iter().enumerate() {
            match self.param_id(t) {
                ParamId::K(r, c) => p.k[(r, c)] = v,
                ParamId::Eta(c) => p.eta[c] = v,
            }
        }
        if self.transformed {
            for c in 0..self.m {
                let s: f64 = (0..self.m).filter(|&r| r != c).map(|r| p.k[(r, c)]).sum();
                p.k[(c, c)] = -s;
            }
        }
        p
    }

    /// `½ θᵀ Γ_δ θ − gᵀ θ`.
    pub fn value(&self, theta: &[f64]) -> f64 {
        let r = self.gamma.matvec(theta);
        let quad: f64 = r.iter().zip(theta).map(|(a, b)| a * b).sum();
        let lin: f64 = self.g.iter().zip(theta).map(|(a, b)| a * b).sum();
        0.5 * quad - lin
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.gamma.to_dense()
    }

    /// Whether the multiplier scales coordinate `t`.
    fn delta_applies(&self, t: usize) -> bool {
        !self.transformed || matches!(self.param_id(t), ParamId::K(..))
    }

    fn set_delta(&mut self, delta: f64) {
        let gs = self.gamma.group_size();
        for t in 0..self.dim() {
            let v = if self.delta_applies(t) {
                self.base_diag[t] * delta
            } else {
                self.base_diag[t]
            };
            self.gamma.diag[t / gs][(t % gs, t % gs)] = v;
        }
        self.delta = delta;
    }

    /// SHA-256 over the configuration and the numeric content of `(Γ, g)`.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.spec.mode.as_str().as_bytes());
        h.update(self.spec.a.to_le_bytes());
        h.update(self.spec.b.to_le_bytes());
        h.update((self.n as u64).to_le_bytes());
        for &j in &self.j_set {
            h.update((j as u64).to_le_bytes());
        }
        h.update(self.delta.to_le_bytes());
        h.update([self.transformed as u8]);
        self.gamma.hash_into(&mut h);
        for v in &self.g {
            h.update(v.to_le_bytes());
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn check_inputs(
    data: &Dataset,
    spec: &ModelSpec,
    weights: &WeightSpec,
    j_set: &[usize],
) -> Result<()> {
    let m = data.m();
    if j_set.is_empty() {
        return Err(Error::EmptyJ);
    }
    if let Some(&j) = j_set.iter().find(|&&j| j >= m) {
        return Err(Error::IndexOutOfRange { index: j, len: m });
    }
    weights.check(m)?;
    let report = validate_h_exponents(spec, weights, None);
    if !report.pass {
        return Err(Error::InvalidWeights(report.binding));
    }
    data.check(spec)
}

/// Per-sample powers shared by all `(j, d)` pairs.
struct Powers {
    a: f64,
    b: f64,
    /// `x^a` row-major `n × m`.
    xa: Vec<f64>,
}

impl Powers {
    fn new(data: &Dataset, spec: &ModelSpec) -> Self {
        let xa = data
            .rows()
            .flat_map(|x| x.iter().map(|&v| power(v, spec.a)))
            .collect();
        Self {
            a: spec.a,
            b: spec.b,
            xa,
        }
    }
}

/// Contribution of one free coordinate `j` for one removed coordinate `d`.
struct PairTerms {
    j: usize,
    diag_j: DMatrix<f64>,
    off_jd: DMatrix<f64>,
    g_j: Vec<f64>,
    g_d: Vec<f64>,
    h: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn pair_terms(
    data: &Dataset,
    pw: &Powers,
    weights: &WeightSpec,
    trunc: &[f64],
    has_eta: bool,
    u_d: &DMatrix<f64>,
    j: usize,
    d: usize,
) -> PairTerms {
    let (n, m) = (data.n(), data.m());
    let gs = m + has_eta as usize;
    let (a, b) = (pw.a, pw.b);
    let ca = exponent_coefficient(a);
    let mut u_j = DMatrix::zeros(n, gs);
    let mut w_j = DMatrix::zeros(n, gs);
    let mut h_col = vec![0.0; n];
    let mut g_j = vec![0.0; gs];
    let mut g_d = vec![0.0; gs];
    for (i, x) in data.rows().enumerate() {
        let (h, dh) = hphi_and_deriv(x, j, weights.alpha[j], trunc[j], d);
        if h == 0.0 && dh == 0.0 {
            continue;
        }
        let xa = &pw.xa[i * m..(i + 1) * m];
        let (xj, xd) = (x[j], x[d]);
        let xj_am1 = xj.powf(a - 1.0);
        let xd_am1 = xd.powf(a - 1.0);
        if h != 0.0 {
            h_col[i] = h;
            for k in 0..m {
                u_j[(i, k)] = xj_am1 * xa[k];
                w_j[(i, k)] = h * xj_am1 * xa[k];
            }
            if has_eta {
                let v = -xj.powf(b - 1.0);
                u_j[(i, m)] = v;
                w_j[(i, m)] = h * v;
            }
        }
        let cj = dh * xj_am1 + (a - 1.0) * h * xj.powf(a - 2.0);
        let cd = -dh * xd_am1 + (a - 1.0) * h * xd.powf(a - 2.0);
        for k in 0..m {
            g_j[k] += cj * xa[k];
            g_d[k] += cd * xa[k];
        }
        if h != 0.0 {
            let cross = ca * h * xj_am1 * xd_am1;
            g_j[j] += ca * h * xj.powf(2.0 * a - 2.0);
            g_j[d] -= cross;
            g_d[d] += ca * h * xd.powf(2.0 * a - 2.0);
            g_d[j] -= cross;
        }
        if has_eta {
            g_j[m] += -dh * xj.powf(b - 1.0) - (b - 1.0) * h * xj.powf(b - 2.0);
            g_d[m] += dh * xd.powf(b - 1.0) - (b - 1.0) * h * xd.powf(b - 2.0);
        }
    }
    let mut diag_j = u_j.tr_mul(&w_j);
    symmetrize(&mut diag_j);
    let off_jd = -w_j.tr_mul(u_d);
    PairTerms {
        j,
        diag_j,
        off_jd,
        g_j,
        g_d,
        h: h_col,
    }
}

fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for k in i + 1..n {
            let v = 0.5 * (a[(i, k)] + a[(k, i)]);
            a[(i, k)] = v;
            a[(k, i)] = v;
        }
    }
}

/// Loss for one removed coordinate, already divided by `n`.
fn assemble_removed(
    data: &Dataset,
    pw: &Powers,
    weights: &WeightSpec,
    has_eta: bool,
    d: usize,
) -> Result<(BlockGamma, Vec<f64>)> {
    let (n, m) = (data.n(), data.m());
    let gs = m + has_eta as usize;
    let trunc = weights.truncation_for(data, d)?;
    let a = pw.a;

    // rows of u_d: (x_d^{a−1} x^a, −x_d^{b−1}); zero where x_d = 0 since then
    // every weight vanishes
    let mut u_d = DMatrix::zeros(n, gs);
    for (i, x) in data.rows().enumerate() {
        let xd = x[d];
        if xd == 0.0 {
            continue;
        }
        let xd_am1 = xd.powf(a - 1.0);
        for k in 0..m {
            u_d[(i, k)] = xd_am1 * pw.xa[i * m + k];
        }
        if has_eta {
            u_d[(i, m)] = -xd.powf(pw.b - 1.0);
        }
    }

    let free: Vec<usize> = (0..m).filter(|&j| j != d).collect();
    let terms = map_ordered(&free, |&j| {
        pair_terms(data, pw, weights, &trunc, has_eta, &u_d, j, d)
    });

    let mut gamma = BlockGamma::zeros(m, gs);
    let mut g = vec![0.0; m * gs];
    let mut h_total = vec![0.0; n];
    for t in &terms {
        let j = t.j;
        gamma.diag[j] += &t.diag_j;
        gamma.add_off(j, d, &t.off_jd);
        for (o, v) in g[j * gs..(j + 1) * gs].iter_mut().zip(&t.g_j) {
            *o += v;
        }
        for (o, v) in g[d * gs..(d + 1) * gs].iter_mut().zip(&t.g_d) {
            *o += v;
        }
        for (o, v) in h_total.iter_mut().zip(&t.h) {
            *o += v;
        }
    }
    let mut weighted = u_d.clone();
    for (i, &h) in h_total.iter().enumerate() {
        weighted.row_mut(i).scale_mut(h);
    }
    let mut diag_d = u_d.tr_mul(&weighted);
    symmetrize(&mut diag_d);
    gamma.diag[d] += &diag_d;

    let inv_n = 1.0 / n as f64;
    gamma.scale(inv_n);
    for v in &mut g {
        *v *= inv_n;
    }
    Ok((gamma, g))
}

/// Assembles `(Γ, g)` averaged over the removed coordinates in `j_set`.
///
/// The multiplier is 1 and no reparameterization is applied. In centered mode
/// the `η` coordinates are absent.
pub fn assemble(
    data: &Dataset,
    spec: &ModelSpec,
    weights: &WeightSpec,
    j_set: &[usize],
) -> Result<QuadraticScoreLoss> {
    check_inputs(data, spec, weights, j_set)?;
    let m = data.m();
    let has_eta = spec.mode.has_eta();
    let gs = m + has_eta as usize;
    let pw = Powers::new(data, spec);

    let mut gamma = BlockGamma::zeros(m, gs);
    let mut g = vec![0.0; m * gs];
    for &d in j_set {
        let (gd, vd) = assemble_removed(data, &pw, weights, has_eta, d)?;
        gamma.add_assign(&gd);
        for (o, v) in g.iter_mut().zip(&vd) {
            *o += v;
        }
    }
    if j_set.len() > 1 {
        let inv = 1.0 / j_set.len() as f64;
        gamma.scale(inv);
        for v in &mut g {
            *v *= inv;
        }
    }
    gamma.finish();
    if !gamma.all_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(
            "loss has non-finite entries; weight exponents too small for zero entries".into(),
        ));
    }
    let base_diag = (0..gamma.dim()).map(|t| gamma.diag_entry(t)).collect();
    Ok(QuadraticScoreLoss {
        spec: *spec,
        weights: weights.clone(),
        j_set: j_set.to_vec(),
        m,
        n: data.n(),
        gamma,
        base_diag,
        g,
        delta: 1.0,
        transformed: false,
    })
}

/// `∂_j log p` and `∂_jj log p` of the profiled density with `d` removed.
/// Column convention: `K` enters through `κ_{,j}ᵀ x^a`.
fn log_density_derivatives(
    spec: &ModelSpec,
    params: &ParameterSet,
    x: &[f64],
    xa: &[f64],
    j: usize,
    d: usize,
) -> (f64, f64) {
    let (a, b) = (spec.a, spec.b);
    let ca = exponent_coefficient(a);
    let (xj, xd) = (x[j], x[d]);
    let col = |c: usize| -> f64 { params.k.column(c).iter().zip(xa).map(|(k, v)| k * v).sum() };
    let (kj, kd) = (col(j), col(d));
    let k = &params.k;
    let (eta_j, eta_d) = if spec.mode.has_eta() {
        (params.eta[j], params.eta[d])
    } else {
        (0.0, 0.0)
    };

    let first = -kj * xj.powf(a - 1.0) + kd * xd.powf(a - 1.0) + eta_j * xj.powf(b - 1.0)
        - eta_d * xd.powf(b - 1.0);
    let second = -(a - 1.0) * (kj * xj.powf(a - 2.0) + kd * xd.powf(a - 2.0))
        - ca * (k[(j, j)] * xj.powf(2.0 * a - 2.0) + k[(d, d)] * xd.powf(2.0 * a - 2.0)
            - (k[(d, j)] + k[(j, d)]) * xj.powf(a - 1.0) * xd.powf(a - 1.0))
        + (b - 1.0) * (eta_j * xj.powf(b - 2.0) + eta_d * xd.powf(b - 2.0));
    (first, second)
}

/// Evaluates the empirical score-matching loss at `params` term by term,
/// without forming `Γ`. Differs from `½θᵀΓθ − gᵀθ` by a constant in `θ`.
pub fn empirical_loss_direct(
    data: &Dataset,
    spec: &ModelSpec,
    weights: &WeightSpec,
    params: &ParameterSet,
    j_set: &[usize],
) -> Result<f64> {
    check_inputs(data, spec, weights, j_set)?;
    let m = data.m();
    if params.m() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: params.m(),
        });
    }
    let mut total = 0.0;
    for &d in j_set {
        let trunc = weights.truncation_for(data, d)?;
        let mut sum = 0.0;
        for x in data.rows() {
            let xa: Vec<f64> = x.iter().map(|&v| power(v, spec.a)).collect();
            for j in (0..m).filter(|&j| j != d) {
                let (h, dh) = hphi_and_deriv(x, j, weights.alpha[j], trunc[j], d);
                if h == 0.0 && dh == 0.0 {
                    continue;
                }
                let (d1, d2) = log_density_derivatives(spec, params, x, &xa, j, d);
                sum += 0.5 * h * d1 * d1 + dh * d1 + h * d2;
            }
        }
        total += sum / data.n() as f64;
    }
    Ok(total / j_set.len() as f64)
}

/// Scales the diagonal of `Γ` by `delta` (relative to the undamped loss).
/// After the `K 1 = 0` transform only the `K` block is scaled.
pub fn apply_diagonal_multiplier(
    loss: &QuadraticScoreLoss,
    delta: f64,
) -> Result<QuadraticScoreLoss> {
    if !(delta >= 1.0) || !delta.is_finite() {
        return Err(Error::DeltaBelowOne(delta));
    }
    let mut out = loss.clone();
    out.set_delta(delta);
    Ok(out)
}

/// `1 + √((τ ln m + ln 4) / (2n))`.
pub fn diagonal_multiplier_bound(n: usize, m: usize, tau: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::NonpositiveN);
    }
    let num = tau * (m as f64).ln() + 4f64.ln();
    Ok(1.0 + (num / (2.0 * n as f64)).sqrt())
}

/// `(m−1) × m` matrix whose rows are `e_k − e_j` for `k ≠ j` in increasing
/// order (0-based `j`).
pub fn build_c_matrix(j: usize, m: usize) -> Result<DMatrix<f64>> {
    if j >= m {
        return Err(Error::IndexOutOfRange { index: j, len: m });
    }
    let mut c = DMatrix::zeros(m - 1, m);
    for r in 0..m - 1 {
        let k = if r < j { r } else { r + 1 };
        c[(r, k)] = 1.0;
        c[(r, j)] = -1.0;
    }
    Ok(c)
}

/// Rewrites the loss over `(K_off, η)` by substituting
/// `κ_{c,c} = −Σ_{k≠c} κ_{k,c}`.
pub fn transform_am1(loss: &QuadraticScoreLoss) -> Result<QuadraticScoreLoss> {
    if loss.spec.mode != Mode::Am1 || loss.transformed {
        return Err(Error::WrongMode {
            expected: "am1 (untransformed)".into(),
            got: if loss.transformed {
                "am1 (transformed)".into()
            } else {
                loss.spec.mode.to_string()
            },
        });
    }
    let m = loss.m;
    let gs = loss.gamma.group_size();
    // undo any multiplier, transform, then reapply on the K block
    let base = if loss.delta != 1.0 {
        apply_diagonal_multiplier(loss, 1.0)?
    } else {
        loss.clone()
    };
    let ts: Vec<DMatrix<f64>> = (0..m)
        .map(|c| {
            let cm = build_c_matrix(c, m)?;
            let mut t = DMatrix::zeros(m, gs);
            t.view_mut((0, 0), (m - 1, m)).copy_from(&cm);
            t[(m - 1, m)] = 1.0;
            Ok(t)
        })
        .collect::<Result<_>>()?;

    let mut gamma = BlockGamma::zeros(m, m);
    for (c, t) in ts.iter().enumerate() {
        let mut d = t * base.gamma.diag_block(c) * t.transpose();
        symmetrize(&mut d);
        gamma.diag[c] = d;
    }
    for (&(p, q), b) in &base.gamma.off {
        *gamma.off_mut(p, q) = &ts[p] * b * ts[q].transpose();
    }
    gamma.finish();
    let mut g = Vec::with_capacity(m * m);
    for (c, t) in ts.iter().enumerate() {
        let gc = DVector::from_column_slice(&base.g[c * gs..(c + 1) * gs]);
        g.extend((t * gc).iter());
    }
    let base_diag = (0..gamma.dim()).map(|t| gamma.diag_entry(t)).collect();
    let mut out = QuadraticScoreLoss {
        gamma,
        base_diag,
        g,
        delta: 1.0,
        transformed: true,
        ..base
    };
    if loss.delta != 1.0 {
        out.set_delta(loss.delta);
    }
    Ok(out)
}

/// Choice of the diagonal multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum DeltaPolicy {
    Fixed(f64),
    /// [`diagonal_multiplier_bound`] at the data's `(n, m)` and this `τ`.
    Bound(f64),
}

impl DeltaPolicy {
    pub fn resolve(&self, n: usize, m: usize) -> Result<f64> {
        match *self {
            DeltaPolicy::Fixed(d) => Ok(d),
            DeltaPolicy::Bound(tau) => diagonal_multiplier_bound(n, m, tau),
        }
    }
}

/// Everything needed to turn a dataset into a ready-to-solve loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub spec: ModelSpec,
    pub weights: WeightSpec,
    pub removed: Vec<usize>,
    pub delta: DeltaPolicy,
}

impl LossConfig {
    /// Assembles, applies the `K 1 = 0` transform in am1 mode, then the
    /// multiplier.
    pub fn build(&self, data: &Dataset) -> Result<QuadraticScoreLoss> {
        let mut loss = assemble(data, &self.spec, &self.weights, &self.removed)?;
        if self.spec.mode == Mode::Am1 {
            loss = transform_am1(&loss)?;
        }
        let delta = self.delta.resolve(data.n(), data.m())?;
        apply_diagonal_multiplier(&loss, delta)
    }

    /// Same as [`build`](Self::build) with no multiplier.
    pub fn build_undamped(&self, data: &Dataset) -> Result<QuadraticScoreLoss> {
        let mut loss = assemble(data, &self.spec, &self.weights, &self.removed)?;
        if self.spec.mode == Mode::Am1 {
            loss = transform_am1(&loss)?;
        }
        Ok(loss)
    }
}

/// `count` distinct coordinates out of `m`, drawn with `seed`, sorted.
pub fn sample_removed(m: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count == 0 {
        return Err(Error::EmptyJ);
    }
    if count > m {
        return Err(Error::InvalidOptions(format!(
            "cannot remove {count} of {m} coordinates"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = index::sample(&mut rng, m, count).into_vec();
    out.sort_unstable();
    Ok(out)
}
