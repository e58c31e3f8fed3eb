//! Conditional moments of the LHC diffusion.
//!
//! The generator
//!
//! ```text
//! G f(y,x) = (-γ'x) ∂f/∂y + Σ_i (b_i y + (βx)_i) ∂f/∂x_i
//!            + ½ Σ_i σ_i² x_i (y - x_i) ∂²f/∂x_i²
//! ```
//!
//! maps polynomials of total degree d to polynomials of total degree d, so
//! on the monomial basis of `Pol_n(E)` it has a sparse matrix
//! representation `G_n` and conditional moments follow from
//! `E[p(Y_{t+h}, X_{t+h}) | F_t] = H_n(Y_t, X_t)' e^{G_n h} p⃗`.
//!
//! The basis is the monomial one in graded-lexicographic order
//! `1, y, x_1, …, x_m, y², y x_1, x_1², …`; exponentials of `G_n` are
//! applied as actions (scaled truncated Taylor series), never formed in
//! full.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use twofloat::TwoFloat;

use crate::error::{Error, Result};
use crate::model::{LhcParams, State};

/// Default cap on the basis degree.
pub const DEFAULT_DEGREE_LIMIT: usize = 50;

/// Exponent multi-index `(α_0, α_1, …, α_m)` for the monomial
/// `y^{α_0} x_1^{α_1} ⋯ x_m^{α_m}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BasisIndex {
    pub exponents: Vec<u32>,
}

impl BasisIndex {
    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }

    pub fn eval(&self, y: f64, x: &DVector<f64>) -> f64 {
        let mut v = y.powi(self.exponents[0] as i32);
        for (i, e) in self.exponents.iter().enumerate().skip(1) {
            if *e > 0 {
                v *= x[i - 1].powi(*e as i32);
            }
        }
        v
    }
}

/// Number of monomials in `1 + m` variables of total degree ≤ n.
pub fn basis_dimension(m: usize, n: usize) -> usize {
    // C(n + 1 + m, n)
    let vars = m + 1;
    let mut acc: u128 = 1;
    for k in 1..=vars {
        acc = acc * (n + k) as u128 / k as u128;
    }
    acc as usize
}

/// Monomial exponents of total degree ≤ n in graded-lexicographic order:
/// ascending total degree, lexicographically descending within a degree
/// block (so `y^d` leads each block).
pub fn enumerate_basis(m: usize, n: usize) -> Vec<BasisIndex> {
    let mut list = Vec::with_capacity(basis_dimension(m, n));
    for d in 0..=n as u32 {
        let mut current = vec![0u32; m + 1];
        gen_block(&mut list, &mut current, 0, d);
    }
    list
}

fn gen_block(out: &mut Vec<BasisIndex>, current: &mut Vec<u32>, pos: usize, remaining: u32) {
    if pos == current.len() - 1 {
        current[pos] = remaining;
        out.push(BasisIndex {
            exponents: current.clone(),
        });
        return;
    }
    for e in (0..=remaining).rev() {
        current[pos] = e;
        gen_block(out, current, pos + 1, remaining - e);
        current[pos] = 0;
    }
}

/// Monomial basis with position lookup.
#[derive(Debug, Clone)]
pub struct Basis {
    pub m: usize,
    pub degree: usize,
    pub list: Vec<BasisIndex>,
    position: HashMap<Vec<u32>, usize>,
}

impl Basis {
    pub fn new(m: usize, degree: usize) -> Self {
        let list = enumerate_basis(m, degree);
        let position = list
            .iter()
            .enumerate()
            .map(|(i, b)| (b.exponents.clone(), i))
            .collect();
        Basis {
            m,
            degree,
            list,
            position,
        }
    }

    pub fn len(&self) -> usize {
        self.list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.list.is_empty()
    }

    pub fn position(&self, exponents: &[u32]) -> Option<usize> {
        self.position.get(exponents).copied()
    }

    /// Evaluate the full basis vector `H(y, x)`.
    pub fn eval(&self, state: &State) -> DVector<f64> {
        DVector::from_iterator(
            self.list.len(),
            self.list.iter().map(|b| b.eval(state.y, &state.x)),
        )
    }
}

/// A polynomial as a sparse list of monomial terms.
#[derive(Debug, Clone, Default)]
pub struct Poly {
    pub terms: Vec<(Vec<u32>, f64)>,
}

impl Poly {
    pub fn constant(m: usize, value: f64) -> Self {
        Poly {
            terms: vec![(vec![0; m + 1], value)],
        }
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|(e, _)| e.iter().sum())
            .max()
            .unwrap_or(0)
    }

    /// Dense coefficient vector over `basis`.
    pub fn to_coeffs(&self, basis: &Basis) -> Result<Vec<f64>> {
        let mut v = vec![0.0; basis.len()];
        for (e, c) in &self.terms {
            let pos = basis.position(e).ok_or_else(|| {
                Error::Capacity(format!(
                    "monomial {e:?} exceeds basis degree {}",
                    basis.degree
                ))
            })?;
            v[pos] += c;
        }
        Ok(v)
    }
}

/// Multiply a coefficient vector by the affine form
/// `lin_const + lin[0]·y + lin[1]·x_1 + … + lin[m]·x_m`, staying inside the
/// same basis. Errors when the product exceeds the basis degree.
pub fn mul_affine(
    basis: &Basis,
    coeffs: &[f64],
    lin_const: f64,
    lin: &[f64],
) -> Result<Vec<f64>> {
    if lin.len() != basis.m + 1 {
        return Err(Error::invalid("affine form has wrong arity"));
    }
    let mut out = vec![0.0; basis.len()];
    let mut shifted = Vec::with_capacity(basis.m + 1);
    for (pos, c) in coeffs.iter().enumerate() {
        if *c == 0.0 {
            continue;
        }
        if lin_const != 0.0 {
            out[pos] += c * lin_const;
        }
        for (var, lv) in lin.iter().enumerate() {
            if *lv == 0.0 {
                continue;
            }
            shifted.clear();
            shifted.extend_from_slice(&basis.list[pos].exponents);
            shifted[var] += 1;
            let target = basis.position(&shifted).ok_or_else(|| {
                Error::Capacity(format!(
                    "product degree exceeds basis degree {}",
                    basis.degree
                ))
            })?;
            out[target] += c * lv;
        }
    }
    Ok(out)
}

/// Double-double division by an f64, by iterative refinement of the f64
/// quotient; the crate's own `Div` only carries f64 accuracy, which is not
/// enough for the cancellation-heavy contractions downstream.
pub(crate) fn dd_div(a: TwoFloat, d: f64) -> TwoFloat {
    let q1 = a.hi() / d;
    let r1 = a - TwoFloat::from(q1) * d;
    let q2 = f64::from(r1) / d;
    let r2 = r1 - TwoFloat::from(q2) * d;
    let q3 = f64::from(r2) / d;
    TwoFloat::from(q1) + TwoFloat::from(q2) + TwoFloat::from(q3)
}

/// Double-double integer power by repeated multiplication; also avoids the
/// crate's `powi(0)` returning NaN at a zero base.
pub(crate) fn dd_powi(base: TwoFloat, e: u32) -> TwoFloat {
    let mut acc = TwoFloat::from(1.0);
    for _ in 0..e {
        acc *= base;
    }
    acc
}

/// Double-double variant of [`mul_affine`] for the extended-precision
/// moment pipeline.
pub fn mul_affine_extended(
    basis: &Basis,
    coeffs: &[TwoFloat],
    lin_const: f64,
    lin: &[f64],
) -> Result<Vec<TwoFloat>> {
    if lin.len() != basis.m + 1 {
        return Err(Error::invalid("affine form has wrong arity"));
    }
    let zero = TwoFloat::from(0.0);
    let mut out = vec![zero; basis.len()];
    let mut shifted = Vec::with_capacity(basis.m + 1);
    for (pos, c) in coeffs.iter().enumerate() {
        if f64::from(*c) == 0.0 && c.lo() == 0.0 {
            continue;
        }
        if lin_const != 0.0 {
            out[pos] += *c * lin_const;
        }
        for (var, lv) in lin.iter().enumerate() {
            if *lv == 0.0 {
                continue;
            }
            shifted.clear();
            shifted.extend_from_slice(&basis.list[pos].exponents);
            shifted[var] += 1;
            let target = basis.position(&shifted).ok_or_else(|| {
                Error::Capacity(format!(
                    "product degree exceeds basis degree {}",
                    basis.degree
                ))
            })?;
            out[target] += *c * *lv;
        }
    }
    Ok(out)
}

/// Sparse matrix representation of the generator on the monomial basis,
/// stored by columns: column `π(α)` holds the coordinates of `G h_α`.
pub struct MomentOperator {
    pub basis: Basis,
    cols: Vec<Vec<(usize, f64)>>,
    norm_1: f64,
}

impl MomentOperator {
    pub fn new(p: &LhcParams, degree: usize) -> Result<Self> {
        Self::with_limit(p, degree, DEFAULT_DEGREE_LIMIT)
    }

    pub fn with_limit(p: &LhcParams, degree: usize, limit: usize) -> Result<Self> {
        if degree > limit {
            return Err(Error::Capacity(format!(
                "basis degree {degree} exceeds the configured limit {limit}"
            )));
        }
        let basis = Basis::new(p.m, degree);
        let m = p.m;
        let mut cols = Vec::with_capacity(basis.len());
        let mut entries: HashMap<usize, f64> = HashMap::new();
        let mut shifted = vec![0u32; m + 1];
        for alpha in &basis.list {
            entries.clear();
            let e = &alpha.exponents;
            let a0 = e[0];
            // (-γ'x) ∂/∂y : degree-preserving, y-power drops by one
            if a0 >= 1 {
                for j in 0..m {
                    if p.gamma[j] != 0.0 {
                        shifted.copy_from_slice(e);
                        shifted[0] -= 1;
                        shifted[1 + j] += 1;
                        let pos = basis.position(&shifted).expect("degree preserved");
                        *entries.entry(pos).or_insert(0.0) += -(a0 as f64) * p.gamma[j];
                    }
                }
            }
            for i in 0..m {
                let ai = e[1 + i];
                if ai >= 1 {
                    let aif = ai as f64;
                    // b_i y ∂/∂x_i
                    if p.b[i] != 0.0 {
                        shifted.copy_from_slice(e);
                        shifted[1 + i] -= 1;
                        shifted[0] += 1;
                        let pos = basis.position(&shifted).expect("degree preserved");
                        *entries.entry(pos).or_insert(0.0) += aif * p.b[i];
                    }
                    // (βx)_i ∂/∂x_i
                    for j in 0..m {
                        if p.beta[(i, j)] != 0.0 {
                            shifted.copy_from_slice(e);
                            shifted[1 + i] -= 1;
                            shifted[1 + j] += 1;
                            let pos = basis.position(&shifted).expect("degree preserved");
                            *entries.entry(pos).or_insert(0.0) += aif * p.beta[(i, j)];
                        }
                    }
                }
                // ½ σ_i² x_i (y − x_i) ∂²/∂x_i²
                if ai >= 2 && p.sigma[i] != 0.0 {
                    let q = 0.5 * p.sigma[i] * p.sigma[i] * (ai * (ai - 1)) as f64;
                    shifted.copy_from_slice(e);
                    shifted[1 + i] -= 1;
                    shifted[0] += 1;
                    let pos = basis.position(&shifted).expect("degree preserved");
                    *entries.entry(pos).or_insert(0.0) += q;
                    let pos_same = basis.position(e).expect("self");
                    *entries.entry(pos_same).or_insert(0.0) += -q;
                }
            }
            let mut col: Vec<(usize, f64)> = entries
                .iter()
                .filter(|(_, v)| **v != 0.0)
                .map(|(k, v)| (*k, *v))
                .collect();
            col.sort_unstable_by_key(|(k, _)| *k);
            cols.push(col);
        }
        let norm_1 = cols
            .iter()
            .map(|c| c.iter().map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        Ok(MomentOperator {
            basis,
            cols,
            norm_1,
        })
    }

    pub fn degree(&self) -> usize {
        self.basis.degree
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// `G v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (j, col) in self.cols.iter().enumerate() {
            let vj = v[j];
            if vj != 0.0 {
                for (i, g) in col {
                    out[*i] += g * vj;
                }
            }
        }
        out
    }

    /// `G' v`.
    pub fn apply_transpose(&self, v: &[f64]) -> Vec<f64> {
        self.cols
            .iter()
            .map(|col| col.iter().map(|(i, g)| g * v[*i]).sum())
            .collect()
    }

    /// Dense `G_n`, for inspection and cross-checks on small bases.
    pub fn g_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut g = DMatrix::zeros(n, n);
        for (j, col) in self.cols.iter().enumerate() {
            for (i, v) in col {
                g[(*i, j)] = *v;
            }
        }
        g
    }

    fn exp_action_generic<F>(&self, h: f64, v: &[f64], matvec: F) -> Result<Vec<f64>>
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        if v.len() != self.dim() {
            return Err(Error::invalid(format!(
                "coefficient vector length {} does not match basis dimension {}",
                v.len(),
                self.dim()
            )));
        }
        if !(h.is_finite() && h >= 0.0) {
            return Err(Error::invalid(format!("horizon {h} must be ≥ 0")));
        }
        if h == 0.0 {
            return Ok(v.to_vec());
        }
        let steps = ((self.norm_1 * h).ceil() as usize).max(1);
        let dt = h / steps as f64;
        let mut w = v.to_vec();
        for _ in 0..steps {
            let mut term = w.clone();
            let mut acc = w.clone();
            for k in 1..=60usize {
                term = matvec(&term);
                let scale = dt / k as f64;
                let mut tmax: f64 = 0.0;
                let mut amax: f64 = 0.0;
                for (t, a) in term.iter_mut().zip(acc.iter_mut()) {
                    *t *= scale;
                    *a += *t;
                    tmax = tmax.max(t.abs());
                    amax = amax.max(a.abs());
                }
                if tmax <= 1e-18 * amax.max(f64::MIN_POSITIVE) {
                    break;
                }
            }
            w = acc;
        }
        Ok(w)
    }

    /// `e^{G h} p⃗`: the coefficient vector of the moment polynomial
    /// `(y, x) ↦ E[p(Y_{t+h}, X_{t+h}) | (Y_t, X_t) = (y, x)]`.
    pub fn propagate_coeffs(&self, h: f64, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.exp_action_generic(h, coeffs, |v| self.apply(v))
    }

    /// All basis moments `E[h_α(Y_{t+h}, X_{t+h}) | state]` at once, via the
    /// transpose action on the evaluated basis vector.
    pub fn basis_moments(&self, state: &State, h: f64) -> Result<DVector<f64>> {
        if state.x.len() != self.basis.m {
            return Err(Error::invalid("state dimension mismatch"));
        }
        let hvec = self.basis.eval(state);
        let out = self.exp_action_generic(h, hvec.as_slice(), |v| self.apply_transpose(v))?;
        Ok(DVector::from_vec(out))
    }

    /// Basis moments carried in double-double arithmetic. High-order
    /// orthogonal-polynomial functionals of the factors contract these
    /// moments against coefficient vectors with enormous cancellation, so
    /// the extra digits here decide whether orders beyond ~25 are usable.
    pub fn basis_moments_extended(&self, state: &State, h: f64) -> Result<Vec<TwoFloat>> {
        if state.x.len() != self.basis.m {
            return Err(Error::invalid("state dimension mismatch"));
        }
        if !(h.is_finite() && h >= 0.0) {
            return Err(Error::invalid(format!("horizon {h} must be ≥ 0")));
        }
        // evaluate the monomials in double-double: per-entry f64 rounding
        // of the powers is incoherent noise that the huge-coefficient
        // contractions downstream amplify catastrophically
        let y = TwoFloat::from(state.y);
        let xs: Vec<TwoFloat> = state.x.iter().map(|v| TwoFloat::from(*v)).collect();
        let mut w: Vec<TwoFloat> = self
            .basis
            .list
            .iter()
            .map(|b| {
                let mut v = dd_powi(y, b.exponents[0]);
                for (i, e) in b.exponents.iter().enumerate().skip(1) {
                    if *e > 0 {
                        v *= dd_powi(xs[i - 1], *e);
                    }
                }
                v
            })
            .collect();
        if h == 0.0 {
            return Ok(w);
        }
        let steps = ((self.norm_1 * h).ceil() as usize).max(1);
        // the step size must itself carry double-double precision: an f64
        // step composed `steps` times lands ~1e-16 off the horizon, which
        // is far above the cancellation floor of the callers
        let dt = dd_div(TwoFloat::from(h), steps as f64);
        let zero = TwoFloat::from(0.0);
        for _ in 0..steps {
            let mut term = w.clone();
            let mut acc = w.clone();
            for k in 1..=70usize {
                // term ← G' term · dt / k
                let scale = dd_div(dt, k as f64);
                let mut next = vec![zero; term.len()];
                for (i, col) in self.cols.iter().enumerate() {
                    let mut s = zero;
                    for (row, val) in col {
                        s += term[*row] * *val;
                    }
                    next[i] = s * scale;
                }
                term = next;
                let mut tmax = 0.0f64;
                let mut amax = 0.0f64;
                for (t, a) in term.iter().zip(acc.iter_mut()) {
                    *a += *t;
                    tmax = tmax.max(f64::from(*t).abs());
                    amax = amax.max(f64::from(*a).abs());
                }
                if tmax <= 1e-34 * amax.max(f64::MIN_POSITIVE) {
                    break;
                }
            }
            w = acc;
        }
        Ok(w)
    }

    /// Conditional moment `E[p(Y_{t+h}, X_{t+h}) | state]` for a target
    /// polynomial given by its coefficient vector (length ≤ basis
    /// dimension).
    pub fn moment(&self, state: &State, target: &[f64], h: f64) -> Result<f64> {
        if target.len() > self.dim() {
            return Err(Error::invalid(
                "target polynomial exceeds the operator degree",
            ));
        }
        let mut coeffs = target.to_vec();
        coeffs.resize(self.dim(), 0.0);
        let propagated = self.propagate_coeffs(h, &coeffs)?;
        let hvec = self.basis.eval(state);
        Ok(hvec
            .iter()
            .zip(&propagated)
            .map(|(hv, c)| hv * c)
            .sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linmat;
    use approx::assert_relative_eq;

    fn reference_params() -> LhcParams {
        LhcParams::one_factor_from_roots(0.25, 0.05, 1.0, 0.75).unwrap()
    }

    #[test]
    fn basis_enumeration_small() {
        let b1 = enumerate_basis(1, 1);
        let exps: Vec<Vec<u32>> = b1.iter().map(|b| b.exponents.clone()).collect();
        assert_eq!(exps, vec![vec![0, 0], vec![1, 0], vec![0, 1]]);
        let b2 = enumerate_basis(1, 2);
        let exps: Vec<Vec<u32>> = b2.iter().map(|b| b.exponents.clone()).collect();
        assert_eq!(
            exps,
            vec![
                vec![0, 0],
                vec![1, 0],
                vec![0, 1],
                vec![2, 0],
                vec![1, 1],
                vec![0, 2]
            ]
        );
    }

    #[test]
    fn basis_dimension_large() {
        assert_eq!(basis_dimension(3, 20), 10626);
        assert_eq!(enumerate_basis(3, 6).len(), basis_dimension(3, 6));
        assert_eq!(basis_dimension(3, 50), 316251);
    }

    #[test]
    fn degree_limit_capacity() {
        let p = reference_params();
        assert!(matches!(
            MomentOperator::new(&p, 51),
            Err(Error::Capacity(_))
        ));
        assert!(MomentOperator::with_limit(&p, 51, 60).is_ok());
    }

    #[test]
    fn generator_on_reference_monomials() {
        let p = reference_params();
        let op = MomentOperator::new(&p, 2).unwrap();
        // G x² = (2b + σ²) yx + (2β − σ²) x²
        let x2 = op.basis.position(&[0, 2]).unwrap();
        let mut target = vec![0.0; op.dim()];
        target[x2] = 1.0;
        let g = op.apply(&target);
        let yx = op.basis.position(&[1, 1]).unwrap();
        assert_relative_eq!(g[yx], 0.9625, epsilon = 1e-15);
        assert_relative_eq!(g[x2], -2.6625, epsilon = 1e-15);
        assert_eq!(g.iter().filter(|v| **v != 0.0).count(), 2);

        // G kills constants
        let mut one = vec![0.0; op.dim()];
        one[op.basis.position(&[0, 0]).unwrap()] = 1.0;
        assert!(op.apply(&one).iter().all(|v| *v == 0.0));

        // G y = -γ x
        let mut ytgt = vec![0.0; op.dim()];
        ytgt[op.basis.position(&[1, 0]).unwrap()] = 1.0;
        let gy = op.apply(&ytgt);
        let xpos = op.basis.position(&[0, 1]).unwrap();
        assert_relative_eq!(gy[xpos], -0.25, epsilon = 1e-15);
        assert_eq!(gy.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn constant_moment_is_exactly_one() {
        let p = reference_params();
        let op = MomentOperator::new(&p, 4).unwrap();
        let state = State::new(1.0, DVector::from_vec(vec![0.2])).unwrap();
        let one = Poly::constant(1, 1.0).to_coeffs(&op.basis).unwrap();
        for h in [0.0, 0.3, 1.0, 5.0] {
            assert_eq!(op.moment(&state, &one, h).unwrap(), 1.0);
        }
    }

    #[test]
    fn degree_one_targets_match_drift_action() {
        let p = reference_params();
        let op = MomentOperator::new(&p, 3).unwrap();
        let model = p.to_linear_model();
        let state = State::new(1.0, DVector::from_vec(vec![0.2])).unwrap();
        let a = model.drift_matrix(0.0);
        for h in [0.1, 1.0, 4.0] {
            let lin = linmat::expm_action(&a, h, &state.stack()).unwrap();
            let ey = op
                .moment(
                    &state,
                    &Poly {
                        terms: vec![(vec![1, 0], 1.0)],
                    }
                    .to_coeffs(&op.basis)
                    .unwrap(),
                    h,
                )
                .unwrap();
            let ex = op
                .moment(
                    &state,
                    &Poly {
                        terms: vec![(vec![0, 1], 1.0)],
                    }
                    .to_coeffs(&op.basis)
                    .unwrap(),
                    h,
                )
                .unwrap();
            assert_relative_eq!(ey, lin[0], epsilon = 1e-12);
            assert_relative_eq!(ex, lin[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn operator_degrees_agree_on_low_degree_targets() {
        let p = reference_params();
        let op4 = MomentOperator::new(&p, 4).unwrap();
        let op6 = MomentOperator::new(&p, 6).unwrap();
        let state = State::new(0.9, DVector::from_vec(vec![0.3])).unwrap();
        let target = Poly {
            terms: vec![(vec![2, 1], 0.7), (vec![0, 2], -0.4), (vec![1, 0], 1.1)],
        };
        let m4 = op4
            .moment(&state, &target.to_coeffs(&op4.basis).unwrap(), 1.5)
            .unwrap();
        let m6 = op6
            .moment(&state, &target.to_coeffs(&op6.basis).unwrap(), 1.5)
            .unwrap();
        assert_relative_eq!(m4, m6, epsilon = 1e-10);
    }

    #[test]
    fn tower_property() {
        let p = reference_params();
        let op = MomentOperator::new(&p, 5).unwrap();
        let state = State::new(1.0, DVector::from_vec(vec![0.2])).unwrap();
        let target = Poly {
            terms: vec![(vec![0, 3], 1.0), (vec![2, 0], 0.5)],
        }
        .to_coeffs(&op.basis)
        .unwrap();
        let (h1, h2) = (0.7, 1.4);
        let direct = op.moment(&state, &target, h1 + h2).unwrap();
        let mid = op.propagate_coeffs(h2, &target).unwrap();
        let nested = op.moment(&state, &mid, h1).unwrap();
        assert_relative_eq!(direct, nested, epsilon = 1e-10);
    }

    #[test]
    fn monomial_moments_stay_in_unit_interval() {
        let p = reference_params();
        let op = MomentOperator::new(&p, 6).unwrap();
        for (y, x) in [(1.0, 0.2), (0.6, 0.55), (0.3, 0.0)] {
            let state = State::new(y, DVector::from_vec(vec![x])).unwrap();
            let moments = op.basis_moments(&state, 2.0).unwrap();
            for (b, m) in op.basis.list.iter().zip(moments.iter()) {
                assert!(
                    (-1e-12..=1.0 + 1e-12).contains(m),
                    "E[{:?}] = {m} out of [0,1]",
                    b.exponents
                );
            }
        }
    }

    #[test]
    fn basis_moments_match_single_target_route() {
        let p = reference_params();
        let op = MomentOperator::new(&p, 4).unwrap();
        let state = State::new(0.8, DVector::from_vec(vec![0.25])).unwrap();
        let all = op.basis_moments(&state, 0.9).unwrap();
        for pos in [0usize, 2, 5, 9] {
            let mut tgt = vec![0.0; op.dim()];
            tgt[pos] = 1.0;
            let single = op.moment(&state, &tgt, 0.9).unwrap();
            assert_relative_eq!(all[pos], single, epsilon = 1e-12);
        }
    }

    #[test]
    fn mul_affine_degree_guard() {
        let p = reference_params();
        let op = MomentOperator::new(&p, 2).unwrap();
        let x2 = Poly {
            terms: vec![(vec![0, 2], 1.0)],
        }
        .to_coeffs(&op.basis)
        .unwrap();
        assert!(matches!(
            mul_affine(&op.basis, &x2, 0.0, &[0.0, 1.0]),
            Err(Error::Capacity(_))
        ));
        let y = Poly {
            terms: vec![(vec![1, 0], 2.0)],
        }
        .to_coeffs(&op.basis)
        .unwrap();
        let prod = mul_affine(&op.basis, &y, 0.5, &[0.0, 3.0]).unwrap();
        // 2y (0.5 + 3x) = y + 6xy
        assert_relative_eq!(prod[op.basis.position(&[1, 0]).unwrap()], 1.0);
        assert_relative_eq!(prod[op.basis.position(&[1, 1]).unwrap()], 6.0);
    }
}
