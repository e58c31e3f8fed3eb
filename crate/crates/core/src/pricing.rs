//! Closed-form single-name prices.
//!
//! Every pre-default price is linear-rational: a ψ-vector in `R^{n+m}`
//! against the stacked factor `(Y, X)`, normalized by the survival value
//! `a'Y`. The three building blocks are
//!
//! ```text
//! ψ_Z(t,tM)  = e^{-r(tM-t)} (a', 0) e^{A(tM-t)}              zero-recovery bond
//! ψ_D(t,tM)  = -a'(c γ) ∫_0^{tM-t} e^{A*s} ds                 pays 1 at default
//! ψ_D*(t,tM) = -a'(c γ) ∫_t^{tM} s e^{A*(s-t)} ds             pays τ at default
//! ```
//!
//! with `A* = A − r·Id`. CDS legs are linear combinations of these across
//! the premium schedule.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linmat;
use crate::model::{LhcParams, LinearModel, State};
use crate::moments::{mul_affine, MomentOperator, Poly};
use crate::quad::gauss_legendre_on;

/// A ψ-vector with its valuation time and horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct PricingVector {
    pub psi: DVector<f64>,
    pub t: f64,
    pub maturity: f64,
}

impl PricingVector {
    /// Pre-default price at the stacked state `(Y, X)`:
    /// `ψ'(Y,X) / a'Y`.
    pub fn price(&self, model: &LinearModel, yx: &DVector<f64>) -> Result<f64> {
        let s = survival_value(model, yx)?;
        Ok(self.psi.dot(yx) / s)
    }
}

/// `a'Y` at a stacked state.
pub fn survival_value(model: &LinearModel, yx: &DVector<f64>) -> Result<f64> {
    if yx.len() != model.dim() {
        return Err(Error::invalid("stacked state dimension mismatch"));
    }
    let s: f64 = (0..model.n).map(|i| model.a[i] * yx[i]).sum();
    if s <= 0.0 {
        return Err(Error::Domain(format!("survival value a'Y = {s} must be positive")));
    }
    Ok(s)
}

/// Discrete premium schedule `t0 < t1 < … < tM` in year fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct TenorGrid {
    pub t0: f64,
    pub payments: Vec<f64>,
}

impl TenorGrid {
    pub fn new(t0: f64, payments: Vec<f64>) -> Result<Self> {
        if payments.is_empty() {
            return Err(Error::invalid("tenor grid needs at least one payment"));
        }
        let mut prev = t0;
        for p in &payments {
            if !(p.is_finite() && *p > prev) {
                return Err(Error::invalid("payment dates must be strictly increasing after t0"));
            }
            prev = *p;
        }
        Ok(TenorGrid { t0, payments })
    }

    /// Regular schedule with `freq` payments per year from `t0` to `t_m`,
    /// with a final stub when the span is not a whole number of periods.
    pub fn with_frequency(t0: f64, t_m: f64, freq: u32) -> Result<Self> {
        if freq == 0 || !(t_m > t0) {
            return Err(Error::invalid("need freq ≥ 1 and t_m > t0"));
        }
        let step = 1.0 / freq as f64;
        let span = t_m - t0;
        let whole = (span / step).round();
        let mut payments = Vec::new();
        if (whole * step - span).abs() < 1e-9 && whole >= 1.0 {
            for j in 1..=whole as usize {
                payments.push(t0 + j as f64 * step);
            }
            // land exactly on t_m
            *payments.last_mut().unwrap() = t_m;
        } else {
            let full = (span / step).floor() as usize;
            for j in 1..=full {
                payments.push(t0 + j as f64 * step);
            }
            payments.push(t_m);
        }
        TenorGrid::new(t0, payments)
    }

    pub fn maturity(&self) -> f64 {
        *self.payments.last().unwrap()
    }

    /// Accrual factors `t_j − t_{j−1}`.
    pub fn accruals(&self) -> Vec<f64> {
        let mut prev = self.t0;
        self.payments
            .iter()
            .map(|p| {
                let d = p - prev;
                prev = *p;
                d
            })
            .collect()
    }
}

/// Protection and premium ψ-vectors of a CDS contract.
#[derive(Debug, Clone)]
pub struct CdsLegs {
    pub psi_prot: PricingVector,
    pub psi_prem: PricingVector,
    pub recovery: f64,
}

impl CdsLegs {
    /// `ψ_cds = ψ_prot − k ψ_prem` for a strike spread `k` (decimal).
    pub fn psi_cds(&self, k: f64) -> DVector<f64> {
        &self.psi_prot.psi - &self.psi_prem.psi * k
    }
}

/// ψ-vector of the zero-recovery zero-coupon bond.
pub fn psi_z(model: &LinearModel, t: f64, t_m: f64, r: f64) -> Result<PricingVector> {
    if !(t_m >= t) {
        return Err(Error::invalid(format!("need tM ({t_m}) ≥ t ({t})")));
    }
    let h = t_m - t;
    let a = model.drift_matrix(0.0);
    let mut a0 = DVector::zeros(model.dim());
    for i in 0..model.n {
        a0[i] = model.a[i];
    }
    // ψ' = e^{-rh} a0' e^{Ah}  ⇔  ψ = e^{-rh} e^{A'h} a0
    let psi = linmat::expm_action(&a.transpose(), h, &a0)? * (-r * h).exp();
    Ok(PricingVector { psi, t, maturity: t_m })
}

/// ψ-vector of the claim paying one at default in `(t, tM]`.
pub fn psi_d(model: &LinearModel, t: f64, t_m: f64, r: f64) -> Result<PricingVector> {
    if !(t_m >= t) {
        return Err(Error::invalid(format!("need tM ({t_m}) ≥ t ({t})")));
    }
    let a_star = model.drift_matrix(r);
    let integral = linmat::exp_integral(&a_star, t_m - t)?;
    let row = model.default_payout_row();
    let psi = integral.transpose() * row;
    Ok(PricingVector { psi, t, maturity: t_m })
}

/// ψ-vector of the claim paying `τ` at default in `(t, tM]`.
pub fn psi_dstar(model: &LinearModel, t: f64, t_m: f64, r: f64) -> Result<PricingVector> {
    if !(t_m >= t) {
        return Err(Error::invalid(format!("need tM ({t_m}) ≥ t ({t})")));
    }
    let a_star = model.drift_matrix(r);
    let integral = linmat::exp_integral_weighted(&a_star, t, t_m)?;
    let row = model.default_payout_row();
    let psi = integral.transpose() * row;
    Ok(PricingVector { psi, t, maturity: t_m })
}

/// Price of the bond paying `δ` at maturity on default, `1` otherwise:
/// `(1−δ) B_Z + δ e^{-r(tM-t)}`.
pub fn bond_recovery_maturity(
    model: &LinearModel,
    t: f64,
    t_m: f64,
    r: f64,
    delta: f64,
    yx: &DVector<f64>,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::invalid(format!("recovery {delta} outside [0, 1]")));
    }
    let bz = psi_z(model, t, t_m, r)?.price(model, yx)?;
    Ok((1.0 - delta) * bz + delta * (-r * (t_m - t)).exp())
}

/// Price of the bond paying `δ` at default: `B_Z + δ C_D`.
pub fn bond_recovery_default(
    model: &LinearModel,
    t: f64,
    t_m: f64,
    r: f64,
    delta: f64,
    yx: &DVector<f64>,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::invalid(format!("recovery {delta} outside [0, 1]")));
    }
    let bz = psi_z(model, t, t_m, r)?.price(model, yx)?;
    let cd = psi_d(model, t, t_m, r)?.price(model, yx)?;
    Ok(bz + delta * cd)
}

/// Protection and premium legs of a (forward) CDS over `grid`.
///
/// The premium leg decomposes into coupons paid on survival and the
/// accrued coupon at default; summing the within-period accruals
/// `(τ − t_{j−1}) 1{t_{j−1} < τ ≤ t_j}` by parts gives
///
/// ```text
/// ψ_prot = (1−δ)(ψ_D(t,tM) − ψ_D(t,t0))
/// ψ_prem = Σ_j Δ_j ψ_Z(t,t_j) + ψ_D*(t,tM) − ψ_D*(t,t0)
///          − t_{M−1} ψ_D(t,tM) + Σ_{j<M} Δ_j ψ_D(t,t_j) + t_0 ψ_D(t,t0) .
/// ```
pub fn cds_legs(
    model: &LinearModel,
    t: f64,
    grid: &TenorGrid,
    r: f64,
    delta: f64,
) -> Result<CdsLegs> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::invalid(format!("recovery {delta} outside [0, 1]")));
    }
    if t > grid.t0 {
        return Err(Error::invalid(
            "valuation time must not exceed the protection start t0",
        ));
    }
    let t_m = grid.maturity();
    let accruals = grid.accruals();
    let m_count = grid.payments.len();

    let d_tm = psi_d(model, t, t_m, r)?.psi;
    let d_t0 = psi_d(model, t, grid.t0, r)?.psi;
    let psi_prot = (&d_tm - &d_t0) * (1.0 - delta);

    let mut psi_prem = psi_dstar(model, t, t_m, r)?.psi - psi_dstar(model, t, grid.t0, r)?.psi;
    for (j, tj) in grid.payments.iter().enumerate() {
        psi_prem += psi_z(model, t, *tj, r)?.psi * accruals[j];
        if j + 1 < m_count {
            psi_prem += psi_d(model, t, *tj, r)?.psi * accruals[j];
        }
    }
    let t_last_coupon_start = if m_count >= 2 {
        grid.payments[m_count - 2]
    } else {
        grid.t0
    };
    psi_prem -= &d_tm * t_last_coupon_start;
    psi_prem += &d_t0 * grid.t0;

    Ok(CdsLegs {
        psi_prot: PricingVector { psi: psi_prot, t, maturity: t_m },
        psi_prem: PricingVector { psi: psi_prem, t, maturity: t_m },
        recovery: delta,
    })
}

/// Forward CDS spread `ψ_prot'(Y,X) / ψ_prem'(Y,X)` (decimal).
pub fn cds_spread(legs: &CdsLegs, yx: &DVector<f64>) -> Result<f64> {
    let prem = legs.psi_prem.psi.dot(yx);
    if prem <= 0.0 {
        return Err(Error::DegenerateAnnuity(prem));
    }
    Ok(legs.psi_prot.psi.dot(yx) / prem)
}

/// Convenience wrapper building legs and evaluating the spread at a state.
pub fn cds_spread_at(
    model: &LinearModel,
    state_yx: &DVector<f64>,
    t: f64,
    grid: &TenorGrid,
    r: f64,
    delta: f64,
) -> Result<f64> {
    cds_spread(&cds_legs(model, t, grid, r, delta)?, state_yx)
}

/// Unilateral CVA with polynomial net positive exposure `f(y, x)`:
///
/// ```text
/// UCVA(t,tM) = 1/(a'Y_t) ∫_t^{tM} e^{-r(u-t)}
///              E[ f(Y_u, X_u) · (-a'(c Y_u + γ X_u)) | F_t ] du ,
/// ```
///
/// with the integral evaluated by Gauss-Legendre quadrature (the integrand
/// is a smooth combination of matrix-exponential entries).
pub fn ucva(
    p: &LhcParams,
    state: &State,
    t: f64,
    t_m: f64,
    r: f64,
    exposure: &Poly,
    nodes: usize,
) -> Result<f64> {
    if !(t_m >= t) {
        return Err(Error::invalid(format!("need tM ({t_m}) ≥ t ({t})")));
    }
    if t_m == t {
        return Ok(0.0);
    }
    let degree = exposure.degree() as usize + 1;
    let op = MomentOperator::new(p, degree)?;
    let model = p.to_linear_model();
    let payout = model.default_payout_row(); // (-a'c, -a'γ) = (0, γ') for the LHC
    let lin: Vec<f64> = payout.iter().copied().collect();
    let exposure_coeffs = exposure.to_coeffs(&op.basis)?;
    let integrand = mul_affine(&op.basis, &exposure_coeffs, 0.0, &lin)?;

    let (us, ws) = gauss_legendre_on(nodes.max(2), t, t_m);
    let mut acc = 0.0;
    for (u, w) in us.iter().zip(&ws) {
        let val = op.moment(state, &integrand, u - t)?;
        acc += w * (-r * (u - t)).exp() * val;
    }
    Ok(acc / state.y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::canonicalize;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn reference_params() -> LhcParams {
        LhcParams::one_factor_from_roots(0.25, 0.05, 1.0, 0.75).unwrap()
    }

    /// One-factor embedding with constant intensity γ: x ≡ y, roots
    /// ℓ1 = 0, ℓ2 = γ.
    fn constant_intensity(gamma: f64) -> (LinearModel, DVector<f64>) {
        let p = LhcParams::one_factor_from_roots(gamma, 0.0, gamma, 0.0).unwrap();
        (p.to_linear_model(), DVector::from_vec(vec![1.0, 1.0]))
    }

    #[test]
    fn zero_horizon_bond_prices_at_one() {
        let model = reference_params().to_linear_model();
        let yx = DVector::from_vec(vec![1.0, 0.2]);
        let v = psi_z(&model, 0.5, 0.5, 0.03).unwrap();
        assert_relative_eq!(v.price(&model, &yx).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn constant_intensity_bond() {
        let (model, yx) = constant_intensity(0.25);
        for (r, t_m) in [(0.0, 5.0), (0.0252, 1.0), (0.0252, 10.0)] {
            let b = psi_z(&model, 0.0, t_m, r).unwrap().price(&model, &yx).unwrap();
            assert_relative_eq!(b, (-(r + 0.25) * t_m).exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn recovery_bonds() {
        let (model, yx) = constant_intensity(0.25);
        let (r, t_m) = (0.0252, 5.0);
        // full recovery kills credit risk
        let full = bond_recovery_maturity(&model, 0.0, t_m, r, 1.0, &yx).unwrap();
        assert_relative_eq!(full, (-r * t_m).exp(), epsilon = 1e-12);
        // zero recovery reduces to B_Z
        let zero = bond_recovery_maturity(&model, 0.0, t_m, r, 0.0, &yx).unwrap();
        let bz = psi_z(&model, 0.0, t_m, r).unwrap().price(&model, &yx).unwrap();
        assert_relative_eq!(zero, bz, epsilon = 1e-14);
        // affine mix
        let mixed = bond_recovery_maturity(&model, 0.0, t_m, r, 0.4, &yx).unwrap();
        let expect = 0.6 * (-(r + 0.25) * t_m).exp() + 0.4 * (-r * t_m).exp();
        assert_relative_eq!(mixed, expect, epsilon = 1e-12);
        assert!(bond_recovery_maturity(&model, 0.0, t_m, r, 1.2, &yx).is_err());
    }

    #[test]
    fn contingent_claim_constant_intensity() {
        let (model, yx) = constant_intensity(0.25);
        let (r, t_m) = (0.0252, 5.0);
        // empty protection window
        let zero = psi_d(&model, 1.0, 1.0, r).unwrap();
        assert_eq!(zero.psi.amax(), 0.0);
        // C_D = γ (1 − e^{-(r+γ)T}) / (r+γ)
        let cd = psi_d(&model, 0.0, t_m, r).unwrap().price(&model, &yx).unwrap();
        let u = r + 0.25;
        assert_relative_eq!(cd, 0.25 * (1.0 - (-u * t_m).exp()) / u, epsilon = 1e-12);
        // C_D* = γ ∫_0^T s e^{-us} ds
        let cds = psi_dstar(&model, 0.0, t_m, r).unwrap().price(&model, &yx).unwrap();
        let integral = (1.0 - (-u * t_m).exp() * (1.0 + u * t_m)) / (u * u);
        assert_relative_eq!(cds, 0.25 * integral, epsilon = 1e-12);
    }

    #[test]
    fn put_together_identity() {
        let model = reference_params().to_linear_model();
        let yx = DVector::from_vec(vec![1.0, 0.2]);
        let (t_m, r, delta) = (7.0, 0.0252, 0.4);
        let bd = bond_recovery_default(&model, 0.0, t_m, r, delta, &yx).unwrap();
        let bz = psi_z(&model, 0.0, t_m, r).unwrap().price(&model, &yx).unwrap();
        let cd = psi_d(&model, 0.0, t_m, r).unwrap().price(&model, &yx).unwrap();
        assert_relative_eq!(bd, bz + delta * cd, epsilon = 1e-15);
    }

    #[test]
    fn bond_monotone_in_maturity_and_gamma() {
        let yx = DVector::from_vec(vec![1.0, 0.2]);
        let mut last = 1.0;
        for t_m in [1.0, 2.0, 5.0, 10.0] {
            let model = reference_params().to_linear_model();
            let b = psi_z(&model, 0.0, t_m, 0.01).unwrap().price(&model, &yx).unwrap();
            assert!(b <= last + 1e-14);
            assert!(b >= 0.0 && b <= (-0.01 * t_m).exp() + 1e-14);
            last = b;
        }
        let mut last = 1.0;
        for g in [0.05, 0.1, 0.25, 0.5] {
            let p = LhcParams::one_factor_from_roots(g, 0.05 * g / 0.25, g / 0.25, 0.75).unwrap();
            let model = p.to_linear_model();
            let b = psi_z(&model, 0.0, 5.0, 0.0).unwrap().price(&model, &yx).unwrap();
            assert!(b <= last + 1e-14, "B_Z should fall as gamma rises");
            last = b;
        }
    }

    #[test]
    fn quarterly_grid_layout() {
        let g = TenorGrid::with_frequency(1.0, 6.0, 4).unwrap();
        assert_eq!(g.payments.len(), 20);
        assert_relative_eq!(g.maturity(), 6.0);
        assert!(g.accruals().iter().all(|d| (d - 0.25).abs() < 1e-12));
        let stub = TenorGrid::with_frequency(0.0, 1.1, 4).unwrap();
        assert_eq!(stub.payments.len(), 5);
        assert_relative_eq!(stub.maturity(), 1.1);
    }

    #[test]
    fn full_recovery_has_no_protection_leg() {
        let model = reference_params().to_linear_model();
        let grid = TenorGrid::with_frequency(0.0, 5.0, 4).unwrap();
        let legs = cds_legs(&model, 0.0, &grid, 0.02, 1.0).unwrap();
        assert_eq!(legs.psi_prot.psi.amax(), 0.0);
    }

    #[test]
    fn riskless_premium_leg_is_annuity() {
        // γ = 0 freezes Y at 1: premium leg = Σ Δ_j e^{-r(t_j - t)}
        let p = LhcParams::new(
            DVector::zeros(1),
            DVector::zeros(1),
            DMatrix::from_element(1, 1, -1.0),
            DVector::from_vec(vec![0.3]),
        )
        .unwrap();
        let model = p.to_linear_model();
        let grid = TenorGrid::with_frequency(0.0, 2.0, 4).unwrap();
        let r = 0.03;
        let legs = cds_legs(&model, 0.0, &grid, r, 0.4).unwrap();
        let yx = DVector::from_vec(vec![1.0, 0.5]);
        let prem = legs.psi_prem.psi.dot(&yx);
        let annuity: f64 = grid
            .payments
            .iter()
            .zip(grid.accruals())
            .map(|(tj, d)| d * (-r * tj).exp())
            .sum();
        assert_relative_eq!(prem, annuity, epsilon = 1e-12);
        // and the spread is zero
        assert_relative_eq!(cds_spread(&legs, &yx).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn single_period_legs_constant_intensity() {
        let (model, yx) = constant_intensity(0.25);
        let (r, t1, delta) = (0.0252, 1.0, 0.4);
        let grid = TenorGrid::new(0.0, vec![t1]).unwrap();
        let legs = cds_legs(&model, 0.0, &grid, r, delta).unwrap();
        let u = r + 0.25;
        let prot = legs.psi_prot.psi.dot(&yx);
        assert_relative_eq!(prot, 0.6 * 0.25 * (1.0 - (-u * t1).exp()) / u, epsilon = 1e-12);
        let prem = legs.psi_prem.psi.dot(&yx);
        let coupon = t1 * (-u * t1).exp();
        let accrued = 0.25 * (1.0 - (-u * t1).exp() * (1.0 + u * t1)) / (u * u);
        assert_relative_eq!(prem, coupon + accrued, epsilon = 1e-12);
    }

    #[test]
    fn protection_leg_additivity() {
        let model = reference_params().to_linear_model();
        let r = 0.0252;
        let whole = cds_legs(&model, 0.0, &TenorGrid::with_frequency(1.0, 6.0, 4).unwrap(), r, 0.4)
            .unwrap();
        let front = cds_legs(&model, 0.0, &TenorGrid::with_frequency(1.0, 3.0, 4).unwrap(), r, 0.4)
            .unwrap();
        let back = cds_legs(&model, 0.0, &TenorGrid::with_frequency(3.0, 6.0, 4).unwrap(), r, 0.4)
            .unwrap();
        let sum = &front.psi_prot.psi + &back.psi_prot.psi;
        assert!((&whole.psi_prot.psi - &sum).amax() < 1e-12);
    }

    #[test]
    fn forward_spread_reference_contract() {
        // CDS(0, 1, 6) under the reference one-factor parameters, quarterly
        let p = reference_params();
        let model = p.to_linear_model();
        let grid = TenorGrid::with_frequency(1.0, 6.0, 4).unwrap();
        let yx = DVector::from_vec(vec![1.0, 0.2]);
        let s = cds_spread_at(&model, &yx, 0.0, &grid, 0.0, 0.4).unwrap();
        let bp = s / crate::BP;
        assert!(
            (250.0..350.0).contains(&bp),
            "forward spread {bp:.2} bp outside the at-the-money band"
        );
    }

    #[test]
    fn spread_invariant_under_canonicalize() {
        let p = reference_params();
        let l = DVector::from_vec(vec![2.0]);
        let q = canonicalize(&p, &l).unwrap();
        let grid = TenorGrid::with_frequency(0.5, 5.5, 4).unwrap();
        let yx_p = DVector::from_vec(vec![1.0, 0.2]);
        let yx_q = DVector::from_vec(vec![1.0, 0.1]);
        let sp = cds_spread_at(&p.to_linear_model(), &yx_p, 0.0, &grid, 0.01, 0.4).unwrap();
        let sq = cds_spread_at(&q.to_linear_model(), &yx_q, 0.0, &grid, 0.01, 0.4).unwrap();
        assert_relative_eq!(sp, sq, epsilon = 1e-12);
        // zero-recovery bond too
        let bp = psi_z(&p.to_linear_model(), 0.0, 5.0, 0.0)
            .unwrap()
            .price(&p.to_linear_model(), &yx_p)
            .unwrap();
        let bq = psi_z(&q.to_linear_model(), 0.0, 5.0, 0.0)
            .unwrap()
            .price(&q.to_linear_model(), &yx_q)
            .unwrap();
        assert_relative_eq!(bp, bq, epsilon = 1e-12);
    }

    #[test]
    fn ucva_degenerate_and_consistency() {
        let p = reference_params();
        let state = State::new(1.0, DVector::from_vec(vec![0.2])).unwrap();
        let zero = ucva(&p, &state, 0.0, 5.0, 0.01, &Poly::constant(1, 0.0), 64).unwrap();
        assert_eq!(zero, 0.0);
        // unit exposure reproduces the contingent default claim C_D
        let unit = ucva(&p, &state, 0.0, 5.0, 0.01, &Poly::constant(1, 1.0), 64).unwrap();
        let model = p.to_linear_model();
        let cd = psi_d(&model, 0.0, 5.0, 0.01)
            .unwrap()
            .price(&model, &state.stack())
            .unwrap();
        assert_relative_eq!(unit, cd, epsilon = 1e-10);
    }
}
