//! Multi-name constructions on independent LHC blocks.
//!
//! Firms reference `d` independent LHC processes either linearly
//! (`S^i = a_i' Y` over the stacked survival coordinates) or through a
//! monomial (`S^i = Π_j (Y^j)^{α_j}`), whose expectations factorize across
//! blocks. Default counts follow a discrete-Fourier-transform formula;
//! homogeneous portfolios admit a binomial collapse and closed-form
//! tranche legs through the moment operator.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::linmat;
use crate::model::{LhcParams, LinearModel, State};
use crate::moments::MomentOperator;
use crate::pricing::{cds_legs, TenorGrid};
use crate::quad::gauss_legendre_on;

/// Largest moment degree accepted by the homogeneous tranche pricer.
pub const TRANCHE_DEGREE_LIMIT: usize = 15;

/// Exposure of one firm to the stacked blocks.
#[derive(Debug, Clone, PartialEq)]
pub enum FirmSpec {
    /// `S^i = Σ_j w_j Y^j` with nonnegative weights summing to one.
    Linear { weights: DVector<f64> },
    /// `S^i = Π_j (Y^j)^{α_j}` (so `S^i_0 = 1` automatically).
    Polynomial { exponents: Vec<u32> },
}

/// Reference portfolio of `N` firms on `d` independent LHC blocks.
#[derive(Debug, Clone)]
pub struct Portfolio {
    pub blocks: Vec<LhcParams>,
    pub firms: Vec<FirmSpec>,
    pub recovery: f64,
}

impl Portfolio {
    pub fn new(blocks: Vec<LhcParams>, firms: Vec<FirmSpec>, recovery: f64) -> Result<Self> {
        if blocks.is_empty() || firms.is_empty() {
            return Err(Error::invalid("portfolio needs blocks and firms"));
        }
        if !(0.0..=1.0).contains(&recovery) {
            return Err(Error::invalid("recovery outside [0, 1]"));
        }
        let d = blocks.len();
        for f in &firms {
            match f {
                FirmSpec::Linear { weights } => {
                    if weights.len() != d {
                        return Err(Error::invalid("firm weights must match block count"));
                    }
                    if weights.iter().any(|w| *w < 0.0) {
                        return Err(Error::invalid("firm weights must be nonnegative"));
                    }
                    let s: f64 = weights.iter().sum();
                    if (s - 1.0).abs() > 1e-10 {
                        return Err(Error::invalid("firm weights must sum to one"));
                    }
                }
                FirmSpec::Polynomial { exponents } => {
                    if exponents.len() != d {
                        return Err(Error::invalid("firm exponents must match block count"));
                    }
                }
            }
        }
        Ok(Portfolio { blocks, firms, recovery })
    }

    pub fn n_firms(&self) -> usize {
        self.firms.len()
    }

    fn check_states(&self, states: &[State]) -> Result<()> {
        if states.len() != self.blocks.len() {
            return Err(Error::invalid("one state per block required"));
        }
        for (p, s) in self.blocks.iter().zip(states) {
            if s.x.len() != p.m {
                return Err(Error::invalid("block state dimension mismatch"));
            }
        }
        Ok(())
    }

    /// Survival value of a firm at the given block states.
    pub fn survival(&self, firm: usize, states: &[State]) -> Result<f64> {
        self.check_states(states)?;
        Ok(match &self.firms[firm] {
            FirmSpec::Linear { weights } => {
                weights.iter().zip(states).map(|(w, s)| w * s.y).sum()
            }
            FirmSpec::Polynomial { exponents } => exponents
                .iter()
                .zip(states)
                .map(|(a, s)| s.y.powi(*a as i32))
                .product(),
        })
    }

    /// Shadow intensities `h_j = γ^j' x^j / y^j` per block.
    pub fn shadow_intensities(&self, states: &[State]) -> Result<DVector<f64>> {
        self.check_states(states)?;
        Ok(DVector::from_iterator(
            self.blocks.len(),
            self.blocks
                .iter()
                .zip(states)
                .map(|(p, s)| p.gamma.dot(&s.x) / s.y),
        ))
    }

    /// Firm default intensity: the `w`-weighted shadow combination for the
    /// linear construction (`w_j = a_ij y_j / S^i`, summing to one), `α'h`
    /// for the polynomial construction.
    pub fn firm_intensity(&self, firm: usize, states: &[State]) -> Result<f64> {
        let h = self.shadow_intensities(states)?;
        Ok(match &self.firms[firm] {
            FirmSpec::Linear { weights } => {
                let s = self.survival(firm, states)?;
                weights
                    .iter()
                    .zip(states)
                    .zip(h.iter())
                    .map(|((w, st), hj)| w * st.y / s * hj)
                    .sum()
            }
            FirmSpec::Polynomial { exponents } => exponents
                .iter()
                .zip(h.iter())
                .map(|(a, hj)| *a as f64 * hj)
                .sum(),
        })
    }

    /// Stacked linear model carrying a linear firm's weights; blocks enter
    /// block-diagonally.
    pub fn stacked_model(&self, firm: usize) -> Result<LinearModel> {
        let weights = match &self.firms[firm] {
            FirmSpec::Linear { weights } => weights.clone(),
            FirmSpec::Polynomial { .. } => {
                return Err(Error::invalid(
                    "polynomial firms have no stacked linear representation; use the factorized routes",
                ))
            }
        };
        let d = self.blocks.len();
        let m_total: usize = self.blocks.iter().map(|b| b.m).sum();
        let mut gamma_block = DMatrix::zeros(d, m_total);
        let mut b = DMatrix::zeros(m_total, d);
        let mut beta = DMatrix::zeros(m_total, m_total);
        let mut offset = 0usize;
        for (j, blk) in self.blocks.iter().enumerate() {
            for i in 0..blk.m {
                gamma_block[(j, offset + i)] = -blk.gamma[i];
                b[(offset + i, j)] = blk.b[i];
                for l in 0..blk.m {
                    beta[(offset + i, offset + l)] = blk.beta[(i, l)];
                }
            }
            offset += blk.m;
        }
        LinearModel::new(DMatrix::zeros(d, d), gamma_block, b, beta, weights)
    }

    /// Stacked `(Y, X)` column.
    pub fn stacked_state(&self, states: &[State]) -> Result<DVector<f64>> {
        self.check_states(states)?;
        let d = self.blocks.len();
        let m_total: usize = self.blocks.iter().map(|b| b.m).sum();
        let mut v = DVector::zeros(d + m_total);
        for (j, s) in states.iter().enumerate() {
            v[j] = s.y;
        }
        let mut offset = d;
        for s in states {
            for xi in s.x.iter() {
                v[offset] = *xi;
                offset += 1;
            }
        }
        Ok(v)
    }

    /// Conditional survival ratio `E[S^i_{t+h}] / S^i_t`, factorized across
    /// blocks for polynomial firms.
    pub fn firm_survival_ratio(&self, firm: usize, states: &[State], h: f64) -> Result<f64> {
        self.check_states(states)?;
        match &self.firms[firm] {
            FirmSpec::Linear { weights } => {
                let mut acc = 0.0;
                for (j, (blk, s)) in self.blocks.iter().zip(states).enumerate() {
                    if weights[j] != 0.0 {
                        let a = blk.to_linear_model().drift_matrix(0.0);
                        let ey = linmat::expm_action(&a, h, &s.stack())?[0];
                        acc += weights[j] * ey;
                    }
                }
                Ok(acc / self.survival(firm, states)?)
            }
            FirmSpec::Polynomial { exponents } => {
                let mut ratio = 1.0;
                for ((blk, s), alpha) in self.blocks.iter().zip(states).zip(exponents) {
                    if *alpha == 0 {
                        continue;
                    }
                    let op = MomentOperator::new(blk, *alpha as usize)?;
                    let mut tgt = vec![0.0; op.dim()];
                    let mut exps = vec![0u32; blk.m + 1];
                    exps[0] = *alpha;
                    tgt[op.basis.position(&exps).expect("pure power of y")] = 1.0;
                    ratio *= op.moment(s, &tgt, h)? / s.y.powi(*alpha as i32);
                }
                Ok(ratio)
            }
        }
    }

    /// Per-firm protection and premium leg values (already normalized by
    /// the firm's survival value).
    pub fn firm_leg_values(
        &self,
        firm: usize,
        states: &[State],
        t: f64,
        grid: &TenorGrid,
        r: f64,
    ) -> Result<(f64, f64)> {
        self.check_states(states)?;
        match &self.firms[firm] {
            FirmSpec::Linear { .. } => {
                let model = self.stacked_model(firm)?;
                let yx = self.stacked_state(states)?;
                let legs = cds_legs(&model, t, grid, r, self.recovery)?;
                let s = crate::pricing::survival_value(&model, &yx)?;
                Ok((legs.psi_prot.psi.dot(&yx) / s, legs.psi_prem.psi.dot(&yx) / s))
            }
            FirmSpec::Polynomial { exponents } => {
                self.polynomial_leg_values(exponents, states, t, grid, r)
            }
        }
    }

    /// Quadrature legs for a monomial firm through per-block moment
    /// factorization (no tensor basis is ever built).
    fn polynomial_leg_values(
        &self,
        exponents: &[u32],
        states: &[State],
        t: f64,
        grid: &TenorGrid,
        r: f64,
    ) -> Result<(f64, f64)> {
        let ops: Vec<Option<MomentOperator>> = self
            .blocks
            .iter()
            .zip(exponents)
            .map(|(blk, a)| {
                if *a == 0 {
                    Ok(None)
                } else {
                    MomentOperator::new(blk, *a as usize).map(Some)
                }
            })
            .collect::<Result<_>>()?;
        let s_t: f64 = self.survival(0, states).and(Ok(exponents
            .iter()
            .zip(states)
            .map(|(a, s)| s.y.powi(*a as i32))
            .product()))?;

        // E[(Y^j_u)^{α_j}] per block, and the hazard-weighted moment
        // E[(Y^j_u)^{α_j − 1} γ^j' X^j_u].
        let block_moment = |j: usize, h: f64| -> Result<f64> {
            match &ops[j] {
                None => Ok(1.0),
                Some(op) => {
                    let mut tgt = vec![0.0; op.dim()];
                    let mut exps = vec![0u32; self.blocks[j].m + 1];
                    exps[0] = exponents[j];
                    tgt[op.basis.position(&exps).expect("power of y")] = 1.0;
                    op.moment(&states[j], &tgt, h)
                }
            }
        };
        let block_hazard_moment = |j: usize, h: f64| -> Result<f64> {
            match &ops[j] {
                None => Ok(0.0),
                Some(op) => {
                    let blk = &self.blocks[j];
                    let mut tgt = vec![0.0; op.dim()];
                    for i in 0..blk.m {
                        if blk.gamma[i] != 0.0 {
                            let mut exps = vec![0u32; blk.m + 1];
                            exps[0] = exponents[j] - 1;
                            exps[1 + i] = 1;
                            tgt[op.basis.position(&exps).expect("degree α_j")] += blk.gamma[i];
                        }
                    }
                    op.moment(&states[j], &tgt, h)
                }
            }
        };
        // -d/du E[S_u] = Σ_j α_j E[y^{α_j-1} γ'x]_j Π_{k≠j} E_k
        let neg_ds = |h: f64| -> Result<f64> {
            let moments: Vec<f64> = (0..self.blocks.len())
                .map(|j| block_moment(j, h))
                .collect::<Result<_>>()?;
            let mut acc = 0.0;
            for j in 0..self.blocks.len() {
                if exponents[j] == 0 {
                    continue;
                }
                let mut term = exponents[j] as f64 * block_hazard_moment(j, h)?;
                for (k, mk) in moments.iter().enumerate() {
                    if k != j {
                        term *= mk;
                    }
                }
                acc += term;
            }
            Ok(acc)
        };

        let t_m = grid.maturity();
        let (us, ws) = gauss_legendre_on(64, grid.t0, t_m);
        let mut prot = 0.0;
        for (u, w) in us.iter().zip(&ws) {
            prot += w * (-r * (u - t)).exp() * neg_ds(u - t)?;
        }
        prot *= 1.0 - self.recovery;

        let mut prem = 0.0;
        let mut prev = grid.t0;
        for tj in &grid.payments {
            // coupon on survival to t_j
            let mut e_s = 1.0;
            for j in 0..self.blocks.len() {
                e_s *= block_moment(j, tj - t)?;
            }
            prem += (tj - prev) * (-r * (tj - t)).exp() * e_s;
            // accrued coupon at default within the period
            let (uu, ww) = gauss_legendre_on(16, prev, *tj);
            for (u, w) in uu.iter().zip(&ww) {
                prem += w * (u - prev) * (-r * (u - t)).exp() * neg_ds(u - t)?;
            }
            prev = *tj;
        }
        Ok((prot / s_t, prem / s_t))
    }

    /// CDIS spread: ratio of summed per-firm protection values to summed
    /// premium values over the alive names.
    pub fn cdis_spread(
        &self,
        states: &[State],
        alive: &[bool],
        t: f64,
        grid: &TenorGrid,
        r: f64,
    ) -> Result<f64> {
        if alive.len() != self.n_firms() {
            return Err(Error::invalid("one alive flag per firm required"));
        }
        if !alive.iter().any(|a| *a) {
            return Err(Error::EmptyPortfolio);
        }
        let mut prot = 0.0;
        let mut prem = 0.0;
        for i in 0..self.n_firms() {
            if alive[i] {
                let (p, q) = self.firm_leg_values(i, states, t, grid, r)?;
                prot += p;
                prem += q;
            }
        }
        if prem <= 0.0 {
            return Err(Error::DegenerateAnnuity(prem));
        }
        Ok(prot / prem)
    }
}

/// Conditional distribution of the total number of defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct CountDistribution {
    pub horizon: f64,
    pub probabilities: Vec<f64>,
}

impl CountDistribution {
    pub fn mean(&self) -> f64 {
        self.probabilities
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum()
    }
}

/// Discrete-Fourier-transform evaluation of the default-count law at
/// horizon `u`: firm `i` survives the window with probability `ratio_i`
/// conditional on the path, defaulted firms count with certainty.
pub fn default_count_distribution(
    ratios: &[f64],
    alive: &[bool],
    horizon: f64,
) -> Result<CountDistribution> {
    let n = ratios.len();
    if alive.len() != n || n == 0 {
        return Err(Error::invalid("need matching, nonempty ratio and alive slices"));
    }
    if ratios.iter().any(|p| !(0.0..=1.0 + 1e-12).contains(p)) {
        return Err(Error::invalid("survival ratios must lie in [0, 1]"));
    }
    let len = n + 1;
    let zeta = Complex::from_polar(1.0, 2.0 * std::f64::consts::PI / len as f64);
    // characteristic function at the Fourier frequencies
    let mut phi = vec![Complex::new(0.0, 0.0); len];
    for (j, ph) in phi.iter_mut().enumerate() {
        let zj = zeta.powu(j as u32);
        let mut prod = Complex::new(1.0, 0.0);
        for i in 0..n {
            let factor = if alive[i] {
                zj + (Complex::new(1.0, 0.0) - zj) * ratios[i]
            } else {
                zj
            };
            prod *= factor;
        }
        *ph = prod;
    }
    let mut probabilities = Vec::with_capacity(len);
    for count in 0..len {
        let mut acc = Complex::new(0.0, 0.0);
        for (j, ph) in phi.iter().enumerate() {
            acc += zeta.powu((j * count % len) as u32).conj() * ph;
        }
        acc /= len as f64;
        if acc.im.abs() > 1e-10 {
            return Err(Error::Domain(format!(
                "imaginary residue {} above tolerance in the count distribution",
                acc.im
            )));
        }
        probabilities.push(acc.re.max(0.0));
    }
    Ok(CountDistribution {
        horizon,
        probabilities,
    })
}

pub(crate) fn binom(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Homogeneous collapse: the number of window defaults among the `m_alive`
/// survivors is binomial with survival ratio `p`.
pub fn count_distribution_homogeneous(
    m_alive: usize,
    ratio: f64,
    n_defaulted: usize,
    horizon: f64,
) -> Result<CountDistribution> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid("survival ratio must lie in [0, 1]"));
    }
    let total = m_alive + n_defaulted;
    let mut probabilities = vec![0.0; total + 1];
    for j in 0..=m_alive {
        probabilities[n_defaulted + j] =
            binom(m_alive, j) * ratio.powi((m_alive - j) as i32) * (1.0 - ratio).powi(j as i32);
    }
    Ok(CountDistribution {
        horizon,
        probabilities,
    })
}

/// Homogeneous expected tranche loss `E[T_u | F_t]` expressed through
/// moments of powers of the survival coordinate.
#[allow(clippy::too_many_arguments)]
pub fn expected_tranche_loss(
    op: &MomentOperator,
    state: &State,
    h: f64,
    n_firms: usize,
    n_defaulted: usize,
    n_att: usize,
    n_det: usize,
    recovery: f64,
) -> Result<f64> {
    let m_alive = n_firms - n_defaulted;
    let s_t = state.y;
    let moments = op.basis_moments(state, h)?;
    let y_moment = |k: u32| -> f64 {
        let mut exps = vec![0u32; op.basis.m + 1];
        exps[0] = k;
        moments[op.basis.position(&exps).expect("power of y")]
    };
    let mut acc = 0.0;
    let j_lo = n_defaulted.saturating_sub(n_att).max(1);
    for j in j_lo..=(n_firms - n_att) {
        let q = n_att + j - n_defaulted;
        if q > m_alive {
            break;
        }
        let p = n_firms - n_att - j;
        let weight = (1.0 - recovery) * (j.min(n_det - n_att)) as f64 / n_firms as f64;
        // E[y^p (s_t − y)^q] by binomial expansion
        let mut e = 0.0;
        for k in 0..=q {
            e += binom(q, k)
                * s_t.powi((q - k) as i32)
                * (-1.0f64).powi(k as i32)
                * y_moment((p + k) as u32);
        }
        acc += weight * binom(m_alive, q) * e;
    }
    Ok(acc / s_t.powi(m_alive as i32))
}

/// Closed-form legs and price of a homogeneous tranche with integer
/// attachment points `K = n (1−δ)/N`.
#[derive(Debug, Clone, Copy)]
pub struct TranchePrice {
    pub protection: f64,
    pub premium: f64,
    /// `protection − k · premium`.
    pub value: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn tranche_price_homogeneous(
    block: &LhcParams,
    state: &State,
    t: f64,
    grid: &TenorGrid,
    n_att: usize,
    n_det: usize,
    recovery: f64,
    spread: f64,
    r: f64,
    n_firms: usize,
    n_defaulted: usize,
) -> Result<TranchePrice> {
    if !(n_att < n_det && n_det <= n_firms) {
        return Err(Error::invalid("need n_att < n_det ≤ n_firms"));
    }
    if n_defaulted >= n_firms {
        return Err(Error::EmptyPortfolio);
    }
    let m_alive = n_firms - n_defaulted;
    if m_alive > TRANCHE_DEGREE_LIMIT {
        return Err(Error::Capacity(format!(
            "tranche moment degree {m_alive} exceeds the limit {TRANCHE_DEGREE_LIMIT}"
        )));
    }
    let op = MomentOperator::with_limit(block, m_alive, TRANCHE_DEGREE_LIMIT)?;
    let s_t = state.y;
    let t_m = grid.maturity();

    // protection: ∫ e^{-r(u-t)} dE[T_u]/du du with the derivative taken
    // through the hazard-weighted moments
    let d_loss = |h: f64| -> Result<f64> {
        let moments = op.basis_moments(state, h)?;
        let mixed_moment = |k: u32| -> f64 {
            // E[(γ'x) y^k]
            let mut acc = 0.0;
            for i in 0..block.m {
                if block.gamma[i] != 0.0 {
                    let mut exps = vec![0u32; block.m + 1];
                    exps[0] = k;
                    exps[1 + i] = 1;
                    acc += block.gamma[i] * moments[op.basis.position(&exps).expect("mixed")];
                }
            }
            acc
        };
        let mut acc = 0.0;
        let j_lo = n_defaulted.saturating_sub(n_att).max(1);
        for j in j_lo..=(n_firms - n_att) {
            let q = n_att + j - n_defaulted;
            if q > m_alive {
                break;
            }
            let p = n_firms - n_att - j;
            let weight = (1.0 - recovery) * (j.min(n_det - n_att)) as f64 / n_firms as f64;
            // d/du E[y^p (s_t−y)^q] = E[(γ'x)(q y^p (s_t−y)^{q−1} − p y^{p−1}(s_t−y)^q)]
            let mut e = 0.0;
            if q >= 1 {
                for k in 0..=(q - 1) {
                    e += q as f64
                        * binom(q - 1, k)
                        * s_t.powi((q - 1 - k) as i32)
                        * (-1.0f64).powi(k as i32)
                        * mixed_moment((p + k) as u32);
                }
            }
            if p >= 1 {
                for k in 0..=q {
                    e -= p as f64
                        * binom(q, k)
                        * s_t.powi((q - k) as i32)
                        * (-1.0f64).powi(k as i32)
                        * mixed_moment((p - 1 + k) as u32);
                }
            }
            acc += weight * binom(m_alive, q) * e;
        }
        Ok(acc / s_t.powi(m_alive as i32))
    };

    let (us, ws) = gauss_legendre_on(64, t, t_m);
    let mut protection = 0.0;
    for (u, w) in us.iter().zip(&ws) {
        protection += w * (-r * (u - t)).exp() * d_loss(u - t)?;
    }

    let width = (n_det - n_att) as f64 * (1.0 - recovery) / n_firms as f64;
    let mut premium = 0.0;
    let mut prev = grid.t0;
    for tj in &grid.payments {
        let (uu, ww) = gauss_legendre_on(32, prev, *tj);
        let mut acc = 0.0;
        for (u, w) in uu.iter().zip(&ww) {
            let loss = expected_tranche_loss(
                &op,
                state,
                u - t,
                n_firms,
                n_defaulted,
                n_att,
                n_det,
                recovery,
            )?;
            acc += w * (width - loss);
        }
        premium += acc * (-r * (tj - t)).exp();
        prev = *tj;
    }

    Ok(TranchePrice {
        protection,
        premium,
        value: protection - spread * premium,
    })
}

/// Stochastic-rates construction on two independent one-factor blocks:
/// discount `D = Y¹`, survival `S = ν Y¹ + (1−ν) Y²`, priced over the
/// seven-dimensional product basis
/// `(y₁², y₁y₂, y₁x₁, y₁x₂, x₁y₂, x₁², x₁x₂)`.
#[derive(Debug, Clone)]
pub struct RatesCreditModel {
    pub rates_block: LhcParams,
    pub credit_block: LhcParams,
    pub nu: f64,
}

impl RatesCreditModel {
    pub fn new(rates_block: LhcParams, credit_block: LhcParams, nu: f64) -> Result<Self> {
        if rates_block.m != 1 || credit_block.m != 1 {
            return Err(Error::invalid("both blocks must be one-factor"));
        }
        if !(nu > 0.0 && nu < 1.0) {
            return Err(Error::invalid("mixing weight must lie in (0, 1)"));
        }
        Ok(RatesCreditModel {
            rates_block,
            credit_block,
            nu,
        })
    }

    /// Drift matrix of the product-basis process, assembled by Ito's
    /// lemma on the seven monomials.
    pub fn drift7(&self) -> DMatrix<f64> {
        let g1 = self.rates_block.gamma[0];
        let b1 = self.rates_block.b[0];
        let be1 = self.rates_block.beta[(0, 0)];
        let s1 = self.rates_block.sigma[0];
        let g2 = self.credit_block.gamma[0];
        let b2 = self.credit_block.b[0];
        let be2 = self.credit_block.beta[(0, 0)];
        let mut a = DMatrix::zeros(7, 7);
        // basis order: y1², y1y2, y1x1, y1x2, x1y2, x1², x1x2
        a[(0, 2)] = -2.0 * g1;
        a[(1, 3)] = -g2;
        a[(1, 4)] = -g1;
        a[(2, 0)] = b1;
        a[(2, 2)] = be1;
        a[(2, 5)] = -g1;
        a[(3, 1)] = b2;
        a[(3, 3)] = be2;
        a[(3, 6)] = -g1;
        a[(4, 1)] = b1;
        a[(4, 4)] = be1;
        a[(4, 6)] = -g2;
        a[(5, 2)] = 2.0 * b1 + s1 * s1;
        a[(5, 5)] = 2.0 * be1 - s1 * s1;
        a[(6, 3)] = b1;
        a[(6, 4)] = b2;
        a[(6, 6)] = be1 + be2;
        a
    }

    /// Product-basis state from the two block states.
    pub fn extended_state(&self, s1: &State, s2: &State) -> DVector<f64> {
        let (y1, x1) = (s1.y, s1.x[0]);
        let (y2, x2) = (s2.y, s2.x[0]);
        DVector::from_vec(vec![
            y1 * y1,
            y1 * y2,
            y1 * x1,
            y1 * x2,
            x1 * y2,
            x1 * x1,
            x1 * x2,
        ])
    }

    /// `a_Z` with `H(y)' a_Z = (a_r'y)(a'y) = y₁ (ν y₁ + (1−ν) y₂)`.
    pub fn a_z(&self) -> DVector<f64> {
        let mut v = DVector::zeros(7);
        v[0] = self.nu;
        v[1] = 1.0 - self.nu;
        v
    }

    /// Zero-coupon defaultable bond under stochastic rates:
    /// `B_Z = ψ_Z' H / (a_Z' H)` with `ψ_Z = (a_Z', 0) e^{𝒜 (tM − t)}` and
    /// no external discounting (`r = 0`; the rates block discounts).
    pub fn bond_price(&self, s1: &State, s2: &State, t: f64, t_m: f64) -> Result<f64> {
        if !(t_m >= t) {
            return Err(Error::invalid("need tM ≥ t"));
        }
        let a = self.drift7();
        let h = self.extended_state(s1, s2);
        let psi = linmat::expm_action(&a.transpose(), t_m - t, &self.a_z())?;
        let denom = self.a_z().dot(&h);
        if denom <= 0.0 {
            return Err(Error::Domain("nonpositive D·S normalization".into()));
        }
        Ok(psi.dot(&h) / denom)
    }
}
