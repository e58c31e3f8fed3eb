//! Model specification and parameter validation.
//!
//! The generic linear model has factor pair `(Y, X)` in `R^n_+ × R^m` with
//! drift blocks
//!
//! ```text
//! dY = (c Y + γ X) dt + dM^Y,     dX = (b Y + β X) dt + dM^X,
//! ```
//!
//! and survival process `S = a' Y`. The linear hypercube (LHC) model is the
//! diffusive single-name case `n = 1`: `dY = -γ' X dt`, with each factor
//! confined to `[0, Y]` by the dispersion `σ_i sqrt(x_i (y - x_i))`. The
//! LHCC cascade is the parsimonious sub-family in which factor `i` mean
//! reverts to a multiple of factor `i+1`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linmat::SquareMatrix;

/// Tolerance for the cascade drift constraint `θ_i ≤ 1 − γ1/κ_i`; fitted
/// parameter sets bind it, so equality counts as satisfied.
pub const CASCADE_CONSTRAINT_TOL: f64 = 1e-12;

/// Generic linear credit risk model with drift blocks `(c, γ; b, β)` and
/// survival weights `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub n: usize,
    pub m: usize,
    pub c: DMatrix<f64>,
    pub gamma_block: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub beta: DMatrix<f64>,
    pub a: DVector<f64>,
}

impl LinearModel {
    pub fn new(
        c: DMatrix<f64>,
        gamma_block: DMatrix<f64>,
        b: DMatrix<f64>,
        beta: DMatrix<f64>,
        a: DVector<f64>,
    ) -> Result<Self> {
        let n = c.nrows();
        let m = beta.nrows();
        if c.ncols() != n || beta.ncols() != m {
            return Err(Error::invalid("c and beta must be square"));
        }
        if gamma_block.shape() != (n, m) || b.shape() != (m, n) || a.len() != n {
            return Err(Error::invalid("inconsistent block dimensions"));
        }
        if a.iter().any(|w| *w < 0.0) {
            return Err(Error::invalid("survival weights a must be nonnegative"));
        }
        let s: f64 = a.iter().sum();
        if (s - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(format!("survival weights must sum to 1, got {s}")));
        }
        Ok(LinearModel { n, m, c, gamma_block, b, beta, a })
    }

    pub fn dim(&self) -> usize {
        self.n + self.m
    }

    /// Block drift matrix `A = (c γ; b β)` shifted by the rate: `A − r·Id`.
    pub fn drift_matrix(&self, r: f64) -> SquareMatrix {
        let d = self.dim();
        let mut a = SquareMatrix::zeros(d, d);
        a.view_mut((0, 0), (self.n, self.n)).copy_from(&self.c);
        a.view_mut((0, self.n), (self.n, self.m))
            .copy_from(&self.gamma_block);
        a.view_mut((self.n, 0), (self.m, self.n)).copy_from(&self.b);
        a.view_mut((self.n, self.n), (self.m, self.m))
            .copy_from(&self.beta);
        for i in 0..d {
            a[(i, i)] -= r;
        }
        a
    }

    /// Row vector `-a'(c γ)` appearing in every contingent cash-flow price.
    pub fn default_payout_row(&self) -> DVector<f64> {
        let d = self.dim();
        let mut row = DVector::zeros(d);
        for j in 0..self.n {
            let mut acc = 0.0;
            for i in 0..self.n {
                acc += self.a[i] * self.c[(i, j)];
            }
            row[j] = -acc;
        }
        for j in 0..self.m {
            let mut acc = 0.0;
            for i in 0..self.n {
                acc += self.a[i] * self.gamma_block[(i, j)];
            }
            row[self.n + j] = -acc;
        }
        row
    }

    /// Default intensity `λ = -a'(c Y + γ X) / a'Y` at a stacked state.
    pub fn intensity_general(&self, y: &DVector<f64>, x: &DVector<f64>) -> Result<f64> {
        if y.len() != self.n || x.len() != self.m {
            return Err(Error::invalid("state dimension mismatch"));
        }
        let s = self.a.dot(y);
        if s <= 0.0 {
            return Err(Error::Domain(format!("survival value a'Y = {s} must be positive")));
        }
        let drift = &self.c * y + &self.gamma_block * x;
        Ok(-self.a.dot(&drift) / s)
    }

    /// Intensity at an LHC state; requires `n = 1`.
    pub fn intensity(&self, state: &State) -> Result<f64> {
        if self.n != 1 {
            return Err(Error::invalid("State carries a scalar survival coordinate; use intensity_general"));
        }
        self.intensity_general(&DVector::from_vec(vec![state.y]), &state.x)
    }
}

/// Diffusive LHC specification: `dY = -γ'X dt`,
/// `dX_i = (b_i Y + (βX)_i) dt + σ_i sqrt(X_i (Y - X_i)) dW_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LhcParams {
    pub m: usize,
    pub gamma: DVector<f64>,
    pub b: DVector<f64>,
    pub beta: DMatrix<f64>,
    pub sigma: DVector<f64>,
}

impl LhcParams {
    pub fn new(
        gamma: DVector<f64>,
        b: DVector<f64>,
        beta: DMatrix<f64>,
        sigma: DVector<f64>,
    ) -> Result<Self> {
        let m = gamma.len();
        if b.len() != m || beta.shape() != (m, m) || sigma.len() != m {
            return Err(Error::invalid("inconsistent LHC dimensions"));
        }
        if gamma.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return Err(Error::invalid("gamma must be nonnegative"));
        }
        if sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::invalid("sigma must be nonnegative"));
        }
        Ok(LhcParams { m, gamma, b, beta, sigma })
    }

    /// One-factor model parametrized by the drift roots `0 ≤ ℓ1 ≤ γ ≤ ℓ2`,
    /// so that the intensity mean-reverts to `ℓ1`: `β = -(ℓ1+ℓ2)` and
    /// `b = ℓ1 ℓ2 / γ`.
    pub fn one_factor_from_roots(gamma: f64, ell1: f64, ell2: f64, sigma: f64) -> Result<Self> {
        if gamma <= 0.0 {
            return Err(Error::invalid("gamma must be positive"));
        }
        LhcParams::new(
            DVector::from_vec(vec![gamma]),
            DVector::from_vec(vec![ell1 * ell2 / gamma]),
            DMatrix::from_element(1, 1, -(ell1 + ell2)),
            DVector::from_vec(vec![sigma]),
        )
    }

    /// Embedding into the generic linear model: `n = 1`, `c = 0`, γ-block
    /// `-γ'`, survival weight `a = (1)`.
    pub fn to_linear_model(&self) -> LinearModel {
        let m = self.m;
        let mut gamma_block = DMatrix::zeros(1, m);
        for j in 0..m {
            gamma_block[(0, j)] = -self.gamma[j];
        }
        let mut b = DMatrix::zeros(m, 1);
        b.set_column(0, &self.b);
        LinearModel {
            n: 1,
            m,
            c: DMatrix::zeros(1, 1),
            gamma_block,
            b,
            beta: self.beta.clone(),
            a: DVector::from_vec(vec![1.0]),
        }
    }

    /// Upper bound `γ'1` on the default intensity.
    pub fn intensity_bound(&self) -> f64 {
        self.gamma.sum()
    }
}

/// Cascade sub-family: `β_ii = -κ_i`, `β_{i,i+1} = κ_i θ_i`, `b_m = κ_m θ_m`,
/// `γ = γ1 e_1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LhccParams {
    pub gamma1: f64,
    pub kappa: Vec<f64>,
    pub theta: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl LhccParams {
    pub fn new(gamma1: f64, kappa: Vec<f64>, theta: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if kappa.len() != theta.len() || kappa.len() != sigma.len() || kappa.is_empty() {
            return Err(Error::invalid("kappa, theta, sigma must share a positive length"));
        }
        if gamma1 < 0.0 {
            return Err(Error::invalid("gamma1 must be nonnegative"));
        }
        if kappa.iter().any(|k| *k <= 0.0) {
            return Err(Error::invalid("kappa must be positive"));
        }
        if theta.iter().any(|t| *t < 0.0) || sigma.iter().any(|s| *s < 0.0) {
            return Err(Error::invalid("theta and sigma must be nonnegative"));
        }
        Ok(LhccParams { gamma1, kappa, theta, sigma })
    }

    pub fn m(&self) -> usize {
        self.kappa.len()
    }

    /// Slack of the cascade drift constraint, `1 − γ1/κ_i − θ_i`, per
    /// dimension. Nonnegative slack (up to tolerance) is required for the
    /// embedded LHC model to be valid.
    pub fn constraint_slack(&self) -> Vec<f64> {
        self.kappa
            .iter()
            .zip(&self.theta)
            .map(|(k, t)| 1.0 - self.gamma1 / k - t)
            .collect()
    }

    /// Unchecked embedding into LHC drift parameters.
    pub fn to_lhc(&self) -> LhcParams {
        let m = self.m();
        let mut gamma = DVector::zeros(m);
        gamma[0] = self.gamma1;
        let mut b = DVector::zeros(m);
        b[m - 1] = self.kappa[m - 1] * self.theta[m - 1];
        let mut beta = DMatrix::zeros(m, m);
        for i in 0..m {
            beta[(i, i)] = -self.kappa[i];
            if i + 1 < m {
                beta[(i, i + 1)] = self.kappa[i] * self.theta[i];
            }
        }
        LhcParams {
            m,
            gamma,
            b,
            beta,
            sigma: DVector::from_vec(self.sigma.clone()),
        }
    }

    /// Clamp each `θ_i` to the feasible bound `1 − γ1/κ_i`. Parameter sets
    /// published at three decimals can overshoot the bound by rounding; this
    /// restores exact feasibility without moving any value by more than the
    /// rounding error. The clipped value is nudged down by ulps until the
    /// embedded drift slack is truly nonnegative in floating point.
    pub fn clip_to_constraint(&self) -> LhccParams {
        let mut out = self.clone();
        for i in 0..self.m() {
            let bound = 1.0 - self.gamma1 / self.kappa[i];
            if out.theta[i] > bound {
                out.theta[i] = bound.max(0.0);
            }
            // κ_i(1 − θ_i) − γ1 ≥ 0 must hold after rounding
            for _ in 0..4 {
                if out.kappa[i] * (1.0 - out.theta[i]) - out.gamma1 >= 0.0 || out.theta[i] <= 0.0
                {
                    break;
                }
                out.theta[i] = f64::from_bits(out.theta[i].to_bits() - 1);
            }
        }
        out
    }

    /// Binding representative of the observational-equivalence orbit.
    ///
    /// Rescaling the factors (`X_i → X_i / l_i`) maps a cascade onto
    /// another cascade with `γ1' = l_1 γ1`, `θ_i' = θ_i l_{i+1}/l_i`
    /// (`l_{m+1} = 1`) and identical bond/CDS prices; spread data therefore
    /// identify the parameters only up to this orbit. The fitted models of
    /// interest bind the drift constraint in every dimension, which pins a
    /// unique representative: solve `l_{i+1} = l_i (1 − l_1 γ1/κ_i)/θ_i`
    /// with `l_{m+1} = 1` for `l_1` (root nearest 1) and rescale. Returns a
    /// clone when no binding representative exists.
    pub fn binding_representative(&self) -> LhccParams {
        let m = self.m();
        if self.gamma1 <= 0.0 || self.theta.iter().any(|t| *t <= 0.0) {
            return self.clone();
        }
        let l_last = |l1: f64| -> f64 {
            let mut l = l1;
            for i in 0..m {
                l *= (1.0 - l1 * self.gamma1 / self.kappa[i]) / self.theta[i];
            }
            l
        };
        let l1_max = self
            .kappa
            .iter()
            .map(|k| k / self.gamma1)
            .fold(f64::INFINITY, f64::min);
        // scan for sign changes of l_{m+1} − 1 and keep the root nearest 1
        let n_grid = 400;
        let mut best: Option<f64> = None;
        let mut prev = (1e-9 * l1_max, l_last(1e-9 * l1_max) - 1.0);
        for g in 1..=n_grid {
            let l1 = l1_max * g as f64 / (n_grid as f64 + 1.0);
            let val = l_last(l1) - 1.0;
            if prev.1 * val <= 0.0 && (prev.1 != 0.0 || val != 0.0) {
                let (mut lo, mut hi) = (prev.0, l1);
                let (mut flo, _) = (prev.1, val);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    let fm = l_last(mid) - 1.0;
                    if flo * fm <= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                        flo = fm;
                    }
                }
                let root = 0.5 * (lo + hi);
                if best.map(|b| (root - 1.0).abs() < (b - 1.0).abs()).unwrap_or(true) {
                    best = Some(root);
                }
            }
            prev = (l1, val);
        }
        let Some(l1) = best else {
            return self.clone();
        };
        let mut scales = vec![l1];
        for i in 0..m {
            let next = scales[i] * (1.0 - l1 * self.gamma1 / self.kappa[i]) / self.theta[i];
            scales.push(next);
        }
        let mut out = self.clone();
        out.gamma1 = l1 * self.gamma1;
        for i in 0..m {
            out.theta[i] = self.theta[i] * scales[i + 1] / scales[i];
        }
        out.clip_to_constraint()
    }
}

/// Validated embedding of cascade parameters into LHC drift parameters.
///
/// Errors when `θ_i > 1 − γ1/κ_i` beyond tolerance, naming the offending
/// dimension; the resulting LHC parameters always pass [`validate_lhc`].
pub fn lhcc_to_lhc(p: &LhccParams) -> Result<LhcParams> {
    for (i, s) in p.constraint_slack().iter().enumerate() {
        if *s < -CASCADE_CONSTRAINT_TOL {
            return Err(Error::Constraint(format!(
                "cascade constraint violated at dimension {}: theta = {} exceeds 1 - gamma1/kappa = {}",
                i + 1,
                p.theta[i],
                1.0 - p.gamma1 / p.kappa[i],
            )));
        }
    }
    Ok(p.to_lhc())
}

/// A point `(y, x)` of the state space
/// `E = { y ∈ (0,1], x ∈ [0,y]^m }`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub y: f64,
    pub x: DVector<f64>,
}

impl State {
    pub fn new(y: f64, x: DVector<f64>) -> Result<Self> {
        if !(y.is_finite() && y > 0.0 && y <= 1.0) {
            return Err(Error::invalid(format!("y = {y} must lie in (0, 1]")));
        }
        if x.iter().any(|xi| !xi.is_finite() || *xi < 0.0 || *xi > y) {
            return Err(Error::invalid("x must lie componentwise in [0, y]"));
        }
        Ok(State { y, x })
    }

    /// Stacked `(y, x)` column used against pricing vectors.
    pub fn stack(&self) -> DVector<f64> {
        let mut v = DVector::zeros(1 + self.x.len());
        v[0] = self.y;
        for i in 0..self.x.len() {
            v[1 + i] = self.x[i];
        }
        v
    }
}

/// Outcome of the drift and boundary checks on LHC parameters.
///
/// `slack_zero[i]` is the margin of the inward-drift condition at `x_i = 0`
/// (`b_i − Σ_{j≠i} β_ij^-`), `slack_upper[i]` the margin at `x_i = y`
/// (`-(γ_i + β_ii + b_i + Σ_{j≠i} (γ_j + β_ij)^+)`). The non-attainment
/// flags report whether each margin also clears `σ_i²/2`, in which case the
/// corresponding boundary is never reached from the interior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub slack_zero: Vec<f64>,
    pub slack_upper: Vec<f64>,
    pub nonattain_zero: Vec<bool>,
    pub nonattain_upper: Vec<bool>,
}

/// Drift conditions of the LHC existence theorem, reported as slacks so
/// that calibration penalties can consume them directly. Never errors.
pub fn validate_lhc(p: &LhcParams) -> ValidationReport {
    let m = p.m;
    let mut slack_zero = Vec::with_capacity(m);
    let mut slack_upper = Vec::with_capacity(m);
    let mut nonattain_zero = Vec::with_capacity(m);
    let mut nonattain_upper = Vec::with_capacity(m);
    for i in 0..m {
        let mut neg_offdiag = 0.0;
        let mut pos_cross = 0.0;
        for j in 0..m {
            if j != i {
                neg_offdiag += (-p.beta[(i, j)]).max(0.0);
                pos_cross += (p.gamma[j] + p.beta[(i, j)]).max(0.0);
            }
        }
        let s0 = p.b[i] - neg_offdiag;
        let s1 = -(p.gamma[i] + p.beta[(i, i)] + p.b[i] + pos_cross);
        let half_var = 0.5 * p.sigma[i] * p.sigma[i];
        slack_zero.push(s0);
        slack_upper.push(s1);
        nonattain_zero.push(s0 >= half_var);
        nonattain_upper.push(s1 >= half_var);
    }
    let valid = slack_zero.iter().chain(&slack_upper).all(|s| *s >= 0.0);
    ValidationReport {
        valid,
        slack_zero,
        slack_upper,
        nonattain_zero,
        nonattain_upper,
    }
}

/// Rescaling of the factors `X_i → X_i / L_i`, an observationally
/// equivalent reparameterization: `γ' = diag(L) γ`, `b' = diag(1/L) b`,
/// `β' = diag(1/L) β diag(L)`. Bond and CDS prices computed from `(p, x)`
/// and `(canonicalize(p, L), x/L)` coincide.
pub fn canonicalize(p: &LhcParams, l: &DVector<f64>) -> Result<LhcParams> {
    if l.len() != p.m {
        return Err(Error::invalid("scale vector dimension mismatch"));
    }
    if l.iter().any(|li| !(li.is_finite() && *li > 0.0)) {
        return Err(Error::invalid("scales must be positive"));
    }
    let mut gamma = p.gamma.clone();
    let mut b = p.b.clone();
    let mut beta = p.beta.clone();
    for i in 0..p.m {
        gamma[i] *= l[i];
        b[i] /= l[i];
        for j in 0..p.m {
            beta[(i, j)] = p.beta[(i, j)] * l[j] / l[i];
        }
    }
    Ok(LhcParams {
        m: p.m,
        gamma,
        b,
        beta,
        sigma: p.sigma.clone(),
    })
}

/// Market price of risk that keeps the factor drift linear under the
/// real-world measure:
/// `Λ_i(y,x) = ((b_P − b) y + (β_P − β) x)_i / (σ_i sqrt(x_i (y − x_i)))`.
///
/// At a boundary coordinate the general expression is singular; it stays
/// defined in exactly the two special cases in which the numerator carries
/// a compensating factor of `sqrt(x_i)` or `sqrt(y − x_i)`.
pub fn mpr_lambda(
    p: &LhcParams,
    b_p: &DVector<f64>,
    beta_p: &DMatrix<f64>,
    s: &State,
) -> Result<DVector<f64>> {
    if b_p.len() != p.m || beta_p.shape() != (p.m, p.m) {
        return Err(Error::invalid("P-parameter dimension mismatch"));
    }
    let y = s.y;
    let mut lambda = DVector::zeros(p.m);
    for i in 0..p.m {
        let db = b_p[i] - p.b[i];
        let mut dbeta_x = 0.0;
        let mut off_equal = true;
        for j in 0..p.m {
            dbeta_x += (beta_p[(i, j)] - p.beta[(i, j)]) * s.x[j];
            if j != i && beta_p[(i, j)] != p.beta[(i, j)] {
                off_equal = false;
            }
        }
        let numer = db * y + dbeta_x;
        if numer == 0.0 {
            lambda[i] = 0.0;
            continue;
        }
        if p.sigma[i] <= 0.0 {
            return Err(Error::Domain(format!(
                "sigma[{i}] = 0 cannot absorb a drift change"
            )));
        }
        let xi = s.x[i];
        let interior = xi > 0.0 && xi < y;
        if interior {
            lambda[i] = numer / (p.sigma[i] * (xi * (y - xi)).sqrt());
        } else {
            let dbeta_ii = beta_p[(i, i)] - p.beta[(i, i)];
            if xi == 0.0 && off_equal && db == 0.0 {
                // numerator ∝ x_i: Λ_i = Δβ_ii sqrt(x_i) / (σ_i sqrt(y−x_i))
                lambda[i] = dbeta_ii * xi.sqrt() / (p.sigma[i] * (y - xi).sqrt());
            } else if xi == y && off_equal && (db - dbeta_ii).abs() == 0.0 {
                // numerator ∝ (y−x_i): Λ_i = Δβ_ii sqrt(y−x_i) / (σ_i sqrt(x_i))
                lambda[i] = dbeta_ii * (y - xi).sqrt() / (p.sigma[i] * xi.sqrt());
            } else {
                return Err(Error::Domain(format!(
                    "market price of risk undefined at boundary coordinate {i}"
                )));
            }
        }
    }
    Ok(lambda)
}

/// Hypothesis check for the equivalent measure change behind
/// [`mpr_lambda`]: boundary non-attainment for the Q-parameters and for the
/// P-parameters, with the per-coordinate relaxations available when only
/// `β_ii` (case 1) or `b_i` and `β_ii` jointly (case 2) are shifted.
#[derive(Debug, Clone, PartialEq)]
pub struct MprReport {
    pub q_report: ValidationReport,
    pub p_report: ValidationReport,
    pub coordinate_ok: Vec<bool>,
    pub ok: bool,
}

pub fn mpr_check(p: &LhcParams, b_p: &DVector<f64>, beta_p: &DMatrix<f64>) -> Result<MprReport> {
    if b_p.len() != p.m || beta_p.shape() != (p.m, p.m) {
        return Err(Error::invalid("P-parameter dimension mismatch"));
    }
    let p_world = LhcParams::new(p.gamma.clone(), b_p.clone(), beta_p.clone(), p.sigma.clone())?;
    let q_report = validate_lhc(p);
    let p_report = validate_lhc(&p_world);
    let mut coordinate_ok = Vec::with_capacity(p.m);
    for i in 0..p.m {
        let off_equal = (0..p.m).all(|j| j == i || beta_p[(i, j)] == p.beta[(i, j)]);
        let db = b_p[i] - p.b[i];
        let dbeta_ii = beta_p[(i, i)] - p.beta[(i, i)];
        let case1 = off_equal && db == 0.0;
        let case2 = off_equal && db == dbeta_ii;
        let lower_ok = if case1 {
            q_report.slack_zero[i] >= 0.0 && p_report.slack_zero[i] >= 0.0
        } else {
            q_report.nonattain_zero[i] && p_report.nonattain_zero[i]
        };
        let upper_ok = if case2 {
            q_report.slack_upper[i] >= 0.0 && p_report.slack_upper[i] >= 0.0
        } else {
            q_report.nonattain_upper[i] && p_report.nonattain_upper[i]
        };
        coordinate_ok.push(lower_ok && upper_ok);
    }
    let ok = coordinate_ok.iter().all(|b| *b);
    Ok(MprReport {
        q_report,
        p_report,
        coordinate_ok,
        ok,
    })
}

/// On-disk model description; `type` selects the schema and unknown fields
/// are rejected.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ModelFile {
    Lhcc {
        m: usize,
        gamma1: f64,
        kappa: Vec<f64>,
        theta: Vec<f64>,
        sigma: Vec<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        y0: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        x0: Option<Vec<f64>>,
    },
    Lhc {
        m: usize,
        gamma: Vec<f64>,
        b: Vec<f64>,
        beta: Vec<Vec<f64>>,
        sigma: Vec<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        y0: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        x0: Option<Vec<f64>>,
    },
    Linear {
        n: usize,
        m: usize,
        c: Vec<Vec<f64>>,
        gamma: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        beta: Vec<Vec<f64>>,
        a: Vec<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        y0: Option<Vec<f64>>,
        #[serde(skip_serializing_if = "Option::is_none")]
        x0: Option<Vec<f64>>,
    },
}

// Strict deserialization bodies; serde cannot combine `deny_unknown_fields`
// with an internally tagged enum, so the tag is dispatched by hand.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LhccBody {
    m: usize,
    gamma1: f64,
    kappa: Vec<f64>,
    theta: Vec<f64>,
    sigma: Vec<f64>,
    #[serde(default)]
    y0: Option<f64>,
    #[serde(default)]
    x0: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LhcBody {
    m: usize,
    gamma: Vec<f64>,
    b: Vec<f64>,
    beta: Vec<Vec<f64>>,
    sigma: Vec<f64>,
    #[serde(default)]
    y0: Option<f64>,
    #[serde(default)]
    x0: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearBody {
    n: usize,
    m: usize,
    c: Vec<Vec<f64>>,
    gamma: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
    a: Vec<f64>,
    #[serde(default)]
    y0: Option<Vec<f64>>,
    #[serde(default)]
    x0: Option<Vec<f64>>,
}

fn matrix_from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, name: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::invalid(format!("{name} must be {nrows}x{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl ModelFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut value: serde_json::Value = serde_json::from_str(text)?;
        let obj = value
            .as_object_mut()
            .ok_or_else(|| Error::invalid("model file must be a JSON object"))?;
        let kind = obj
            .remove("type")
            .and_then(|v| v.as_str().map(str::to_string))
            .ok_or_else(|| Error::invalid("model file needs a string \"type\" field"))?;
        let body = serde_json::Value::Object(obj.clone());
        match kind.as_str() {
            "lhcc" => {
                let b: LhccBody = serde_json::from_value(body)?;
                Ok(ModelFile::Lhcc {
                    m: b.m,
                    gamma1: b.gamma1,
                    kappa: b.kappa,
                    theta: b.theta,
                    sigma: b.sigma,
                    y0: b.y0,
                    x0: b.x0,
                })
            }
            "lhc" => {
                let b: LhcBody = serde_json::from_value(body)?;
                Ok(ModelFile::Lhc {
                    m: b.m,
                    gamma: b.gamma,
                    b: b.b,
                    beta: b.beta,
                    sigma: b.sigma,
                    y0: b.y0,
                    x0: b.x0,
                })
            }
            "linear" => {
                let b: LinearBody = serde_json::from_value(body)?;
                Ok(ModelFile::Linear {
                    n: b.n,
                    m: b.m,
                    c: b.c,
                    gamma: b.gamma,
                    b: b.b,
                    beta: b.beta,
                    a: b.a,
                    y0: b.y0,
                    x0: b.x0,
                })
            }
            other => Err(Error::invalid(format!("unknown model type {other:?}"))),
        }
    }

    /// The LHC drift parameters described by this file; errors for the
    /// generic `linear` schema.
    pub fn to_lhc_params(&self) -> Result<LhcParams> {
        match self {
            ModelFile::Lhcc { m, gamma1, kappa, theta, sigma, .. } => {
                if kappa.len() != *m || theta.len() != *m || sigma.len() != *m {
                    return Err(Error::invalid("lhcc vectors must have length m"));
                }
                lhcc_to_lhc(&LhccParams::new(*gamma1, kappa.clone(), theta.clone(), sigma.clone())?)
            }
            ModelFile::Lhc { m, gamma, b, beta, sigma, .. } => {
                if gamma.len() != *m || b.len() != *m || sigma.len() != *m {
                    return Err(Error::invalid("lhc vectors must have length m"));
                }
                LhcParams::new(
                    DVector::from_vec(gamma.clone()),
                    DVector::from_vec(b.clone()),
                    matrix_from_rows(beta, *m, *m, "beta")?,
                    DVector::from_vec(sigma.clone()),
                )
            }
            ModelFile::Linear { .. } => Err(Error::invalid(
                "generic linear schema does not describe an LHC model",
            )),
        }
    }

    pub fn to_linear_model(&self) -> Result<LinearModel> {
        match self {
            ModelFile::Linear { n, m, c, gamma, b, beta, a, .. } => LinearModel::new(
                matrix_from_rows(c, *n, *n, "c")?,
                matrix_from_rows(gamma, *n, *m, "gamma")?,
                matrix_from_rows(b, *m, *n, "b")?,
                matrix_from_rows(beta, *m, *m, "beta")?,
                DVector::from_vec(a.clone()),
            ),
            _ => Ok(self.to_lhc_params()?.to_linear_model()),
        }
    }

    /// Initial state `(y0, x0)`, defaulting to `y0 = 1` and `x0 = 0`.
    pub fn initial_state(&self) -> Result<State> {
        match self {
            ModelFile::Lhcc { m, y0, x0, .. } | ModelFile::Lhc { m, y0, x0, .. } => {
                let y = y0.unwrap_or(1.0);
                let x = match x0 {
                    Some(v) => {
                        if v.len() != *m {
                            return Err(Error::invalid("x0 must have length m"));
                        }
                        DVector::from_vec(v.clone())
                    }
                    None => DVector::zeros(*m),
                };
                State::new(y, x)
            }
            ModelFile::Linear { .. } => Err(Error::invalid(
                "generic linear schema has no scalar state; supply states explicitly",
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn one_factor_reference() -> LhcParams {
        // γ = 0.25, roots ℓ1 = 0.05, ℓ2 = 1, σ = 0.75
        LhcParams::one_factor_from_roots(0.25, 0.05, 1.0, 0.75).unwrap()
    }

    fn bombardier_lhcc2() -> LhccParams {
        LhccParams::new(
            0.205,
            vec![0.546, 0.421],
            vec![0.624, 0.512],
            vec![0.3, 0.3],
        )
        .unwrap()
    }

    #[test]
    fn one_factor_reference_validates() {
        let p = one_factor_reference();
        assert_relative_eq!(p.b[0], 0.2, epsilon = 1e-15);
        assert_relative_eq!(p.beta[(0, 0)], -1.05, epsilon = 1e-15);
        let rep = validate_lhc(&p);
        assert!(rep.valid);
        assert_relative_eq!(rep.slack_upper[0], 0.6, epsilon = 1e-12);
        // b = 0.2 < σ²/2 = 0.28125: zero boundary attainable
        assert!(!rep.nonattain_zero[0]);
        assert!(rep.nonattain_upper[0]);
    }

    #[test]
    fn degenerate_frozen_factor_is_valid_with_zero_slack() {
        let p = LhcParams::new(
            DVector::zeros(1),
            DVector::zeros(1),
            DMatrix::zeros(1, 1),
            DVector::zeros(1),
        )
        .unwrap();
        let rep = validate_lhc(&p);
        assert!(rep.valid);
        assert_eq!(rep.slack_zero, vec![0.0]);
        assert_eq!(rep.slack_upper, vec![0.0]);
    }

    #[test]
    fn cascade_embedding_reference_values() {
        let p = bombardier_lhcc2();
        let slack = p.constraint_slack();
        // binding within three-decimal rounding
        assert!(slack[0].abs() < 1e-3, "slack {}", slack[0]);
        let lhc = lhcc_to_lhc(&p).unwrap();
        assert!(validate_lhc(&lhc).valid);
        assert_relative_eq!(lhc.beta[(0, 0)], -0.546, epsilon = 1e-15);
        assert_relative_eq!(lhc.beta[(0, 1)], 0.546 * 0.624, epsilon = 1e-15);
        assert_relative_eq!(lhc.b[1], 0.421 * 0.512, epsilon = 1e-15);
        assert_eq!(lhc.b[0], 0.0);
        assert_eq!(lhc.gamma[1], 0.0);
    }

    #[test]
    fn cascade_zero_intensity_edge() {
        let p = LhccParams::new(0.0, vec![1.0], vec![1.0], vec![0.0]).unwrap();
        let lhc = lhcc_to_lhc(&p).unwrap();
        assert_eq!(lhc.beta[(0, 0)], -1.0);
        assert_eq!(lhc.b[0], 1.0);
        assert_eq!(lhc.gamma[0], 0.0);
    }

    #[test]
    fn cascade_constraint_violation_names_dimension() {
        let p = LhccParams::new(0.205, vec![0.546, 0.421], vec![0.7, 0.512], vec![0.3, 0.3])
            .unwrap();
        let err = lhcc_to_lhc(&p).unwrap_err();
        assert!(err.to_string().contains("dimension 1"), "{err}");
    }

    #[test]
    fn disney_lhcc3_is_valid_after_rounding_clip() {
        let p = LhccParams::new(
            0.064,
            vec![0.258, 0.229, 0.091],
            vec![0.753, 0.721, 0.298],
            vec![0.2, 0.2, 0.2],
        )
        .unwrap();
        // three-decimal rounding overshoots the bound by ~1e-3
        let clipped = p.clip_to_constraint();
        let lhc = lhcc_to_lhc(&clipped).unwrap();
        assert!(validate_lhc(&lhc).valid);
        for (raw, cl) in p.theta.iter().zip(&clipped.theta) {
            assert!((raw - cl).abs() < 5e-3);
        }
    }

    #[test]
    fn drift_matrix_blocks() {
        let p = one_factor_reference();
        let a = p.to_linear_model().drift_matrix(0.0);
        let expect = DMatrix::from_row_slice(2, 2, &[0.0, -0.25, 0.2, -1.05]);
        assert_relative_eq!(a, expect, epsilon = 1e-15);
        let a_star = p.to_linear_model().drift_matrix(0.0252);
        assert_relative_eq!(a_star[(0, 0)], -0.0252, epsilon = 1e-15);
        assert_relative_eq!(a_star[(1, 1)], -1.05 - 0.0252, epsilon = 1e-15);
        assert_relative_eq!(a_star[(0, 1)], -0.25, epsilon = 1e-15);
    }

    #[test]
    fn intensity_values() {
        let p = one_factor_reference();
        let model = p.to_linear_model();
        let zero = State::new(1.0, DVector::from_vec(vec![0.0])).unwrap();
        assert_eq!(model.intensity(&zero).unwrap(), 0.0);
        // x = y: constant-intensity corner λ = γ
        let corner = State::new(0.8, DVector::from_vec(vec![0.8])).unwrap();
        assert_relative_eq!(model.intensity(&corner).unwrap(), 0.25, epsilon = 1e-14);
        let s = State::new(1.0, DVector::from_vec(vec![0.2])).unwrap();
        assert_relative_eq!(model.intensity(&s).unwrap(), 0.05, epsilon = 1e-14);
    }

    #[test]
    fn intensity_stays_in_bounds() {
        let p = bombardier_lhcc2().to_lhc();
        let model = p.to_linear_model();
        let bound = p.intensity_bound();
        for ints in 0..20 {
            let y = 0.05 + 0.045 * ints as f64;
            let x1 = y * (ints as f64 / 19.0);
            let x2 = y * (1.0 - ints as f64 / 19.0);
            let s = State::new(y, DVector::from_vec(vec![x1, x2])).unwrap();
            let lam = model.intensity(&s).unwrap();
            assert!((-1e-14..=bound + 1e-14).contains(&lam));
        }
    }

    #[test]
    fn state_membership() {
        assert!(State::new(0.0, DVector::zeros(1)).is_err());
        assert!(State::new(1.1, DVector::zeros(1)).is_err());
        assert!(State::new(0.5, DVector::from_vec(vec![0.6])).is_err());
        assert!(State::new(0.5, DVector::from_vec(vec![-0.1])).is_err());
        assert!(State::new(0.5, DVector::from_vec(vec![0.5])).is_ok());
    }

    #[test]
    fn binding_representative_recovers_truth() {
        // an exactly binding cascade, pushed along the rescaling orbit,
        // comes back
        let truth = LhccParams::new(
            0.205,
            vec![0.546, 0.421],
            vec![1.0 - 0.205 / 0.546, 1.0 - 0.205 / 0.421],
            vec![0.3, 0.3],
        )
        .unwrap()
        .clip_to_constraint();
        // orbit point: l1 = 1.08, l2 solves nothing in particular
        let (l1, l2) = (1.08, 0.95);
        let moved = LhccParams {
            gamma1: truth.gamma1 * l1,
            kappa: truth.kappa.clone(),
            theta: vec![truth.theta[0] * l2 / l1, truth.theta[1] / l2],
            sigma: truth.sigma.clone(),
        };
        let back = moved.binding_representative();
        assert_relative_eq!(back.gamma1, truth.gamma1, epsilon = 1e-9);
        assert_relative_eq!(back.theta[0], truth.theta[0], epsilon = 1e-9);
        assert_relative_eq!(back.theta[1], truth.theta[1], epsilon = 1e-9);
        // the representative really binds
        for s in back.constraint_slack() {
            assert!(s.abs() < 1e-9 && s >= 0.0, "slack {s}");
        }
    }

    #[test]
    fn clip_to_constraint_yields_valid_embedding() {
        for (g1, kappa, theta) in [
            (0.400, vec![1.316, 0.884, 0.668], vec![0.696, 0.548, 0.401]),
            (0.064, vec![0.258, 0.229, 0.091], vec![0.753, 0.721, 0.298]),
        ] {
            let p = LhccParams::new(g1, kappa, theta, vec![0.2; 3]).unwrap();
            let clipped = p.clip_to_constraint();
            let lhc = lhcc_to_lhc(&clipped).unwrap();
            assert!(validate_lhc(&lhc).valid, "{clipped:?}");
        }
    }

    #[test]
    fn canonicalize_identity_and_rescaling() {
        let p = one_factor_reference();
        let id = canonicalize(&p, &DVector::from_vec(vec![1.0])).unwrap();
        assert_eq!(id, p);
        let q = canonicalize(&p, &DVector::from_vec(vec![2.0])).unwrap();
        assert_relative_eq!(q.gamma[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(q.b[0], 0.1, epsilon = 1e-15);
        assert_relative_eq!(q.beta[(0, 0)], -1.05, epsilon = 1e-15);
    }

    #[test]
    fn canonicalize_group_action() {
        let p = bombardier_lhcc2().clip_to_constraint().to_lhc();
        // dyadic scales compose exactly in floating point
        let l1 = DVector::from_vec(vec![2.0, 0.5]);
        let l2 = DVector::from_vec(vec![4.0, 0.25]);
        let l12 = DVector::from_vec(vec![8.0, 0.125]);
        let step = canonicalize(&canonicalize(&p, &l1).unwrap(), &l2).unwrap();
        let joint = canonicalize(&p, &l12).unwrap();
        assert_eq!(step, joint);
    }

    #[test]
    fn mpr_lambda_special_values() {
        let p = one_factor_reference();
        let s = State::new(1.0, DVector::from_vec(vec![0.5])).unwrap();
        // no measure change
        let zero = mpr_lambda(&p, &p.b, &p.beta, &s).unwrap();
        assert_eq!(zero[0], 0.0);
        // β shift -0.1 at the interior point
        let mut beta_p = p.beta.clone();
        beta_p[(0, 0)] += -0.1;
        let lam = mpr_lambda(&p, &p.b, &beta_p, &s).unwrap();
        assert_relative_eq!(lam[0], -0.1 * 0.5 / (0.75 * 0.5), epsilon = 1e-14);
        // case 1 at the lower boundary: Λ = Δβ sqrt(x)/(σ sqrt(y-x)) = 0
        let low = State::new(1.0, DVector::from_vec(vec![0.0])).unwrap();
        let lam0 = mpr_lambda(&p, &p.b, &beta_p, &low).unwrap();
        assert_eq!(lam0[0], 0.0);
        // boundary without an applicable special case
        let mut b_p = p.b.clone();
        b_p[0] += 0.05;
        assert!(matches!(
            mpr_lambda(&p, &b_p, &p.beta, &low),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn mpr_case1_formula_interior() {
        let p = one_factor_reference();
        let s = State::new(1.0, DVector::from_vec(vec![0.3])).unwrap();
        let mut beta_p = p.beta.clone();
        beta_p[(0, 0)] += -0.2;
        let lam = mpr_lambda(&p, &p.b, &beta_p, &s).unwrap();
        let case1 = -0.2 * s.x[0].sqrt() / (p.sigma[0] * (s.y - s.x[0]).sqrt());
        assert_relative_eq!(lam[0], case1, epsilon = 1e-14);
    }

    #[test]
    fn mpr_check_cases() {
        let p = one_factor_reference();
        let mut beta_p = p.beta.clone();
        beta_p[(0, 0)] += -0.1;
        // case 1: only β_ii shifted; lower condition relaxes to slack ≥ 0
        let rep = mpr_check(&p, &p.b, &beta_p).unwrap();
        assert!(rep.ok, "{rep:?}");
        // general shift requires σ²/2 margins on both boundaries, which the
        // reference parameters fail at x = 0
        let mut b_p = p.b.clone();
        b_p[0] += 0.01;
        let rep2 = mpr_check(&p, &b_p, &p.beta).unwrap();
        assert!(!rep2.ok);
    }

    #[test]
    fn model_file_round_trip() {
        let text = r#"{"type":"lhcc","m":2,"gamma1":0.205,"kappa":[0.546,0.421],
                       "theta":[0.624,0.512],"sigma":[0.3,0.3],"x0":[0.2,0.1]}"#;
        let f = ModelFile::from_json(text).unwrap();
        let p = f.to_lhc_params().unwrap();
        assert_eq!(p.m, 2);
        let s = f.initial_state().unwrap();
        assert_eq!(s.y, 1.0);
        assert_eq!(s.x[1], 0.1);
        // unknown fields are rejected
        let bad = r#"{"type":"lhcc","m":1,"gamma1":0.1,"kappa":[1.0],
                      "theta":[0.5],"sigma":[0.3],"extra":1}"#;
        assert!(ModelFile::from_json(bad).is_err());
    }
}
