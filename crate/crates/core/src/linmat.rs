//! Dense matrix-exponential kernels.
//!
//! Every closed-form price in the linear framework reduces to the matrix
//! exponential `e^{Ah}` and the two integrals
//!
//! ```text
//! ∫_0^h e^{As} ds        and        ∫_t^{tM} s e^{A(s-t)} ds .
//! ```
//!
//! When `A` is safely invertible both integrals have explicit inverse-based
//! expressions; otherwise they are read off blocks of the exponential of an
//! augmented matrix (Van Loan's construction), which is valid for any `A`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::LhccParams;

pub type SquareMatrix = DMatrix<f64>;

/// Reciprocal condition estimate below which the inverse-based branches of
/// the exponential integrals are abandoned for block augmentation.
pub const RCOND_THRESHOLD: f64 = 1e-10;

fn check_finite(a: &SquareMatrix) -> Result<()> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    Ok(())
}

fn norm_1(a: &SquareMatrix) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Reciprocal 1-norm condition estimate `1 / (‖A‖₁ ‖A⁻¹‖₁)`.
///
/// Computed from the explicit inverse; the matrices in this crate are small.
/// Returns 0 when the LU factorization fails.
pub fn rcond_1(a: &SquareMatrix) -> f64 {
    let na = norm_1(a);
    if na == 0.0 {
        return 0.0;
    }
    match a.clone().try_inverse() {
        Some(inv) => {
            let ni = norm_1(&inv);
            if ni.is_finite() && ni > 0.0 {
                1.0 / (na * ni)
            } else {
                0.0
            }
        }
        None => 0.0,
    }
}

// Padé(13) coefficients, Higham "The Scaling and Squaring Method for the
// Matrix Exponential Revisited" (2005).
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// Matrix exponential `e^A` by scaling-and-squaring with a Padé(13)
/// approximant.
pub fn expm(a: &SquareMatrix) -> Result<SquareMatrix> {
    check_finite(a)?;
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::invalid("expm requires a square matrix"));
    }
    if n == 0 {
        return Ok(SquareMatrix::zeros(0, 0));
    }
    if n == 1 {
        return Ok(SquareMatrix::from_element(1, 1, a[(0, 0)].exp()));
    }

    let norm = norm_1(a);
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as u32
    } else {
        0
    };
    let a1 = a / 2f64.powi(s as i32);

    let eye = SquareMatrix::identity(n, n);
    let a2 = &a1 * &a1;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;

    let u_inner = &a6 * PADE13[13] + &a4 * PADE13[11] + &a2 * PADE13[9];
    let u = &a1
        * (&a6 * &u_inner + &a6 * PADE13[7] + &a4 * PADE13[5] + &a2 * PADE13[3] + &eye * PADE13[1]);
    let v_inner = &a6 * PADE13[12] + &a4 * PADE13[10] + &a2 * PADE13[8];
    let v = &a6 * &v_inner + &a6 * PADE13[6] + &a4 * PADE13[4] + &a2 * PADE13[2] + &eye * PADE13[0];

    let num = &v + &u;
    let den = &v - &u;
    let mut r = den
        .lu()
        .solve(&num)
        .ok_or_else(|| Error::invalid("Padé denominator is singular"))?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

/// Action `e^{Ah} v` without forming the full exponential.
///
/// Scaled truncated Taylor series: the horizon is split so that each
/// sub-step has `‖Ah/s‖₁ ≤ 1`, where ~20 terms reach double precision.
pub fn expm_action(a: &SquareMatrix, h: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
    check_finite(a)?;
    if !(h.is_finite() && h >= 0.0) {
        return Err(Error::invalid(format!("horizon {h} must be ≥ 0")));
    }
    if a.nrows() != v.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch: matrix {}x{}, vector {}",
            a.nrows(),
            a.ncols(),
            v.len()
        )));
    }
    if h == 0.0 {
        return Ok(v.clone());
    }
    let norm = norm_1(a) * h;
    let steps = (norm.ceil() as usize).max(1);
    let dt = h / steps as f64;

    let mut w = v.clone();
    for _ in 0..steps {
        let mut term = w.clone();
        let mut acc = w.clone();
        for k in 1..=60usize {
            term = a * &term * (dt / k as f64);
            acc += &term;
            if term.amax() <= 1e-18 * acc.amax().max(f64::MIN_POSITIVE) {
                break;
            }
        }
        w = acc;
    }
    Ok(w)
}

/// `∫_0^h e^{As} ds`.
///
/// Invertible branch `A⁻¹(e^{Ah} − Id)`; otherwise the top-right block of
/// `exp(h [[A, Id], [0, 0]])`.
pub fn exp_integral(a: &SquareMatrix, h: f64) -> Result<SquareMatrix> {
    check_finite(a)?;
    if !(h.is_finite() && h >= 0.0) {
        return Err(Error::invalid(format!("horizon {h} must be ≥ 0")));
    }
    let n = a.nrows();
    if h == 0.0 {
        return Ok(SquareMatrix::zeros(n, n));
    }
    if rcond_1(a) > RCOND_THRESHOLD {
        let e = expm(&(a * h))?;
        let rhs = e - SquareMatrix::identity(n, n);
        a.clone()
            .lu()
            .solve(&rhs)
            .map(Ok)
            .unwrap_or_else(|| augmented_integral(a, h).map(|(g, _)| g))
    } else {
        augmented_integral(a, h).map(|(g, _)| g)
    }
}

/// Exponential of the Van Loan block matrix
/// `[[A, Id, 0], [0, 0, Id], [0, 0, 0]] h`, returning
/// `G = ∫_0^h e^{As} ds` and `H = ∫_0^h (h−s) e^{As} ds`.
fn augmented_integral(a: &SquareMatrix, h: f64) -> Result<(SquareMatrix, SquareMatrix)> {
    let n = a.nrows();
    let mut c = SquareMatrix::zeros(3 * n, 3 * n);
    c.view_mut((0, 0), (n, n)).copy_from(a);
    c.view_mut((0, n), (n, n))
        .copy_from(&SquareMatrix::identity(n, n));
    c.view_mut((n, 2 * n), (n, n))
        .copy_from(&SquareMatrix::identity(n, n));
    let e = expm(&(c * h))?;
    let g = e.view((0, n), (n, n)).clone_owned();
    let hh = e.view((0, 2 * n), (n, n)).clone_owned();
    Ok((g, hh))
}

/// `∫_t^{tM} s e^{A(s−t)} ds`.
///
/// Invertible branch is
/// `(tM−t) A⁻¹ e^{A(tM−t)} + A⁻¹ (Id·t − A⁻¹)(e^{A(tM−t)} − Id)`;
/// the fallback decomposes the integral as
/// `∫_0^h u e^{Au} du + t ∫_0^h e^{Au} du` with both terms taken from the
/// augmented exponential.
pub fn exp_integral_weighted(a: &SquareMatrix, t: f64, t_m: f64) -> Result<SquareMatrix> {
    check_finite(a)?;
    if !(t.is_finite() && t_m.is_finite() && t_m >= t) {
        return Err(Error::invalid(format!("need tM ({t_m}) ≥ t ({t})")));
    }
    let n = a.nrows();
    let h = t_m - t;
    if h == 0.0 {
        return Ok(SquareMatrix::zeros(n, n));
    }
    if rcond_1(a) > RCOND_THRESHOLD {
        let e = expm(&(a * h))?;
        let eye = SquareMatrix::identity(n, n);
        let lu = a.clone().lu();
        let ainv_e = lu.solve(&e);
        let ainv = a.clone().try_inverse();
        if let (Some(ainv_e), Some(ainv)) = (ainv_e, ainv) {
            let inner = &eye * t - &ainv;
            return Ok(ainv_e * h + ainv * inner * (e - eye));
        }
    }
    let (g, hh) = augmented_integral(a, h)?;
    // ∫_0^h u e^{Au} du = h·G − H
    Ok(&g * h - hh + g * t)
}

/// Invertibility of `A* = A − r·Id` for the LHCC cascade.
///
/// For `r > 0` invertibility is guaranteed analytically, so the answer is
/// `true` without inspection; otherwise a numerical rank check decides.
/// Also returns the reciprocal condition estimate of `A*`.
pub fn lhcc_astar_invertible(r: f64, params: &LhccParams) -> (bool, f64) {
    let a_star = params.to_lhc().to_linear_model().drift_matrix(r);
    let rc = rcond_1(&a_star);
    if r > 0.0 {
        (true, rc)
    } else {
        (rc > 0.0, rc)
    }
}
