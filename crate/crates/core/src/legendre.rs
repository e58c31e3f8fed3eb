//! Standard Legendre polynomials on `[-1, 1]` and the exact definite
//! integrals needed for Fourier-Legendre payoff projections.
//!
//! `Le_0 = 1`, `Le_1 = x`,
//! `(n+1) Le_{n+1}(x) = (2n+1) x Le_n(x) − n Le_{n−1}(x)`.

/// `Le_n(x)` by the three-term recurrence.
pub fn legendre_eval(n: usize, x: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 1..n {
        let p2 = ((2 * k + 1) as f64 * x * p1 - k as f64 * p0) / (k + 1) as f64;
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// Clenshaw summation of `Σ_j c_j Le_j(x)`; stable for high orders where
/// naive accumulation of the recurrence loses digits.
pub fn clenshaw(coeffs: &[f64], x: f64) -> f64 {
    let n = coeffs.len();
    if n == 0 {
        return 0.0;
    }
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for k in (1..n).rev() {
        // α_k(x) = (2k+1)/(k+1) x, β_{k+1} = -(k+1)/(k+2)
        let b0 = coeffs[k] + (2 * k + 1) as f64 / (k + 1) as f64 * x * b1
            - (k + 1) as f64 / (k + 2) as f64 * b2;
        b2 = b1;
        b1 = b0;
    }
    coeffs[0] + x * b1 - 0.5 * b2
}

/// Antiderivative value: `∫_lo^hi Le_n(u) du`, exact through the identity
/// `(2n+1) Le_n = Le'_{n+1} − Le'_{n−1}`.
pub fn defint(n: usize, lo: f64, hi: f64) -> f64 {
    let prim = |u: f64| -> f64 {
        if n == 0 {
            u
        } else {
            (legendre_eval(n + 1, u) - legendre_eval(n - 1, u)) / (2 * n + 1) as f64
        }
    };
    prim(hi) - prim(lo)
}

/// `∫_lo^hi u Le_n(u) du`, via
/// `u Le_n = ((n+1) Le_{n+1} + n Le_{n−1}) / (2n+1)`.
pub fn defint_x(n: usize, lo: f64, hi: f64) -> f64 {
    if n == 0 {
        return 0.5 * (hi * hi - lo * lo);
    }
    ((n + 1) as f64 * defint(n + 1, lo, hi) + n as f64 * defint(n - 1, lo, hi))
        / (2 * n + 1) as f64
}
