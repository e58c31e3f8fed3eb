//! Chebyshev interpolation on a rectangle.
//!
//! First-kind polynomials shifted to `[a, b]` through `u = (x − μ)/σ` with
//! `μ = (a+b)/2`, `σ = (b−a)/2`; interpolation at the tensor grid of
//! Chebyshev nodes, which avoids the Runge phenomenon of equispaced
//! interpolation.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Chebyshev nodes for `[a, b]` at order `n`:
/// `x_j = μ + σ cos((1/2 + j)π/(n+1))`, `j = 0..n`.
pub fn nodes(n: usize, a: f64, b: f64) -> Vec<f64> {
    let mu = 0.5 * (a + b);
    let sigma = 0.5 * (b - a);
    (0..=n)
        .map(|j| mu + sigma * angle(n, j).cos())
        .collect()
}

fn angle(n: usize, j: usize) -> f64 {
    (0.5 + j as f64) * std::f64::consts::PI / (n + 1) as f64
}

/// Clenshaw evaluation of `Σ_k c_k T_k(u)`.
pub fn clenshaw(coeffs: &[f64], u: f64) -> f64 {
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for k in (1..coeffs.len()).rev() {
        let b0 = coeffs[k] + 2.0 * u * b1 - b2;
        b2 = b1;
        b1 = b0;
    }
    coeffs.first().copied().unwrap_or(0.0) + u * b1 - b2
}

/// Tensor-product Chebyshev interpolant of a bivariate function.
#[derive(Debug, Clone)]
pub struct ChebGrid2D {
    pub order: usize,
    pub rect_s: (f64, f64),
    pub rect_x: (f64, f64),
    /// `coeffs[(n, m)]` multiplies `T_n(s̃) T_m(x̃)`.
    pub coeffs: DMatrix<f64>,
}

impl ChebGrid2D {
    /// Interpolate `f` at the `(order+1)²` node tensor grid:
    /// `c_{n,m} = 2^{1{n≠0+ 1{m≠0}} / (N+1)² Σ_{i,j} f(s_i, x_j) cos(n z_i) cos(m z_j)`.
    pub fn fit<F>(f: F, rect_s: (f64, f64), rect_x: (f64, f64), order: usize) -> Result<Self>
    where
        F: Fn(f64, f64) -> f64,
    {
        if !(rect_s.1 > rect_s.0 && rect_x.1 > rect_x.0) {
            return Err(Error::invalid("degenerate interpolation rectangle"));
        }
        let n1 = order + 1;
        let s_nodes = nodes(order, rect_s.0, rect_s.1);
        let x_nodes = nodes(order, rect_x.0, rect_x.1);
        let mut values = DMatrix::zeros(n1, n1);
        for i in 0..n1 {
            for j in 0..n1 {
                let v = f(s_nodes[i], x_nodes[j]);
                if !v.is_finite() {
                    return Err(Error::invalid("target function returned a non-finite value"));
                }
                values[(i, j)] = v;
            }
        }
        // cos tables
        let mut cos_tab = DMatrix::zeros(n1, n1); // cos(n z_i)
        for n in 0..n1 {
            for i in 0..n1 {
                cos_tab[(n, i)] = (n as f64 * angle(order, i)).cos();
            }
        }
        let mut coeffs = DMatrix::zeros(n1, n1);
        let norm = 1.0 / (n1 * n1) as f64;
        for n in 0..n1 {
            for m in 0..n1 {
                let mut acc = 0.0;
                for i in 0..n1 {
                    for j in 0..n1 {
                        acc += values[(i, j)] * cos_tab[(n, i)] * cos_tab[(m, j)];
                    }
                }
                let scale = (if n != 0 { 2.0 } else { 1.0 }) * (if m != 0 { 2.0 } else { 1.0 });
                coeffs[(n, m)] = scale * acc * norm;
            }
        }
        Ok(ChebGrid2D {
            order,
            rect_s,
            rect_x,
            coeffs,
        })
    }

    fn scaled(range: (f64, f64), v: f64) -> f64 {
        (v - 0.5 * (range.0 + range.1)) / (0.5 * (range.1 - range.0))
    }

    pub fn eval(&self, s: f64, x: f64) -> f64 {
        let us = Self::scaled(self.rect_s, s);
        let ux = Self::scaled(self.rect_x, x);
        // contract the x-direction first, then Clenshaw over s
        let n1 = self.order + 1;
        let mut row_vals = vec![0.0; n1];
        for n in 0..n1 {
            let row: Vec<f64> = (0..n1).map(|m| self.coeffs[(n, m)]).collect();
            row_vals[n] = clenshaw(&row, ux);
        }
        clenshaw(&row_vals, us)
    }

    /// Largest deviation `|f − p|` over a uniform evaluation grid.
    pub fn sup_error<F>(&self, f: F, grid: usize) -> f64
    where
        F: Fn(f64, f64) -> f64,
    {
        let mut worst: f64 = 0.0;
        for i in 0..grid {
            let s = self.rect_s.0
                + (self.rect_s.1 - self.rect_s.0) * i as f64 / (grid - 1) as f64;
            for j in 0..grid {
                let x = self.rect_x.0
                    + (self.rect_x.1 - self.rect_x.0) * j as f64 / (grid - 1) as f64;
                worst = worst.max((f(s, x) - self.eval(s, x)).abs());
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn node_values_order_one() {
        let n = nodes(1, -1.0, 1.0);
        assert_relative_eq!(n[0], (std::f64::consts::PI / 4.0).cos(), epsilon = 1e-15);
        assert_relative_eq!(n[1], (3.0 * std::f64::consts::PI / 4.0).cos(), epsilon = 1e-15);
        assert_relative_eq!(n[0], 0.7071067811865476, epsilon = 1e-12);
    }

    #[test]
    fn interpolation_exact_at_nodes() {
        let f = |s: f64, x: f64| (s * 1.3).sin() * (x - 0.4).exp();
        let fit = ChebGrid2D::fit(f, (0.2, 1.0), (-0.5, 0.5), 8).unwrap();
        for s in nodes(8, 0.2, 1.0) {
            for x in nodes(8, -0.5, 0.5) {
                assert_relative_eq!(fit.eval(s, x), f(s, x), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn polynomial_reproduction() {
        // coordinate degree ≤ N is reproduced exactly everywhere
        let f = |s: f64, x: f64| 2.0 + s * s * s - 0.7 * x * x + s * x * x;
        let fit = ChebGrid2D::fit(f, (0.0, 2.0), (-1.0, 3.0), 3).unwrap();
        assert!(fit.sup_error(f, 41) < 1e-12);
    }

    #[test]
    fn smooth_function_error_decays() {
        let f = |s: f64, x: f64| (s + x).exp();
        let e4 = ChebGrid2D::fit(f, (0.0, 1.0), (0.0, 1.0), 4).unwrap().sup_error(f, 64);
        let e10 = ChebGrid2D::fit(f, (0.0, 1.0), (0.0, 1.0), 10).unwrap().sup_error(f, 64);
        assert!(e10 < e4 * 1e-4, "e4 = {e4}, e10 = {e10}");
    }

    #[test]
    fn degenerate_rectangle_rejected() {
        assert!(ChebGrid2D::fit(|_, _| 0.0, (1.0, 1.0), (0.0, 1.0), 3).is_err());
    }
}
