//! Quadrature helpers: Gauss-Legendre rules and an adaptive Simpson rule
//! for matrix-valued integrands.

use nalgebra::DMatrix;

/// Gauss-Legendre nodes and weights on `[-1, 1]`, by Newton iteration on
/// the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 1..n {
                let p2 = ((2 * k + 1) as f64 * x * p1 - k as f64 * p0) / (k + 1) as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Gauss-Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    (
        x.iter().map(|xi| c + h * xi).collect(),
        w.iter().map(|wi| wi * h).collect(),
    )
}

/// Adaptive Simpson integration of a matrix-valued function, with the
/// error controlled entrywise in the max norm.
pub fn adaptive_simpson_matrix<F>(f: &F, a: f64, b: f64, tol: f64, max_depth: u32) -> DMatrix<f64>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    let fa = f(a);
    let fm = f(0.5 * (a + b));
    let fb = f(b);
    let whole = simpson_slice(&fa, &fm, &fb, b - a);
    recurse(f, a, b, &fa, &fm, &fb, whole, tol, max_depth)
}

fn simpson_slice(fa: &DMatrix<f64>, fm: &DMatrix<f64>, fb: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    (fa + fm * 4.0 + fb) * (h / 6.0)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F>(
    f: &F,
    a: f64,
    b: f64,
    fa: &DMatrix<f64>,
    fm: &DMatrix<f64>,
    fb: &DMatrix<f64>,
    whole: DMatrix<f64>,
    tol: f64,
    depth: u32,
) -> DMatrix<f64>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    let m = 0.5 * (a + b);
    let fl = f(0.5 * (a + m));
    let fr = f(0.5 * (m + b));
    let left = simpson_slice(fa, &fl, fm, m - a);
    let right = simpson_slice(fm, &fr, fb, b - m);
    let sum = &left + &right;
    let err = (&sum - &whole).amax();
    if depth == 0 || err <= 15.0 * tol {
        // Richardson correction
        let correction = (&sum - &whole) / 15.0;
        sum + correction
    } else {
        recurse(f, a, m, fa, &fl, fm, left, tol / 2.0, depth - 1)
            + recurse(f, m, b, fm, &fr, fb, right, tol / 2.0, depth - 1)
    }
}
