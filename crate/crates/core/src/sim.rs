//! Monte Carlo engine for LHC dynamics.
//!
//! Paths are generated by an Euler-Maruyama scheme with full truncation at
//! the state-space boundary: diffusion arguments are clamped into `[0, y]`
//! before evaluating `σ_i sqrt(x_i (y − x_i))`, and the post-step factor is
//! clamped again into `[0, y]`. The survival coordinate decays exactly by
//! the explicit Euler drift `−γ'x dt`, so every path keeps `y > 0` and
//! respects the lower bound `Y_t ≥ Y_0 e^{−γ'1 t}` up to step-size error.
//!
//! Ensembles are lazy: a path is a deterministic function of
//! `(seed, path index)` through a counter-mode generator, so estimators can
//! re-walk paths on demand and results are independent of thread count.

use nalgebra::DVector;
use rand::distr::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::linmat::{expm, SquareMatrix};
use crate::model::{validate_lhc, LhcParams, State};
use crate::quad::adaptive_simpson_matrix;

/// Stream id offsets separating the independent per-path generators.
const STREAM_DIFFUSION: u64 = 0;
const STREAM_JUMPS: u64 = 1 << 62;
const STREAM_DEFAULTS: u64 = 1 << 63;

/// Euler scheme configuration.
#[derive(Debug, Clone)]
pub struct PathConfig {
    /// Requested step (year fraction); the effective step divides the
    /// horizon exactly.
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Clamp-at-boundary scheme flag; disabling it is only useful for
    /// diagnostics.
    pub clamp: bool,
    /// Antithetic pairing of consecutive paths.
    pub antithetic: bool,
}

impl PathConfig {
    pub fn new(dt: f64, horizon: f64, n_paths: usize, seed: u64) -> Result<Self> {
        if !(dt > 0.0 && horizon > 0.0) || n_paths == 0 {
            return Err(Error::invalid("need dt > 0, horizon > 0, n_paths ≥ 1"));
        }
        Ok(PathConfig {
            dt,
            horizon,
            n_paths,
            seed,
            clamp: true,
            antithetic: false,
        })
    }

    pub fn steps(&self) -> usize {
        ((self.horizon / self.dt).round() as usize).max(1)
    }

    pub fn dt_effective(&self) -> f64 {
        self.horizon / self.steps() as f64
    }
}

fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Lazy ensemble of diffusion paths.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub params: LhcParams,
    pub s0: State,
    pub cfg: PathConfig,
}

/// Per-step observation passed to path visitors: the state after step `k`
/// (time `t = k·dt`), together with the pre-step state.
pub struct StepView<'a> {
    pub step: usize,
    pub t: f64,
    pub y_prev: f64,
    pub x_prev: &'a [f64],
    pub y: f64,
    pub x: &'a [f64],
}

/// Euler-Maruyama path ensemble for a validated LHC model.
pub fn simulate_paths(p: &LhcParams, s0: &State, cfg: &PathConfig) -> Result<Ensemble> {
    let report = validate_lhc(p);
    if !report.valid {
        return Err(Error::Constraint(format!(
            "LHC drift conditions fail: slacks {:?} / {:?}",
            report.slack_zero, report.slack_upper
        )));
    }
    if s0.x.len() != p.m {
        return Err(Error::invalid("initial state dimension mismatch"));
    }
    Ok(Ensemble {
        params: p.clone(),
        s0: s0.clone(),
        cfg: cfg.clone(),
    })
}

impl Ensemble {
    /// Walk one path, calling the visitor after every step. Returns the
    /// number of clamped factor increments.
    pub fn walk_path<F: FnMut(&StepView)>(&self, idx: usize, mut visit: F) -> usize {
        let p = &self.params;
        let m = p.m;
        let steps = self.cfg.steps();
        let dt = self.cfg.dt_effective();
        let sqdt = dt.sqrt();
        let (stream, flip) = if self.cfg.antithetic {
            (STREAM_DIFFUSION + (idx / 2) as u64, idx % 2 == 1)
        } else {
            (STREAM_DIFFUSION + idx as u64, false)
        };
        let mut rng = path_rng(self.cfg.seed, stream);
        let sign = if flip { -1.0 } else { 1.0 };

        let mut y = self.s0.y;
        let mut x: Vec<f64> = self.s0.x.iter().copied().collect();
        let mut x_prev = x.clone();
        let mut clamped = 0usize;
        for k in 1..=steps {
            x_prev.copy_from_slice(&x);
            let y_prev = y;
            // survival decay from the pre-step factors
            let decay: f64 = (0..m).map(|i| p.gamma[i] * x[i]).sum();
            y = (y_prev - decay * dt).max(f64::MIN_POSITIVE);
            for i in 0..m {
                let mut drift = p.b[i] * y_prev;
                for j in 0..m {
                    drift += p.beta[(i, j)] * x_prev[j];
                }
                let arg = x_prev[i].clamp(0.0, y_prev);
                let vol = p.sigma[i] * (arg * (y_prev - arg)).sqrt();
                let z: f64 = rng.sample(StandardNormal);
                let mut xi = x_prev[i] + drift * dt + vol * sqdt * sign * z;
                if self.cfg.clamp {
                    let clipped = xi.clamp(0.0, y);
                    if clipped != xi {
                        clamped += 1;
                        xi = clipped;
                    }
                }
                x[i] = xi;
            }
            visit(&StepView {
                step: k,
                t: k as f64 * dt,
                y_prev,
                x_prev: &x_prev,
                y,
                x: &x,
            });
        }
        clamped
    }

    /// Terminal states of every path.
    pub fn terminal_states(&self) -> Vec<(f64, Vec<f64>)> {
        use rayon::prelude::*;
        (0..self.cfg.n_paths)
            .into_par_iter()
            .map(|idx| {
                let mut last = (self.s0.y, self.s0.x.iter().copied().collect::<Vec<_>>());
                self.walk_path(idx, |v| {
                    if v.step == self.cfg.steps() {
                        last = (v.y, v.x.to_vec());
                    }
                });
                last
            })
            .collect()
    }

    /// Fraction of factor increments that hit the boundary clamp.
    pub fn clamp_fraction(&self) -> f64 {
        use rayon::prelude::*;
        let total: usize = (0..self.cfg.n_paths)
            .into_par_iter()
            .map(|idx| self.walk_path(idx, |_| {}))
            .sum();
        total as f64 / (self.cfg.n_paths * self.cfg.steps() * self.params.m) as f64
    }

    /// Smallest `Y_T e^{γ'1 T}` across paths; the continuous-time bound
    /// makes this ≥ 1.
    pub fn min_y_scaled(&self) -> f64 {
        use rayon::prelude::*;
        let bound = self.params.intensity_bound() * self.cfg.horizon;
        (0..self.cfg.n_paths)
            .into_par_iter()
            .map(|idx| {
                let mut last = self.s0.y;
                self.walk_path(idx, |v| {
                    if v.step == self.cfg.steps() {
                        last = v.y;
                    }
                });
                last * bound.exp() / self.s0.y
            })
            .reduce(|| f64::INFINITY, f64::min)
    }

    /// Uniform default thresholds for `n_firms` doubly stochastic firms on
    /// path `idx`.
    pub fn default_thresholds(&self, idx: usize, n_firms: usize, defaults_seed: u64) -> Vec<f64> {
        let mut rng = path_rng(defaults_seed, STREAM_DEFAULTS + idx as u64);
        let unif = Uniform::new(0.0f64, 1.0).expect("unit interval");
        (0..n_firms).map(|_| rng.sample(unif)).collect()
    }
}

/// First crossing time of a nonincreasing survival path over a threshold,
/// refined by exponential interpolation inside the step.
pub fn crossing_time(t_prev: f64, t_next: f64, s_prev: f64, s_next: f64, u: f64) -> Option<f64> {
    if !(s_next <= u && u < s_prev) {
        return None;
    }
    if s_next <= 0.0 || s_prev <= 0.0 || s_next >= s_prev {
        return Some(t_next);
    }
    let lambda = (s_prev / s_next).ln() / (t_next - t_prev);
    Some(t_prev + (s_prev / u).ln() / lambda)
}

/// Compound-Poisson jump overlay: at each jump of size `ζ ∈ (0, 1]`,
/// `Y ← Y − ζ(c Y + δ'X)` and `X_i ← X_i − ζ ν_i X_i`.
#[derive(Debug, Clone)]
pub struct JumpSpec {
    pub c: f64,
    pub delta: DVector<f64>,
    pub nu: DVector<f64>,
    /// Jump arrival rate per year.
    pub rate: f64,
    pub size: JumpSizeLaw,
}

/// Law of the jump sizes on `(0, 1]`; any law on that interval keeps the
/// state inside `E` under the loss-fraction constraints.
#[derive(Debug, Clone)]
pub enum JumpSizeLaw {
    Fixed(f64),
    Beta { alpha: f64, beta: f64 },
}

impl JumpSpec {
    /// Checks `c + δ'1 < 1`, `c + δ'1 ≤ ν_i ≤ 1`, and `ν_i < 1` whenever
    /// the zero-boundary non-attainment margin applies to factor `i`.
    pub fn validate(&self, p: &LhcParams) -> Result<()> {
        if self.delta.len() != p.m || self.nu.len() != p.m {
            return Err(Error::invalid("jump spec dimension mismatch"));
        }
        if self.c < 0.0 || self.delta.iter().any(|d| *d < 0.0) {
            return Err(Error::Constraint("jump loss fractions must be nonnegative".into()));
        }
        let total = self.c + self.delta.sum();
        if total >= 1.0 {
            return Err(Error::Constraint(format!(
                "c + δ'1 = {total} must be < 1"
            )));
        }
        let report = validate_lhc(p);
        for i in 0..p.m {
            if self.nu[i] < total || self.nu[i] > 1.0 {
                return Err(Error::Constraint(format!(
                    "need c + δ'1 ≤ ν_{i} ≤ 1, got {}",
                    self.nu[i]
                )));
            }
            if report.nonattain_zero[i] && self.nu[i] >= 1.0 {
                return Err(Error::Constraint(format!(
                    "ν_{i} must be < 1 when the zero boundary is unattainable"
                )));
            }
        }
        if self.rate < 0.0 {
            return Err(Error::Constraint("jump rate must be nonnegative".into()));
        }
        match self.size {
            JumpSizeLaw::Fixed(z) => {
                if !(z > 0.0 && z <= 1.0) {
                    return Err(Error::Constraint("fixed jump size must lie in (0, 1]".into()));
                }
            }
            JumpSizeLaw::Beta { alpha, beta } => {
                if !(alpha > 0.0 && beta > 0.0) {
                    return Err(Error::Constraint("Beta shape parameters must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

/// Diffusion ensemble overlaid with compound-Poisson jumps.
#[derive(Debug, Clone)]
pub struct JumpEnsemble {
    pub base: Ensemble,
    pub jump: JumpSpec,
}

pub fn simulate_jump_paths(
    p: &LhcParams,
    jump: &JumpSpec,
    s0: &State,
    cfg: &PathConfig,
) -> Result<JumpEnsemble> {
    jump.validate(p)?;
    Ok(JumpEnsemble {
        base: simulate_paths(p, s0, cfg)?,
        jump: jump.clone(),
    })
}

/// A jump event: time and size.
#[derive(Debug, Clone, Copy)]
pub struct JumpEvent {
    pub t: f64,
    pub size: f64,
}

impl JumpEnsemble {
    /// Jump times and sizes on path `idx`, drawn from a stream independent
    /// of the diffusion stream, so a zero-rate overlay reproduces the base
    /// ensemble path for path.
    pub fn jump_events(&self, idx: usize) -> Vec<JumpEvent> {
        let cfg = &self.base.cfg;
        if self.jump.rate == 0.0 {
            return Vec::new();
        }
        let mut rng = path_rng(cfg.seed, STREAM_JUMPS + idx as u64);
        let mean = self.jump.rate * cfg.horizon;
        let count = rng.sample(Poisson::new(mean).expect("positive mean")) as usize;
        let unif = Uniform::new(0.0f64, 1.0).expect("unit interval");
        let mut events: Vec<JumpEvent> = (0..count)
            .map(|_| {
                let t = rng.sample(unif) * cfg.horizon;
                let size = match self.jump.size {
                    JumpSizeLaw::Fixed(z) => z,
                    JumpSizeLaw::Beta { alpha, beta } => {
                        rng.sample(Beta::new(alpha, beta).expect("valid shapes"))
                    }
                };
                JumpEvent { t, size }
            })
            .collect();
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        events
    }

    /// Walk one path; diffusion increments follow the base scheme and the
    /// step's jumps are applied at the step end in time order. The visitor
    /// additionally receives the jumps applied during the step.
    pub fn walk_path<F: FnMut(&StepView, &[JumpEvent])>(&self, idx: usize, mut visit: F) {
        let events = self.jump_events(idx);
        let m = self.base.params.m;
        let mut next_event = 0usize;
        let mut xbuf = vec![0.0; m];
        self.base.walk_path(idx, |view| {
            let mut y = view.y;
            xbuf.copy_from_slice(view.x);
            let lo = next_event;
            while next_event < events.len() && events[next_event].t <= view.t {
                let z = events[next_event].size;
                let dx: f64 = (0..m).map(|i| self.jump.delta[i] * xbuf[i]).sum();
                y -= z * (self.jump.c * y + dx);
                for (i, xi) in xbuf.iter_mut().enumerate() {
                    *xi -= z * self.jump.nu[i] * *xi;
                }
                next_event += 1;
            }
            let adjusted = StepView {
                step: view.step,
                t: view.t,
                y_prev: view.y_prev,
                x_prev: view.x_prev,
                y,
                x: &xbuf,
            };
            visit(&adjusted, &events[lo..next_event]);
        });
    }

    pub fn terminal_states(&self) -> Vec<(f64, Vec<f64>)> {
        use rayon::prelude::*;
        (0..self.base.cfg.n_paths)
            .into_par_iter()
            .map(|idx| {
                let mut y_run = self.base.s0.y;
                let mut x_run: Vec<f64> = self.base.s0.x.iter().copied().collect();
                self.walk_path(idx, |v, _| {
                    y_run = v.y;
                    x_run.copy_from_slice(v.x);
                });
                (y_run, x_run)
            })
            .collect()
    }
}

/// Stochastic clock specification. The Gamma clock has Lévy measure
/// `ν_Z(dζ) = γ_Z ζ^{-1} e^{-λ_Z ζ} dζ` and optional linear drift `b_Z`.
#[derive(Debug, Clone)]
pub struct ClockSpec {
    pub kind: ClockKind,
    pub gamma_z: f64,
    pub lambda_z: f64,
    pub drift_bz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockKind {
    /// Closed form `−γ_Z log(Id − A/λ_Z)`.
    Gamma,
    /// Adaptive quadrature of `∫_0^∞ (e^{Aζ} − Id) ν_Z(dζ)` with the same
    /// Gamma Lévy measure; the cross-check route.
    GammaQuadrature,
}

impl ClockSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_z > 0.0 && self.lambda_z > 0.0 && self.drift_bz >= 0.0) {
            return Err(Error::invalid("clock parameters must be positive (drift ≥ 0)"));
        }
        Ok(())
    }
}

/// Drift matrix of the time-changed process:
/// `Ā = b_Z A + ∫_0^∞ (e^{Aζ} − Id) ν_Z(dζ)`.
///
/// Requires the eigenvalues of `A` to have nonpositive real parts (checked
/// numerically), which keeps the integral convergent and the matrix
/// logarithm on the principal branch.
pub fn clock_drift(a: &SquareMatrix, clock: &ClockSpec) -> Result<SquareMatrix> {
    clock.validate()?;
    let eigs = a.clone().complex_eigenvalues();
    if eigs.iter().any(|e| e.re > 1e-9) {
        return Err(Error::Domain(format!(
            "spectrum check failed: eigenvalue with positive real part {:?}",
            eigs.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max)
        )));
    }
    let n = a.nrows();
    let base = a * clock.drift_bz;
    let levy = match clock.kind {
        ClockKind::Gamma => {
            let arg = SquareMatrix::identity(n, n) - a / clock.lambda_z;
            logm(&arg)? * (-clock.gamma_z)
        }
        ClockKind::GammaQuadrature => {
            let zeta_max = 60.0 / clock.lambda_z;
            let f = |zeta: f64| -> SquareMatrix {
                if zeta <= 1e-300 {
                    return a * clock.gamma_z;
                }
                let e = expm(&(a * zeta)).expect("finite matrix");
                (e - SquareMatrix::identity(n, n))
                    * (clock.gamma_z / zeta * (-clock.lambda_z * zeta).exp())
            };
            adaptive_simpson_matrix(&f, 0.0, zeta_max, 1e-11, 48)
        }
    };
    Ok(base + levy)
}

/// Principal matrix logarithm by inverse scaling-and-squaring: repeated
/// Denman-Beavers square roots until `‖M − Id‖` is small, then the
/// alternating series of `log(Id + X)`.
pub fn logm(m: &SquareMatrix) -> Result<SquareMatrix> {
    let n = m.nrows();
    let eye = SquareMatrix::identity(n, n);
    let mut current = m.clone();
    let mut doublings = 0u32;
    for _ in 0..60 {
        if (&current - &eye).amax() <= 0.25 {
            break;
        }
        current = sqrtm(&current)?;
        doublings += 1;
    }
    let x = &current - &eye;
    let mut term = x.clone();
    let mut acc = x.clone();
    for k in 2..=200usize {
        term = &term * &x;
        let add = &term * (if k % 2 == 0 { -1.0 } else { 1.0 } / k as f64);
        acc += &add;
        if add.amax() <= 1e-18 * acc.amax().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(acc * 2f64.powi(doublings as i32))
}

/// Denman-Beavers iteration for the principal square root; quadratically
/// convergent when no eigenvalue lies on the closed negative real axis.
fn sqrtm(m: &SquareMatrix) -> Result<SquareMatrix> {
    let n = m.nrows();
    let mut y = m.clone();
    let mut z = SquareMatrix::identity(n, n);
    for _ in 0..100 {
        let y_inv = y
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Domain("matrix square root iteration became singular".into()))?;
        let z_inv = z
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Domain("matrix square root iteration became singular".into()))?;
        let y_next = (&y + &z_inv) * 0.5;
        let z_next = (&z + &y_inv) * 0.5;
        let delta = (&y_next - &y).amax();
        y = y_next;
        z = z_next;
        if delta <= 1e-15 * y.amax().max(1.0) {
            break;
        }
    }
    Ok(y)
}

/// Realized-covariation study of the stylized two-firm example with one
/// shared factor: `dY_i = -ε/2 (Y_i ± X) dt`,
/// `dX = -κ X dt + σ sqrt((e^{-εt} - X)(e^{-εt} + X)) dW`.
#[derive(Debug, Clone)]
pub struct NegcorResult {
    /// Mean over paths of the realized covariation of the two intensities.
    pub covariation: f64,
    pub std_err: f64,
    /// Largest intensity seen on any path.
    pub max_intensity: f64,
    /// Whether `X` stayed inside `[-e^{-εt}, e^{-εt}]` on every path.
    pub x_in_bounds: bool,
}

pub fn negcor_example(
    epsilon: f64,
    kappa: f64,
    sigma: f64,
    x0: f64,
    cfg: &PathConfig,
) -> Result<NegcorResult> {
    if !(kappa > epsilon && epsilon > 0.0) {
        return Err(Error::invalid("need κ > ε > 0"));
    }
    if !(-1.0..=1.0).contains(&x0) {
        return Err(Error::invalid("X0 must lie in [-1, 1]"));
    }
    use rayon::prelude::*;
    let steps = cfg.steps();
    let dt = cfg.dt_effective();
    let sqdt = dt.sqrt();
    let per_path: Vec<(f64, f64, bool)> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|idx| {
            let mut rng = path_rng(cfg.seed, STREAM_DIFFUSION + idx as u64);
            let (mut y1, mut y2, mut x) = (1.0f64, 1.0f64, x0);
            let mut lam1 = 0.5 * epsilon * (1.0 + x / y1);
            let mut lam2 = 0.5 * epsilon * (1.0 - x / y2);
            let mut cov = 0.0;
            let mut max_lam = lam1.max(lam2);
            let mut inside = true;
            for k in 1..=steps {
                let bound_prev = (-epsilon * ((k - 1) as f64) * dt).exp();
                let bound_next = (-epsilon * (k as f64) * dt).exp();
                let arg = x.clamp(-bound_prev, bound_prev);
                let vol = sigma * ((bound_prev - arg) * (bound_prev + arg)).max(0.0).sqrt();
                let z: f64 = rng.sample(StandardNormal);
                let y1_next = y1 - 0.5 * epsilon * (y1 + x) * dt;
                let y2_next = y2 - 0.5 * epsilon * (y2 - x) * dt;
                x += -kappa * x * dt + vol * sqdt * z;
                x = x.clamp(-bound_next, bound_next);
                y1 = y1_next;
                y2 = y2_next;
                if x.abs() > bound_next + 1e-12 {
                    inside = false;
                }
                let l1 = 0.5 * epsilon * (1.0 + x / y1);
                let l2 = 0.5 * epsilon * (1.0 - x / y2);
                cov += (l1 - lam1) * (l2 - lam2);
                lam1 = l1;
                lam2 = l2;
                max_lam = max_lam.max(l1).max(l2);
            }
            (cov, max_lam, inside)
        })
        .collect();
    let n = per_path.len() as f64;
    let mean = pairwise_sum(&per_path.iter().map(|v| v.0).collect::<Vec<_>>()) / n;
    let var = per_path.iter().map(|v| (v.0 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(NegcorResult {
        covariation: mean,
        std_err: (var / n).sqrt(),
        max_intensity: per_path.iter().map(|v| v.1).fold(0.0, f64::max),
        x_in_bounds: per_path.iter().all(|v| v.2),
    })
}

/// Fixed-order pairwise summation; deterministic regardless of how the
/// addends were produced.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        2 => v[0] + v[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
        }
    }
}
