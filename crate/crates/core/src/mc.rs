//! Monte Carlo oracle pricers for the closed forms.
//!
//! Each contract is priced as an unbiased pathwise discounted-payoff
//! average over an [`Ensemble`], with default times sampled doubly
//! stochastically: one independent uniform per firm per path, first
//! crossing of the survival path refined by exponential interpolation
//! inside the step. Estimates are deterministic in `(seed, n_paths)` and
//! independent of thread count (per-path streams, fixed-order pairwise
//! aggregation).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::moments::Poly;
use crate::pricing::{cds_legs, TenorGrid};
use crate::sim::{crossing_time, pairwise_sum, Ensemble};

/// Point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_err: f64,
    pub n_paths: usize,
}

/// Contracts supported by [`mc_price`].
#[derive(Debug, Clone)]
pub enum McContract {
    /// Zero-recovery zero-coupon bond.
    BondZ { t_m: f64 },
    /// Bond with recovery at maturity.
    BondM { t_m: f64, recovery: f64 },
    /// Bond with recovery at default.
    BondD { t_m: f64, recovery: f64 },
    /// Claim paying 1 at default before `t_m`.
    DefaultClaim { t_m: f64 },
    /// Claim paying τ at default before `t_m`.
    DefaultTimeClaim { t_m: f64 },
    /// Protection and premium legs over a tenor grid.
    CdsLegs { grid: TenorGrid, recovery: f64 },
    /// Ratio of the two legs, standard error by the delta method.
    CdsSpread { grid: TenorGrid, recovery: f64 },
    /// Option at `t0 = grid.t0` on the CDS over the grid; the ensemble
    /// horizon must equal `t0`.
    CdsOption { grid: TenorGrid, recovery: f64, strike: f64 },
    /// Homogeneous index option, all firms sharing the single-block
    /// survival process.
    CdisOption { grid: TenorGrid, recovery: f64, strike: f64, n_firms: usize },
    /// Tranche protection and premium legs on a homogeneous portfolio.
    TrancheLegs { grid: TenorGrid, recovery: f64, n_firms: usize, n_att: usize, n_det: usize },
    /// Unilateral CVA with polynomial exposure in `(y, x)`.
    Ucva { t_m: f64, exposure: Poly },
}

/// Scalar or two-leg Monte Carlo result.
#[derive(Debug, Clone)]
pub enum McValue {
    Scalar(McEstimate),
    Legs { prot: McEstimate, prem: McEstimate },
}

impl McValue {
    pub fn scalar(&self) -> &McEstimate {
        match self {
            McValue::Scalar(e) => e,
            McValue::Legs { .. } => panic!("legs result where scalar expected"),
        }
    }
}

fn aggregate(values: &[f64]) -> McEstimate {
    let n = values.len();
    let mean = pairwise_sum(values) / n as f64;
    let var = if n > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    McEstimate {
        value: mean,
        std_err: (var / n as f64).sqrt(),
        n_paths: n,
    }
}

fn check_horizon(ens: &Ensemble, t_m: f64) -> Result<()> {
    if t_m > ens.cfg.horizon + 1e-9 {
        return Err(Error::invalid(format!(
            "contract maturity {t_m} exceeds simulated horizon {}",
            ens.cfg.horizon
        )));
    }
    Ok(())
}

/// Default time and the factor state at default, when the threshold is
/// crossed before the end of the horizon.
struct DefaultEvent {
    tau: f64,
    x_at: Vec<f64>,
}

fn single_default(ens: &Ensemble, idx: usize, u: f64) -> Option<DefaultEvent> {
    if u >= ens.s0.y {
        return Some(DefaultEvent {
            tau: 0.0,
            x_at: ens.s0.x.iter().copied().collect(),
        });
    }
    let mut hit: Option<DefaultEvent> = None;
    let dt = ens.cfg.dt_effective();
    ens.walk_path(idx, |v| {
        if hit.is_none() {
            if let Some(tau) = crossing_time(v.t - dt, v.t, v.y_prev, v.y, u) {
                let w = ((tau - (v.t - dt)) / dt).clamp(0.0, 1.0);
                let x_at = v
                    .x_prev
                    .iter()
                    .zip(v.x)
                    .map(|(a, b)| a + (b - a) * w)
                    .collect();
                hit = Some(DefaultEvent { tau, x_at });
            }
        }
    });
    hit
}

/// Pathwise discounted payoff average for `contract`.
///
/// `r` is the constant risk-free rate and `defaults_seed` keys the uniform
/// threshold streams (kept separate from the factor noise so the same
/// factor paths can be reused across contracts).
pub fn mc_price(
    ens: &Ensemble,
    r: f64,
    contract: &McContract,
    defaults_seed: u64,
) -> Result<McValue> {
    match contract {
        McContract::BondZ { t_m } => {
            check_horizon(ens, *t_m)?;
            scalar_over_defaults(ens, defaults_seed, |tau| {
                let alive = tau.map(|t| t > *t_m).unwrap_or(true);
                if alive {
                    (-r * t_m).exp()
                } else {
                    0.0
                }
            })
        }
        McContract::BondM { t_m, recovery } => {
            check_horizon(ens, *t_m)?;
            let delta = *recovery;
            scalar_over_defaults(ens, defaults_seed, move |tau| {
                let defaulted = tau.map(|t| t <= *t_m).unwrap_or(false);
                (-r * t_m).exp() * if defaulted { delta } else { 1.0 }
            })
        }
        McContract::BondD { t_m, recovery } => {
            check_horizon(ens, *t_m)?;
            let delta = *recovery;
            scalar_over_defaults(ens, defaults_seed, move |tau| match tau {
                Some(t) if t <= *t_m => delta * (-r * t).exp(),
                _ => (-r * t_m).exp(),
            })
        }
        McContract::DefaultClaim { t_m } => {
            check_horizon(ens, *t_m)?;
            scalar_over_defaults(ens, defaults_seed, |tau| match tau {
                Some(t) if t <= *t_m => (-r * t).exp(),
                _ => 0.0,
            })
        }
        McContract::DefaultTimeClaim { t_m } => {
            check_horizon(ens, *t_m)?;
            scalar_over_defaults(ens, defaults_seed, |tau| match tau {
                Some(t) if t <= *t_m => t * (-r * t).exp(),
                _ => 0.0,
            })
        }
        McContract::CdsLegs { grid, recovery } => {
            let (p, q) = cds_leg_samples(ens, r, grid, *recovery, defaults_seed)?;
            Ok(McValue::Legs {
                prot: aggregate(&p),
                prem: aggregate(&q),
            })
        }
        McContract::CdsSpread { grid, recovery } => {
            let (p, q) = cds_leg_samples(ens, r, grid, *recovery, defaults_seed)?;
            let n = p.len() as f64;
            let pm = pairwise_sum(&p) / n;
            let qm = pairwise_sum(&q) / n;
            if qm <= 0.0 {
                return Err(Error::DegenerateAnnuity(qm));
            }
            let mut var_p = 0.0;
            let mut var_q = 0.0;
            let mut cov = 0.0;
            for (pi, qi) in p.iter().zip(&q) {
                var_p += (pi - pm).powi(2);
                var_q += (qi - qm).powi(2);
                cov += (pi - pm) * (qi - qm);
            }
            var_p /= n - 1.0;
            var_q /= n - 1.0;
            cov /= n - 1.0;
            let spread = pm / qm;
            let var_ratio =
                (var_p / (qm * qm) + pm * pm * var_q / qm.powi(4) - 2.0 * pm * cov / qm.powi(3))
                    .max(0.0);
            Ok(McValue::Scalar(McEstimate {
                value: spread,
                std_err: (var_ratio / n).sqrt(),
                n_paths: p.len(),
            }))
        }
        McContract::CdsOption { grid, recovery, strike } => {
            if (ens.cfg.horizon - grid.t0).abs() > 1e-9 {
                return Err(Error::invalid(
                    "CDS option oracle needs ensemble horizon equal to the exercise date t0",
                ));
            }
            let model = ens.params.to_linear_model();
            let legs = cds_legs(&model, grid.t0, grid, r, *recovery)?;
            let psi = legs.psi_cds(*strike);
            let disc = (-r * grid.t0).exp() / ens.s0.y;
            let samples: Vec<f64> = ens
                .terminal_states()
                .iter()
                .map(|(y, x)| {
                    let mut z = psi[0] * y;
                    for (i, xi) in x.iter().enumerate() {
                        z += psi[1 + i] * xi;
                    }
                    disc * z.max(0.0)
                })
                .collect();
            Ok(McValue::Scalar(aggregate(&samples)))
        }
        McContract::CdisOption { grid, recovery, strike, n_firms } => {
            if (ens.cfg.horizon - grid.t0).abs() > 1e-9 {
                return Err(Error::invalid(
                    "CDIS option oracle needs ensemble horizon equal to the exercise date t0",
                ));
            }
            let model = ens.params.to_linear_model();
            let legs = cds_legs(&model, grid.t0, grid, r, *recovery)?;
            let psi = legs.psi_cds(*strike);
            let disc = (-r * grid.t0).exp() / *n_firms as f64;
            let delta = *recovery;
            let n_firms = *n_firms;
            let samples: Vec<f64> = (0..ens.cfg.n_paths)
                .into_par_iter()
                .map(|idx| {
                    let mut terminal = (ens.s0.y, ens.s0.x.iter().copied().collect::<Vec<_>>());
                    let steps = ens.cfg.steps();
                    ens.walk_path(idx, |v| {
                        if v.step == steps {
                            terminal = (v.y, v.x.to_vec());
                        }
                    });
                    let (y, x) = terminal;
                    let thresholds = ens.default_thresholds(idx, n_firms, defaults_seed);
                    let alive = thresholds.iter().filter(|u| **u < y).count();
                    let dead = n_firms - alive;
                    let mut z = psi[0] * y;
                    for (i, xi) in x.iter().enumerate() {
                        z += psi[1 + i] * xi;
                    }
                    let inner = alive as f64 * z / y + (1.0 - delta) * dead as f64;
                    disc * inner.max(0.0)
                })
                .collect();
            Ok(McValue::Scalar(aggregate(&samples)))
        }
        McContract::TrancheLegs { grid, recovery, n_firms, n_att, n_det } => {
            tranche_leg_samples(ens, r, grid, *recovery, *n_firms, *n_att, *n_det, defaults_seed)
        }
        McContract::Ucva { t_m, exposure } => {
            check_horizon(ens, *t_m)?;
            let m = ens.params.m;
            let samples: Vec<f64> = (0..ens.cfg.n_paths)
                .into_par_iter()
                .map(|idx| {
                    let u = ens.default_thresholds(idx, 1, defaults_seed)[0];
                    match single_default(ens, idx, u) {
                        Some(ev) if ev.tau <= *t_m => {
                            // at the crossing the survival value equals the threshold
                            let val: f64 = exposure
                                .terms
                                .iter()
                                .map(|(e, c)| {
                                    let mut v = *c * u.powi(e[0] as i32);
                                    for i in 0..m {
                                        v *= ev.x_at[i].powi(e[1 + i] as i32);
                                    }
                                    v
                                })
                                .sum();
                            (-r * ev.tau).exp() * val
                        }
                        _ => 0.0,
                    }
                })
                .collect();
            Ok(McValue::Scalar(aggregate(&samples)))
        }
    }
}

fn scalar_over_defaults<F>(ens: &Ensemble, defaults_seed: u64, payoff: F) -> Result<McValue>
where
    F: Fn(Option<f64>) -> f64 + Sync,
{
    let samples: Vec<f64> = (0..ens.cfg.n_paths)
        .into_par_iter()
        .map(|idx| {
            let u = ens.default_thresholds(idx, 1, defaults_seed)[0];
            let tau = single_default(ens, idx, u).map(|e| e.tau);
            payoff(tau)
        })
        .collect();
    Ok(McValue::Scalar(aggregate(&samples)))
}

fn cds_leg_samples(
    ens: &Ensemble,
    r: f64,
    grid: &TenorGrid,
    recovery: f64,
    defaults_seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_horizon(ens, grid.maturity())?;
    let accruals = grid.accruals();
    let pairs: Vec<(f64, f64)> = (0..ens.cfg.n_paths)
        .into_par_iter()
        .map(|idx| {
            let u = ens.default_thresholds(idx, 1, defaults_seed)[0];
            let tau = single_default(ens, idx, u).map(|e| e.tau);
            let mut prot = 0.0;
            if let Some(t) = tau {
                if t > grid.t0 && t <= grid.maturity() {
                    prot = (1.0 - recovery) * (-r * t).exp();
                }
            }
            let mut prem = 0.0;
            let mut prev = grid.t0;
            for (j, tj) in grid.payments.iter().enumerate() {
                let alive_at_tj = tau.map(|t| t > *tj).unwrap_or(true);
                if alive_at_tj {
                    prem += accruals[j] * (-r * tj).exp();
                } else if let Some(t) = tau {
                    if t > prev && t <= *tj {
                        prem += (t - prev) * (-r * t).exp();
                    }
                }
                prev = *tj;
            }
            (prot, prem)
        })
        .collect();
    Ok(pairs.into_iter().unzip())
}

#[allow(clippy::too_many_arguments)]
fn tranche_leg_samples(
    ens: &Ensemble,
    r: f64,
    grid: &TenorGrid,
    recovery: f64,
    n_firms: usize,
    n_att: usize,
    n_det: usize,
    defaults_seed: u64,
) -> Result<McValue> {
    check_horizon(ens, grid.maturity())?;
    if !(n_att < n_det && n_det <= n_firms) {
        return Err(Error::invalid("need n_att < n_det ≤ n_firms"));
    }
    let k_a = n_att as f64 * (1.0 - recovery) / n_firms as f64;
    let k_d = n_det as f64 * (1.0 - recovery) / n_firms as f64;
    let width = k_d - k_a;
    let tranche_loss = |defaults: usize| -> f64 {
        let loss = defaults as f64 * (1.0 - recovery) / n_firms as f64;
        (loss - k_a).max(0.0).min(width)
    };
    let dt = ens.cfg.dt_effective();
    let pairs: Vec<(f64, f64)> = (0..ens.cfg.n_paths)
        .into_par_iter()
        .map(|idx| {
            let mut thresholds = ens.default_thresholds(idx, n_firms, defaults_seed);
            thresholds.sort_by(|a, b| b.total_cmp(a)); // descending: first to default first
            let mut taus: Vec<f64> = Vec::new();
            let mut ptr = 0usize;
            while ptr < thresholds.len() && thresholds[ptr] >= ens.s0.y {
                taus.push(0.0);
                ptr += 1;
            }
            ens.walk_path(idx, |v| {
                while ptr < thresholds.len() {
                    match crossing_time(v.t - dt, v.t, v.y_prev, v.y, thresholds[ptr]) {
                        Some(t) => {
                            taus.push(t);
                            ptr += 1;
                        }
                        None => break,
                    }
                }
            });
            // protection: discounted tranche-loss increments at default times
            let mut prot = 0.0;
            for (k, tau) in taus.iter().enumerate() {
                if *tau <= grid.maturity() {
                    let dl = tranche_loss(k + 1) - tranche_loss(k);
                    if dl > 0.0 {
                        prot += dl * (-r * tau).exp();
                    }
                }
            }
            // premium: per-period integral of the remaining tranche notional
            let mut prem = 0.0;
            let mut prev = grid.t0;
            for tj in &grid.payments {
                let mut acc = 0.0;
                let mut seg_start = prev;
                let mut count_before = taus.iter().filter(|t| **t <= prev).count();
                for tau in taus.iter().filter(|t| **t > prev && **t <= *tj) {
                    acc += (width - tranche_loss(count_before)) * (tau - seg_start);
                    seg_start = *tau;
                    count_before += 1;
                }
                acc += (width - tranche_loss(count_before)) * (tj - seg_start);
                prem += acc * (-r * tj).exp();
                prev = *tj;
            }
            (prot, prem)
        })
        .collect();
    let (p, q): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    Ok(McValue::Legs {
        prot: aggregate(&p),
        prem: aggregate(&q),
    })
}

/// Mean of a terminal-state functional; the oracle for moment checks.
pub fn mc_terminal_mean<F>(ens: &Ensemble, f: F) -> McEstimate
where
    F: Fn(f64, &[f64]) -> f64 + Sync,
{
    let steps = ens.cfg.steps();
    let samples: Vec<f64> = (0..ens.cfg.n_paths)
        .into_par_iter()
        .map(|idx| {
            let mut val = 0.0;
            ens.walk_path(idx, |v| {
                if v.step == steps {
                    val = f(v.y, v.x);
                }
            });
            val
        })
        .collect();
    aggregate(&samples)
}

/// Empirical single-name default probability by `t_m`; used against the
/// exponential law in the constant-intensity embedding.
pub fn mc_default_probability(
    ens: &Ensemble,
    t_m: f64,
    defaults_seed: u64,
) -> Result<McEstimate> {
    check_horizon(ens, t_m)?;
    let samples: Vec<f64> = (0..ens.cfg.n_paths)
        .into_par_iter()
        .map(|idx| {
            let u = ens.default_thresholds(idx, 1, defaults_seed)[0];
            match single_default(ens, idx, u) {
                Some(ev) if ev.tau <= t_m => 1.0,
                _ => 0.0,
            }
        })
        .collect();
    Ok(aggregate(&samples))
}

/// Sign test helper: empirical correlation of the default indicators of
/// two firms sharing one survival process.
pub fn mc_joint_default_correlation(
    ens: &Ensemble,
    t_m: f64,
    defaults_seed: u64,
) -> Result<f64> {
    check_horizon(ens, t_m)?;
    let samples: Vec<(f64, f64)> = (0..ens.cfg.n_paths)
        .into_par_iter()
        .map(|idx| {
            let th = ens.default_thresholds(idx, 2, defaults_seed);
            let d: Vec<f64> = th
                .iter()
                .map(|u| match single_default(ens, idx, *u) {
                    Some(ev) if ev.tau <= t_m => 1.0,
                    _ => 0.0,
                })
                .collect();
            (d[0], d[1])
        })
        .collect();
    let n = samples.len() as f64;
    let m1 = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let m2 = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let cov = samples.iter().map(|s| (s.0 - m1) * (s.1 - m2)).sum::<f64>() / n;
    let v1 = samples.iter().map(|s| (s.0 - m1).powi(2)).sum::<f64>() / n;
    let v2 = samples.iter().map(|s| (s.1 - m2).powi(2)).sum::<f64>() / n;
    Ok(cov / (v1 * v2).sqrt().max(1e-300))
}
