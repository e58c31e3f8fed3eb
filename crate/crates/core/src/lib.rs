//! Linear credit risk models.
//!
//! The survival process of a firm is `S_t = a' Y_t` where the factor pair
//! `(Y_t, X_t)` has linear drift. Defaultable bond and CDS prices are then
//! linear-rational in the factors and reduce to matrix-exponential
//! expressions, CDS/CDIS option prices are approximated by polynomials in
//! the factors with uniform error bounds, and the diffusive single-name
//! specification (the linear hypercube model) supports exact conditional
//! moments through the generator matrix of its polynomial diffusion.
//!
//! Module map:
//! - [`linmat`]: matrix exponentials and the two exponential integrals every
//!   closed-form price reduces to.
//! - [`model`]: model specifications, state space, validation, and
//!   market-price-of-risk transforms.
//! - [`moments`]: monomial bases, generator matrices, and conditional moment
//!   propagation.
//! - [`pricing`]: single-name bonds, contingent claims, CDS legs and
//!   spreads, UCVA.
//! - [`portfolio`]: multi-name constructions, default-count distributions,
//!   homogeneous tranches, stochastic rates.
//! - [`legendre`], [`cheb`]: orthogonal-polynomial machinery.
//! - [`options`]: CDS and CDIS option pricing by payoff approximation.
//! - [`sim`], [`mc`]: Euler-Maruyama simulation with boundary handling,
//!   doubly stochastic default sampling, jump and stochastic-clock variants,
//!   and Monte Carlo oracle pricers.
//! - [`calib`]: factor filtering and derivative-free calibration to CDS
//!   spread panels.

pub mod calib;
pub mod cheb;
pub mod error;
pub mod legendre;
pub mod linmat;
pub mod mc;
pub mod model;
pub mod moments;
pub mod options;
pub mod portfolio;
pub mod pricing;
pub mod quad;
pub mod sim;

pub use error::{Error, Result};
pub use linmat::SquareMatrix;
pub use model::{LhcParams, LhccParams, LinearModel, State, ValidationReport};
pub use moments::{BasisIndex, MomentOperator, Poly};
pub use options::{LegendreApprox, PayoffSupport};
pub use portfolio::{CountDistribution, FirmSpec, Portfolio, RatesCreditModel};
pub use pricing::{CdsLegs, PricingVector, TenorGrid};
pub use sim::{ClockSpec, Ensemble, JumpSpec, PathConfig};

/// One basis point.
pub const BP: f64 = 1e-4;
