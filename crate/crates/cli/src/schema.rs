//! JSON file schemas consumed by the CLI; unknown fields are rejected.

use std::path::Path;

use nalgebra::DVector;
use serde::Deserialize;

use linearcredit::error::{Error, Result};
use linearcredit::model::{LhcParams, State};
use linearcredit::portfolio::{FirmSpec, Portfolio};

fn default_frequency() -> u32 {
    4
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExposureTerm {
    pub powers: Vec<u32>,
    pub coeff: f64,
}

/// `price` contract description.
#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ContractFile {
    Bond {
        t_m: f64,
        #[serde(default)]
        r: f64,
        #[serde(default)]
        recovery: Option<f64>,
        /// "maturity", "default", or "none" (zero recovery).
        #[serde(default)]
        recovery_at: Option<String>,
    },
    Cds {
        t0: f64,
        t_m: f64,
        #[serde(default = "default_frequency")]
        frequency: u32,
        recovery: f64,
        #[serde(default)]
        r: f64,
    },
    Ucva {
        t_m: f64,
        #[serde(default)]
        r: f64,
        exposure: Vec<ExposureTerm>,
        #[serde(default)]
        nodes: Option<usize>,
    },
}

impl ContractFile {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// `option` contract description.
#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum OptionFile {
    Cds {
        t0: f64,
        t_m: f64,
        strike_bp: f64,
        order: usize,
        /// "legendre"
        method: String,
        recovery: f64,
        #[serde(default)]
        r: f64,
        #[serde(default = "default_frequency")]
        frequency: u32,
    },
    Cdis {
        t0: f64,
        t_m: f64,
        strike_bp: f64,
        order: usize,
        /// "chebyshev"
        method: String,
        recovery: f64,
        #[serde(default)]
        r: f64,
        #[serde(default = "default_frequency")]
        frequency: u32,
        n_firms: usize,
        #[serde(default)]
        n_defaulted: usize,
    },
}

impl OptionFile {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockFile {
    pub m: usize,
    pub gamma: Vec<f64>,
    pub b: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirmFile {
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub exponents: Option<Vec<u32>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFile {
    pub y: f64,
    pub x: Vec<f64>,
}

/// Portfolio description: independent LHC blocks, firm exposures, and the
/// per-block valuation states.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortfolioFile {
    pub blocks: Vec<BlockFile>,
    pub firms: Vec<FirmFile>,
    pub recovery: f64,
    #[serde(default)]
    pub states: Option<Vec<StateFile>>,
}

impl PortfolioFile {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn build(&self) -> Result<(Portfolio, Vec<State>)> {
        let blocks: Vec<LhcParams> = self
            .blocks
            .iter()
            .map(|b| {
                if b.gamma.len() != b.m || b.b.len() != b.m || b.sigma.len() != b.m {
                    return Err(Error::invalid("block vectors must have length m"));
                }
                let beta = nalgebra::DMatrix::from_fn(b.m, b.m, |i, j| b.beta[i][j]);
                LhcParams::new(
                    DVector::from_vec(b.gamma.clone()),
                    DVector::from_vec(b.b.clone()),
                    beta,
                    DVector::from_vec(b.sigma.clone()),
                )
            })
            .collect::<Result<_>>()?;
        let firms: Vec<FirmSpec> = self
            .firms
            .iter()
            .map(|f| match (&f.weights, &f.exponents) {
                (Some(w), None) => Ok(FirmSpec::Linear {
                    weights: DVector::from_vec(w.clone()),
                }),
                (None, Some(e)) => Ok(FirmSpec::Polynomial { exponents: e.clone() }),
                _ => Err(Error::invalid(
                    "each firm needs exactly one of weights or exponents",
                )),
            })
            .collect::<Result<_>>()?;
        let states: Vec<State> = match &self.states {
            Some(list) => list
                .iter()
                .map(|s| State::new(s.y, DVector::from_vec(s.x.clone())))
                .collect::<Result<_>>()?,
            None => blocks
                .iter()
                .map(|b| State::new(1.0, DVector::zeros(b.m)))
                .collect::<Result<_>>()?,
        };
        Ok((Portfolio::new(blocks, firms, self.recovery)?, states))
    }
}
