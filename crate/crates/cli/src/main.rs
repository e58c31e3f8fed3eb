//! Command line for the linear credit risk models.
//!
//! Results are printed as JSON on stdout; plot-ready tables go to CSV
//! files under the output directory. Monetary outputs are in basis points
//! and all times are year fractions.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde_json::json;

use linearcredit::calib::{self, Gamma1Mode, QuotePanel};
use linearcredit::error::Error;
use linearcredit::model::{validate_lhc, ModelFile, State};
use linearcredit::moments::{MomentOperator, Poly};
use linearcredit::options;
use linearcredit::portfolio::{tranche_price_homogeneous, FirmSpec, Portfolio};
use linearcredit::pricing::{self, TenorGrid};
use linearcredit::sim::{simulate_paths, PathConfig};
use linearcredit::BP;

mod schema;
use schema::{ContractFile, OptionFile, PortfolioFile};

#[derive(Parser)]
#[command(
    name = "linearcredit",
    about = "Linear credit risk models: pricing, option approximation, simulation, calibration",
    long_about = "Closed-form pricing of defaultable bonds, CDS, CDIS and tranches in linear \
                  credit risk models; polynomial approximation of CDS/CDIS option prices with \
                  error bounds; Monte Carlo oracles; and calibration of cascade models to CDS \
                  spread panels.\n\nAll monetary outputs are in basis points (1 bp = 1e-4) and \
                  all times are year fractions. Results are written as JSON to stdout; CSV \
                  tables land in --out-dir."
)]
struct Cli {
    /// Worker threads for simulation and calibration
    /// (fallback: LINEARCREDIT_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for CSV outputs.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the drift and boundary conditions of a model file.
    Validate(ValidateArgs),
    /// Price a bond, CDS, or UCVA contract.
    Price(PriceArgs),
    /// Price a CDS or CDIS option by polynomial payoff approximation.
    Option(OptionArgs),
    /// CDIS spread of a multi-name portfolio.
    Cdis(CdisArgs),
    /// Closed-form homogeneous tranche legs and value.
    Tranche(TrancheArgs),
    /// Euler-Maruyama simulation with boundary clamping.
    Simulate(SimulateArgs),
    /// Calibrate a cascade model to a CDS spread panel.
    Calibrate(CalibrateArgs),
    /// Price-versus-order table for a CDS option (CSV).
    Convergence(ConvergenceArgs),
    /// Option price sensitivities to volatility and the initial factor (CSV).
    Sensitivity(SensitivityArgs),
}

#[derive(Args)]
struct ValidateArgs {
    /// Model JSON file (lhcc, lhc, or linear schema).
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args)]
struct PriceArgs {
    #[arg(long)]
    model: PathBuf,
    /// Contract JSON: {"type":"bond"|"cds"|"ucva", ...}.
    #[arg(long)]
    contract: PathBuf,
}

#[derive(Args)]
struct OptionArgs {
    #[arg(long)]
    model: PathBuf,
    /// Option JSON: {"type":"cds"|"cdis", t0, t_m, strike_bp, order, method, ...}.
    #[arg(long)]
    contract: PathBuf,
    /// Include the payoff-projection coefficients in the output.
    #[arg(long)]
    emit_coefficients: bool,
}

#[derive(Args)]
struct CdisArgs {
    /// Portfolio JSON: {blocks:[...], firms:[...], recovery, states?}.
    #[arg(long)]
    portfolio: PathBuf,
    #[arg(long)]
    t0: f64,
    #[arg(long)]
    t_m: f64,
    #[arg(long, default_value_t = 4)]
    frequency: u32,
    #[arg(long, default_value_t = 0.0)]
    r: f64,
}

#[derive(Args)]
struct TrancheArgs {
    /// Portfolio JSON of identical single-block firms.
    #[arg(long)]
    portfolio: PathBuf,
    /// Attachment count n_a (K_a = n_a(1-δ)/N).
    #[arg(long)]
    attach: usize,
    /// Detachment count n_d.
    #[arg(long)]
    detach: usize,
    #[arg(long)]
    t_m: f64,
    #[arg(long, default_value_t = 4)]
    frequency: u32,
    /// Tranche running spread in basis points.
    #[arg(long, default_value_t = 0.0)]
    spread_bp: f64,
    #[arg(long, default_value_t = 0.0)]
    r: f64,
    /// Firms already defaulted at valuation.
    #[arg(long, default_value_t = 0)]
    n_defaulted: usize,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long)]
    horizon: f64,
    #[arg(long, default_value_t = 10_000)]
    paths: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Antithetic pairing of consecutive paths.
    #[arg(long)]
    antithetic: bool,
    /// Export the full ensemble as columnar CSV (path,t,y,x1..);
    /// this can be very large.
    #[arg(long)]
    export_csv: Option<PathBuf>,
    /// Keep every k-th step in the CSV export.
    #[arg(long, default_value_t = 1)]
    thin: usize,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Panel CSV with header `date,tenor_years,spread_bp`.
    #[arg(long)]
    data: PathBuf,
    /// Number of cascade factors.
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 0.4)]
    recovery: f64,
    #[arg(long, default_value_t = 0.0252)]
    r: f64,
    /// Fix the intensity bound γ1 instead of fitting it.
    #[arg(long)]
    gamma1: Option<f64>,
    #[arg(long, default_value_t = 16)]
    multistart: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "calibration")]
    prefix: String,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    t0: f64,
    #[arg(long)]
    t_m: f64,
    #[arg(long)]
    strike_bp: f64,
    #[arg(long, default_value_t = 30)]
    max_order: usize,
    #[arg(long, default_value_t = 0.4)]
    recovery: f64,
    #[arg(long, default_value_t = 0.0)]
    r: f64,
    #[arg(long, default_value_t = 4)]
    frequency: u32,
    #[arg(long, default_value = "convergence.csv")]
    output: String,
}

#[derive(Args)]
struct SensitivityArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    t0: f64,
    #[arg(long)]
    t_m: f64,
    #[arg(long)]
    strike_bp: f64,
    #[arg(long, default_value_t = 20)]
    order: usize,
    #[arg(long, default_value_t = 0.4)]
    recovery: f64,
    #[arg(long, default_value_t = 0.0)]
    r: f64,
    #[arg(long, default_value_t = 4)]
    frequency: u32,
    /// Volatility grid.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.25, 0.5, 0.75, 1.0])]
    sigmas: Vec<f64>,
    /// Initial factor grid.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.2, 0.3])]
    x0s: Vec<f64>,
    #[arg(long, default_value = "sensitivity")]
    prefix: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("LINEARCREDIT_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0);
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            let kind = match &err {
                Error::Capacity(_) => "capacity",
                Error::Constraint(_) => "constraint",
                Error::InvalidInput(_) => "invalid_input",
                _ => "error",
            };
            eprintln!("{}", json!({ "error": err.to_string(), "kind": kind }));
            match err {
                Error::Capacity(_) => ExitCode::from(3),
                Error::Constraint(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn read_model(path: &PathBuf) -> Result<ModelFile, Error> {
    ModelFile::from_json(&std::fs::read_to_string(path)?)
}

fn emit(value: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&value).expect("json"));
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    std::fs::create_dir_all(&cli.out_dir)?;
    match cli.command {
        Command::Validate(args) => {
            let file = read_model(&args.model)?;
            let params = file.to_lhc_params()?;
            let report = validate_lhc(&params);
            let slack24 = match &file {
                ModelFile::Lhcc { gamma1, kappa, theta, .. } => Some(
                    kappa
                        .iter()
                        .zip(theta)
                        .map(|(k, t)| 1.0 - gamma1 / k - t)
                        .collect::<Vec<f64>>(),
                ),
                _ => None,
            };
            emit(json!({
                "valid": report.valid,
                "slack_zero": report.slack_zero,
                "slack_upper": report.slack_upper,
                "nonattain_zero": report.nonattain_zero,
                "nonattain_upper": report.nonattain_upper,
                "cascade_slack": slack24,
            }));
            Ok(if report.valid {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Price(args) => {
            let file = read_model(&args.model)?;
            let contract = ContractFile::load(&args.contract)?;
            let params = file.to_lhc_params()?;
            let state = file.initial_state()?;
            let model = params.to_linear_model();
            let yx = state.stack();
            match contract {
                ContractFile::Bond { t_m, r, recovery, recovery_at } => {
                    let psi = pricing::psi_z(&model, 0.0, t_m, r)?;
                    let price = match recovery_at.as_deref() {
                        None | Some("none") => psi.price(&model, &yx)?,
                        Some("maturity") => pricing::bond_recovery_maturity(
                            &model,
                            0.0,
                            t_m,
                            r,
                            recovery.unwrap_or(0.0),
                            &yx,
                        )?,
                        Some("default") => pricing::bond_recovery_default(
                            &model,
                            0.0,
                            t_m,
                            r,
                            recovery.unwrap_or(0.0),
                            &yx,
                        )?,
                        Some(other) => {
                            return Err(Error::invalid(format!(
                                "unknown recovery_at {other:?}; use maturity|default|none"
                            )))
                        }
                    };
                    emit(json!({
                        "price": price,
                        "psi": psi.psi.as_slice(),
                    }));
                }
                ContractFile::Cds { t0, t_m, frequency, recovery, r } => {
                    let grid = TenorGrid::with_frequency(t0, t_m, frequency)?;
                    let legs = pricing::cds_legs(&model, 0.0, &grid, r, recovery)?;
                    let spread = pricing::cds_spread(&legs, &yx)?;
                    emit(json!({
                        "spread_bp": spread / BP,
                        "protection_value": legs.psi_prot.psi.dot(&yx) / state.y,
                        "premium_value": legs.psi_prem.psi.dot(&yx) / state.y,
                        "psi_prot": legs.psi_prot.psi.as_slice(),
                        "psi_prem": legs.psi_prem.psi.as_slice(),
                    }));
                }
                ContractFile::Ucva { t_m, r, exposure, nodes } => {
                    let poly = Poly {
                        terms: exposure
                            .into_iter()
                            .map(|t| (t.powers, t.coeff))
                            .collect(),
                    };
                    let value =
                        pricing::ucva(&params, &state, 0.0, t_m, r, &poly, nodes.unwrap_or(64))?;
                    emit(json!({ "price": value, "price_bp": value / BP }));
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Option(args) => {
            let file = read_model(&args.model)?;
            let params = file.to_lhc_params()?;
            let state = file.initial_state()?;
            let opt = OptionFile::load(&args.contract)?;
            match opt {
                OptionFile::Cds { t0, t_m, strike_bp, order, method, recovery, r, frequency } => {
                    if method != "legendre" {
                        return Err(Error::invalid(format!(
                            "method {method:?} not available for single-name options; use \"legendre\""
                        )));
                    }
                    let grid = TenorGrid::with_frequency(t0, t_m, frequency)?;
                    let op = MomentOperator::new(&params, order)?;
                    let (price, bound) = options::cds_option_price(
                        &params, &op, &state, 0.0, t0, &grid, r, recovery, strike_bp * BP, order,
                    )?;
                    let mut out = json!({
                        "price_bp": price / BP,
                        "error_bound_bp": bound / BP,
                        "order": order,
                    });
                    if args.emit_coefficients {
                        let model = params.to_linear_model();
                        let legs = pricing::cds_legs(&model, t0, &grid, r, recovery)?;
                        let support = options::cds_option_support(&legs, strike_bp * BP);
                        let approx = options::legendre_payoff_coeffs(
                            support,
                            order,
                            (-r * t0).exp() / state.y,
                        )?;
                        out["coefficients"] = json!(approx.coeffs);
                        out["support"] = json!([support.b_min, support.b_max]);
                    }
                    emit(out);
                }
                OptionFile::Cdis {
                    t0,
                    t_m,
                    strike_bp,
                    order,
                    method,
                    recovery,
                    r,
                    frequency,
                    n_firms,
                    n_defaulted,
                } => {
                    if method != "chebyshev" {
                        return Err(Error::invalid(format!(
                            "method {method:?} not available for index options; use \"chebyshev\""
                        )));
                    }
                    let grid = TenorGrid::with_frequency(t0, t_m, frequency)?;
                    let (price, bound) = options::cdis_option_price_homogeneous(
                        &params,
                        &state,
                        0.0,
                        t0,
                        &grid,
                        r,
                        strike_bp * BP,
                        recovery,
                        n_firms,
                        n_defaulted,
                        order,
                    )?;
                    emit(json!({
                        "price_bp": price / BP,
                        "error_bound_bp": bound / BP,
                        "order": order,
                    }));
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Cdis(args) => {
            let pf_file = PortfolioFile::load(&args.portfolio)?;
            let (portfolio, states) = pf_file.build()?;
            let grid = TenorGrid::with_frequency(args.t0, args.t_m, args.frequency)?;
            let alive = vec![true; portfolio.n_firms()];
            let spread = portfolio.cdis_spread(&states, &alive, 0.0, &grid, args.r)?;
            emit(json!({ "spread_bp": spread / BP, "n_firms": portfolio.n_firms() }));
            Ok(ExitCode::SUCCESS)
        }
        Command::Tranche(args) => {
            let pf_file = PortfolioFile::load(&args.portfolio)?;
            let (portfolio, states) = pf_file.build()?;
            let (block, state, n_firms) = homogeneous_block(&portfolio, &states)?;
            let grid = TenorGrid::with_frequency(0.0, args.t_m, args.frequency)?;
            let tp = tranche_price_homogeneous(
                block,
                state,
                0.0,
                &grid,
                args.attach,
                args.detach,
                portfolio.recovery,
                args.spread_bp * BP,
                args.r,
                n_firms,
                args.n_defaulted,
            )?;
            emit(json!({
                "protection": tp.protection,
                "premium": tp.premium,
                "value": tp.value,
                "value_bp": tp.value / BP,
            }));
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate(args) => {
            let file = read_model(&args.model)?;
            let params = file.to_lhc_params()?;
            let state = file.initial_state()?;
            let mut cfg = PathConfig::new(args.dt, args.horizon, args.paths, args.seed)?;
            cfg.antithetic = args.antithetic;
            let ens = simulate_paths(&params, &state, &cfg)?;
            if let Some(csv_path) = &args.export_csv {
                if args.paths * cfg.steps() > 50_000_000 {
                    eprintln!(
                        "{}",
                        json!({"warning": "ensemble export exceeds 5e7 rows; consider --thin"})
                    );
                }
                let path = cli.out_dir.join(csv_path);
                let mut body = String::new();
                for idx in 0..cfg.n_paths {
                    ens.walk_path(idx, |v| {
                        if v.step % args.thin.max(1) == 0 {
                            body.push_str(&format!("{idx},{:.6},{:.8}", v.t, v.y));
                            for xi in v.x {
                                body.push_str(&format!(",{xi:.8}"));
                            }
                            body.push('\n');
                        }
                    });
                }
                let header = {
                    let mut h = String::from("path,t,y");
                    for i in 1..=params.m {
                        h.push_str(&format!(",x{i}"));
                    }
                    h.push('\n');
                    h
                };
                std::fs::write(&path, header + &body)?;
            }
            let terminal = ens.terminal_states();
            let mean_y: f64 =
                terminal.iter().map(|(y, _)| *y).sum::<f64>() / terminal.len() as f64;
            emit(json!({
                "paths": cfg.n_paths,
                "steps": cfg.steps(),
                "dt_effective": cfg.dt_effective(),
                "mean_terminal_y": mean_y,
                "clamp_fraction": ens.clamp_fraction(),
                "min_y_scaled": ens.min_y_scaled(),
            }));
            Ok(ExitCode::SUCCESS)
        }
        Command::Calibrate(args) => {
            let reader = std::fs::File::open(&args.data)?;
            let panel = QuotePanel::from_csv(reader, "panel", args.recovery, args.r)?;
            let mode = match args.gamma1 {
                Some(g) => Gamma1Mode::Fixed(g),
                None => Gamma1Mode::Free,
            };
            let result = calib::calibrate(&panel, args.m, mode, args.multistart, args.seed)?;
            let stats_path = cli.out_dir.join(format!("{}_rmse.csv", args.prefix));
            std::fs::write(&stats_path, result.stats.to_csv())?;
            let factors_path = cli.out_dir.join(format!("{}_factors.csv", args.prefix));
            std::fs::write(&factors_path, result.filter.factor_csv())?;
            emit(json!({
                "params": {
                    "type": "lhcc",
                    "m": args.m,
                    "gamma1": result.params.gamma1,
                    "kappa": result.params.kappa,
                    "theta": result.params.theta,
                    "sigma": result.params.sigma,
                },
                "rmse_bp": result.rmse_bp,
                "stats": result.stats,
                "start_objectives": result.start_objectives,
                "rmse_csv": stats_path,
                "factors_csv": factors_path,
            }));
            Ok(ExitCode::SUCCESS)
        }
        Command::Convergence(args) => {
            let file = read_model(&args.model)?;
            let params = file.to_lhc_params()?;
            let state = file.initial_state()?;
            let grid = TenorGrid::with_frequency(args.t0, args.t_m, args.frequency)?;
            let op = MomentOperator::new(&params, args.max_order)?;
            let orders: Vec<usize> = (1..=args.max_order).collect();
            let table = options::cds_option_convergence(
                &params,
                &op,
                &state,
                0.0,
                args.t0,
                &grid,
                args.r,
                args.recovery,
                args.strike_bp * BP,
                &orders,
            )?;
            let mut csv = String::from("order,price_bp,bound_bp\n");
            for row in &table {
                csv.push_str(&format!(
                    "{},{:.6},{:.6}\n",
                    row.order,
                    row.price / BP,
                    row.bound / BP
                ));
            }
            let path = cli.out_dir.join(&args.output);
            std::fs::write(&path, csv)?;
            let last = table.last().expect("nonempty order table");
            emit(json!({
                "csv": path,
                "price_bp": last.price / BP,
                "error_bound_bp": last.bound / BP,
                "orders": args.max_order,
            }));
            Ok(ExitCode::SUCCESS)
        }
        Command::Sensitivity(args) => {
            let file = read_model(&args.model)?;
            let params = file.to_lhc_params()?;
            let state = file.initial_state()?;
            let grid = TenorGrid::with_frequency(args.t0, args.t_m, args.frequency)?;
            let strike = args.strike_bp * BP;

            let mut sigma_csv = String::from("sigma,price_bp\n");
            for s in &args.sigmas {
                let mut p = params.clone();
                for i in 0..p.m {
                    p.sigma[i] = *s;
                }
                let op = MomentOperator::new(&p, args.order)?;
                let (price, _) = options::cds_option_price(
                    &p, &op, &state, 0.0, args.t0, &grid, args.r, args.recovery, strike,
                    args.order,
                )?;
                sigma_csv.push_str(&format!("{s},{:.6}\n", price / BP));
            }
            let sigma_path = cli.out_dir.join(format!("{}_sigma.csv", args.prefix));
            std::fs::write(&sigma_path, sigma_csv)?;

            let mut x0_csv = String::from("x0,price_bp\n");
            let op = MomentOperator::new(&params, args.order)?;
            for x0 in &args.x0s {
                let s = State::new(state.y, DVector::from_element(params.m, *x0))?;
                let (price, _) = options::cds_option_price(
                    &params, &op, &s, 0.0, args.t0, &grid, args.r, args.recovery, strike,
                    args.order,
                )?;
                x0_csv.push_str(&format!("{x0},{:.6}\n", price / BP));
            }
            let x0_path = cli.out_dir.join(format!("{}_x0.csv", args.prefix));
            std::fs::write(&x0_path, x0_csv)?;

            emit(json!({ "sigma_csv": sigma_path, "x0_csv": x0_path }));
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// A homogeneous portfolio collapses to one block, one state, and the firm
/// count.
fn homogeneous_block<'a>(
    portfolio: &'a Portfolio,
    states: &'a [State],
) -> Result<(&'a linearcredit::LhcParams, &'a State, usize), Error> {
    if portfolio.blocks.len() != 1 {
        return Err(Error::invalid(
            "homogeneous tranche pricing needs a single-block portfolio",
        ));
    }
    for f in &portfolio.firms {
        match f {
            FirmSpec::Linear { weights } if weights[0] == 1.0 => {}
            _ => {
                return Err(Error::invalid(
                    "homogeneous tranche pricing needs identical full-weight firms",
                ))
            }
        }
    }
    Ok((&portfolio.blocks[0], &states[0], portfolio.n_firms()))
}
