//! Acceptance suite: one test per criterion, each printing a PASS line
//! with the measured quantities (run with `--nocapture` to see them).
//!
//! Reference setups used throughout:
//! - the stylized one-factor model γ = 0.25, roots (ℓ1, ℓ2) = (0.05, 1),
//!   σ = 0.75, X0 = 0.2, r = 0;
//! - the fitted two- and three-factor cascade parameter sets of the
//!   calibration study (three decimals, constraint binding).

use nalgebra::{DMatrix, DVector};

use linearcredit::calib::{calibrate, synthetic_panel, Gamma1Mode};
use linearcredit::linmat::{expm, lhcc_astar_invertible, SquareMatrix};
use linearcredit::mc::{mc_price, mc_terminal_mean, McContract, McValue};
use linearcredit::model::{lhcc_to_lhc, validate_lhc, LhcParams, LhccParams, State};
use linearcredit::moments::{MomentOperator, Poly};
use linearcredit::options::{cds_option_convergence, cds_option_price};
use linearcredit::portfolio::{
    count_distribution_homogeneous, default_count_distribution, tranche_price_homogeneous,
};
use linearcredit::pricing::{cds_legs, cds_spread, psi_d, psi_dstar, psi_z, TenorGrid};
use linearcredit::sim::{
    clock_drift, negcor_example, simulate_paths, ClockKind, ClockSpec, PathConfig,
};
use linearcredit::BP;

fn reference_params() -> LhcParams {
    LhcParams::one_factor_from_roots(0.25, 0.05, 1.0, 0.75).unwrap()
}

fn reference_state() -> State {
    State::new(1.0, DVector::from_vec(vec![0.2])).unwrap()
}

/// The six fitted cascade parameter sets (two firms × three specifications),
/// θ values at three decimals.
fn fitted_parameter_sets() -> Vec<(&'static str, LhccParams)> {
    vec![
        (
            "high-yield LHCC(2)",
            LhccParams::new(0.205, vec![0.546, 0.421], vec![0.624, 0.512], vec![0.3, 0.3])
                .unwrap(),
        ),
        (
            "high-yield LHCC(3)",
            LhccParams::new(
                0.201,
                vec![1.263, 0.668, 0.385],
                vec![0.841, 0.699, 0.478],
                vec![0.3, 0.3, 0.3],
            )
            .unwrap(),
        ),
        (
            "high-yield LHCC(3)*",
            LhccParams::new(
                0.400,
                vec![1.316, 0.884, 0.668],
                vec![0.696, 0.548, 0.401],
                vec![0.3, 0.3, 0.3],
            )
            .unwrap(),
        ),
        (
            "investment-grade LHCC(2)",
            LhccParams::new(0.056, vec![0.167, 0.165], vec![0.666, 0.662], vec![0.2, 0.2])
                .unwrap(),
        ),
        (
            "investment-grade LHCC(3)",
            LhccParams::new(
                0.064,
                vec![0.258, 0.229, 0.091],
                vec![0.753, 0.721, 0.298],
                vec![0.2, 0.2, 0.2],
            )
            .unwrap(),
        ),
        (
            "investment-grade LHCC(3)*",
            LhccParams::new(
                0.130,
                vec![0.294, 0.280, 0.212],
                vec![0.558, 0.536, 0.387],
                vec![0.2, 0.2, 0.2],
            )
            .unwrap(),
        ),
    ]
}

#[test]
fn c01_constant_intensity_embedding() {
    // x ≡ y nests the constant default intensity λ = γ
    let gamma = 0.25;
    let p = LhcParams::one_factor_from_roots(gamma, 0.0, gamma, 0.0).unwrap();
    let model = p.to_linear_model();
    let yx = DVector::from_vec(vec![1.0, 1.0]);
    let mut worst: f64 = 0.0;
    for r in [0.0, 0.0252] {
        for t_m in [1.0, 5.0, 10.0] {
            let price = psi_z(&model, 0.0, t_m, r)
                .unwrap()
                .price(&model, &yx)
                .unwrap();
            let exact = (-(r + gamma) * t_m).exp();
            worst = worst.max((price - exact).abs());
        }
    }
    assert!(worst < 1e-10, "constant-intensity bond error {worst}");
    println!("criterion 1: PASS — constant-intensity embedding, max |B_Z − e^(-(r+γ)T)| = {worst:.2e}");
}

#[test]
fn c02_contingent_claim_dual_branch() {
    // explicit-inverse branch against independently built augmented-block
    // oracles for ∫ e^(A*s) ds and ∫ s e^(A*(s−t)) ds
    let mut sets: Vec<(String, LhcParams)> = vec![("one-factor reference".into(), reference_params())];
    for (name, p) in fitted_parameter_sets() {
        sets.push((name.into(), p.clip_to_constraint().to_lhc()));
    }
    let mut worst: f64 = 0.0;
    for (name, p) in &sets {
        let model = p.to_linear_model();
        for r in [0.0, 0.0252] {
            let (t, t_m) = (0.0, 5.0);
            let a_star = model.drift_matrix(r);
            let d = a_star.nrows();
            let h = t_m - t;

            // augmented oracle: exp of [[A, I, 0], [0, 0, I], [0, 0, 0]] h
            let mut c = SquareMatrix::zeros(3 * d, 3 * d);
            c.view_mut((0, 0), (d, d)).copy_from(&a_star);
            c.view_mut((0, d), (d, d)).copy_from(&SquareMatrix::identity(d, d));
            c.view_mut((d, 2 * d), (d, d)).copy_from(&SquareMatrix::identity(d, d));
            let e = expm(&(c * h)).unwrap();
            let int_plain = e.view((0, d), (d, d)).clone_owned();
            let int_weighted =
                &int_plain * h - e.view((0, 2 * d), (d, d)).clone_owned() + &int_plain * t;

            let row = model.default_payout_row();
            let psi_d_oracle = int_plain.transpose() * &row;
            let psi_ds_oracle = int_weighted.transpose() * &row;

            let pd = psi_d(&model, t, t_m, r).unwrap().psi;
            let pds = psi_dstar(&model, t, t_m, r).unwrap().psi;
            worst = worst.max((&pd - &psi_d_oracle).amax());
            worst = worst.max((&pds - &psi_ds_oracle).amax());

            if r > 0.0 {
                if let ModelCheck::Cascade(params) = classify(name) {
                    let (invertible, _rcond) = lhcc_astar_invertible(r, &params);
                    assert!(invertible, "cascade A* must be invertible for r > 0");
                }
            }
        }
    }
    assert!(worst < 1e-10, "dual-branch deviation {worst}");
    println!("criterion 2: PASS — ψ_D / ψ_D* dual-branch deviation ≤ {worst:.2e} on {} parameter sets", sets.len());
}

enum ModelCheck {
    Cascade(LhccParams),
    Other,
}

fn classify(name: &str) -> ModelCheck {
    for (n, p) in fitted_parameter_sets() {
        if name == n {
            return ModelCheck::Cascade(p.clip_to_constraint());
        }
    }
    ModelCheck::Other
}

#[test]
fn c03_monte_carlo_vs_closed_form() {
    let p = reference_params();
    let s0 = reference_state();
    let model = p.to_linear_model();
    let yx = s0.stack();
    let r = 0.0;
    let t_m = 5.0;
    let cfg = PathConfig::new(1.0 / 1000.0, t_m, 1_000_000, 31415).unwrap();
    let ens = simulate_paths(&p, &s0, &cfg).unwrap();

    let bz_exact = psi_z(&model, 0.0, t_m, r).unwrap().price(&model, &yx).unwrap();
    let bz_mc = mc_price(&ens, r, &McContract::BondZ { t_m }, 1).unwrap();
    let bz = bz_mc.scalar();
    let bz_tol = (3.0 * bz.std_err).max(1.0 * BP);
    assert!(
        (bz.value - bz_exact).abs() <= bz_tol,
        "B_Z: mc {} vs exact {} (tol {})",
        bz.value,
        bz_exact,
        bz_tol
    );

    let cd_exact = psi_d(&model, 0.0, t_m, r).unwrap().price(&model, &yx).unwrap();
    let cd_mc = mc_price(&ens, r, &McContract::DefaultClaim { t_m }, 2).unwrap();
    let cd = cd_mc.scalar();
    let cd_tol = (3.0 * cd.std_err).max(1.0 * BP);
    assert!(
        (cd.value - cd_exact).abs() <= cd_tol,
        "C_D: mc {} vs exact {} (tol {})",
        cd.value,
        cd_exact,
        cd_tol
    );

    let grid = TenorGrid::with_frequency(0.0, t_m, 4).unwrap();
    let legs = cds_legs(&model, 0.0, &grid, r, 0.4).unwrap();
    let spread_exact = cds_spread(&legs, &yx).unwrap();
    let spread_mc = mc_price(
        &ens,
        r,
        &McContract::CdsSpread { grid, recovery: 0.4 },
        3,
    )
    .unwrap();
    let sp = spread_mc.scalar();
    let sp_tol = (3.0 * sp.std_err).max(1.0 * BP);
    assert!(
        (sp.value - spread_exact).abs() <= sp_tol,
        "spread: mc {} bp vs exact {} bp (tol {} bp)",
        sp.value / BP,
        spread_exact / BP,
        sp_tol / BP
    );
    println!(
        "criterion 3: PASS — MC vs closed form at 1e6 paths: |ΔB_Z| = {:.2e}, |ΔC_D| = {:.2e}, |Δspread| = {:.3} bp",
        (bz.value - bz_exact).abs(),
        (cd.value - cd_exact).abs(),
        (sp.value - spread_exact).abs() / BP
    );
}

#[test]
fn c04_forward_spread_moneyness_band() {
    let p = reference_params();
    let model = p.to_linear_model();
    let grid = TenorGrid::with_frequency(1.0, 6.0, 4).unwrap();
    let legs = cds_legs(&model, 0.0, &grid, 0.0, 0.4).unwrap();
    let spread = cds_spread(&legs, &reference_state().stack()).unwrap() / BP;
    assert!(
        spread > 250.0 && spread < 350.0,
        "forward CDS(0,1,6) spread {spread:.2} bp outside (250, 350)"
    );
    println!("criterion 4: PASS — forward CDS(0,1,6) spread = {spread:.2} bp, inside (250, 350)");
}

#[test]
fn c05_option_convergence_and_bounds() {
    let p = reference_params();
    let s = reference_state();
    let grid = TenorGrid::with_frequency(1.0, 6.0, 4).unwrap();
    let op = MomentOperator::new(&p, 30).unwrap();
    let bound_orders = [1usize, 5, 10, 20, 30];
    let mut max_gap: f64 = 0.0;
    for strike_bp in [250.0, 300.0, 350.0] {
        let k = strike_bp * BP;
        let table =
            cds_option_convergence(&p, &op, &s, 0.0, 1.0, &grid, 0.0, 0.4, k, &[10, 30]).unwrap();
        let gap = (table[0].price - table[1].price).abs() / BP;
        max_gap = max_gap.max(gap);
        assert!(
            gap < 1.0,
            "price(10) vs price(30) moved {gap:.3} bp at strike {strike_bp} bp"
        );
        let bounds =
            cds_option_convergence(&p, &op, &s, 0.0, 1.0, &grid, 0.0, 0.4, k, &bound_orders)
                .unwrap();
        for w in bounds.windows(2) {
            assert!(
                w[1].bound <= w[0].bound + 1e-12,
                "error bound rose from {} to {} between orders {} and {}",
                w[0].bound,
                w[1].bound,
                w[0].order,
                w[1].order
            );
        }
    }
    println!(
        "criterion 5: PASS — |price(10) − price(30)| ≤ {max_gap:.3} bp over strikes 250/300/350; bounds nonincreasing"
    );
}

#[test]
fn c06_option_monotonicity() {
    let grid = TenorGrid::with_frequency(1.0, 6.0, 4).unwrap();
    let strike = 0.030;
    let order = 20;
    let mut last = f64::NEG_INFINITY;
    let mut sigma_prices = Vec::new();
    for sigma in [0.25, 0.5, 0.75, 1.0] {
        let p = LhcParams::one_factor_from_roots(0.25, 0.05, 1.0, sigma).unwrap();
        let op = MomentOperator::new(&p, order).unwrap();
        let (price, _) = cds_option_price(
            &p,
            &op,
            &reference_state(),
            0.0,
            1.0,
            &grid,
            0.0,
            0.4,
            strike,
            order,
        )
        .unwrap();
        assert!(
            price >= last - 1e-12,
            "price fell from {last} to {price} as σ rose to {sigma}"
        );
        last = price;
        sigma_prices.push(price / BP);
    }
    let p = reference_params();
    let op = MomentOperator::new(&p, order).unwrap();
    let mut last = f64::NEG_INFINITY;
    let mut x0_prices = Vec::new();
    for x0 in [0.1, 0.2, 0.3] {
        let s = State::new(1.0, DVector::from_vec(vec![x0])).unwrap();
        let (price, _) =
            cds_option_price(&p, &op, &s, 0.0, 1.0, &grid, 0.0, 0.4, strike, order).unwrap();
        assert!(
            price >= last - 1e-12,
            "price fell from {last} to {price} as x0 rose to {x0}"
        );
        last = price;
        x0_prices.push(price / BP);
    }
    println!(
        "criterion 6: PASS — price(σ) = {sigma_prices:.1?} bp nondecreasing; price(x0) = {x0_prices:.1?} bp nondecreasing"
    );
}

#[test]
fn c07_default_count_distribution() {
    // heterogeneous ratios against the Bernoulli convolution
    let mut worst_dft: f64 = 0.0;
    for n in 1..=8usize {
        let ratios: Vec<f64> = (0..n).map(|i| 0.55 + 0.05 * i as f64).collect();
        let alive = vec![true; n];
        let dist = default_count_distribution(&ratios, &alive, 1.0).unwrap();
        let mut conv = vec![1.0];
        for p in &ratios {
            let mut next = vec![0.0; conv.len() + 1];
            for (k, pr) in conv.iter().enumerate() {
                next[k] += pr * p;
                next[k + 1] += pr * (1.0 - p);
            }
            conv = next;
        }
        for (a, b) in dist.probabilities.iter().zip(&conv) {
            worst_dft = worst_dft.max((a - b).abs());
        }
        let total: f64 = dist.probabilities.iter().sum();
        worst_dft = worst_dft.max((total - 1.0).abs());
    }
    assert!(worst_dft < 1e-12, "DFT vs convolution deviation {worst_dft}");

    let mut worst_hom: f64 = 0.0;
    for n in 1..=10usize {
        for ratio in [0.0, 0.15, 0.5, 0.85, 1.0] {
            let dft =
                default_count_distribution(&vec![ratio; n], &vec![true; n], 1.0).unwrap();
            let hom = count_distribution_homogeneous(n, ratio, 0, 1.0).unwrap();
            for (a, b) in dft.probabilities.iter().zip(&hom.probabilities) {
                worst_hom = worst_hom.max((a - b).abs());
            }
        }
    }
    assert!(worst_hom < 1e-11, "DFT vs binomial deviation {worst_hom}");
    println!(
        "criterion 7: PASS — count distribution: conv deviation {worst_dft:.2e} (N ≤ 8), binomial deviation {worst_hom:.2e} (N ≤ 10)"
    );
}

#[test]
fn c08_homogeneous_tranche_vs_mc_and_partition() {
    let p = reference_params();
    let s = reference_state();
    let (n_firms, t_m, recovery, r) = (5usize, 3.0, 0.4, 0.0);
    let grid = TenorGrid::with_frequency(0.0, t_m, 4).unwrap();

    let closed = tranche_price_homogeneous(&p, &s, 0.0, &grid, 0, 3, recovery, 0.0, r, n_firms, 0)
        .unwrap();
    let cfg = PathConfig::new(1.0 / 1000.0, t_m, 100_000, 777).unwrap();
    let ens = simulate_paths(&p, &s, &cfg).unwrap();
    let mc = mc_price(
        &ens,
        r,
        &McContract::TrancheLegs {
            grid: grid.clone(),
            recovery,
            n_firms,
            n_att: 0,
            n_det: 3,
        },
        9,
    )
    .unwrap();
    let McValue::Legs { prot, prem } = mc else {
        panic!("legs expected")
    };
    assert!(
        (prot.value - closed.protection).abs() <= 3.0 * prot.std_err,
        "protection: mc {} ± {} vs closed {}",
        prot.value,
        prot.std_err,
        closed.protection
    );
    assert!(
        (prem.value - closed.premium).abs() <= 3.0 * prem.std_err,
        "premium: mc {} ± {} vs closed {}",
        prem.value,
        prem.std_err,
        closed.premium
    );

    // equity + senior partition reproduces the whole-portfolio legs
    let whole =
        tranche_price_homogeneous(&p, &s, 0.0, &grid, 0, n_firms, recovery, 0.0, r, n_firms, 0)
            .unwrap();
    let lo = tranche_price_homogeneous(&p, &s, 0.0, &grid, 0, 3, recovery, 0.0, r, n_firms, 0)
        .unwrap();
    let hi = tranche_price_homogeneous(&p, &s, 0.0, &grid, 3, n_firms, recovery, 0.0, r, n_firms, 0)
        .unwrap();
    let prot_gap = (whole.protection - lo.protection - hi.protection).abs();
    let prem_gap = (whole.premium - lo.premium - hi.premium).abs();
    assert!(prot_gap < 1e-8 && prem_gap < 1e-8, "partition gaps {prot_gap}, {prem_gap}");
    println!(
        "criterion 8: PASS — tranche (0,3): |Δprot| = {:.2e} (3se {:.2e}), |Δprem| = {:.2e} (3se {:.2e}); partition gaps ≤ {:.1e}",
        (prot.value - closed.protection).abs(),
        3.0 * prot.std_err,
        (prem.value - closed.premium).abs(),
        3.0 * prem.std_err,
        prot_gap.max(prem_gap)
    );
}

#[test]
fn c09_moment_engine_vs_mc_and_identities() {
    let p = reference_params();
    let s = reference_state();
    let op = MomentOperator::new(&p, 6).unwrap();
    let h = 1.0;
    let cfg = PathConfig::new(1.0 / 1000.0, h, 200_000, 2024).unwrap();
    let ens = simulate_paths(&p, &s, &cfg).unwrap();
    let basis_moments = op.basis_moments(&s, h).unwrap();
    let mut checked = 0;
    for (pos, b) in op.basis.list.iter().enumerate() {
        if b.degree() > 4 {
            continue;
        }
        let (ay, ax) = (b.exponents[0], b.exponents[1]);
        let mc = mc_terminal_mean(&ens, |y, x| y.powi(ay as i32) * x[0].powi(ax as i32));
        let tol = (3.0 * mc.std_err).max(2e-4);
        assert!(
            (mc.value - basis_moments[pos]).abs() <= tol,
            "moment y^{ay} x^{ax}: mc {} ± {} vs operator {}",
            mc.value,
            mc.std_err,
            basis_moments[pos]
        );
        checked += 1;
    }

    // tower / semigroup identities
    let target = Poly {
        terms: vec![(vec![1, 2], 1.0), (vec![0, 3], -0.5), (vec![2, 0], 0.25)],
    }
    .to_coeffs(&op.basis)
    .unwrap();
    let (h1, h2) = (0.6, 1.7);
    let direct = op.moment(&s, &target, h1 + h2).unwrap();
    let inner = op.propagate_coeffs(h2, &target).unwrap();
    let nested = op.moment(&s, &inner, h1).unwrap();
    assert!((direct - nested).abs() < 1e-10, "tower gap {}", (direct - nested).abs());

    let one = Poly::constant(1, 1.0).to_coeffs(&op.basis).unwrap();
    assert_eq!(op.moment(&s, &one, 3.3).unwrap(), 1.0);
    println!(
        "criterion 9: PASS — {checked} monomial moments (degree ≤ 4) within 3 SE of MC; tower gap {:.1e}",
        (direct - nested).abs()
    );
}

#[test]
fn c10_calibration_round_trip() {
    // noiseless weekly panel generated by a binding two-factor cascade
    let truth = LhccParams::new(
        0.205,
        vec![0.546, 0.421],
        vec![0.624, 0.512],
        vec![0.3, 0.3],
    )
    .unwrap()
    .clip_to_constraint();
    let x0 = State::new(1.0, DVector::from_vec(vec![0.25, 0.2])).unwrap();
    let panel = synthetic_panel(
        &truth,
        &x0,
        &[1.0, 2.0, 3.0, 4.0, 5.0, 7.0, 10.0],
        520,
        chrono::NaiveDate::from_ymd_opt(2005, 1, 3).unwrap(),
        4242,
        0.0252,
        0.4,
    )
    .unwrap();
    let result = calibrate(&panel, 2, Gamma1Mode::Free, 16, 7).unwrap();
    assert!(
        result.rmse_bp < 0.1,
        "round-trip RMSE {} bp ≥ 0.1 bp",
        result.rmse_bp
    );
    let rel = |fit: f64, tru: f64| (fit - tru).abs() / tru.abs();
    let errs = [
        rel(result.params.gamma1, truth.gamma1),
        rel(result.params.kappa[0], truth.kappa[0]),
        rel(result.params.kappa[1], truth.kappa[1]),
        rel(result.params.theta[0], truth.theta[0]),
        rel(result.params.theta[1], truth.theta[1]),
    ];
    let worst = errs.iter().fold(0.0f64, |a, b| a.max(*b));
    assert!(worst < 0.05, "parameter relative errors {errs:?}");
    // the generator binds the cascade constraint; the fit must too
    let slack = result.params.constraint_slack();
    assert!(
        slack.iter().all(|s| s.abs() < 5e-3),
        "fitted constraint slack {slack:?} not binding"
    );
    println!(
        "criterion 10: PASS — round trip RMSE {:.4} bp; worst parameter error {:.2}%; fitted slacks {:?}",
        result.rmse_bp,
        worst * 100.0,
        slack
    );
}

#[test]
fn c11_fitted_parameter_consistency() {
    // The three-decimal published values overshoot the binding constraint
    // by up to ~1.4e-3 on several dimensions, so the signed slack cannot be
    // required nonnegative; binding within rounding means |slack| ≤ 5e-3,
    // and the embedded model is valid once θ is clipped back to the bound.
    let mut max_abs: f64 = 0.0;
    for (name, p) in fitted_parameter_sets() {
        for (i, s) in p.constraint_slack().iter().enumerate() {
            assert!(
                s.abs() <= 5e-3,
                "{name}: |1 − γ1/κ_{}| − θ_{} slack {} beyond rounding",
                i + 1,
                i + 1,
                s
            );
            max_abs = max_abs.max(s.abs());
        }
        let clipped = p.clip_to_constraint();
        let lhc = lhcc_to_lhc(&clipped).unwrap();
        let report = validate_lhc(&lhc);
        assert!(report.valid, "{name}: clipped embedding fails validation");
        println!(
            "  {name}: signed slacks {:?}",
            p.constraint_slack()
                .iter()
                .map(|s| format!("{s:+.1e}"))
                .collect::<Vec<_>>()
        );
    }
    println!(
        "criterion 11: PASS — all fitted sets bind the cascade constraint within 3-decimal rounding (max |slack| = {max_abs:.1e}) and validate after clipping"
    );
}

#[test]
fn c12_gamma_clock_dual_route() {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    // scalar closed form
    let a1 = SquareMatrix::from_element(1, 1, -0.8);
    let spec = ClockSpec {
        kind: ClockKind::Gamma,
        gamma_z: 1.2,
        lambda_z: 1.7,
        drift_bz: 0.0,
    };
    let scalar = clock_drift(&a1, &spec).unwrap()[(0, 0)];
    let exact = -1.2 * (1.0f64 + 0.8 / 1.7).ln();
    assert!((scalar - exact).abs() < 1e-12, "scalar clock {scalar} vs {exact}");

    let mut rng = StdRng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        // stable by construction: −(M M' + εI)
        let m = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-0.6..0.6));
        let a = -(&m * m.transpose()) - SquareMatrix::identity(4, 4) * 0.05;
        let closed = clock_drift(
            &a,
            &ClockSpec { kind: ClockKind::Gamma, gamma_z: 0.9, lambda_z: 2.1, drift_bz: 0.3 },
        )
        .unwrap();
        let quad = clock_drift(
            &a,
            &ClockSpec {
                kind: ClockKind::GammaQuadrature,
                gamma_z: 0.9,
                lambda_z: 2.1,
                drift_bz: 0.3,
            },
        )
        .unwrap();
        worst = worst.max((&closed - &quad).amax());
    }
    assert!(worst < 1e-8, "clock dual-route deviation {worst}");
    println!(
        "criterion 12: PASS — Gamma clock: scalar error {:.1e}, matrix dual-route deviation ≤ {worst:.1e}",
        (scalar - exact).abs()
    );
}

#[test]
fn c13_negatively_correlated_intensities() {
    let cfg = PathConfig::new(1.0 / 1000.0, 1.0, 20_000, 618).unwrap();
    let res = negcor_example(0.1, 0.5, 0.3, 0.0, &cfg).unwrap();
    // one-sided 95% bound strictly below zero
    assert!(
        res.covariation + 1.645 * res.std_err < 0.0,
        "covariation {} ± {} not negative at 95%",
        res.covariation,
        res.std_err
    );
    assert!(
        res.max_intensity <= 0.1 + 1e-9,
        "intensity exceeded ε: {}",
        res.max_intensity
    );
    assert!(res.x_in_bounds);
    // boundary starts stay inside the shrinking interval
    for x0 in [1.0, -1.0] {
        let cfg2 = PathConfig::new(1.0 / 1000.0, 1.0, 2_000, 619).unwrap();
        let r = negcor_example(0.1, 0.5, 0.3, x0, &cfg2).unwrap();
        assert!(r.x_in_bounds && r.max_intensity <= 0.1 + 1e-9);
    }
    println!(
        "criterion 13: PASS — realized covariation {:.3e} ± {:.1e} (negative at 95%); λ ≤ ε pathwise; X within ±e^(-εt)",
        res.covariation, res.std_err
    );
}
