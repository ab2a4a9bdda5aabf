use std::fs::File;
use std::io::{BufReader, BufWriter, Write};

use proptest::prelude::*;

use downside_core::duality::{
    inverse_legendre, legendre, rate_function_table, read_rate_csv, write_rate_csv, Branch, ChiCurve, CurveSource,
};
use downside_core::ergodic::{chi_prime, generator_measure, invariant_measure, MeasureMethod};
use downside_core::grid::Grid;
use downside_core::hjb::{extract_ergodic, solve_finite_horizon, Schedule};
use downside_core::model::ModelSpec;
use downside_core::montecarlo::{estimate_downside, simulate_paths, Measure, SimConfig, Strategy};
use downside_core::oracle::{integrate_riccati, merton_rate, RiccatiConstants};

fn lgq(a: f64, b: f64, v0: f64) -> ModelSpec {
    ModelSpec::from_json(&format!(
        r#"{{"n": 1, "m": 1,
            "r": {{"type": "constant", "value": 0.0}},
            "alpha": {{"type": "affine", "A": [[1.0]], "a": [{a}]}},
            "sigma": {{"type": "constant", "value": [[1.0, 0.0]]}},
            "beta": {{"type": "affine", "B": [[-1.0]], "b": [{b}]}},
            "lambda": {{"type": "constant", "value": [[1.0, 0.0]]}},
            "v0": {v0}}}"#
    ))
    .unwrap()
}

fn merton(mu: f64) -> ModelSpec {
    ModelSpec::from_json(&format!(
        r#"{{"n": 1, "m": 1,
            "r": {{"type": "constant", "value": 0.0}},
            "alpha": {{"type": "constant", "value": [{mu}]}},
            "sigma": {{"type": "constant", "value": [[1.0, 0.0]]}},
            "beta": {{"type": "constant", "value": [0.0]}},
            "lambda": {{"type": "constant", "value": [[0.0, 1.0]]}},
            "v0": 1.0}}"#
    ))
    .unwrap()
}

fn grid(half: f64, nodes: usize) -> Grid {
    Grid::cube(1, half, nodes).unwrap()
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// `gamma th2 / (2 (1 - gamma))` sampled on `n` points.
fn merton_curve(th2: f64, n: usize) -> ChiCurve {
    ChiCurve::from_fn(linspace(-10.0, -0.02, n), |g| {
        let one = 1.0 - g;
        Ok((g * th2 / (2.0 * one), th2 / (2.0 * one * one)))
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rate_results_are_signed_and_solve_the_first_order_condition(
        th2 in 0.01..0.5f64, kappa in -0.05..0.3f64,
    ) {
        let curve = merton_curve(th2, 400);
        let r = legendre(&curve, kappa).unwrap();
        prop_assert!(r.i >= 0.0);
        prop_assert!(r.j <= 0.0);
        if r.branch == Branch::Interior {
            let g = r.gamma_star.unwrap();
            prop_assert!((curve.chi_prime_at(g) - kappa).abs() < 1e-10);
            // closed form sqrt rate
            let exact = merton_rate(th2, kappa);
            prop_assert!((r.i - exact.i).abs() < 1e-5, "{} vs {}", r.i, exact.i);
        }
        if kappa < 0.0 {
            prop_assert_eq!(r.branch, Branch::KappaNegative);
            prop_assert_eq!(r.j, f64::NEG_INFINITY);
        }
    }

    #[test]
    fn fenchel_young_and_monotone_rate(th2 in 0.01..0.5f64) {
        let curve = merton_curve(th2, 300);
        // at and above chi'(gamma_max) I is set to 0 by convention
        let kappas = linspace(0.0, curve.chi_prime_limit() * (1.0 - 1e-9), 40);
        let rows = rate_function_table(&curve, &kappas).unwrap();
        for r in &rows {
            for (g, c) in curve.gammas.iter().zip(&curve.chi) {
                let gap = g * r.kappa - c - r.i;
                // slack covers the interpolation error of the integrated chi'
                prop_assert!(gap <= 2e-6 * th2, "kappa {} branch {:?} gamma {} gap {:e}", r.kappa, r.branch, g, gap);
            }
        }
        for w in rows.windows(2) {
            prop_assert!(w[1].i <= w[0].i + 1e-12);
        }
        // J = -I is concave on the interior rows
        let inner: Vec<_> = rows.iter().filter(|r| r.branch == Branch::Interior).collect();
        for t in inner.windows(3) {
            let (a, b, c) = (t[0], t[1], t[2]);
            let lerp = a.j + (c.j - a.j) * (b.kappa - a.kappa) / (c.kappa - a.kappa);
            prop_assert!(b.j >= lerp - 1e-9);
        }
        let back = inverse_legendre(&rows, &curve.gammas);
        for (b, c) in back.iter().zip(&curve.chi) {
            prop_assert!(*b <= c + 2e-6 * th2);
        }
    }

    #[test]
    fn ou_measure_is_a_normalized_gaussian(k in 0.5..3.0f64, s in 0.5..1.5f64) {
        let g = grid(6.0 * s / k.sqrt(), 241);
        let diffusion = vec![s * s; g.len()];
        let drift: Vec<f64> = (0..g.len()).map(|n| -k * g.coord(n)[0]).collect();
        let m = generator_measure(&g, &diffusion, &drift).unwrap();
        prop_assert!(m.mass.iter().all(|v| *v >= 0.0));
        prop_assert!(m.normalization_error < 1e-8);
        let var = m.moment(0, 2);
        let exact = s * s / (2.0 * k);
        prop_assert!((var - exact).abs() < 5e-3 * exact, "{var} vs {exact}");
    }

    #[test]
    fn poisson_theta_is_nonnegative(a in -0.5..0.5f64, b in -0.5..0.5f64, gamma in -4.0..-0.1f64) {
        let spec = lgq(a, b, 1.0);
        let g = grid(6.0, 161);
        let e = extract_ergodic(&spec, gamma, &g, &Schedule::default()).unwrap();
        prop_assert!(e.chi <= 1e-6);
        let m = invariant_measure(&spec, gamma, &e.w, MeasureMethod::FokkerPlanck).unwrap();
        let p = chi_prime(&spec, gamma, &e.w, &m).unwrap();
        prop_assert!(p.theta >= 0.0);
        prop_assert!(p.residual < 1e-8);
    }

    #[test]
    fn finite_horizon_terminal_slice(v0 in 1.0..5.0f64, gamma in -3.0..-0.1f64) {
        let spec = lgq(0.0, 0.0, v0);
        let s = solve_finite_horizon(&spec, gamma, &grid(4.0, 41), 1.0, 20).unwrap();
        let last = s.values.last().unwrap();
        prop_assert!(last.iter().all(|v| *v == -gamma * v0.ln()));
        prop_assert_eq!(*s.times.last().unwrap(), 1.0);
    }

    #[test]
    fn riccati_pair_is_nonnegative_with_exact_terminal_data(
        b in 0.01..2.0f64, k in 0.01..2.0f64, q_t in 0.0..2.0f64, horizon in 0.5..20.0f64,
    ) {
        let c = RiccatiConstants {
            c: 1.0, b, k, c1: 1.0, c2: 1.0, c_beta: 0.1, c_gamma: 0.5, c_gamma_prime: 0.0, q_terminal: q_t,
        };
        let times = linspace(0.0, horizon, 9);
        let pair = integrate_riccati(2, horizon, &c, &times).unwrap();
        prop_assert_eq!(pair.p_scalar[8], 0.0);
        prop_assert_eq!(pair.q[8], q_t);
        for (p, m) in pair.p_scalar.iter().zip(&pair.p) {
            prop_assert!(*p >= 0.0 && *p <= (b / k).sqrt() + 1e-9);
            prop_assert!((m - m.transpose()).norm() == 0.0);
        }
    }

    #[test]
    fn physical_estimates_are_probabilities(kappa in -0.2..0.2f64, seed in 0u64..1000) {
        let cfg = SimConfig::new(2.0, 200, seed);
        let samples = simulate_paths(&merton(0.3), &Strategy::Constant(vec![0.3]), &cfg).unwrap();
        let e = estimate_downside(&samples, kappa).unwrap();
        prop_assert!((0.0..=1.0).contains(&e.p_hat));
        prop_assert!(e.ci_low <= e.p_hat && e.p_hat <= e.ci_high);
    }
}

#[test]
fn sim_config_bounds_are_enforced() {
    let spec = merton(0.3);
    let s = Strategy::ZeroBenchmark;
    let coarse = SimConfig {
        dt: Some(0.2),
        ..SimConfig::new(10.0, 200, 1)
    };
    assert!(simulate_paths(&spec, &s, &coarse).is_err());
    assert!(simulate_paths(&spec, &s, &SimConfig::new(10.0, 99, 1)).is_err());
    assert!(simulate_paths(&spec, &s, &SimConfig::new(10.0, 100, 1)).is_ok());
}

#[test]
fn grids_need_sixteen_nodes() {
    assert!(Grid::cube(1, 1.0, 15).is_err());
    assert!(Grid::cube(1, 1.0, 16).is_ok());
}

#[test]
fn feedback_outside_the_box_is_clamped_and_counted() {
    let spec = merton(0.3);
    let g = grid(0.5, 21);
    let e = extract_ergodic(&spec, -0.5, &g, &Schedule::default()).unwrap();
    let strategy = Strategy::StationaryFeedback { w: e.w, gamma: -0.5 };
    let samples = simulate_paths(&spec, &strategy, &SimConfig::new(5.0, 200, 3)).unwrap();
    assert!(samples.clamp_count() > 0);
    // constant coefficients: the clamped feedback is still the Merton weight 0.3 / 1.5
    let cfg = SimConfig::new(5.0, 200, 3).with_measure(Measure::Physical);
    let constant = simulate_paths(&spec, &Strategy::Constant(vec![0.2]), &cfg).unwrap();
    for (a, b) in samples.paths.iter().zip(&constant.paths) {
        assert!((a.l_t - b.l_t).abs() < 1e-9);
    }
}

#[test]
fn chi_curve_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chi.csv");
    let curve = merton_curve(0.09, 25);
    let mut f = BufWriter::new(File::create(&path).unwrap());
    curve.write_csv(&mut f).unwrap();
    f.flush().unwrap();
    drop(f);
    let back = ChiCurve::read_csv_file(&path).unwrap();
    assert_eq!(back.gammas, curve.gammas);
    assert_eq!(back.chi, curve.chi);
    assert_eq!(back.chi_prime, curve.chi_prime);
    assert_eq!(back.source, CurveSource::ExternalCsv);
    assert!(back.convexity_certified);
}

#[test]
fn rate_csv_round_trip_keeps_sentinels() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rate.csv");
    let curve = merton_curve(0.09, 200);
    let rows = rate_function_table(&curve, &[-0.01, 0.0, 0.02, 0.08]).unwrap();
    let mut f = File::create(&path).unwrap();
    write_rate_csv(&rows, &mut f).unwrap();
    drop(f);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("# downside rate v1\n"));
    let back = read_rate_csv(BufReader::new(File::open(&path).unwrap())).unwrap();
    assert_eq!(back.len(), rows.len());
    for (a, b) in back.iter().zip(&rows) {
        assert_eq!(a.branch, b.branch);
        assert_eq!(a.j, b.j);
        assert_eq!(a.gamma_star, b.gamma_star);
    }
    assert_eq!(back[0].j, f64::NEG_INFINITY);
    assert_eq!(back[1].branch, Branch::KappaZero);
    assert_eq!(back[3].branch, Branch::OutOfRange);
}
