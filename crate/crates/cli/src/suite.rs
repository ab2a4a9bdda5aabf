//! Reference-model acceptance suite shared by `validate` and the `acceptance`
//! test target. Reference values come from closed forms written out here,
//! independently of the `oracle` module they are checked against.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use serde::Serialize;

use downside_core::duality::{
    build_chi_curve, inverse_legendre, legendre, rate_function_table, second_differences, ChiCurve, DerivativeRoute,
};
use downside_core::ergodic::{chi0, chi_prime, chi_prime_fd_check, invariant_measure, MeasureMethod};
use downside_core::grid::{Grid, ScalarField};
use downside_core::hjb::{extract_ergodic, solve_finite_horizon, ErgodicSolution, Schedule};
use downside_core::model::{check_assumptions, ModelSpec, SampleBox};
use downside_core::montecarlo::{
    estimate_downside, ld_slope, simulate_paths, tilted_vs_plain_check, Measure, SimConfig, Strategy,
};
use downside_core::oracle::{integrate_riccati, lgq_riccati, merton_chi, merton_rate, RiccatiConstants};

use crate::args::SuiteKind;
use crate::commands::linspace;

pub const ALL: [u8; 12] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12];
/// Criteria without long Monte Carlo ladders.
pub const FAST: [u8; 9] = [1, 2, 3, 4, 5, 6, 7, 9, 11];

// Reference box for every PDE criterion.
const HALF_WIDTH: f64 = 6.0;
const NODES: usize = 201;

const MERTON_GAMMA: f64 = -0.5;
const MERTON_CHI: f64 = -0.015;
const KAPPA: f64 = 0.02;
const SEED: u64 = 7;
const MC_PATHS: usize = 100_000;

pub fn suite_ids(kind: SuiteKind) -> &'static [u8] {
    match kind {
        SuiteKind::Fast => &FAST,
        SuiteKind::Full => &ALL,
    }
}

/// `--fixtures`, else `./fixtures`, else the repository copy.
pub fn locate_fixtures(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    let local = PathBuf::from("fixtures");
    if local.join("merton.json").exists() {
        return local;
    }
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// The two reference models plus lazily computed shared results.
pub struct Fixtures {
    pub dir: PathBuf,
    pub merton: ModelSpec,
    pub lgq: ModelSpec,
    merton_theta_sq: f64,
    lgq_curve: OnceLock<std::result::Result<ChiCurve, String>>,
    merton_w: OnceLock<std::result::Result<ScalarField, String>>,
}

impl Fixtures {
    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<ModelSpec> {
            let p = dir.join(name);
            ModelSpec::from_file(&p).with_context(|| format!("loading fixture {}", p.display()))
        };
        let merton = read("merton.json")?;
        let lgq = read("lgq.json")?;
        let raw = merton.eval_coefficients(&vec![0.0; merton.n])?;
        let excess = raw.alpha.add_scalar(-raw.r);
        let ss = &raw.sigma * raw.sigma.transpose();
        let inv = ss
            .try_inverse()
            .ok_or_else(|| anyhow!("merton fixture has singular sigma sigma^T"))?;
        let merton_theta_sq = excess.dot(&(inv * &excess));
        Ok(Fixtures {
            dir: dir.to_path_buf(),
            merton,
            lgq,
            merton_theta_sq,
            lgq_curve: OnceLock::new(),
            merton_w: OnceLock::new(),
        })
    }

    fn grid(&self) -> Result<Grid> {
        Ok(Grid::cube(1, HALF_WIDTH, NODES)?)
    }

    /// Computed LGQ curve on the 20-point reference grid.
    fn lgq_curve(&self) -> Result<&ChiCurve> {
        self.lgq_curve
            .get_or_init(|| {
                let grid = self.grid().map_err(|e| e.to_string())?;
                build_chi_curve(&self.lgq, &linspace(-4.0, -0.1, 20), &grid, DerivativeRoute::Poisson)
                    .map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(|e| anyhow!("{e}"))
    }

    /// Merton potential at gamma(0.02) = -0.5.
    fn merton_w(&self) -> Result<&ScalarField> {
        self.merton_w
            .get_or_init(|| {
                let grid = self.grid().map_err(|e| e.to_string())?;
                extract_ergodic(&self.merton, MERTON_GAMMA, &grid, &Schedule::default())
                    .map(|e| e.w)
                    .map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(|e| anyhow!("{e}"))
    }

    /// `gamma theta^2 / (2 (1 - gamma))`.
    fn merton_chi_exact(&self, gamma: f64) -> f64 {
        gamma * self.merton_theta_sq / (2.0 * (1.0 - gamma))
    }
}

/// LGQ fixture (`alpha = x`, `beta = -x`, unit volatilities, `r = 0`):
/// `p = -(2g - 1) - sqrt((2g - 1)^2 - g)`, `chi = p / 2`.
pub fn lgq_exact(gamma: f64) -> (f64, f64) {
    let b = 2.0 * gamma - 1.0;
    let p = -b - (b * b - gamma).sqrt();
    let dp = -(4.0 * p + 1.0) / (2.0 * p + 2.0 * b);
    (0.5 * p, 0.5 * dp)
}

#[derive(Debug, Clone, Serialize)]
pub struct SelfCheck {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn self_check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> SelfCheck {
    match f() {
        Ok((pass, detail)) => SelfCheck { name, pass, detail },
        Err(e) => SelfCheck {
            name,
            pass: false,
            detail: format!("error: {e:#}"),
        },
    }
}

/// Verifies the reference solutions before they are used as yardsticks.
/// `inject_fault` perturbs the Riccati root so the residual check must fail.
pub fn oracle_self_checks(fx: &Fixtures, inject_fault: bool) -> Vec<SelfCheck> {
    let mut out = Vec::new();
    out.push(self_check("lgq_riccati residual", || {
        let mut worst = 0.0_f64;
        for g in [-4.0, -1.0, -0.25] {
            let mut s = lgq_riccati(&fx.lgq, g)?;
            if inject_fault {
                s.p *= 1.001;
            }
            worst = worst.max(s.residual(&fx.lgq, 200)?);
        }
        Ok((worst <= 1e-12, format!("max residual {worst:.2e} (tol 1e-12)")))
    }));
    out.push(self_check("lgq_riccati closed form", || {
        let mut worst = 0.0_f64;
        for g in [-50.0, -4.0, -1.0, -0.25, -0.01] {
            let s = lgq_riccati(&fx.lgq, g)?;
            let (c, d) = lgq_exact(g);
            worst = worst.max((s.chi - c).abs()).max((s.chi_prime - d).abs());
        }
        Ok((worst <= 1e-12, format!("max deviation {worst:.2e} (tol 1e-12)")))
    }));
    out.push(self_check("riccati tanh solution", || {
        let k = RiccatiConstants {
            c: 0.5,
            b: 0.3,
            k: 1.7,
            c1: 1.0,
            c2: 1.0,
            c_beta: 0.2,
            c_gamma: 0.35,
            c_gamma_prime: 0.1,
            q_terminal: 0.25,
        };
        let horizon = 5.0;
        let times = linspace(0.0, horizon, 11);
        let pair = integrate_riccati(1, horizon, &k, &times)?;
        let rate = (k.b * k.k).sqrt();
        let mut worst = 0.0_f64;
        for (i, t) in times.iter().enumerate() {
            let s = horizon - t;
            let p = (k.b / k.k).sqrt() * (rate * s).tanh();
            let q = k.q_terminal + 0.5 * k.c1 / k.k * (rate * s).cosh().ln() - (0.5 * k.c * k.c_beta + k.c_gamma_prime) * s;
            worst = worst.max((pair.p_scalar[i] - p).abs()).max((pair.q[i] - q).abs());
        }
        Ok((worst <= 1e-9, format!("max deviation {worst:.2e} (tol 1e-9)")))
    }));
    out.push(self_check("merton closed forms", || {
        let th = fx.merton_theta_sq;
        let gammas = linspace(-10.0, -0.02, 2000);
        let curve = ChiCurve::from_fn(gammas, |g| merton_chi(th, g))?;
        let mut worst = 0.0_f64;
        for g in [-10.0, -1.0, -0.5, -0.02] {
            worst = worst.max((merton_chi(th, g)?.0 - fx.merton_chi_exact(g)).abs());
        }
        for kappa in [0.005, 0.01, 0.02, 0.03] {
            let a = merton_rate(th, kappa);
            let b = legendre(&curve, kappa)?;
            worst = worst.max((a.i - b.i).abs());
        }
        Ok((worst <= 1e-6, format!("max deviation {worst:.2e} (tol 1e-6)")))
    }));
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "{} [{:>2}] {:<34} {} ({:.1} s)",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds
        )
    }
}

pub fn criterion_name(id: u8) -> &'static str {
    match id {
        1 => "merton chi by vanishing discount",
        2 => "lgq chi against riccati",
        3 => "chi' poisson vs finite difference",
        4 => "convexity of chi",
        5 => "chi bounds",
        6 => "chi' asymptote",
        7 => "legendre round trip",
        8 => "large-deviation slope",
        9 => "riccati lower bound",
        10 => "importance sampling unbiased",
        11 => "zero benchmark exact",
        12 => "determinism across threads",
        _ => "unknown",
    }
}

pub fn run_criterion(id: u8, fx: &Fixtures) -> CriterionResult {
    let start = Instant::now();
    let outcome = match id {
        1 => c1_merton_chi(fx),
        2 => c2_lgq_chi(fx),
        3 => c3_chi_prime(fx),
        4 => c4_convexity(fx),
        5 => c5_bounds(fx),
        6 => c6_asymptote(fx),
        7 => c7_round_trip(fx),
        8 => c8_slope(fx),
        9 => c9_riccati_bound(fx),
        10 => c10_tilt(fx),
        11 => c11_zero_benchmark(fx),
        12 => c12_determinism(fx),
        _ => Err(anyhow!("no criterion {id}")),
    };
    let seconds = start.elapsed().as_secs_f64();
    let (pass, detail) = match outcome {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e:#}")),
    };
    CriterionResult {
        id,
        name: criterion_name(id),
        pass,
        detail,
        seconds,
    }
}

type Outcome = Result<(bool, String)>;

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t = Instant::now();
    let v = f()?;
    Ok((v, t.elapsed().as_secs_f64()))
}

fn c1_merton_chi(fx: &Fixtures) -> Outcome {
    let grid = fx.grid()?;
    let (e, secs): (ErgodicSolution, f64) =
        timed(|| Ok(extract_ergodic(&fx.merton, MERTON_GAMMA, &grid, &Schedule::default())?))?;
    let exact = fx.merton_chi_exact(MERTON_GAMMA);
    let err = (e.chi - exact).abs();
    let osc = e.w.oscillation(|_| true);
    let pass = (exact - MERTON_CHI).abs() < 1e-15 && err <= 1e-4 && osc <= 1e-4 && secs < 10.0;
    Ok((
        pass,
        format!("chi = {:.8} (|err| {err:.1e} <= 1e-4), osc(w) = {osc:.1e} <= 1e-4, {secs:.2} s < 10 s", e.chi),
    ))
}

fn c2_lgq_chi(fx: &Fixtures) -> Outcome {
    let grid = fx.grid()?;
    let gammas = [-4.0, -2.0, -1.0, -0.5, -0.25, -0.1];
    let (chis, secs) = timed(|| {
        gammas
            .iter()
            .map(|&g| Ok(extract_ergodic(&fx.lgq, g, &grid, &Schedule::default())?.chi))
            .collect::<Result<Vec<f64>>>()
    })?;
    let worst = gammas
        .iter()
        .zip(&chis)
        .map(|(&g, c)| ((c - lgq_exact(g).0) / lgq_exact(g).0).abs())
        .fold(0.0, f64::max);
    Ok((
        worst <= 1e-3 && secs < 120.0,
        format!("max rel err {worst:.2e} <= 1e-3, {secs:.1} s < 120 s"),
    ))
}

fn lgq_theta(fx: &Fixtures, gamma: f64) -> Result<f64> {
    let grid = fx.grid()?;
    let e = extract_ergodic(&fx.lgq, gamma, &grid, &Schedule::default())?;
    let m = invariant_measure(&fx.lgq, gamma, &e.w, MeasureMethod::FokkerPlanck)?;
    Ok(chi_prime(&fx.lgq, gamma, &e.w, &m)?.theta)
}

fn c3_chi_prime(fx: &Fixtures) -> Outcome {
    let theta = lgq_theta(fx, -1.0)?;
    let fd = chi_prime_fd_check(&fx.lgq, -1.0, 0.05, &fx.grid()?)?;
    let exact = lgq_exact(-1.0).1;
    let gap = (theta - fd).abs();
    let err = (theta - 0.027740).abs();
    Ok((
        gap <= 1e-3 && err <= 1e-3 && (exact - 0.027740).abs() <= 1e-6,
        format!("theta = {theta:.6}, fd = {fd:.6} (gap {gap:.1e} <= 1e-3), |theta - 0.027740| = {err:.1e} <= 1e-3"),
    ))
}

fn c4_convexity(fx: &Fixtures) -> Outcome {
    let gammas = linspace(-4.0, -0.1, 20);
    let lgq = fx.lgq_curve()?;
    let merton = build_chi_curve(&fx.merton, &gammas, &fx.grid()?, DerivativeRoute::Poisson)?;
    let min = |c: &ChiCurve| second_differences(&c.gammas, &c.chi).into_iter().fold(f64::INFINITY, f64::min);
    let (a, b) = (min(lgq), min(&merton));
    Ok((
        a >= -1e-6 && b >= -1e-6,
        format!("min second difference: lgq {a:.3e}, merton {b:.3e} (>= -1e-6)"),
    ))
}

fn c5_bounds(fx: &Fixtures) -> Outcome {
    let c0 = chi0(&fx.lgq, &fx.grid()?)?.value;
    let curve = fx.lgq_curve()?;
    let lo = curve.chi.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = curve.chi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((
        lo >= -c0 - 1e-3 && hi <= 1e-6,
        format!("chi0 = {c0:.6}; chi in [{lo:.6}, {hi:.6}] within [-chi0 - 1e-3, 1e-6]"),
    ))
}

fn c6_asymptote(fx: &Fixtures) -> Outcome {
    let far = lgq_theta(fx, -50.0)?;
    let near = lgq_theta(fx, -1.0)?;
    Ok((
        far <= 0.05 * near,
        format!("chi'(-50) = {far:.3e} <= 0.05 chi'(-1) = {:.3e}", 0.05 * near),
    ))
}

fn c7_round_trip(fx: &Fixtures) -> Outcome {
    let gammas = linspace(-10.0, -0.02, 2000);
    let curve = ChiCurve::from_fn(gammas.clone(), |g| {
        let one = 1.0 - g;
        Ok((fx.merton_chi_exact(g), fx.merton_theta_sq / (2.0 * one * one)))
    })?;
    let r = legendre(&curve, KAPPA)?;
    let g = r.gamma_star.ok_or_else(|| anyhow!("no interior optimizer at kappa = {KAPPA}"))?;
    let kappas: Vec<f64> = curve.chi_prime[1..curve.chi_prime.len() - 1].to_vec();
    let rates = rate_function_table(&curve, &kappas)?;
    let back = inverse_legendre(&rates, &gammas);
    let sup = back
        .iter()
        .zip(&curve.chi)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let pass = (g + 0.5).abs() <= 1e-4 && (r.j + 0.005).abs() <= 1e-5 && sup <= 1e-4;
    Ok((
        pass,
        format!("gamma(0.02) = {g:.6} (+-1e-4), J(0.02) = {:.7} (+-1e-5), double transform sup err {sup:.1e} <= 1e-4", r.j),
    ))
}

fn c8_slope(fx: &Fixtures) -> Outcome {
    let w = fx.merton_w()?.clone();
    let strategy = Strategy::StationaryFeedback { w, gamma: MERTON_GAMMA };
    let cfg = SimConfig::new(25.0, MC_PATHS, SEED);
    let j = merton_rate(fx.merton_theta_sq, KAPPA).j;
    let (rep, secs) = timed(|| Ok(ld_slope(&fx.merton, &strategy, KAPPA, &[25.0, 50.0, 100.0], &cfg, Some(j))?))?;
    let pass = (-0.0075..=-0.0025).contains(&rep.slope) && secs < 180.0;
    let p: Vec<String> = rep.estimates.iter().map(|e| format!("{:.4}", e.p_hat)).collect();
    Ok((
        pass,
        format!(
            "slope = {:.6} +- {:.6} in [-0.0075, -0.0025]? (J = {j:.6}), p_hat = [{}], {secs:.0} s < 180 s",
            rep.slope,
            rep.stderr,
            p.join(", ")
        ),
    ))
}

fn c9_riccati_bound(fx: &Fixtures) -> Outcome {
    let grid = fx.grid()?;
    let gamma = -1.0;
    let horizon = 5.0;
    let surface = solve_finite_horizon(&fx.lgq, gamma, &grid, horizon, 400)?;
    let report = check_assumptions(&fx.lgq, &SampleBox::cube(1, HALF_WIDTH), 2000, 0)?;
    let pair = downside_core::oracle::riccati_bound(&fx.lgq, gamma, horizon, None, &report, &surface.times)?;
    let h = grid.spacing(0);
    let tol = -5.0 * h * h;
    let mut worst = f64::INFINITY;
    for (k, vals) in surface.values.iter().enumerate() {
        for node in 0..grid.len() {
            if grid.is_boundary(node) {
                continue;
            }
            worst = worst.min(vals[node] - pair.bound(k, &grid.coord(node)));
        }
    }
    Ok((
        worst >= tol,
        format!("min slack {worst:.3e} >= -5 h^2 = {tol:.3e} over {} slices", surface.times.len()),
    ))
}

fn c10_tilt(fx: &Fixtures) -> Outcome {
    let w = fx.merton_w()?.clone();
    let strategy = Strategy::StationaryFeedback {
        w: w.clone(),
        gamma: MERTON_GAMMA,
    };
    let cfg = SimConfig::new(50.0, MC_PATHS, SEED);
    let rep = tilted_vs_plain_check(
        &fx.merton,
        &strategy,
        KAPPA,
        &cfg,
        Measure::Tilted { gamma: MERTON_GAMMA, w },
    )?;
    Ok((
        rep.agree && rep.weight_ok,
        format!(
            "plain {:.5}, tilted {:.5}, |diff| {:.1e} <= {:.1e}; mean weight {:.4} +- {:.4}",
            rep.plain.p_hat, rep.tilted.p_hat, rep.difference, rep.ci_sum, rep.mean_weight, rep.weight_stderr
        ),
    ))
}

fn c11_zero_benchmark(fx: &Fixtures) -> Outcome {
    let mut bad = Vec::new();
    for t in [25.0, 50.0, 100.0] {
        let samples = simulate_paths(&fx.merton, &Strategy::ZeroBenchmark, &SimConfig::new(t, 1000, SEED))?;
        let above = estimate_downside(&samples, 0.01)?.p_hat;
        let below = estimate_downside(&samples, -0.01)?.p_hat;
        if above != 1.0 || below != 0.0 {
            bad.push(format!("T = {t}: p(0.01) = {above}, p(-0.01) = {below}"));
        }
    }
    if bad.is_empty() {
        Ok((true, "p_hat(0.01) = 1 and p_hat(-0.01) = 0 at T = 25, 50, 100".into()))
    } else {
        Ok((false, bad.join("; ")))
    }
}

fn c12_determinism(fx: &Fixtures) -> Outcome {
    let model = fx.dir.join("merton.json");
    let root = std::env::temp_dir().join(format!("downside-determinism-{}", std::process::id()));
    let mut hashes: Vec<(usize, String, String)> = Vec::new();
    for threads in [1usize, 4, 8] {
        let dir = root.join(format!("t{threads}"));
        let argv = [
            "downside".to_string(),
            "--threads".into(),
            threads.to_string(),
            "--out-dir".into(),
            dir.display().to_string(),
            "simulate".into(),
            model.display().to_string(),
            "--strategy".into(),
            "stationary".into(),
            "--gamma".into(),
            MERTON_GAMMA.to_string(),
            "--kappa".into(),
            KAPPA.to_string(),
            "--T".into(),
            "10,20".into(),
            "--paths".into(),
            "2000".into(),
            "--seed".into(),
            SEED.to_string(),
        ];
        let cli = <crate::args::Cli as clap::Parser>::try_parse_from(argv)?;
        let code = crate::execute_with(&cli, true);
        if code != 0 {
            return Ok((false, format!("simulate exited {code} under {threads} threads")));
        }
        let read = |name: &str| -> Result<String> {
            Ok(crate::manifest::sha256_hex(&std::fs::read(dir.join(name))?))
        };
        hashes.push((threads, read("sim.csv")?, read("slope.csv")?));
    }
    let _ = std::fs::remove_dir_all(&root);
    let same = hashes.windows(2).all(|w| w[0].1 == w[1].1 && w[0].2 == w[1].2);
    Ok((
        same,
        format!(
            "sim.csv sha256 {} / slope.csv {} under 1, 4, 8 threads{}",
            &hashes[0].1[..12],
            &hashes[0].2[..12],
            if same { "" } else { ": MISMATCH" }
        ),
    ))
}
