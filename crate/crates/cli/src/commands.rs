use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::json;

use downside_core::duality::{
    build_chi_curve, legendre, rate_function_table, read_rate_csv, write_rate_csv, Branch, ChiCurve, DerivativeRoute,
    RateResult,
};
use downside_core::grid::Grid;
use downside_core::hjb::{extract_ergodic, solve_finite_horizon, Schedule, LONG_HORIZON_DT};
use downside_core::model::{check_assumptions, AssumptionReport, ModelSpec, SampleBox};
use downside_core::montecarlo::{
    estimate_downside, ols, simulate_paths, write_sim_csv, write_slope_csv, Measure, SimConfig, SlopeReport, Strategy,
};
use downside_core::oracle::{lgq_riccati, MertonOracle};

use crate::args::{ChiArgs, CheckArgs, GridArgs, RateArgs, SimulateArgs, StrategyKind, ValidateArgs};
use crate::manifest::RunContext;
use crate::plots;
use crate::suite::{self, Fixtures};
use crate::UsageError;

/// Half-width of the cube used to fit the growth constants behind the default box.
const FIT_HALF_WIDTH: f64 = 6.0;
const FIT_SAMPLES: usize = 2000;
/// Gamma grid for the inline curve behind `simulate` when no gamma or rate table is given.
const INLINE_CURVE: (f64, f64, usize) = (-10.0, -0.02, 40);
/// Minimum backward steps for the finite-horizon feedback.
const MIN_FINITE_STEPS: usize = 400;

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|k| if k + 1 == n { hi } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 })
        .collect()
}

fn load_model(path: &Path) -> Result<ModelSpec> {
    ModelSpec::from_file(path).with_context(|| format!("reading model {}", path.display()))
}

fn fit_report(spec: &ModelSpec) -> Result<AssumptionReport> {
    Ok(check_assumptions(spec, &SampleBox::cube(spec.n, FIT_HALF_WIDTH), FIT_SAMPLES, 0)?)
}

pub fn build_grid(spec: &ModelSpec, g: &GridArgs) -> Result<Grid> {
    let half = match g.grid_l {
        Some(l) => l,
        None => fit_report(spec)?.default_half_width(),
    };
    Ok(Grid::cube(spec.n, half, g.grid_n)?)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> downside_core::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

pub fn check(a: &CheckArgs, ctx: &mut RunContext) -> Result<i32> {
    ctx.record_inputs(
        Some(&a.model),
        json!({"box": a.half_width, "samples": a.samples, "seed": a.seed}),
        Some(a.seed),
    );
    let spec = load_model(&a.model)?;
    let report = check_assumptions(&spec, &SampleBox::cube(spec.n, a.half_width), a.samples, a.seed)?;
    ctx.write(&a.out, &serde_json::to_vec_pretty(&report)?)?;

    let worst = |w: &Option<Vec<f64>>| w.as_ref().map(|x| format!(" (worst at x = {x:?})")).unwrap_or_default();
    say!(ctx, "model {}: n = {}, m = {}", a.model.display(), spec.n, spec.m);
    say!(ctx,
        "  ellipticity of lambda lambda^T     {:<4} c1 = {:.6}, c2 = {:.6}{}",
        mark(report.elliptic.ok),
        report.c1,
        report.c2,
        worst(&report.elliptic.worst)
    );
    say!(ctx,
        "  mean reversion of the drift G      {:<4} c_G = {:.6}, c_G' = {:.6}{}",
        mark(report.drift.ok),
        report.c_g,
        report.c_g_prime,
        worst(&report.drift.worst)
    );
    say!(ctx,
        "  coercivity of theta^2              {:<4} c0 = {:.6}, c0' = {:.6}{}",
        mark(report.coercive.ok),
        report.c0,
        report.c0_prime,
        worst(&report.coercive.worst)
    );
    if let Some(ex) = &report.example_conditions {
        say!(ctx,
            "  linear-Gaussian structure          A^T A > 0: {}, stable B - A^T A: {}, range condition: {}",
            ex.a_full_rank, ex.stable_drift, ex.range_in_kernel
        );
    }
    say!(ctx, "  default box half-width             {:.4}", report.default_half_width());

    if report.all_required_ok() {
        say!(ctx, "all required conditions hold");
        Ok(0)
    } else {
        let failed: Vec<&str> = [
            (report.elliptic.ok, "ellipticity"),
            (report.drift.ok, "drift mean reversion"),
            (report.coercive.ok, "coercivity of theta^2 (quadratic growth of the market price of risk)"),
        ]
        .iter()
        .filter(|(ok, _)| !ok)
        .map(|(_, name)| *name)
        .collect();
        eprintln!("required condition failed: {}", failed.join(", "));
        Ok(1)
    }
}

pub fn chi(a: &ChiArgs, ctx: &mut RunContext) -> Result<i32> {
    ctx.record_inputs(
        Some(&a.model),
        json!({
            "gamma_min": a.gamma_min, "gamma_max": a.gamma_max, "points": a.points,
            "grid_l": a.grid.grid_l, "grid_n": a.grid.grid_n,
            "force_oracle": a.force_oracle, "fd_derivative": a.fd_derivative,
        }),
        None,
    );
    if a.points < 2 {
        return Err(UsageError(format!("--points must be >= 2, got {}", a.points)).into());
    }
    if !(a.gamma_min < a.gamma_max) || !(a.gamma_max < 0.0) {
        return Err(UsageError(format!(
            "need gamma_min < gamma_max < 0, got [{}, {}]",
            a.gamma_min, a.gamma_max
        ))
        .into());
    }
    let spec = load_model(&a.model)?;
    let gammas = linspace(a.gamma_min, a.gamma_max, a.points);
    let curve = if a.force_oracle {
        match MertonOracle::from_spec(&spec) {
            Ok(o) => ChiCurve::from_fn(gammas, |g| o.chi(g))?,
            Err(_) => ChiCurve::from_fn(gammas, |g| lgq_riccati(&spec, g).map(|s| (s.chi, s.chi_prime)))
                .context("no closed form applies to this model")?,
        }
    } else {
        let grid = build_grid(&spec, &a.grid)?;
        ctx.info(&format!("grid: {} nodes per axis on [-{:.3}, {:.3}]", a.grid.grid_n, grid.axis(0).hi, grid.axis(0).hi));
        let route = if a.fd_derivative {
            DerivativeRoute::FiniteDifference
        } else {
            DerivativeRoute::Poisson
        };
        build_chi_curve(&spec, &gammas, &grid, route)?
    };
    let bytes = csv_bytes(|b| curve.write_csv(b))?;
    let path = ctx.write(&a.out, &bytes)?;
    ctx.write(Path::new("chi.gp"), plots::chi_script(&file_name(&path)).as_bytes())?;

    say!(ctx, "{:>12} {:>16} {:>16}", "gamma", "chi", "chi'");
    for k in 0..curve.gammas.len() {
        say!(ctx, "{:>12.6} {:>16.9} {:>16.9}", curve.gammas[k], curve.chi[k], curve.chi_prime[k]);
    }
    say!(ctx, "source: {}, convexity certified: {}", curve.source.as_str(), curve.convexity_certified);
    if !curve.convexity_certified {
        if let Some(v) = &curve.violation {
            eprintln!(
                "warning: curve is not convex: second difference {:.3e} at gammas {:?}",
                v.second_difference, v.gammas
            );
        }
        for d in &curve.defects {
            eprintln!("warning: {d}");
        }
    }
    Ok(0)
}

pub fn rate(a: &RateArgs, ctx: &mut RunContext) -> Result<i32> {
    let curve = ChiCurve::read_csv_file(&a.chi).with_context(|| format!("reading {}", a.chi.display()))?;
    let kappas = if a.kappa.is_empty() {
        if a.points < 2 {
            return Err(UsageError(format!("--points must be >= 2, got {}", a.points)).into());
        }
        let hi = a.kappa_max.unwrap_or_else(|| curve.chi_prime_limit());
        if !(a.kappa_min < hi) {
            return Err(UsageError(format!("need kappa_min < kappa_max, got [{}, {hi}]", a.kappa_min)).into());
        }
        linspace(a.kappa_min, hi, a.points)
    } else {
        a.kappa.clone()
    };
    ctx.record_inputs(Some(&a.chi), json!({"kappas": kappas}), None);
    let rows = rate_function_table(&curve, &kappas)?;
    let bytes = csv_bytes(|b| write_rate_csv(&rows, b))?;
    let path = ctx.write(&a.out, &bytes)?;
    ctx.write(Path::new("rate.gp"), plots::rate_script(&file_name(&path)).as_bytes())?;

    say!(ctx, "{:>12} {:>14} {:>14} {:>12}  branch", "kappa", "I", "J", "gamma*");
    for r in &rows {
        let g = r.gamma_star.map(|g| format!("{g:.6}")).unwrap_or_else(|| "-".into());
        say!(ctx, "{:>12.6} {:>14.8} {:>14.8} {:>12}  {}", r.kappa, r.i, r.j, g, r.branch.as_str());
    }
    if curve.truncation_gap() > 0.0 {
        ctx.info(&format!("chi' at gamma_min is {:.3e}; smaller kappa are truncated", curve.chi_prime[0]));
    }
    Ok(0)
}

/// `(gamma*, J)` at `kappa` from a rate table: an exact row, else linear
/// interpolation between bracketing interior rows.
fn lookup_rate(rows: &[RateResult], kappa: f64) -> Result<(Option<f64>, f64)> {
    if let Some(r) = rows.iter().find(|r| (r.kappa - kappa).abs() <= 1e-12 * kappa.abs().max(1.0)) {
        return Ok((r.gamma_star, r.j));
    }
    let mut interior: Vec<&RateResult> = rows.iter().filter(|r| r.branch == Branch::Interior).collect();
    interior.sort_by(|a, b| a.kappa.total_cmp(&b.kappa));
    for w in interior.windows(2) {
        if w[0].kappa <= kappa && kappa <= w[1].kappa {
            let t = (kappa - w[0].kappa) / (w[1].kappa - w[0].kappa);
            let lerp = |a: f64, b: f64| a + t * (b - a);
            let g = match (w[0].gamma_star, w[1].gamma_star) {
                (Some(a), Some(b)) => Some(lerp(a, b)),
                _ => None,
            };
            return Ok((g, lerp(w[0].j, w[1].j)));
        }
    }
    Err(UsageError(format!("kappa = {kappa} is not covered by the rate table")).into())
}

struct GammaChoice {
    gamma: Option<f64>,
    j_ref: Option<f64>,
}

fn resolve_gamma(spec: &ModelSpec, a: &SimulateArgs, grid: Option<&Grid>, ctx: &RunContext) -> Result<GammaChoice> {
    let table = match &a.rate {
        Some(p) => {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            Some(lookup_rate(&read_rate_csv(BufReader::new(f))?, a.kappa)?)
        }
        None => None,
    };
    let j_ref = table.map(|t| t.1);
    if let Some(g) = a.gamma {
        return Ok(GammaChoice { gamma: Some(g), j_ref });
    }
    if let Some((g, j)) = table {
        if g.is_some() {
            return Ok(GammaChoice { gamma: g, j_ref: Some(j) });
        }
    }
    let Some(grid) = grid else {
        return Ok(GammaChoice { gamma: None, j_ref });
    };
    let (lo, hi, n) = INLINE_CURVE;
    ctx.info(&format!("computing chi on {n} gammas in [{lo}, {hi}] to resolve gamma(kappa)"));
    let curve = build_chi_curve(spec, &linspace(lo, hi, n), grid, DerivativeRoute::Poisson)?;
    let r = legendre(&curve, a.kappa)?;
    match r.gamma_star {
        Some(g) => Ok(GammaChoice {
            gamma: Some(g),
            j_ref: j_ref.or(Some(r.j)),
        }),
        None => Err(UsageError(format!(
            "kappa = {} has no interior optimizer (branch {}); pass --gamma",
            a.kappa,
            r.branch.as_str()
        ))
        .into()),
    }
}

pub fn simulate(a: &SimulateArgs, ctx: &mut RunContext) -> Result<i32> {
    ctx.record_inputs(
        Some(&a.model),
        json!({
            "strategy": format!("{:?}", a.strategy).to_lowercase(), "h": a.h, "gamma": a.gamma,
            "kappa": a.kappa, "T": a.horizons, "paths": a.paths, "dt": a.dt, "tilted": a.tilted,
            "rate": a.rate.as_ref().map(|p| p.display().to_string()),
            "grid_l": a.grid.grid_l, "grid_n": a.grid.grid_n,
        }),
        Some(a.seed),
    );
    if a.horizons.is_empty() {
        return Err(UsageError("--T needs at least one horizon".into()).into());
    }
    let spec = load_model(&a.model)?;
    let needs_gamma = matches!(a.strategy, StrategyKind::Stationary | StrategyKind::Finite) || a.tilted;
    let grid = if needs_gamma { Some(build_grid(&spec, &a.grid)?) } else { None };
    let choice = resolve_gamma(&spec, a, grid.as_ref(), ctx)?;
    let gamma = match (needs_gamma, choice.gamma) {
        (true, Some(g)) => g,
        (true, None) => return Err(UsageError("feedback strategies and --tilted need a gamma".into()).into()),
        (false, g) => g.unwrap_or(f64::NAN),
    };
    let w = match &grid {
        Some(grid) if a.strategy == StrategyKind::Stationary || a.tilted => {
            let e = extract_ergodic(&spec, gamma, grid, &Schedule::default())?;
            ctx.info(&format!("gamma = {gamma:.6}: chi = {:.8}", e.chi));
            Some(e.w)
        }
        _ => None,
    };
    let measure = match (&w, a.tilted) {
        (Some(w), true) => Measure::Tilted { gamma, w: w.clone() },
        _ => Measure::Physical,
    };
    let strategy_for = |t: f64| -> Result<Strategy> {
        Ok(match a.strategy {
            StrategyKind::Zero => Strategy::ZeroBenchmark,
            StrategyKind::Constant => {
                if a.h.len() != spec.m {
                    return Err(UsageError(format!("--h needs {} weights, got {}", spec.m, a.h.len())).into());
                }
                Strategy::Constant(a.h.clone())
            }
            StrategyKind::Stationary => Strategy::StationaryFeedback {
                w: w.clone().expect("potential solved above"),
                gamma,
            },
            StrategyKind::Finite => {
                let steps = MIN_FINITE_STEPS.max((t / LONG_HORIZON_DT).ceil() as usize);
                let grid = grid.as_ref().expect("grid built above");
                Strategy::FiniteHorizonFeedback {
                    surface: solve_finite_horizon(&spec, gamma, grid, t, steps)?,
                    gamma,
                }
            }
        })
    };

    let mut estimates = Vec::with_capacity(a.horizons.len());
    for &t in &a.horizons {
        let cfg = SimConfig {
            dt: a.dt,
            ..SimConfig::new(t, a.paths, a.seed)
        }
        .with_measure(measure.clone());
        let samples = simulate_paths(&spec, &strategy_for(t)?, &cfg)?;
        let est = estimate_downside(&samples, a.kappa)?;
        ctx.info(&format!("T = {t}: p_hat = {:.6e}", est.p_hat));
        estimates.push(est);
    }
    let sim_path = ctx.write(&a.out, &csv_bytes(|b| write_sim_csv(&estimates, b))?)?;

    say!(ctx, "{:>8} {:>14} {:>14} {:>14}", "T", "p_hat", "ci_low", "ci_high");
    for e in &estimates {
        say!(ctx, "{:>8} {:>14.6e} {:>14.6e} {:>14.6e}", e.horizon, e.p_hat, e.ci_low, e.ci_high);
    }
    if let Some(e) = estimates.iter().find(|e| !(e.p_hat > 0.0)) {
        let hint = if a.tilted {
            "increase --paths"
        } else {
            "rerun with --tilted to sample the event under the tilted measure"
        };
        bail!(downside_core::Error::UndefinedEstimate(format!(
            "p_hat = 0 at T = {} for kappa = {}; {hint}",
            e.horizon, a.kappa
        )));
    }
    if estimates.len() >= 2 {
        let log_p: Vec<f64> = estimates.iter().map(|e| e.p_hat.ln()).collect();
        let (slope, stderr) = ols(&a.horizons, &log_p);
        let report = SlopeReport {
            kappa: a.kappa,
            horizons: a.horizons.clone(),
            log_p: log_p.clone(),
            estimates,
            slope,
            stderr,
            j_ref: choice.j_ref,
            rel_gap: choice.j_ref.map(|j| ((slope - j) / j).abs()),
        };
        ctx.write(&a.slope_out, &csv_bytes(|b| write_slope_csv(std::slice::from_ref(&report), b))?)?;
        let n = a.horizons.len() as f64;
        let intercept = log_p.iter().sum::<f64>() / n - slope * a.horizons.iter().sum::<f64>() / n;
        ctx.write(
            Path::new("slope.gp"),
            plots::slope_script(&file_name(&sim_path), slope, intercept).as_bytes(),
        )?;
        match choice.j_ref {
            Some(j) => say!(ctx, "slope = {slope:.6} +- {stderr:.6} (J = {j:.6})"),
            None => say!(ctx, "slope = {slope:.6} +- {stderr:.6}"),
        }
    }
    Ok(0)
}

pub fn validate(a: &ValidateArgs, ctx: &mut RunContext) -> Result<i32> {
    let dir = suite::locate_fixtures(a.fixtures.as_deref());
    ctx.record_inputs(
        None,
        json!({"suite": format!("{:?}", a.suite).to_lowercase(), "fixtures": dir.display().to_string()}),
        None,
    );
    let fx = Fixtures::load(&dir)?;
    let mut all_ok = true;

    say!(ctx, "oracle self-checks");
    let checks = suite::oracle_self_checks(&fx, a.inject_fault);
    for c in &checks {
        say!(ctx, "  {} {:<28} {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        all_ok &= c.pass;
    }
    if !all_ok {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
        ctx.write(Path::new("validate.json"), &serde_json::to_vec_pretty(&json!({"self_checks": checks, "pass": false}))?)?;
        eprintln!("oracle self-check failed: {}; acceptance suite skipped", failed.join(", "));
        return Ok(1);
    }

    say!(ctx, "acceptance suite ({})", format!("{:?}", a.suite).to_lowercase());
    let ids = suite::suite_ids(a.suite);
    let results: Vec<_> = ids.iter().map(|&id| suite::run_criterion(id, &fx)).collect();
    for r in &results {
        say!(ctx, "  {}", r.line());
        all_ok &= r.pass;
    }
    let summary = json!({
        "self_checks": checks,
        "criteria": results,
        "pass": all_ok,
    });
    ctx.write(Path::new("validate.json"), &serde_json::to_vec_pretty(&summary)?)?;
    if all_ok {
        say!(ctx, "all checks passed");
        Ok(0)
    } else {
        let failed: Vec<String> = checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name.to_string())
            .chain(results.iter().filter(|r| !r.pass).map(|r| format!("criterion {} ({})", r.id, r.name)))
            .collect();
        eprintln!("failed: {}", failed.join(", "));
        Ok(1)
    }
}
