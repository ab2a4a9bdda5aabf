//! Monte Carlo for the factor process and the log wealth ratio
//! `L_T = (1/T) log(V_T / S0_T)` under a chosen strategy.
//!
//! Per step (Euler-Maruyama on `X`, exact in log wealth for frozen coefficients):
//!
//! ```text
//! dW       = sqrt(dt) z + psi dt                     (psi = 0 under P)
//! log V   += (h . alpha_hat - |sigma^T h|^2 / 2) dt + (sigma^T h) . dW
//! X       += beta dt + lambda dW
//! log lr  += -psi . sqrt(dt) z - |psi|^2 dt / 2      (dP/dP~ on the path)
//! ```
//!
//! Path `i` draws from a ChaCha8 stream `i` of the root seed, so results do not
//! depend on the number of worker threads.

use std::io::Write;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{ScalarField, ValueSurface, VectorField};
use crate::hjb::{feedback_h, FeedbackInput};
use crate::model::ModelSpec;

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959963984540054;

#[derive(Debug, Clone)]
pub enum Strategy {
    /// `h = 0`: all wealth in the bank account.
    ZeroBenchmark,
    Constant(Vec<f64>),
    /// Feedback from the finite-horizon value `vbar(t, x; T)`.
    FiniteHorizonFeedback { surface: ValueSurface, gamma: f64 },
    /// Feedback from the ergodic potential `w`.
    StationaryFeedback { w: ScalarField, gamma: f64 },
}

impl Strategy {
    pub fn label(&self) -> &'static str {
        match self {
            Strategy::ZeroBenchmark => "zero_benchmark",
            Strategy::Constant(_) => "constant",
            Strategy::FiniteHorizonFeedback { .. } => "finite_horizon_feedback",
            Strategy::StationaryFeedback { .. } => "stationary_feedback",
        }
    }
}

#[derive(Debug, Clone)]
pub enum Measure {
    Physical,
    /// Drift of every noise component shifted by
    /// `psi = (gamma/(1-gamma)) Sigma^T alpha_hat + N^{-1} lambda^T Dw`.
    Tilted { gamma: f64, w: ScalarField },
}

impl Measure {
    pub fn label(&self) -> &'static str {
        match self {
            Measure::Physical => "physical",
            Measure::Tilted { .. } => "tilted",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub horizon: f64,
    /// `None` selects `min(1e-2, T/1000)`.
    pub dt: Option<f64>,
    pub n_paths: usize,
    pub seed: u64,
    pub measure: Measure,
    pub record_likelihood: bool,
}

impl SimConfig {
    pub fn new(horizon: f64, n_paths: usize, seed: u64) -> Self {
        SimConfig {
            horizon,
            dt: None,
            n_paths,
            seed,
            measure: Measure::Physical,
            record_likelihood: true,
        }
    }

    pub fn with_measure(mut self, measure: Measure) -> Self {
        self.measure = measure;
        self
    }

    pub fn with_horizon(&self, horizon: f64) -> Self {
        SimConfig {
            horizon,
            ..self.clone()
        }
    }

    pub fn step(&self) -> f64 {
        self.dt.unwrap_or_else(|| (1e-2_f64).min(self.horizon / 1000.0))
    }

    /// Number of Euler steps; the last step is shortened to land on `T`.
    fn steps(&self) -> usize {
        let n = self.horizon / self.step();
        let r = n.round();
        if (n - r).abs() < 1e-9 {
            r as usize
        } else {
            n.ceil() as usize
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidInput(format!("horizon must be positive, got {}", self.horizon)));
        }
        let dt = self.step();
        if !(dt > 0.0) || dt > self.horizon / 100.0 * (1.0 + 1e-12) {
            return Err(Error::InvalidInput(format!(
                "dt = {dt} must lie in (0, T/100] for T = {}",
                self.horizon
            )));
        }
        if self.n_paths < 100 {
            return Err(Error::InvalidInput(format!("need at least 100 paths, got {}", self.n_paths)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRecord {
    /// `(1/T) log(V_T / S0_T)`.
    pub l_t: f64,
    pub x_t: Vec<f64>,
    /// `log dP/dP~` along the path; zero under the physical measure.
    pub log_lr: f64,
    /// Steps where a grid lookup left the box and was clamped.
    pub clamped: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct Samples {
    pub horizon: f64,
    pub dt: f64,
    pub measure: &'static str,
    pub strategy: &'static str,
    pub paths: Vec<PathRecord>,
}

impl Samples {
    pub fn clamp_count(&self) -> u64 {
        self.paths.iter().map(|p| p.clamped as u64).sum()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.paths.iter().map(|p| p.log_lr.exp()).collect()
    }

    /// Sample mean and standard deviation of `L_T`.
    pub fn mean_sd(&self) -> (f64, f64) {
        mean_sd(self.paths.iter().map(|p| p.l_t))
    }
}

fn mean_sd(it: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = it.clone().count() as f64;
    let mean = it.clone().sum::<f64>() / n;
    let var = it.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Strategy and tilt reduced to grid tables.
enum Policy {
    Zero,
    Constant(Vec<f64>),
    Slices { fields: Vec<VectorField>, times: Vec<f64> },
    Field(VectorField),
}

impl Policy {
    fn prepare(spec: &ModelSpec, strategy: &Strategy, horizon: f64) -> Result<Self> {
        Ok(match strategy {
            Strategy::ZeroBenchmark => Policy::Zero,
            Strategy::Constant(h) => {
                if h.len() != spec.m {
                    return Err(Error::Dimension {
                        field: "constant strategy",
                        expected: spec.m.to_string(),
                        got: h.len().to_string(),
                    });
                }
                Policy::Constant(h.clone())
            }
            Strategy::StationaryFeedback { w, gamma } => {
                Policy::Field(feedback_h(spec, *gamma, FeedbackInput::Potential(w))?.h)
            }
            Strategy::FiniteHorizonFeedback { surface, gamma } => {
                if (surface.horizon() - horizon).abs() > 1e-9 * horizon.max(1.0) {
                    return Err(Error::Config(format!(
                        "value surface horizon {} does not match simulation horizon {horizon}",
                        surface.horizon()
                    )));
                }
                let fields = (0..surface.times.len())
                    .map(|k| {
                        let slice = surface.slice(k);
                        feedback_h(spec, *gamma, FeedbackInput::ValueBar(&slice)).map(|f| f.h)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Policy::Slices {
                    fields,
                    times: surface.times.clone(),
                }
            }
        })
    }

    /// Writes `h(t, x)`; returns whether a grid lookup was clamped.
    #[inline]
    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> bool {
        match self {
            Policy::Zero => {
                out.fill(0.0);
                false
            }
            Policy::Constant(h) => {
                out.copy_from_slice(h);
                false
            }
            Policy::Field(f) => f.interpolate_into(x, out),
            Policy::Slices { fields, times } => {
                let k = times.partition_point(|s| *s <= t).saturating_sub(1).min(fields.len() - 1);
                fields[k].interpolate_into(x, out)
            }
        }
    }
}

/// `psi` tabulated on the grid of `w`.
fn tilt_table(spec: &ModelSpec, gamma: f64, w: &ScalarField) -> Result<VectorField> {
    if !(gamma < 1.0) {
        return Err(Error::InvalidInput(format!("tilt needs gamma < 1, got {gamma}")));
    }
    let g = &w.grid;
    let k = spec.noise_dim();
    let mut out = VectorField::zeros(g.clone(), k);
    let mut p = vec![0.0; g.dim()];
    let r = gamma / (1.0 - gamma);
    for node in 0..g.len() {
        w.gradient_into(node, &mut p);
        let dc = spec.derived_gamma(&g.coord(node), gamma)?;
        let psi = dc.big_sigma.transpose() * &dc.alpha_hat * r
            + &dc.n_inv * (dc.lambda.transpose() * DVector::from_column_slice(&p));
        out.at_mut(node).copy_from_slice(psi.as_slice());
    }
    Ok(out)
}

/// Simulates `cfg.n_paths` independent paths from `X_0 = 0`.
pub fn simulate_paths(spec: &ModelSpec, strategy: &Strategy, cfg: &SimConfig) -> Result<Samples> {
    cfg.validate()?;
    let origin = vec![0.0; spec.n];
    spec.derived_gamma(&origin, 0.0).map_err(|e| match e {
        Error::Degenerate { detail, .. } => Error::Config(format!("market volatility is degenerate: {detail}")),
        other => other,
    })?;
    let policy = Policy::prepare(spec, strategy, cfg.horizon)?;
    let tilt = match &cfg.measure {
        Measure::Physical => None,
        Measure::Tilted { gamma, w } => {
            if w.grid.dim() != spec.n {
                return Err(Error::Dimension {
                    field: "tilt potential grid",
                    expected: spec.n.to_string(),
                    got: w.grid.dim().to_string(),
                });
            }
            Some(tilt_table(spec, *gamma, w)?)
        }
    };
    let paths = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| simulate_one(spec, &policy, tilt.as_ref(), cfg, i))
        .collect::<Vec<_>>();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        out.push(p?);
    }
    Ok(Samples {
        horizon: cfg.horizon,
        dt: cfg.step(),
        measure: cfg.measure.label(),
        strategy: strategy.label(),
        paths: out,
    })
}

/// Coefficient buffers; constant fields are evaluated once.
struct Coefs {
    r: [f64; 1],
    alpha: Vec<f64>,
    sigma: Vec<f64>,
    beta: Vec<f64>,
    lambda: Vec<f64>,
}

fn simulate_one(
    spec: &ModelSpec,
    policy: &Policy,
    tilt: Option<&VectorField>,
    cfg: &SimConfig,
    index: usize,
) -> Result<PathRecord> {
    let (n, m, k) = (spec.n, spec.m, spec.noise_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let mut x = vec![0.0; n];
    let mut c = Coefs {
        r: [0.0],
        alpha: vec![0.0; m],
        sigma: vec![0.0; m * k],
        beta: vec![0.0; n],
        lambda: vec![0.0; n * k],
    };
    let refresh = |c: &mut Coefs, x: &[f64], first: bool| {
        if first || !spec.r.is_constant() {
            spec.r.eval_into(x, &mut c.r);
        }
        if first || !spec.alpha.is_constant() {
            spec.alpha.eval_into(x, &mut c.alpha);
        }
        if first || !spec.sigma.is_constant() {
            spec.sigma.eval_into(x, &mut c.sigma);
        }
        if first || !spec.beta.is_constant() {
            spec.beta.eval_into(x, &mut c.beta);
        }
        if first || !spec.lambda.is_constant() {
            spec.lambda.eval_into(x, &mut c.lambda);
        }
    };
    let mut h = vec![0.0; m];
    let mut psi = vec![0.0; k];
    let mut dw = vec![0.0; k];
    let mut s = vec![0.0; k];
    let steps = cfg.steps();
    let dt_full = cfg.step();
    let mut log_v = 0.0;
    let mut log_lr = 0.0;
    let mut clamped = 0u32;
    let mut t = 0.0;
    for step in 0..steps {
        let dt = if step + 1 == steps { cfg.horizon - t } else { dt_full };
        let sq = dt.sqrt();
        refresh(&mut c, &x, step == 0);
        let mut out_of_box = policy.eval(t, &x, &mut h);
        if let Some(tab) = tilt {
            out_of_box |= tab.interpolate_into(&x, &mut psi);
        }
        if out_of_box {
            clamped += 1;
        }
        let mut lr_inc = 0.0;
        for j in 0..k {
            let z: f64 = StandardNormal.sample(&mut rng);
            dw[j] = sq * z + psi[j] * dt;
            lr_inc -= psi[j] * sq * z + 0.5 * psi[j] * psi[j] * dt;
        }
        if cfg.record_likelihood {
            log_lr += lr_inc;
        }
        // s = sigma^T h
        let mut drift = 0.0;
        for (i, hi) in h.iter().enumerate() {
            drift += hi * (c.alpha[i] - c.r[0]);
        }
        let mut quad = 0.0;
        let mut noise = 0.0;
        for j in 0..k {
            let mut acc = 0.0;
            for (i, hi) in h.iter().enumerate() {
                acc += hi * c.sigma[i * k + j];
            }
            s[j] = acc;
            quad += acc * acc;
            noise += acc * dw[j];
        }
        log_v += (drift - 0.5 * quad) * dt + noise;
        for (i, xi) in x.iter_mut().enumerate() {
            let mut acc = c.beta[i] * dt;
            for j in 0..k {
                acc += c.lambda[i * k + j] * dw[j];
            }
            *xi += acc;
        }
        t += dt;
        if !log_v.is_finite() || !log_lr.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinitePath { path: index, step });
        }
    }
    Ok(PathRecord {
        l_t: (log_v + spec.v0.ln()) / cfg.horizon,
        x_t: x,
        log_lr,
        clamped,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DownsideEstimate {
    pub kappa: f64,
    pub horizon: f64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_paths: usize,
    pub measure: &'static str,
    pub boundary_clamp_count: u64,
    /// `(sum w)^2 / sum w^2`; equals `n_paths` when unweighted.
    pub effective_sample_size: f64,
}

/// Fraction of paths with `L_T <= kappa`; tilted samples use self-normalized
/// likelihood weights with a delta-method interval.
pub fn estimate_downside(samples: &Samples, kappa: f64) -> Result<DownsideEstimate> {
    let n = samples.paths.len();
    if n == 0 {
        return Err(Error::UndefinedEstimate("no samples".into()));
    }
    let nf = n as f64;
    let hits: Vec<f64> = samples
        .paths
        .iter()
        .map(|p| if p.l_t <= kappa { 1.0 } else { 0.0 })
        .collect();
    let (p_hat, half, ess) = if samples.measure == "physical" {
        let p = hits.iter().sum::<f64>() / nf;
        (p, Z95 * (p * (1.0 - p) / nf).sqrt(), nf)
    } else {
        let w = samples.weights();
        let sw: f64 = w.iter().sum();
        let sw2: f64 = w.iter().map(|v| v * v).sum();
        if !(sw > 0.0) || !sw.is_finite() {
            return Err(Error::UndefinedEstimate(format!("likelihood weights sum to {sw}")));
        }
        let p = w.iter().zip(&hits).map(|(a, b)| a * b).sum::<f64>() / sw;
        let wbar = sw / nf;
        let var = w
            .iter()
            .zip(&hits)
            .map(|(a, b)| (a * (b - p)).powi(2))
            .sum::<f64>()
            / (nf * wbar * wbar);
        (p, Z95 * (var / nf).sqrt(), sw * sw / sw2)
    };
    Ok(DownsideEstimate {
        kappa,
        horizon: samples.horizon,
        p_hat,
        ci_low: (p_hat - half).max(0.0),
        ci_high: (p_hat + half).min(1.0),
        n_paths: n,
        measure: samples.measure,
        boundary_clamp_count: samples.clamp_count(),
        effective_sample_size: ess,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SlopeReport {
    pub kappa: f64,
    pub horizons: Vec<f64>,
    pub log_p: Vec<f64>,
    pub estimates: Vec<DownsideEstimate>,
    pub slope: f64,
    pub stderr: f64,
    pub j_ref: Option<f64>,
    pub rel_gap: Option<f64>,
}

/// Least-squares slope of `log p_hat(T)` against `T` over the ladder.
pub fn ld_slope(
    spec: &ModelSpec,
    strategy: &Strategy,
    kappa: f64,
    ladder: &[f64],
    cfg: &SimConfig,
    j_ref: Option<f64>,
) -> Result<SlopeReport> {
    if ladder.len() < 2 {
        return Err(Error::InvalidInput("slope regression needs at least two horizons".into()));
    }
    let mut estimates = Vec::with_capacity(ladder.len());
    let mut log_p = Vec::with_capacity(ladder.len());
    for &t in ladder {
        let samples = simulate_paths(spec, strategy, &cfg.with_horizon(t))?;
        let est = estimate_downside(&samples, kappa)?;
        if !(est.p_hat > 0.0) {
            return Err(Error::UndefinedEstimate(format!(
                "p_hat = 0 at T = {t}; rerun with the tilted measure"
            )));
        }
        log_p.push(est.p_hat.ln());
        estimates.push(est);
    }
    let (slope, stderr) = ols(ladder, &log_p);
    Ok(SlopeReport {
        kappa,
        horizons: ladder.to_vec(),
        log_p,
        estimates,
        slope,
        stderr,
        j_ref,
        rel_gap: j_ref.map(|j| ((slope - j) / j).abs()),
    })
}

/// Slope and its standard error (zero when the fit is exact or has no dof).
pub fn ols(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    if x.len() < 3 {
        return (slope, 0.0);
    }
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - my - slope * (a - mx)).powi(2))
        .sum();
    (slope, (rss / (n - 2.0) / sxx).sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct TiltReport {
    pub plain: DownsideEstimate,
    pub tilted: DownsideEstimate,
    pub difference: f64,
    /// Sum of the two 95% half-widths.
    pub ci_sum: f64,
    pub agree: bool,
    pub mean_weight: f64,
    pub weight_stderr: f64,
    pub weight_ok: bool,
}

/// Plain and importance-sampled estimates of the same downside probability.
pub fn tilted_vs_plain_check(
    spec: &ModelSpec,
    strategy: &Strategy,
    kappa: f64,
    cfg: &SimConfig,
    tilt: Measure,
) -> Result<TiltReport> {
    let plain_samples = simulate_paths(spec, strategy, &cfg.clone().with_measure(Measure::Physical))?;
    let tilted_samples = simulate_paths(spec, strategy, &cfg.clone().with_measure(tilt))?;
    let plain = estimate_downside(&plain_samples, kappa)?;
    let tilted = estimate_downside(&tilted_samples, kappa)?;
    let half = |e: &DownsideEstimate| 0.5 * (e.ci_high - e.ci_low);
    let difference = (plain.p_hat - tilted.p_hat).abs();
    let ci_sum = half(&plain) + half(&tilted);
    let weights = tilted_samples.weights();
    let (mean_weight, sd) = mean_sd(weights.iter().copied());
    let weight_stderr = sd / (weights.len() as f64).sqrt();
    Ok(TiltReport {
        agree: difference <= ci_sum,
        weight_ok: (mean_weight - 1.0).abs() <= 3.0 * weight_stderr,
        plain,
        tilted,
        difference,
        ci_sum,
        mean_weight,
        weight_stderr,
    })
}

fn num(v: f64) -> String {
    format!("{v:.17e}")
}

/// Columns `T, kappa, p_hat, ci_low, ci_high, n_paths, measure, clamp_count`.
pub fn write_sim_csv<W: Write>(rows: &[DownsideEstimate], out: &mut W) -> Result<()> {
    crate::io::write_version(out, "sim")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["T", "kappa", "p_hat", "ci_low", "ci_high", "n_paths", "measure", "clamp_count"])?;
    for r in rows {
        w.write_record([
            num(r.horizon),
            num(r.kappa),
            num(r.p_hat),
            num(r.ci_low),
            num(r.ci_high),
            r.n_paths.to_string(),
            r.measure.to_string(),
            r.boundary_clamp_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `kappa, slope, stderr, J_ref, rel_gap`.
pub fn write_slope_csv<W: Write>(rows: &[SlopeReport], out: &mut W) -> Result<()> {
    crate::io::write_version(out, "slope")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kappa", "slope", "stderr", "J_ref", "rel_gap"])?;
    for r in rows {
        w.write_record([
            num(r.kappa),
            num(r.slope),
            num(r.stderr),
            r.j_ref.map(num).unwrap_or_default(),
            r.rel_gap.map(num).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::model::CoefficientField;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn merton() -> ModelSpec {
        ModelSpec::new(
            1,
            1,
            CoefficientField::scalar(0.0),
            CoefficientField::vector(vec![0.3]),
            CoefficientField::matrix(&[vec![1.0, 0.0]]).unwrap(),
            CoefficientField::vector(vec![0.0]),
            CoefficientField::matrix(&[vec![0.0, 1.0]]).unwrap(),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn zero_benchmark_is_exact() {
        let cfg = SimConfig::new(5.0, 200, 3);
        let s = simulate_paths(&merton(), &Strategy::ZeroBenchmark, &cfg).unwrap();
        assert!(s.paths.iter().all(|p| p.l_t == 0.0));
        assert_eq!(estimate_downside(&s, 0.01).unwrap().p_hat, 1.0);
        assert_eq!(estimate_downside(&s, -0.01).unwrap().p_hat, 0.0);
    }

    #[test]
    fn constant_strategy_mean_and_tail() {
        let cfg = SimConfig {
            dt: Some(0.5),
            ..SimConfig::new(50.0, 20_000, 11)
        };
        let s = simulate_paths(&merton(), &Strategy::Constant(vec![0.2]), &cfg).unwrap();
        let (mean, sd) = s.mean_sd();
        assert!((mean - 0.04).abs() < 3.0 * sd / (s.paths.len() as f64).sqrt());
        let exact = Normal::new(0.0, 1.0).unwrap().cdf((0.02 - 0.04) * 50f64.sqrt() / 0.2);
        let est = estimate_downside(&s, 0.02).unwrap();
        assert!(est.ci_low - 0.01 <= exact && exact <= est.ci_high + 0.01, "{exact} {est:?}");
    }

    #[test]
    fn seeds_are_thread_independent() {
        let cfg = SimConfig {
            dt: Some(0.1),
            ..SimConfig::new(10.0, 300, 5)
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_paths(&merton(), &Strategy::Constant(vec![0.2]), &cfg).unwrap())
        };
        assert_eq!(run(1).paths, run(3).paths);
    }

    #[test]
    fn zero_tilt_leaves_paths_unchanged() {
        let g = Grid::cube(1, 6.0, 41).unwrap();
        let cfg = SimConfig {
            dt: Some(0.1),
            ..SimConfig::new(10.0, 200, 9)
        };
        // gamma = 0 and w = 0 give psi = 0
        let tilted = cfg.clone().with_measure(Measure::Tilted {
            gamma: 0.0,
            w: ScalarField::zeros(g),
        });
        let a = simulate_paths(&merton(), &Strategy::Constant(vec![0.2]), &cfg).unwrap();
        let b = simulate_paths(&merton(), &Strategy::Constant(vec![0.2]), &tilted).unwrap();
        for (p, q) in a.paths.iter().zip(&b.paths) {
            assert_eq!(p.l_t, q.l_t);
            assert_eq!(q.log_lr, 0.0);
        }
    }

    #[test]
    fn degenerate_volatility_is_rejected() {
        let spec = ModelSpec::new(
            1,
            1,
            CoefficientField::scalar(0.0),
            CoefficientField::vector(vec![0.3]),
            CoefficientField::matrix(&[vec![0.0, 0.0]]).unwrap(),
            CoefficientField::vector(vec![0.0]),
            CoefficientField::matrix(&[vec![0.0, 1.0]]).unwrap(),
            1.0,
        )
        .unwrap();
        let err = simulate_paths(&spec, &Strategy::ZeroBenchmark, &SimConfig::new(1.0, 100, 0)).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err:?}");
    }

    #[test]
    fn config_limits() {
        assert!(SimConfig::new(1.0, 99, 0).validate().is_err());
        let bad = SimConfig {
            dt: Some(0.5),
            ..SimConfig::new(10.0, 100, 0)
        };
        assert!(bad.validate().is_err());
        assert!((SimConfig::new(100.0, 100, 0).step() - 0.01).abs() < 1e-15);
        assert!((SimConfig::new(5.0, 100, 0).step() - 0.005).abs() < 1e-15);
    }

    #[test]
    fn ols_recovers_lines() {
        let (s, e) = ols(&[25.0, 50.0, 100.0], &[-0.1, -0.2, -0.4]);
        assert!((s + 0.004).abs() < 1e-15 && e < 1e-12);
        let err = ld_slope(&merton(), &Strategy::ZeroBenchmark, 0.01, &[10.0], &SimConfig::new(10.0, 100, 0), None);
        assert!(err.is_err());
    }
}
