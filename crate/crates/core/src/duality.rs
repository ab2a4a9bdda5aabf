//! The `chi(gamma)` curve on a truncated grid of negative `gamma` and its
//! Legendre dual
//!
//! `I(kappa) = sup_{gamma < 0} { gamma kappa - chi(gamma) }`, `J = -I`.
//!
//! Between samples `chi'` is interpolated by a monotone piecewise cubic
//! (Fritsch-Carlson), and `chi` is its exact integral from the left knot, so
//! the interpolated curve stays convex whenever the samples are.

use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ergodic::{chi_prime, invariant_measure, v1_field, MeasureMethod};
use crate::grid::Grid;
use crate::hjb::{extract_ergodic, Schedule};
use crate::model::ModelSpec;

/// Slack on second divided differences of `chi` and on increments of `chi'`.
pub const CONVEXITY_TOL: f64 = 1e-6;
/// Largest admissible `chi` value.
pub const CHI_SIGN_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Interior,
    KappaNegative,
    /// `kappa = 0`: the interior formula in the limit, flagged.
    KappaZero,
    /// `kappa >= chi'(gamma_max)`.
    OutOfRange,
    /// `0 < kappa < chi'(gamma_min)`: the optimizer lies below the grid.
    Truncated,
}

impl Branch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Branch::Interior => "interior",
            Branch::KappaNegative => "kappa_negative",
            Branch::KappaZero => "kappa_zero",
            Branch::OutOfRange => "kappa_at_or_above_chi_prime_limit",
            Branch::Truncated => "truncated",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [
            Branch::Interior,
            Branch::KappaNegative,
            Branch::KappaZero,
            Branch::OutOfRange,
            Branch::Truncated,
        ]
        .into_iter()
        .find(|b| b.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurveSource {
    #[serde(rename = "pde")]
    Pde,
    #[serde(rename = "oracle")]
    Oracle,
    #[serde(rename = "external-csv")]
    ExternalCsv,
}

impl CurveSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            CurveSource::Pde => "pde",
            CurveSource::Oracle => "oracle",
            CurveSource::ExternalCsv => "external-csv",
        }
    }
}

/// First sample triple that breaks convexity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvexityViolation {
    pub gammas: [f64; 3],
    pub second_difference: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChiCurve {
    pub gammas: Vec<f64>,
    pub chi: Vec<f64>,
    pub chi_prime: Vec<f64>,
    pub source: CurveSource,
    pub convexity_certified: bool,
    pub violation: Option<ConvexityViolation>,
    /// Failed shape checks other than convexity.
    pub defects: Vec<String>,
    #[serde(skip)]
    slopes: Vec<f64>,
}

impl ChiCurve {
    pub fn new(gammas: Vec<f64>, chi: Vec<f64>, chi_prime: Vec<f64>, source: CurveSource) -> Result<Self> {
        if gammas.len() < 2 || chi.len() != gammas.len() || chi_prime.len() != gammas.len() {
            return Err(Error::InvalidInput(format!(
                "curve needs >= 2 samples of equal length (gamma {}, chi {}, chi' {})",
                gammas.len(),
                chi.len(),
                chi_prime.len()
            )));
        }
        if gammas.windows(2).any(|w| !(w[0] < w[1])) || !(gammas[gammas.len() - 1] < 0.0) {
            return Err(Error::InvalidInput("gammas must be strictly increasing and negative".into()));
        }
        if chi.iter().chain(&chi_prime).chain(&gammas).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("curve contains non-finite values".into()));
        }
        let mut c = ChiCurve {
            gammas,
            chi,
            chi_prime,
            source,
            convexity_certified: false,
            violation: None,
            defects: Vec::new(),
            slopes: Vec::new(),
        };
        c.certify();
        c.slopes = pchip_slopes(&c.gammas, &c.chi_prime);
        Ok(c)
    }

    /// Samples a closed form `gamma -> (chi, chi')`.
    pub fn from_fn(gammas: Vec<f64>, f: impl Fn(f64) -> Result<(f64, f64)>) -> Result<Self> {
        let mut chi = Vec::with_capacity(gammas.len());
        let mut cp = Vec::with_capacity(gammas.len());
        for &g in &gammas {
            let (c, d) = f(g)?;
            chi.push(c);
            cp.push(d);
        }
        ChiCurve::new(gammas, chi, cp, CurveSource::Oracle)
    }

    fn certify(&mut self) {
        self.violation = None;
        self.defects.clear();
        for (k, s) in second_differences(&self.gammas, &self.chi).into_iter().enumerate() {
            if s < -CONVEXITY_TOL {
                self.violation = Some(ConvexityViolation {
                    gammas: [self.gammas[k], self.gammas[k + 1], self.gammas[k + 2]],
                    second_difference: s,
                });
                break;
            }
        }
        if let Some((g, c)) = self.gammas.iter().zip(&self.chi).find(|(_, c)| **c > CHI_SIGN_TOL) {
            self.defects.push(format!("chi({g}) = {c:.3e} > 0"));
        }
        if let Some((g, d)) = self.gammas.iter().zip(&self.chi_prime).find(|(_, d)| **d < 0.0) {
            self.defects.push(format!("chi'({g}) = {d:.3e} < 0"));
        }
        if let Some(w) = self
            .gammas
            .windows(2)
            .zip(self.chi_prime.windows(2))
            .find(|(_, d)| d[1] < d[0] - CONVEXITY_TOL)
        {
            self.defects.push(format!("chi' decreases between gamma = {} and {}", w.0[0], w.0[1]));
        }
        self.convexity_certified = self.violation.is_none() && self.defects.is_empty();
    }

    pub fn gamma_min(&self) -> f64 {
        self.gammas[0]
    }

    pub fn gamma_max(&self) -> f64 {
        self.gammas[self.gammas.len() - 1]
    }

    /// `chi'(gamma_max)`, the stand-in for the limit of `chi'` at `0-`.
    pub fn chi_prime_limit(&self) -> f64 {
        self.chi_prime[self.chi_prime.len() - 1]
    }

    /// Distance from `gamma_max` to `0`.
    pub fn truncation_gap(&self) -> f64 {
        -self.gamma_max()
    }

    fn interval(&self, gamma: f64) -> usize {
        let k = self.gammas.partition_point(|g| *g <= gamma);
        k.clamp(1, self.gammas.len() - 1) - 1
    }

    /// Interpolated `chi'` on `[gamma_min, gamma_max]`.
    pub fn chi_prime_at(&self, gamma: f64) -> f64 {
        let k = self.interval(gamma);
        let h = self.gammas[k + 1] - self.gammas[k];
        let t = (gamma - self.gammas[k]) / h;
        let (h00, h10, h01, h11) = hermite(t);
        h00 * self.chi_prime[k] + h10 * h * self.slopes[k] + h01 * self.chi_prime[k + 1] + h11 * h * self.slopes[k + 1]
    }

    /// `chi` from the left knot plus the exact integral of the `chi'` interpolant.
    pub fn chi_at(&self, gamma: f64) -> f64 {
        if gamma == self.gamma_max() {
            return self.chi[self.chi.len() - 1];
        }
        let k = self.interval(gamma);
        let h = self.gammas[k + 1] - self.gammas[k];
        let t = (gamma - self.gammas[k]) / h;
        let (t2, t3, t4) = (t * t, t * t * t, t * t * t * t);
        self.chi[k]
            + h * (self.chi_prime[k] * (t - t3 + 0.5 * t4)
                + self.chi_prime[k + 1] * (t3 - 0.5 * t4)
                + h * self.slopes[k] * (0.5 * t2 - 2.0 * t3 / 3.0 + 0.25 * t4)
                + h * self.slopes[k + 1] * (0.25 * t4 - t3 / 3.0))
    }

    /// Columns `gamma, chi, chi_prime, source` after a version comment.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        crate::io::write_version(out, "chi-curve")?;
        writeln!(out, "# convexity_certified={}", self.convexity_certified)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["gamma", "chi", "chi_prime", "source"])?;
        for k in 0..self.gammas.len() {
            w.write_record([
                format!("{:.17e}", self.gammas[k]),
                format!("{:.17e}", self.chi[k]),
                format!("{:.17e}", self.chi_prime[k]),
                self.source.as_str().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a curve written by [`ChiCurve::write_csv`] or by hand.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(input);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::InvalidInput(format!("chi curve CSV lacks column '{name}'")))
        };
        let (ig, ic, id) = (col("gamma")?, col("chi")?, col("chi_prime")?);
        let (mut g, mut c, mut d) = (Vec::new(), Vec::new(), Vec::new());
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| Error::InvalidInput(format!("bad number in chi curve row {}", line + 1)))
            };
            g.push(parse(ig)?);
            c.push(parse(ic)?);
            d.push(parse(id)?);
        }
        ChiCurve::new(g, c, d, CurveSource::ExternalCsv)
    }

    pub fn read_csv_file(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        ChiCurve::read_csv(std::io::BufReader::new(f))
    }
}

/// `2 [ (c2 - c1)/(g2 - g1) - (c1 - c0)/(g1 - g0) ] / (g2 - g0)` per interior sample.
pub fn second_differences(gammas: &[f64], chi: &[f64]) -> Vec<f64> {
    (0..gammas.len().saturating_sub(2))
        .map(|k| {
            let s1 = (chi[k + 1] - chi[k]) / (gammas[k + 1] - gammas[k]);
            let s2 = (chi[k + 2] - chi[k + 1]) / (gammas[k + 2] - gammas[k + 1]);
            2.0 * (s2 - s1) / (gammas[k + 2] - gammas[k])
        })
        .collect()
}

fn hermite(t: f64) -> (f64, f64, f64, f64) {
    let t2 = t * t;
    let t3 = t2 * t;
    (2.0 * t3 - 3.0 * t2 + 1.0, t3 - 2.0 * t2 + t, -2.0 * t3 + 3.0 * t2, t3 - t2)
}

/// Fritsch-Carlson derivative estimates; monotone data give a monotone interpolant.
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let del: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    let mut d = vec![0.0; n];
    if n == 2 {
        d[0] = del[0];
        d[1] = del[0];
        return d;
    }
    for k in 1..n - 1 {
        if del[k - 1] * del[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / del[k - 1] + w2 / del[k]);
        }
    }
    let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
        let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if s * d0 <= 0.0 {
            0.0
        } else if d0 * d1 <= 0.0 && s.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            s
        }
    };
    d[0] = end(h[0], h[1], del[0], del[1]);
    d[n - 1] = end(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
    d
}

/// Per-gamma derivative route used by [`build_chi_curve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeRoute {
    /// Average of `V1` against the invariant measure.
    Poisson,
    /// Three-point differences of the computed `chi` samples.
    FiniteDifference,
}

/// `chi` by vanishing discount at every `gamma`, in parallel, in input order.
pub fn build_chi_curve(spec: &ModelSpec, gammas: &[f64], grid: &Grid, route: DerivativeRoute) -> Result<ChiCurve> {
    if let Some(g) = gammas.iter().find(|g| !(**g < 0.0)) {
        return Err(Error::InvalidInput(format!("curve gammas must be negative, got {g}")));
    }
    let schedule = Schedule::default();
    let per_gamma: Vec<Result<(f64, f64)>> = gammas
        .par_iter()
        .map(|&gamma| {
            let wrap = |e: Error| Error::AtGamma {
                gamma,
                source: Box::new(e),
            };
            let e = extract_ergodic(spec, gamma, grid, &schedule).map_err(wrap)?;
            let theta = match route {
                DerivativeRoute::FiniteDifference => f64::NAN,
                DerivativeRoute::Poisson => poisson_theta(spec, gamma, &e.w).map_err(wrap)?,
            };
            Ok((e.chi, theta))
        })
        .collect();
    let mut chi = Vec::with_capacity(gammas.len());
    let mut cp = Vec::with_capacity(gammas.len());
    for r in per_gamma {
        let (c, t) = r?;
        chi.push(c);
        cp.push(t);
    }
    if route == DerivativeRoute::FiniteDifference {
        cp = three_point_derivative(gammas, &chi)?;
    }
    ChiCurve::new(gammas.to_vec(), chi, cp, CurveSource::Pde)
}

/// `theta` via the invariant measure. A constant `V1` determines `theta`
/// against any probability measure, which covers drifts that do not confine.
fn poisson_theta(spec: &ModelSpec, gamma: f64, w: &crate::grid::ScalarField) -> Result<f64> {
    let v1 = v1_field(spec, gamma, w)?;
    let (lo, hi) = v1
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if hi - lo <= 1e-12 * hi.abs().max(1e-300) {
        return Ok(0.5 * (lo + hi));
    }
    let m = invariant_measure(spec, gamma, w, MeasureMethod::FokkerPlanck)?;
    Ok(chi_prime(spec, gamma, w, &m)?.theta)
}

fn three_point_derivative(x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidInput("finite-difference derivatives need >= 3 gammas".into()));
    }
    let quad = |i: usize, at: f64| {
        let (x0, x1, x2) = (x[i], x[i + 1], x[i + 2]);
        y[i] * (2.0 * at - x1 - x2) / ((x0 - x1) * (x0 - x2))
            + y[i + 1] * (2.0 * at - x0 - x2) / ((x1 - x0) * (x1 - x2))
            + y[i + 2] * (2.0 * at - x0 - x1) / ((x2 - x0) * (x2 - x1))
    };
    Ok((0..n).map(|k| quad(k.clamp(1, n - 2) - 1, x[k])).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateResult {
    pub kappa: f64,
    /// `sup_{gamma < 0} { gamma kappa - chi(gamma) }`; `+inf` for `kappa < 0`.
    pub i: f64,
    /// `-I`; `-inf` for `kappa < 0`.
    pub j: f64,
    pub gamma_star: Option<f64>,
    pub branch: Branch,
}

/// Legendre transform of a certified curve at one `kappa`.
pub fn legendre(curve: &ChiCurve, kappa: f64) -> Result<RateResult> {
    if !curve.convexity_certified {
        let why = match (&curve.violation, curve.defects.first()) {
            (Some(v), _) => format!(
                "second difference {:.3e} at gammas {:?}",
                v.second_difference, v.gammas
            ),
            (None, Some(d)) => d.clone(),
            (None, None) => "unknown".into(),
        };
        return Err(Error::NotCertified(why));
    }
    if !kappa.is_finite() {
        return Err(Error::InvalidInput(format!("kappa must be finite, got {kappa}")));
    }
    let out = |i: f64, gamma_star: Option<f64>, branch: Branch| RateResult {
        kappa,
        i,
        j: 0.0 - i, // +0 rather than -0 when i = 0
        gamma_star,
        branch,
    };
    if kappa < 0.0 {
        return Ok(RateResult {
            kappa,
            i: f64::INFINITY,
            j: f64::NEG_INFINITY,
            gamma_star: None,
            branch: Branch::KappaNegative,
        });
    }
    if kappa >= curve.chi_prime_limit() {
        return Ok(out(0.0, None, Branch::OutOfRange));
    }
    let lo = curve.chi_prime[0];
    if kappa == 0.0 {
        return Ok(out(-curve.chi[0], None, Branch::KappaZero));
    }
    if kappa <= lo {
        // gamma kappa - chi(gamma) decreases on the grid; the sup sits at gamma_min
        let g = curve.gamma_min();
        return Ok(out(g * kappa - curve.chi[0], None, Branch::Truncated));
    }
    let g = solve_chi_prime(curve, kappa);
    let i = g * kappa - curve.chi_at(g);
    Ok(out(i.max(0.0), Some(g), Branch::Interior))
}

/// Root of `chi'(gamma) = kappa` for `chi'(gamma_min) < kappa < chi'(gamma_max)`.
fn solve_chi_prime(curve: &ChiCurve, kappa: f64) -> f64 {
    let k = curve.chi_prime.partition_point(|d| *d < kappa).clamp(1, curve.gammas.len() - 1);
    let (mut a, mut b) = (curve.gammas[k - 1], curve.gammas[k]);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if curve.chi_prime_at(mid) < kappa {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

pub fn rate_function_table(curve: &ChiCurve, kappas: &[f64]) -> Result<Vec<RateResult>> {
    kappas.iter().map(|&k| legendre(curve, k)).collect()
}

/// `chi(gamma) = sup_kappa { gamma kappa - I(kappa) }` over the interior rows.
pub fn inverse_legendre(rates: &[RateResult], gammas: &[f64]) -> Vec<f64> {
    let interior: Vec<&RateResult> = rates.iter().filter(|r| r.branch == Branch::Interior).collect();
    gammas
        .iter()
        .map(|&g| {
            interior
                .iter()
                .map(|r| g * r.kappa - r.i)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

fn fmt_signed(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:.17e}")
    }
}

/// Columns `kappa, I, J, gamma_star, branch`; infinities as `inf` / `-inf`.
pub fn write_rate_csv<W: Write>(rows: &[RateResult], out: &mut W) -> Result<()> {
    crate::io::write_version(out, "rate")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kappa", "I", "J", "gamma_star", "branch"])?;
    for r in rows {
        w.write_record([
            format!("{:.17e}", r.kappa),
            fmt_signed(r.i),
            fmt_signed(r.j),
            r.gamma_star.map(|g| format!("{g:.17e}")).unwrap_or_default(),
            r.branch.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rate_csv<R: BufRead>(input: R) -> Result<Vec<RateResult>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            match rec.get(i).unwrap_or("") {
                "-inf" => Ok(f64::NEG_INFINITY),
                "inf" => Ok(f64::INFINITY),
                s => s
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("bad number '{s}' in rate CSV"))),
            }
        };
        let gamma_star = match rec.get(3).unwrap_or("") {
            "" => None,
            _ => Some(num(3)?),
        };
        let branch = Branch::parse(rec.get(4).unwrap_or(""))
            .ok_or_else(|| Error::InvalidInput("unknown branch in rate CSV".into()))?;
        out.push(RateResult {
            kappa: num(0)?,
            i: num(1)?,
            j: num(2)?,
            gamma_star,
            branch,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::merton_chi;

    fn merton_curve(n: usize) -> ChiCurve {
        let gammas: Vec<f64> = (0..n).map(|k| -10.0 + (10.0 - 0.02) * k as f64 / (n - 1) as f64).collect();
        ChiCurve::from_fn(gammas, |g| merton_chi(0.09, g)).unwrap()
    }

    #[test]
    fn merton_rate_values() {
        let c = merton_curve(2000);
        assert!(c.convexity_certified);
        let r = legendre(&c, 0.02).unwrap();
        assert_eq!(r.branch, Branch::Interior);
        assert!((r.gamma_star.unwrap() + 0.5).abs() < 1e-6);
        assert!((r.j + 0.005).abs() < 1e-8, "{}", r.j);
        let neg = legendre(&c, -0.01).unwrap();
        assert_eq!(neg.j, f64::NEG_INFINITY);
        assert_eq!(legendre(&c, 0.045).unwrap().branch, Branch::OutOfRange);
        let t = rate_function_table(&c, &[0.005, 0.02, 0.04]).unwrap();
        let exact = |k: f64| (k.sqrt() - 0.3 / 2f64.sqrt()).powi(2);
        for r in &t {
            assert!((r.i - exact(r.kappa)).abs() < 1e-8, "{} {}", r.kappa, r.i);
        }
        assert!(rate_function_table(&c, &[]).unwrap().is_empty());
    }

    #[test]
    fn interpolant_reproduces_knots_and_is_convex() {
        let c = merton_curve(40);
        for k in 0..c.gammas.len() {
            assert!((c.chi_prime_at(c.gammas[k]) - c.chi_prime[k]).abs() < 1e-15);
            assert!((c.chi_at(c.gammas[k]) - c.chi[k]).abs() < 1e-15);
        }
        let fine: Vec<f64> = (0..2000).map(|k| -9.9 + 9.8 * k as f64 / 1999.0).collect();
        let d: Vec<f64> = fine.iter().map(|g| c.chi_prime_at(*g)).collect();
        assert!(d.windows(2).all(|w| w[1] >= w[0]));
        for g in fine {
            let (exact, _) = merton_chi(0.09, g).unwrap();
            assert!((c.chi_at(g) - exact).abs() < 5e-5, "{g}: {}", c.chi_at(g) - exact);
        }
    }

    #[test]
    fn uncertified_curve_is_refused() {
        let c = ChiCurve::new(vec![-3.0, -2.0, -1.0], vec![-0.1, -0.02, -0.05], vec![0.01, 0.02, 0.03], CurveSource::Oracle)
            .unwrap();
        assert!(!c.convexity_certified);
        assert_eq!(c.violation.unwrap().gammas, [-3.0, -2.0, -1.0]);
        assert!(matches!(legendre(&c, 0.02), Err(Error::NotCertified(_))));
    }

    #[test]
    fn truncated_and_zero_branches() {
        let c = merton_curve(200);
        let r = legendre(&c, 1e-4).unwrap();
        assert_eq!(r.branch, Branch::Truncated);
        let z = legendre(&c, 0.0).unwrap();
        assert_eq!(z.branch, Branch::KappaZero);
        assert!((z.i + c.chi[0]).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trips() {
        let c = merton_curve(10);
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("# "));
        let back = ChiCurve::read_csv(&buf[..]).unwrap();
        assert_eq!(back.chi, c.chi);
        assert_eq!(back.source, CurveSource::ExternalCsv);
        let rows = rate_function_table(&c, &[-0.01, 0.02, 0.05]).unwrap();
        let mut buf = Vec::new();
        write_rate_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains(",-inf,"));
        assert!(!text.contains("NaN"));
        let parsed = read_rate_csv(&buf[..]).unwrap();
        assert_eq!(parsed, rows);
    }

    #[test]
    fn pchip_is_monotone_on_steps() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        let y = [0.0, 0.0, 1.0, 1.0, 1.0];
        let c = ChiCurve {
            gammas: x.iter().map(|v| v - 5.0).collect(),
            chi: vec![0.0; 5],
            chi_prime: y.to_vec(),
            source: CurveSource::Oracle,
            convexity_certified: true,
            violation: None,
            defects: vec![],
            slopes: pchip_slopes(&x, &y),
        };
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=400 {
            let v = c.chi_prime_at(-5.0 + 4.0 * k as f64 / 400.0);
            assert!(v >= prev - 1e-15 && (-1e-15..=1.0 + 1e-15).contains(&v));
            prev = v;
        }
    }
}
