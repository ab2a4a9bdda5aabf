//! Closed-form and ODE reference solutions.
//!
//! - Constant coefficients: `chi = gamma theta^2 / (2 (1 - gamma))` with `w` constant.
//! - One-factor linear-Gaussian model: quadratic ansatz `w = p x^2 / 2 + q x`.
//! - Quadratic lower bound `vbar >= x^T P x / 2 + q` for the finite-horizon value.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::duality::Branch;
use crate::error::{Error, Result};
use crate::model::{halton_points, AssumptionReport, ModelSpec, SampleBox};

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("gamma must be < 1, got {gamma}")))
    }
}

/// Constant-coefficient model summarized by `theta^2 = alpha_hat^T (sigma sigma^T)^{-1} alpha_hat`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MertonOracle {
    pub theta_sq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MertonRate {
    pub i: f64,
    pub j: f64,
    pub gamma_star: Option<f64>,
    pub branch: Branch,
}

impl MertonOracle {
    pub fn new(theta_sq: f64) -> Result<Self> {
        if !(theta_sq > 0.0) || !theta_sq.is_finite() {
            return Err(Error::InvalidInput(format!("theta^2 must be positive, got {theta_sq}")));
        }
        Ok(MertonOracle { theta_sq })
    }

    /// Reads `theta^2` from a model with constant coefficients.
    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        let constant = [&spec.r, &spec.alpha, &spec.sigma, &spec.beta, &spec.lambda]
            .iter()
            .all(|f| f.is_constant());
        if !constant {
            return Err(Error::Config("closed form requires constant coefficients".into()));
        }
        let d = spec.derived_gamma(&vec![0.0; spec.n], 0.0)?;
        MertonOracle::new(d.theta_sq)
    }

    pub fn chi(&self, gamma: f64) -> Result<(f64, f64)> {
        merton_chi(self.theta_sq, gamma)
    }

    pub fn rate(&self, kappa: f64) -> MertonRate {
        merton_rate(self.theta_sq, kappa)
    }
}

/// `(chi, chi')` for constant coefficients.
pub fn merton_chi(theta_sq: f64, gamma: f64) -> Result<(f64, f64)> {
    check_gamma(gamma)?;
    let one = 1.0 - gamma;
    Ok((gamma * theta_sq / (2.0 * one), theta_sq / (2.0 * one * one)))
}

/// Rate function for constant coefficients.
pub fn merton_rate(theta_sq: f64, kappa: f64) -> MertonRate {
    let theta = theta_sq.sqrt();
    if kappa < 0.0 {
        return MertonRate {
            i: f64::INFINITY,
            j: f64::NEG_INFINITY,
            gamma_star: None,
            branch: Branch::KappaNegative,
        };
    }
    if kappa >= 0.5 * theta_sq {
        return MertonRate {
            i: 0.0,
            j: 0.0,
            gamma_star: None,
            branch: Branch::OutOfRange,
        };
    }
    let i = (kappa.sqrt() - theta / 2f64.sqrt()).powi(2);
    let (gamma_star, branch) = if kappa == 0.0 {
        (None, Branch::KappaZero)
    } else {
        (Some(1.0 - theta / (2.0 * kappa).sqrt()), Branch::Interior)
    };
    MertonRate {
        i,
        j: 0.0 - i, // +0 rather than -0 when i = 0
        gamma_star,
        branch,
    }
}

/// Quadratic-ansatz solution of the ergodic equation for a one-factor,
/// one-asset model with `alpha = A x + a`, `beta = B x + b` and constant
/// `r`, `sigma`, `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LgqSolution {
    pub gamma: f64,
    pub p: f64,
    pub q: f64,
    pub chi: f64,
    /// Derivative of `chi` from the Gaussian invariant law of the optimal diffusion.
    pub chi_prime: f64,
    /// Mean reversion rate `-(B_gamma + Q p)` of the optimal diffusion.
    pub kappa_ou: f64,
    pub invariant_mean: f64,
    pub invariant_var: f64,
}

#[derive(Debug, Clone, Copy)]
struct LgqScalars {
    s: f64,
    rho: f64,
    a2: f64,
    a_lin: f64,
    a_hat: f64,
    b_lin: f64,
    b_off: f64,
}

fn lgq_scalars(spec: &ModelSpec) -> Result<LgqScalars> {
    if spec.n != 1 || spec.m != 1 {
        return Err(Error::Config("closed form requires one factor and one asset".into()));
    }
    let parts = spec
        .linear_gaussian_parts()
        .ok_or_else(|| Error::Config("closed form requires affine drifts and constant volatilities".into()))?;
    let s = (&parts.sigma * parts.sigma.transpose())[(0, 0)];
    let rho = (&parts.lambda * parts.sigma.transpose())[(0, 0)];
    let a2 = (&parts.lambda * parts.lambda.transpose())[(0, 0)];
    if parts.a[(0, 0)] == 0.0 {
        return Err(Error::Config("closed form requires A != 0".into()));
    }
    Ok(LgqScalars {
        s,
        rho,
        a2,
        a_lin: parts.a[(0, 0)],
        a_hat: parts.a_offset[0] - parts.r,
        b_lin: parts.b[(0, 0)],
        b_off: parts.b_offset[0],
    })
}

pub fn lgq_riccati(spec: &ModelSpec, gamma: f64) -> Result<LgqSolution> {
    check_gamma(gamma)?;
    if gamma >= 0.0 {
        return Err(Error::InvalidInput("closed form requires gamma < 0".into()));
    }
    let c = lgq_scalars(spec)?;
    let r = gamma / (1.0 - gamma);
    let qq = c.a2 + r * c.rho * c.rho / c.s;
    let bg = c.b_lin + r * c.rho * c.a_lin / c.s;
    let bg0 = c.b_off + r * c.rho * c.a_hat / c.s;
    let cc = r * c.a_lin * c.a_lin / (2.0 * c.s);
    let disc = bg * bg - 2.0 * qq * cc;
    if !(disc >= 0.0) || qq <= 0.0 {
        return Err(Error::Config(format!(
            "model outside the closed-form class at gamma = {gamma} (discriminant {disc:.3e})"
        )));
    }
    let p = (-bg - disc.sqrt()) / qq;
    if !(p < 0.0) {
        return Err(Error::Config("quadratic has no negative root".into()));
    }
    let mr = bg + qq * p;
    let q = -(bg0 * p + r * c.a_lin * c.a_hat / c.s) / mr;
    let chi = 0.5 * c.a2 * p + bg0 * q + 0.5 * qq * q * q + r * c.a_hat * c.a_hat / (2.0 * c.s);

    let mean = -(bg0 + qq * q) / mr;
    let var = c.a2 / (2.0 * mr.abs());
    let k = c.a_lin + c.rho * p;
    let l = c.a_hat + c.rho * q;
    let second = k * k * (var + mean * mean) + 2.0 * k * l * mean + l * l;
    let chi_prime = second / (2.0 * (1.0 - gamma).powi(2) * c.s);
    Ok(LgqSolution {
        gamma,
        p,
        q,
        chi,
        chi_prime,
        kappa_ou: -mr,
        invariant_mean: mean,
        invariant_var: var,
    })
}

impl LgqSolution {
    /// Largest residual of the ergodic equation, evaluated through the
    /// model's general coefficient formulas at `points` sample abscissae.
    pub fn residual(&self, spec: &ModelSpec, points: usize) -> Result<f64> {
        let xs = halton_points(&SampleBox::cube(1, 5.0), points, 0);
        let mut worst = 0.0_f64;
        for x in xs {
            let d = spec.derived_gamma(&x, self.gamma)?;
            let dw = self.p * x[0] + self.q;
            let lhs = 0.5 * d.diffusion[(0, 0)] * self.p
                + d.beta_gamma[0] * dw
                + 0.5 * d.q[(0, 0)] * dw * dw
                - d.u_gamma;
            let scale = 1.0 + x[0] * x[0];
            worst = worst.max((lhs - self.chi).abs() / scale);
        }
        Ok(worst)
    }
}

/// Quadratic lower bound `R(t, x) = x^T P(t) x / 2 + q(t)` with `P = p I`.
#[derive(Debug, Clone, Serialize)]
pub struct RiccatiPair {
    pub times: Vec<f64>,
    /// `P(t)` per time, `n x n`.
    #[serde(skip)]
    pub p: Vec<DMatrix<f64>>,
    pub p_scalar: Vec<f64>,
    pub q: Vec<f64>,
    pub constants: RiccatiConstants,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RiccatiConstants {
    pub c: f64,
    pub b: f64,
    /// Coefficient `c2 / (1 - gamma) + 1 / c` of the quadratic term.
    pub k: f64,
    pub c1: f64,
    pub c2: f64,
    pub c_beta: f64,
    pub c_gamma: f64,
    pub c_gamma_prime: f64,
    pub q_terminal: f64,
}

impl RiccatiPair {
    pub fn bound(&self, slice: usize, x: &[f64]) -> f64 {
        let sq: f64 = x.iter().map(|v| v * v).sum();
        0.5 * self.p_scalar[slice] * sq + self.q[slice]
    }
}

/// Derives the constants of the lower bound from fitted model constants and
/// integrates the Riccati pair backward from `T` onto `times`.
pub fn riccati_bound(
    spec: &ModelSpec,
    gamma: f64,
    horizon: f64,
    c: Option<f64>,
    report: &AssumptionReport,
    times: &[f64],
) -> Result<RiccatiPair> {
    if !(gamma < 0.0) {
        return Err(Error::InvalidInput("gamma must be negative".into()));
    }
    if !report.coercive.ok {
        return Err(Error::Config("lower bound needs the coercivity constant c0 > 0".into()));
    }
    let points = halton_points(&report.sample_box, report.samples, 0);
    let mut c_beta = 0.0_f64;
    for x in &points {
        let d = spec.derived_gamma(x, gamma)?;
        let sq: f64 = x.iter().map(|v| v * v).sum();
        c_beta = c_beta.max(d.beta_gamma.norm_squared() / (sq + 1.0));
    }
    let one = 1.0 - gamma;
    let c_gamma = -gamma * report.c0 / (2.0 * one);
    let c_gamma_prime = -report.c0_prime * gamma / (2.0 * one);
    let c_max = if c_beta > 0.0 { 2.0 * c_gamma / c_beta } else { f64::INFINITY };
    let c = match c {
        Some(c) => c,
        None if c_max.is_finite() => 0.5 * c_max,
        None => 1.0,
    };
    let b = c_gamma - 0.5 * c * c_beta;
    if !(c > 0.0) || !(b > 0.0) {
        return Err(Error::InvalidInput(format!(
            "constant c = {c} gives b = {b:.3e} <= 0; choose c in (0, {c_max:.6})"
        )));
    }
    let k = report.c2 / one + 1.0 / c;
    let constants = RiccatiConstants {
        c,
        b,
        k,
        c1: report.c1,
        c2: report.c2,
        c_beta,
        c_gamma,
        c_gamma_prime,
        q_terminal: -gamma * spec.v0.ln(),
    };
    integrate_riccati(spec.n, horizon, &constants, times)
}

/// Backward integration of `P' = k P^2 - b`, `q' = -(c1/2) n P + c c_beta / 2 + c_gamma'`
/// with `P(T) = 0`, `q(T) = q_terminal`, by adaptive Dormand-Prince 5(4).
pub fn integrate_riccati(
    n: usize,
    horizon: f64,
    k: &RiccatiConstants,
    times: &[f64],
) -> Result<RiccatiPair> {
    if times.iter().any(|t| *t < 0.0 || *t > horizon + 1e-12) {
        return Err(Error::InvalidInput("output times must lie in [0, T]".into()));
    }
    let nf = n as f64;
    // s = T - t runs forward; dP/ds = b - k P^2, dq/ds = (c1/2) n P - c c_beta/2 - c_gamma'
    let rhs = |y: [f64; 2]| -> [f64; 2] {
        [
            k.b - k.k * y[0] * y[0],
            0.5 * k.c1 * nf * y[0] - 0.5 * k.c * k.c_beta - k.c_gamma_prime,
        ]
    };
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    let mut out_p = vec![0.0; times.len()];
    let mut out_q = vec![0.0; times.len()];
    let mut s = 0.0;
    let mut y = [0.0, k.q_terminal];
    let mut h = 1e-3_f64.min(horizon.max(1e-12));
    for idx in order {
        let target = horizon - times[idx];
        while s < target - 1e-14 {
            let step = h.min(target - s);
            let (y_new, err) = dopri_step(&rhs, y, step);
            let scale = 1e-12 + 1e-12 * y[0].abs().max(y[1].abs());
            let ratio = err / scale;
            if ratio <= 1.0 {
                s += step;
                y = y_new;
            }
            let factor = if ratio == 0.0 { 5.0 } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) };
            h = step * factor;
            if h < 1e-14 {
                return Err(Error::Convergence("Riccati step size underflow".into()));
            }
        }
        out_p[idx] = y[0];
        out_q[idx] = y[1];
    }
    Ok(RiccatiPair {
        times: times.to_vec(),
        p: out_p.iter().map(|v| DMatrix::identity(n, n) * *v).collect(),
        p_scalar: out_p,
        q: out_q,
        constants: *k,
    })
}

fn dopri_step(f: &impl Fn([f64; 2]) -> [f64; 2], y: [f64; 2], h: f64) -> ([f64; 2], f64) {
    const C: [[f64; 6]; 6] = [
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];
    let mut ks = [[0.0; 2]; 7];
    ks[0] = f(y);
    for stage in 0..6 {
        let mut yy = y;
        for (j, kj) in ks.iter().enumerate().take(stage + 1) {
            yy[0] += h * C[stage][j] * kj[0];
            yy[1] += h * C[stage][j] * kj[1];
        }
        ks[stage + 1] = f(yy);
        if stage == 5 {
            let mut err = [0.0; 2];
            for (j, kj) in ks.iter().enumerate() {
                err[0] += h * E[j] * kj[0];
                err[1] += h * E[j] * kj[1];
            }
            return (yy, err[0].abs().max(err[1].abs()));
        }
    }
    unreachable!("six stages always return")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoefficientField, ModelSpec};

    fn lgq(a: f64, b: f64) -> ModelSpec {
        ModelSpec::new(
            1,
            1,
            CoefficientField::scalar(0.0),
            CoefficientField::affine(DMatrix::from_element(1, 1, 1.0), vec![a]).unwrap(),
            CoefficientField::matrix(&[vec![1.0, 0.0]]).unwrap(),
            CoefficientField::affine(DMatrix::from_element(1, 1, -1.0), vec![b]).unwrap(),
            CoefficientField::matrix(&[vec![1.0, 0.0]]).unwrap(),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn merton_values() {
        let (c, cp) = merton_chi(0.09, -0.5).unwrap();
        assert!((c + 0.015).abs() < 1e-15 && (cp - 0.02).abs() < 1e-15);
        let (c, cp) = merton_chi(0.09, -1.0).unwrap();
        assert!((c + 0.0225).abs() < 1e-15 && (cp - 0.01125).abs() < 1e-15);
        assert!(merton_chi(0.09, 1.0).is_err());
        let r = merton_rate(0.09, 0.02);
        assert_eq!(r.branch, Branch::Interior);
        assert!((r.gamma_star.unwrap() + 0.5).abs() < 1e-12);
        assert!((r.i - 0.005).abs() < 1e-12 && (r.j + 0.005).abs() < 1e-12);
        assert_eq!(merton_rate(0.09, 0.045).i, 0.0);
        assert!((merton_rate(0.09, 1e-14).i - 0.045).abs() < 1e-6);
        assert_eq!(merton_rate(0.09, -0.01).branch, Branch::KappaNegative);
    }

    #[test]
    fn merton_chi_convex_on_grid() {
        let gs: Vec<f64> = (0..60).map(|k| -6.0 + 0.1 * k as f64).collect();
        let c: Vec<f64> = gs.iter().map(|g| merton_chi(0.09, *g).unwrap().0).collect();
        for k in 1..c.len() - 1 {
            assert!(c[k + 1] - 2.0 * c[k] + c[k - 1] >= 0.0);
        }
    }

    #[test]
    fn lgq_reference_values() {
        let spec = lgq(0.0, 0.0);
        let s = lgq_riccati(&spec, -1.0).unwrap();
        assert!((s.p - (3.0 - 10f64.sqrt())).abs() < 1e-14);
        assert_eq!(s.q, 0.0);
        assert!((s.chi - s.p / 2.0).abs() < 1e-15);
        assert!((s.chi + 0.081139).abs() < 1e-6);
        assert!((s.chi_prime - 0.027740).abs() < 1e-6);
        assert!((s.invariant_var - 1.0 / 10f64.sqrt()).abs() < 1e-14);
        assert!((s.kappa_ou - 10f64.sqrt() / 2.0).abs() < 1e-14);
        // implicit differentiation of p^2 + 2(2g-1)p + g = 0
        let dp = -(4.0 * s.p + 1.0) / (2.0 * s.p + 2.0 * (2.0 * -1.0 - 1.0));
        assert!((s.chi_prime - dp / 2.0).abs() < 1e-12);
        assert!(s.residual(&spec, 100).unwrap() < 1e-12);
    }

    #[test]
    fn lgq_chi_prime_matches_difference_quotient() {
        for (a, b) in [(0.0, 0.0), (0.2, -0.1), (-0.3, 0.4)] {
            let spec = lgq(a, b);
            for g in [-4.0, -1.0, -0.25] {
                let s = lgq_riccati(&spec, g).unwrap();
                assert!(s.residual(&spec, 100).unwrap() < 1e-12);
                let d = 1e-5;
                let fd = (lgq_riccati(&spec, g + d).unwrap().chi - lgq_riccati(&spec, g - d).unwrap().chi)
                    / (2.0 * d);
                assert!((fd - s.chi_prime).abs() < 1e-8, "a={a} b={b} g={g}: {fd} vs {}", s.chi_prime);
            }
        }
    }

    #[test]
    fn riccati_closed_form() {
        let k = RiccatiConstants {
            c: 1.0,
            b: 0.1,
            k: 1.0,
            c1: 1.0,
            c2: 0.0,
            c_beta: 0.0,
            c_gamma: 0.0,
            c_gamma_prime: 0.0,
            q_terminal: 0.0,
        };
        let times: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        let pair = integrate_riccati(1, 1.0, &k, &times).unwrap();
        for (t, p) in times.iter().zip(&pair.p_scalar) {
            let exact = 0.1f64.sqrt() * (0.1f64.sqrt() * (1.0 - t)).tanh();
            assert!((p - exact).abs() < 1e-10);
        }
        assert!((pair.p_scalar[0] - 0.0967948).abs() < 1e-6);
        assert_eq!(pair.p_scalar[10], 0.0);
        for w in pair.p_scalar.windows(2) {
            assert!(w[0] >= w[1]);
        }
        // q' = -(1/2) P: q(0) = (1/2) int_0^1 P
        let exact_q0 = 0.5 * (0.1f64.sqrt()).cosh().ln();
        assert!((pair.q[0] - exact_q0).abs() < 1e-9, "{} vs {}", pair.q[0], exact_q0);
    }
}
