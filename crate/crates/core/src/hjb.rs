//! Finite-difference solvers for the risk-sensitive HJB equations.
//!
//! All solvers work with the nonnegative value `vbar` of the equation
//!
//! ```text
//! eps vbar = 1/2 tr[a D^2 vbar] + beta_gamma . D vbar - 1/2 D vbar^T Q D vbar + U_gamma
//! ```
//!
//! with `a = lambda lambda^T` and `Q = lambda N^{-1} lambda^T`. The quadratic term is
//! handled by policy iteration on the control form: freezing the minimizing
//! control `z = -N^{-1}(lambda^T D vbar - Sigma^T alpha_hat)` yields drift
//! `beta_gamma - Q p` and running cost `p^T Q p / 2 + U_gamma` with `p` the frozen
//! gradient, so each iteration is one linear solve. The ergodic pair `(chi, w)`
//! satisfies `chi = -lim eps vbar_eps(x0)` and `w = -(vbar_eps - vbar_eps(x0))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd::{central_gradient, Assembler};
use crate::grid::{Grid, ScalarField, ValueSurface, VectorField};
use crate::model::{AssumptionReport, ModelSpec};

/// Default discount schedule for the vanishing-discount limit.
pub const DEFAULT_SCHEDULE: [f64; 4] = [0.08, 0.04, 0.02, 0.01];
/// Default nodes per axis.
pub const DEFAULT_NODES: usize = 201;
/// Default number of implicit Euler steps over the horizon.
pub const DEFAULT_STEPS: usize = 400;
/// Largest time step used by the long-horizon route.
pub const LONG_HORIZON_DT: f64 = 0.05;

const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 60;
/// Fraction of the box half-width on which residuals are reported.
const RESIDUAL_FRACTION: f64 = 0.6;

/// Gamma-dependent coefficients sampled at every grid node.
#[derive(Debug, Clone)]
pub struct NodeCoefficients {
    pub gamma: f64,
    pub dim: usize,
    /// `lambda lambda^T`, `dim x dim` per node.
    pub diffusion: Vec<f64>,
    pub beta_gamma: Vec<f64>,
    /// `lambda N^{-1} lambda^T`, `dim x dim` per node.
    pub q: Vec<f64>,
    pub u: Vec<f64>,
    pub g: Vec<f64>,
    pub theta_sq: Vec<f64>,
}

impl NodeCoefficients {
    pub fn new(spec: &ModelSpec, gamma: f64, grid: &Grid) -> Result<Self> {
        if spec.n != grid.dim() {
            return Err(Error::Dimension {
                field: "grid",
                expected: spec.n.to_string(),
                got: grid.dim().to_string(),
            });
        }
        let d = grid.dim();
        let nn = grid.len();
        let mut c = NodeCoefficients {
            gamma,
            dim: d,
            diffusion: Vec::with_capacity(nn * d * d),
            beta_gamma: Vec::with_capacity(nn * d),
            q: Vec::with_capacity(nn * d * d),
            u: Vec::with_capacity(nn),
            g: Vec::with_capacity(nn * d),
            theta_sq: Vec::with_capacity(nn),
        };
        let mut x = vec![0.0; d];
        for node in 0..nn {
            grid.coord_into(node, &mut x);
            let dc = spec.derived_gamma(&x, gamma)?;
            for i in 0..d {
                for j in 0..d {
                    c.diffusion.push(dc.diffusion[(i, j)]);
                    c.q.push(dc.q[(i, j)]);
                }
                c.beta_gamma.push(dc.beta_gamma[i]);
                c.g.push(dc.g[i]);
            }
            c.u.push(dc.u_gamma);
            c.theta_sq.push(dc.theta_sq);
        }
        Ok(c)
    }

    #[inline]
    pub fn q_at(&self, node: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.q[node * dd..(node + 1) * dd]
    }

    #[inline]
    pub fn a_at(&self, node: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.diffusion[node * dd..(node + 1) * dd]
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma < 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("HJB solvers need gamma < 0, got {gamma}")))
    }
}

fn check_dimension(spec: &ModelSpec) -> Result<()> {
    if spec.n > 2 {
        return Err(Error::Config(format!(
            "PDE solvers support at most 2 factors, model has {}",
            spec.n
        )));
    }
    Ok(())
}

/// Result of one nonlinear stationary solve.
struct Stationary {
    v: Vec<f64>,
    iterations: usize,
    residual: f64,
}

/// Policy iteration for `eps v - 1/2 tr[a D^2 v] - beta_gamma . D v + 1/2 p^T Q p = U + extra`.
fn solve_stationary(
    grid: &Grid,
    asm: &Assembler<'_>,
    coef: &NodeCoefficients,
    eps: f64,
    extra: Option<&[f64]>,
    init: Vec<f64>,
) -> Result<Stationary> {
    let d = grid.dim();
    let nn = grid.len();
    let mut v = init;
    let mut drift = vec![0.0; nn * d];
    let mut rhs = vec![0.0; nn];
    let mut p = [0.0; 2];
    let mut last_step = f64::INFINITY;
    let mut worst_node = 0;
    for it in 1..=NEWTON_MAX_ITER {
        for &node in &asm.map().nodes {
            central_gradient(grid, node, &v, &mut p);
            let q = coef.q_at(node);
            let mut quad = 0.0;
            for i in 0..d {
                let qp: f64 = (0..d).map(|j| q[i * d + j] * p[j]).sum();
                drift[node * d + i] = coef.beta_gamma[node * d + i] - qp;
                quad += p[i] * qp;
            }
            rhs[node] = 0.5 * quad + coef.u[node] + extra.map_or(0.0, |e| e[node]);
        }
        let system = asm.build(asm.triplets(&coef.diffusion, &drift, eps, None));
        let next = asm.solve(system, &rhs, Some(&v))?;
        let scale = 1.0 + next.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let prev_step = last_step;
        last_step = 0.0;
        for (i, (a, b)) in next.iter().zip(&v).enumerate() {
            let s = (a - b).abs();
            if s > last_step {
                last_step = s;
                worst_node = i;
            }
        }
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonConvergence {
                what: "policy iteration",
                iterations: it,
                residual: f64::NAN,
                worst: grid.coord(worst_node),
            });
        }
        v = next;
        // the second clause accepts a step that stalled at the round-off floor
        if last_step <= NEWTON_TOL * scale || (last_step <= 1e-7 * scale && last_step >= 0.5 * prev_step) {
            let residual = stationary_residual(grid, asm, coef, eps, extra, &v);
            return Ok(Stationary {
                v,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::NonConvergence {
        what: "policy iteration",
        iterations: NEWTON_MAX_ITER,
        residual: last_step,
        worst: grid.coord(worst_node),
    })
}

/// Max interior residual of the discrete nonlinear equation.
fn stationary_residual(
    grid: &Grid,
    asm: &Assembler<'_>,
    coef: &NodeCoefficients,
    eps: f64,
    extra: Option<&[f64]>,
    v: &[f64],
) -> f64 {
    let d = grid.dim();
    let mut p = [0.0; 2];
    let mut drift = [0.0; 2];
    let mut worst = 0.0_f64;
    for &node in &asm.map().nodes {
        central_gradient(grid, node, v, &mut p);
        let q = coef.q_at(node);
        let mut quad = 0.0;
        for i in 0..d {
            let qp: f64 = (0..d).map(|j| q[i * d + j] * p[j]).sum();
            drift[i] = coef.beta_gamma[node * d + i] - qp;
            quad += p[i] * qp;
        }
        let gen = crate::fd::apply_generator(grid, node, coef.a_at(node), &drift[..d], v);
        let r = eps * v[node] - gen - 0.5 * quad - coef.u[node] - extra.map_or(0.0, |e| e[node]);
        worst = worst.max(r.abs());
    }
    worst
}

/// Discounted solution `vbar_eps` with solver diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscountedSolution {
    pub epsilon: f64,
    pub v: ScalarField,
    pub iterations: usize,
    pub residual: f64,
    pub min_value: f64,
    /// Values below `-1e-8 (1 + max |v|)` signal boundary contamination.
    pub contaminated: bool,
}

pub fn solve_discounted(spec: &ModelSpec, gamma: f64, grid: &Grid, epsilon: f64) -> Result<DiscountedSolution> {
    check_gamma(gamma)?;
    check_dimension(spec)?;
    let coef = NodeCoefficients::new(spec, gamma, grid)?;
    discounted_with(grid, &coef, epsilon, None)
}

fn discounted_with(
    grid: &Grid,
    coef: &NodeCoefficients,
    epsilon: f64,
    init: Option<Vec<f64>>,
) -> Result<DiscountedSolution> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidInput(format!("discount must lie in (0, 1], got {epsilon}")));
    }
    let asm = Assembler::new(grid);
    let init = init.unwrap_or_else(|| coef.u.iter().map(|u| u / epsilon).collect());
    let sol = solve_stationary(grid, &asm, coef, epsilon, None, init)?;
    let min_value = sol.v.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = 1.0 + sol.v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(DiscountedSolution {
        epsilon,
        contaminated: min_value < -1e-8 * scale,
        min_value,
        iterations: sol.iterations,
        residual: sol.residual,
        v: ScalarField::new(grid.clone(), sol.v)?,
    })
}

/// Backward implicit Euler solution of the finite-horizon equation on
/// `t in {0, dt, ..., T}` with `vbar(T, .) = -gamma log v0`.
pub fn solve_finite_horizon(
    spec: &ModelSpec,
    gamma: f64,
    grid: &Grid,
    horizon: f64,
    steps: usize,
) -> Result<ValueSurface> {
    check_gamma(gamma)?;
    check_dimension(spec)?;
    if !(horizon > 0.0) || steps == 0 {
        return Err(Error::InvalidInput("horizon and step count must be positive".into()));
    }
    let coef = NodeCoefficients::new(spec, gamma, grid)?;
    finite_horizon_with(grid, &coef, -gamma * spec.v0.ln(), horizon, steps)
}

fn finite_horizon_with(
    grid: &Grid,
    coef: &NodeCoefficients,
    terminal: f64,
    horizon: f64,
    steps: usize,
) -> Result<ValueSurface> {
    let dt = horizon / steps as f64;
    let asm = Assembler::new(grid);
    let mut values = vec![Vec::new(); steps + 1];
    values[steps] = vec![terminal; grid.len()];
    let mut extra = vec![0.0; grid.len()];
    for k in (0..steps).rev() {
        for (e, v) in extra.iter_mut().zip(&values[k + 1]) {
            *e = v / dt;
        }
        let sol = solve_stationary(grid, &asm, coef, 1.0 / dt, Some(&extra), values[k + 1].clone())?;
        values[k] = sol.v;
    }
    let times = (0..=steps)
        .map(|k| if k == steps { horizon } else { k as f64 * dt })
        .collect();
    Ok(ValueSurface {
        grid: grid.clone(),
        times,
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErgodicMethod {
    VanishingDiscount,
    LongHorizon,
}

/// Limit schedule: decreasing discounts or increasing horizons.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Discounts(Vec<f64>),
    Horizons(Vec<f64>),
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Discounts(DEFAULT_SCHEDULE.to_vec())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErgodicSolution {
    pub gamma: f64,
    pub chi: f64,
    /// Potential with `w(x0) = 0`.
    pub w: ScalarField,
    pub method: ErgodicMethod,
    /// Max residual of the ergodic equation on the inner 60% of the box.
    pub residual: f64,
    /// `(eps or 1/T, -estimate of chi)` pairs fed to the extrapolation.
    pub sequence: Vec<(f64, f64)>,
    /// Gap between the full extrapolation and the one omitting the coarsest entry.
    pub extrapolation_error: f64,
}

/// Lagrange weights that evaluate at 0 the polynomial through `(xs[i], .)`.
fn extrapolation_weights(xs: &[f64]) -> Vec<f64> {
    (0..xs.len())
        .map(|i| {
            xs.iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, xj)| xj / (xj - xs[i]))
                .product()
        })
        .collect()
}

fn extrapolate(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let w = extrapolation_weights(xs);
    let full: f64 = w.iter().zip(ys).map(|(a, b)| a * b).sum();
    if xs.len() < 2 {
        return (full, f64::NAN);
    }
    let w2 = extrapolation_weights(&xs[1..]);
    let part: f64 = w2.iter().zip(&ys[1..]).map(|(a, b)| a * b).sum();
    (full, (full - part).abs())
}

fn check_monotone(seq: &[(f64, f64)]) -> Result<()> {
    let scale = seq.iter().fold(1e-300f64, |m, (_, y)| m.max(y.abs()));
    let tol = 1e-9 * scale;
    let diffs: Vec<f64> = seq.windows(2).map(|w| w[1].1 - w[0].1).collect();
    let up = diffs.iter().all(|d| *d >= -tol);
    let down = diffs.iter().all(|d| *d <= tol);
    if up || down {
        Ok(())
    } else {
        Err(Error::Convergence(format!(
            "limit sequence is not monotone: {:?}",
            seq.iter().map(|s| s.1).collect::<Vec<_>>()
        )))
    }
}

/// Normalization anchor.
pub fn anchor(dim: usize) -> Vec<f64> {
    vec![0.0; dim]
}

pub fn extract_ergodic(spec: &ModelSpec, gamma: f64, grid: &Grid, schedule: &Schedule) -> Result<ErgodicSolution> {
    check_gamma(gamma)?;
    check_dimension(spec)?;
    let coef = NodeCoefficients::new(spec, gamma, grid)?;
    let x0 = anchor(grid.dim());
    let (method, params, fields) = match schedule {
        Schedule::Discounts(eps) => {
            if eps.len() < 2 || eps.windows(2).any(|w| !(w[1] < w[0])) {
                return Err(Error::InvalidInput("discount schedule must be strictly decreasing with >= 2 entries".into()));
            }
            let mut fields = Vec::with_capacity(eps.len());
            let mut prev: Option<(f64, Vec<f64>)> = None;
            for &e in eps {
                let init = prev.as_ref().map(|(pe, pv)| {
                    let shift = {
                        let f = ScalarField {
                            grid: grid.clone(),
                            values: pv.clone(),
                            anchor: None,
                        };
                        pe * f.interpolate(&x0).0 * (1.0 / e - 1.0 / pe)
                    };
                    pv.iter().map(|v| v + shift).collect()
                });
                let sol = discounted_with(grid, &coef, e, init)?;
                prev = Some((e, sol.v.values.clone()));
                fields.push(sol.v);
            }
            (ErgodicMethod::VanishingDiscount, eps.clone(), fields)
        }
        Schedule::Horizons(ts) => {
            if ts.len() < 2 || ts.windows(2).any(|w| !(w[1] > w[0])) || ts[0] <= 0.0 {
                return Err(Error::InvalidInput("horizon schedule must be positive and strictly increasing with >= 2 entries".into()));
            }
            let terminal = -gamma * spec.v0.ln();
            let mut fields = Vec::with_capacity(ts.len());
            for &t in ts {
                let steps = DEFAULT_STEPS.max((t / LONG_HORIZON_DT).ceil() as usize);
                let surf = finite_horizon_with(grid, &coef, terminal, t, steps)?;
                let mut f = surf.slice(0);
                // dividing by T makes (1/T) vbar(0, x0) the discount-like quantity
                for v in &mut f.values {
                    *v /= t;
                }
                fields.push(f);
            }
            (ErgodicMethod::LongHorizon, ts.iter().map(|t| 1.0 / t).collect(), fields)
        }
    };

    let sequence: Vec<(f64, f64)> = params
        .iter()
        .zip(&fields)
        .map(|(p, f)| {
            let scale = if method == ErgodicMethod::VanishingDiscount { *p } else { 1.0 };
            (*p, scale * f.interpolate(&x0).0)
        })
        .collect();
    check_monotone(&sequence)?;
    let ys: Vec<f64> = sequence.iter().map(|s| s.1).collect();
    let (neg_chi, err) = extrapolate(&params, &ys);

    // w = -(vbar - vbar(x0)); extrapolated nodewise for the discount route,
    // taken from the longest horizon otherwise.
    let nn = grid.len();
    let mut w = vec![0.0; nn];
    match method {
        ErgodicMethod::VanishingDiscount => {
            let weights = extrapolation_weights(&params);
            for (f, wt) in fields.iter().zip(&weights) {
                let v0 = f.interpolate(&x0).0;
                for (acc, v) in w.iter_mut().zip(&f.values) {
                    *acc -= wt * (v - v0);
                }
            }
        }
        ErgodicMethod::LongHorizon => {
            let f = fields.last().expect("schedule has entries");
            let t = 1.0 / params.last().expect("schedule has entries");
            let v0 = f.interpolate(&x0).0;
            for (acc, v) in w.iter_mut().zip(&f.values) {
                *acc = -(v - v0) * t;
            }
        }
    }
    let mut w = ScalarField::new(grid.clone(), w)?;
    w.normalize_at(&x0);
    let chi = -neg_chi;
    let residual = ergodic_residual_with(&coef, chi, &w).max;
    Ok(ErgodicSolution {
        gamma,
        chi,
        w,
        method,
        residual,
        sequence,
        extrapolation_error: err,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualReport {
    pub max: f64,
    pub worst: Vec<f64>,
}

/// Residual of `chi = 1/2 tr[a D^2 w] + beta_gamma . Dw + 1/2 Dw^T Q Dw - U` with
/// central differences on the inner 60% of the box.
pub fn ergodic_residual(spec: &ModelSpec, gamma: f64, chi: f64, w: &ScalarField) -> Result<ResidualReport> {
    let coef = NodeCoefficients::new(spec, gamma, &w.grid)?;
    Ok(ergodic_residual_with(&coef, chi, w))
}

fn ergodic_residual_with(coef: &NodeCoefficients, chi: f64, w: &ScalarField) -> ResidualReport {
    let g = &w.grid;
    let d = g.dim();
    let mut worst = (0.0_f64, 0usize);
    let mut p = vec![0.0; d];
    for node in 0..g.len() {
        if g.is_boundary(node) || !g.is_inner(node, RESIDUAL_FRACTION) {
            continue;
        }
        let hess = w.hessian(node).expect("interior node");
        w.gradient_into(node, &mut p);
        let a = coef.a_at(node);
        let q = coef.q_at(node);
        let mut val = -coef.u[node] - chi;
        for i in 0..d {
            val += coef.beta_gamma[node * d + i] * p[i];
            for j in 0..d {
                val += 0.5 * a[i * d + j] * hess[i * d + j] + 0.5 * p[i] * q[i * d + j] * p[j];
            }
        }
        if val.abs() > worst.0 {
            worst = (val.abs(), node);
        }
    }
    ResidualReport {
        max: worst.0,
        worst: g.coord(worst.1),
    }
}

/// Which value function a gradient comes from.
#[derive(Debug, Clone, Copy)]
pub enum FeedbackInput<'a> {
    /// Ergodic potential `w`.
    Potential(&'a ScalarField),
    /// A slice of the finite-horizon value `vbar`; `Dv = -D vbar` is applied.
    ValueBar(&'a ScalarField),
}

#[derive(Debug, Clone)]
pub struct Feedback {
    /// `m`-vector per node.
    pub h: VectorField,
    /// Nodes where the gradient used one-sided differences.
    pub boundary_nodes: usize,
}

/// `h = (1/(1-gamma)) (sigma sigma^T)^{-1} (alpha_hat + sigma lambda^T Dv)` at every node.
pub fn feedback_h(spec: &ModelSpec, gamma: f64, input: FeedbackInput<'_>) -> Result<Feedback> {
    let (field, sign) = match input {
        FeedbackInput::Potential(f) => (f, 1.0),
        FeedbackInput::ValueBar(f) => (f, -1.0),
    };
    let g = &field.grid;
    if g.dim() != spec.n {
        return Err(Error::Dimension {
            field: "feedback grid",
            expected: spec.n.to_string(),
            got: g.dim().to_string(),
        });
    }
    let mut out = VectorField::zeros(g.clone(), spec.m);
    let mut boundary_nodes = 0;
    let mut grad = vec![0.0; g.dim()];
    for node in 0..g.len() {
        if field.gradient_into(node, &mut grad) {
            boundary_nodes += 1;
        }
        let x = g.coord(node);
        let dc = spec.derived_gamma(&x, gamma)?;
        let dv = nalgebra::DVector::from_iterator(grad.len(), grad.iter().map(|v| sign * v));
        let inner = &dc.alpha_hat + &dc.sigma * (dc.lambda.transpose() * dv);
        let h = (&dc.sigma_sigma_inv * inner) / (1.0 - gamma);
        out.at_mut(node).copy_from_slice(h.as_slice());
    }
    Ok(Feedback {
        h: out,
        boundary_nodes,
    })
}

/// Quadratic far-field behaviour of `wbar = -w` on the outer 20% shell.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FarField {
    /// Fitted `c` in `wbar >= c |x|^2 - c'`.
    pub c: f64,
    pub c_prime: f64,
    /// `max |D wbar|^2 / (|x|^2 + 1)` on the shell.
    pub gradient_growth: f64,
}

pub fn far_field(w: &ScalarField) -> FarField {
    let g = &w.grid;
    let mut s = Vec::new();
    let mut y = Vec::new();
    let mut growth = 0.0_f64;
    let mut grad = vec![0.0; g.dim()];
    for node in 0..g.len() {
        if g.is_inner(node, 0.8) {
            continue;
        }
        let x = g.coord(node);
        let sq: f64 = x.iter().map(|v| v * v).sum();
        s.push(sq);
        y.push(-w.values[node]);
        w.gradient_into(node, &mut grad);
        growth = growth.max(grad.iter().map(|v| v * v).sum::<f64>() / (sq + 1.0));
    }
    let k = s.len() as f64;
    let ms = s.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxy: f64 = s.iter().zip(&y).map(|(a, b)| (a - ms) * (b - my)).sum();
    let sxx: f64 = s.iter().map(|a| (a - ms) * (a - ms)).sum();
    let c = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let c_prime = s.iter().zip(&y).map(|(a, b)| c * a - b).fold(0.0, f64::max);
    FarField {
        c,
        c_prime,
        gradient_growth: growth,
    }
}

/// `[-L, L]^n` with `L = 6 max(1, sqrt(c0'/c0))` and 201 nodes per axis.
pub fn default_grid(spec: &ModelSpec, report: &AssumptionReport) -> Result<Grid> {
    check_dimension(spec)?;
    Grid::cube(spec.n, report.default_half_width(), DEFAULT_NODES)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CoefficientField;
    use crate::oracle::lgq_riccati;
    use nalgebra::DMatrix;

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

    fn lgq() -> ModelSpec {
        ModelSpec::new(
            1,
            1,
            CoefficientField::scalar(0.0),
            CoefficientField::affine(DMatrix::from_element(1, 1, 1.0), vec![0.0]).unwrap(),
            CoefficientField::matrix(&[vec![1.0, 0.0]]).unwrap(),
            CoefficientField::affine(DMatrix::from_element(1, 1, -1.0), vec![0.0]).unwrap(),
            CoefficientField::matrix(&[vec![1.0, 0.0]]).unwrap(),
            1.0,
        )
        .unwrap()
    }

    fn grid() -> Grid {
        Grid::cube(1, 6.0, 201).unwrap()
    }

    #[test]
    fn merton_discounted_is_constant() {
        let sol = solve_discounted(&merton(), -0.5, &grid(), 0.01).unwrap();
        for v in &sol.v.values {
            assert!((0.01 * v - 0.015).abs() < 1e-9);
        }
        assert!(!sol.contaminated);
    }

    #[test]
    fn merton_ergodic_and_feedback() {
        let e = extract_ergodic(&merton(), -0.5, &grid(), &Schedule::default()).unwrap();
        assert!((e.chi + 0.015).abs() < 1e-9);
        assert!(e.w.max_abs() < 1e-7);
        let fb = feedback_h(&merton(), -0.5, FeedbackInput::Potential(&e.w)).unwrap();
        for node in 0..fb.h.grid.len() {
            assert!((fb.h.at(node)[0] - 0.2).abs() < 1e-8);
        }
    }

    #[test]
    fn merton_finite_horizon_linear_in_time() {
        let s = solve_finite_horizon(&merton(), -0.5, &grid(), 10.0, 400).unwrap();
        for v in &s.values[0] {
            assert!((v - 0.15).abs() < 1e-10);
        }
        let tiny = solve_finite_horizon(&merton(), -1e-8, &grid(), 1.0, 50).unwrap();
        assert!(tiny.values[0].iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn lgq_ergodic_matches_riccati() {
        let spec = lgq();
        let exact = lgq_riccati(&spec, -1.0).unwrap();
        let e = extract_ergodic(&spec, -1.0, &grid(), &Schedule::default()).unwrap();
        assert!((e.chi - exact.chi).abs() < 1e-6, "{} vs {}", e.chi, exact.chi);
        for node in 0..e.w.grid.len() {
            let x = e.w.grid.coord(node)[0];
            assert!((e.w.values[node] - 0.5 * exact.p * x * x).abs() < 1e-5);
        }
        assert!(e.residual < 1e-6, "{}", e.residual);
        let ff = far_field(&e.w);
        assert!((ff.c + 0.5 * exact.p).abs() < 1e-4);
        let fb = feedback_h(&spec, -1.0, FeedbackInput::Potential(&e.w)).unwrap();
        let node = e.w.grid.nearest_node(&[1.02]);
        let x = e.w.grid.coord(node)[0];
        assert!((fb.h.at(node)[0] - 0.5 * (1.0 + exact.p) * x).abs() < 1e-5);
    }

    #[test]
    fn lgq_discounted_trend_and_positivity() {
        let spec = lgq();
        let seq: Vec<f64> = [0.04, 0.02, 0.01]
            .iter()
            .map(|e| {
                let s = solve_discounted(&spec, -1.0, &grid(), *e).unwrap();
                assert!(s.min_value >= 0.0);
                assert!(s.residual < 1e-8);
                e * s.v.interpolate(&[0.0]).0
            })
            .collect();
        assert!(seq[0] < seq[1] && seq[1] < seq[2] && seq[2] < 0.081139);
        assert!((seq[2] - 0.081139).abs() < 2e-3);
    }

    #[test]
    fn long_horizon_agrees_with_discount_route() {
        let spec = lgq();
        let e = extract_ergodic(&spec, -1.0, &grid(), &Schedule::Horizons(vec![10.0, 20.0, 40.0])).unwrap();
        let exact = lgq_riccati(&spec, -1.0).unwrap();
        assert!((e.chi - exact.chi).abs() < 2e-3 * exact.chi.abs(), "{}", e.chi);
    }

    #[test]
    fn schedule_validation() {
        let s = Schedule::Discounts(vec![0.01, 0.02]);
        assert!(extract_ergodic(&lgq(), -1.0, &grid(), &s).is_err());
        assert!(solve_discounted(&lgq(), 0.5, &grid(), 0.1).is_err());
        assert!(solve_discounted(&lgq(), -0.5, &grid(), 2.0).is_err());
    }
}
