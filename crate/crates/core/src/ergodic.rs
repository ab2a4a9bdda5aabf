//! Objects attached to the optimal ergodic diffusion
//! `L psi = 1/2 tr[a D^2 psi] + (beta_gamma + Q Dw) . D psi`:
//! its invariant density, the derivative `chi'(gamma)` as the average of
//! `V1` against that density, and the corrector `u` of the Poisson equation
//! `L u = theta - V1`.

use std::io::Write;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fd::{apply_generator, Assembler};
use crate::grid::{Grid, ScalarField, VectorField};
use crate::hjb::{anchor, extract_ergodic, NodeCoefficients, Schedule};
use crate::linalg::BandMatrix;
use crate::model::ModelSpec;

/// Mass outside the inner 90% of the box above which accuracy is flagged.
const SHELL_MASS_LIMIT: f64 = 0.01;

/// `beta_gamma + lambda N^{-1} lambda^T Dw` per node.
pub fn optimal_drift(spec: &ModelSpec, gamma: f64, w: &ScalarField) -> Result<VectorField> {
    let coef = NodeCoefficients::new(spec, gamma, &w.grid)?;
    Ok(drift_with(&coef, w))
}

fn drift_with(coef: &NodeCoefficients, w: &ScalarField) -> VectorField {
    let g = &w.grid;
    let d = g.dim();
    let mut out = VectorField::zeros(g.clone(), d);
    let mut p = vec![0.0; d];
    for node in 0..g.len() {
        w.gradient_into(node, &mut p);
        let q = coef.q_at(node);
        let b = out.at_mut(node);
        for i in 0..d {
            b[i] = coef.beta_gamma[node * d + i] + (0..d).map(|j| q[i * d + j] * p[j]).sum::<f64>();
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeasureMethod {
    /// Kernel of the adjoint of a no-flux Markov-chain discretization.
    FokkerPlanck,
    /// Histogram of one long Euler trajectory, reflected at the box.
    ErgodicAverage {
        steps: usize,
        dt: f64,
        burn_in: usize,
        seed: u64,
    },
}

impl MeasureMethod {
    pub fn ergodic_average(seed: u64) -> Self {
        MeasureMethod::ErgodicAverage {
            steps: 1_000_000,
            dt: 1e-2,
            burn_in: 100_000,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InvariantMeasure {
    pub grid: Grid,
    /// Density per node; `sum density * quadrature weight = 1`.
    pub density: Vec<f64>,
    /// Probability mass carried by each node.
    pub mass: Vec<f64>,
    pub normalization_error: f64,
    /// Fitted decay rate `delta` of `log m ~ -delta |x|^2` on the outer shell.
    pub gaussian_tail_delta: Option<f64>,
    /// Mass outside the inner 90% of the box.
    pub shell_mass: f64,
    pub accuracy_warning: bool,
}

impl InvariantMeasure {
    fn from_mass(grid: Grid, mass: Vec<f64>) -> Self {
        let weights = grid.quadrature_weights();
        let density: Vec<f64> = mass.iter().zip(&weights).map(|(m, w)| m / w).collect();
        let total: f64 = density.iter().zip(&weights).map(|(m, w)| m * w).sum();
        let shell_mass: f64 = (0..grid.len())
            .filter(|&n| !grid.is_inner(n, 0.9))
            .map(|n| mass[n])
            .sum();
        let gaussian_tail_delta = tail_fit(&grid, &density);
        InvariantMeasure {
            grid,
            density,
            mass,
            normalization_error: (total - 1.0).abs(),
            gaussian_tail_delta,
            shell_mass,
            accuracy_warning: shell_mass > SHELL_MASS_LIMIT,
        }
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.mass.iter().zip(f).map(|(m, v)| m * v).sum()
    }

    /// `k`-th moment along axis `axis`.
    pub fn moment(&self, axis: usize, k: i32) -> f64 {
        (0..self.grid.len())
            .map(|n| self.mass[n] * self.grid.coord(n)[axis].powi(k))
            .sum()
    }

    pub fn density_field(&self) -> Result<ScalarField> {
        ScalarField::new(self.grid.clone(), self.density.clone())
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        self.density_field()?.write_csv(out, "density")
    }
}

/// Least-squares slope of `log m` against `|x|^2` on the shell between 50%
/// and 90% of the box, over nodes with representable density.
fn tail_fit(grid: &Grid, density: &[f64]) -> Option<f64> {
    let mut s = Vec::new();
    let mut y = Vec::new();
    for (n, &m) in density.iter().enumerate() {
        if grid.is_inner(n, 0.5) || !grid.is_inner(n, 0.9) || !(m > 1e-280) {
            continue;
        }
        let x = grid.coord(n);
        s.push(x.iter().map(|v| v * v).sum::<f64>());
        y.push(m.ln());
    }
    if s.len() < 3 {
        return None;
    }
    let k = s.len() as f64;
    let ms = s.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxx: f64 = s.iter().map(|a| (a - ms).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = s.iter().zip(&y).map(|(a, b)| (a - ms) * (b - my)).sum();
    Some(-sxy / sxx)
}

/// Invariant density of the optimal diffusion for the potential `w`.
pub fn invariant_measure(
    spec: &ModelSpec,
    gamma: f64,
    w: &ScalarField,
    method: MeasureMethod,
) -> Result<InvariantMeasure> {
    let coef = NodeCoefficients::new(spec, gamma, &w.grid)?;
    let drift = drift_with(&coef, w);
    match method {
        MeasureMethod::FokkerPlanck => generator_measure(&w.grid, &coef.diffusion, &drift.data),
        MeasureMethod::ErgodicAverage {
            steps,
            dt,
            burn_in,
            seed,
        } => trajectory_measure(spec, &drift, steps, dt, burn_in, seed),
    }
}

/// Stationary law of the diffusion with per-node `diffusion` (`d x d`) and
/// `drift` (`d`), discretized as a reflected Markov chain on the grid.
pub fn generator_measure(grid: &Grid, diffusion: &[f64], drift: &[f64]) -> Result<InvariantMeasure> {
    let d = grid.dim();
    check_inward(grid, drift)?;
    let n = grid.len();
    let bw = if d == 1 { 1 } else { grid.stride(0) + 1 };
    // transpose of the generator: column i holds the jump rates out of node i
    let mut adj = BandMatrix::zeros(n, bw, bw);
    for node in 0..n {
        for (target, rate) in jump_rates(grid, node, &diffusion[node * d * d..(node + 1) * d * d], &drift[node * d..(node + 1) * d])? {
            adj.add(target, node, rate);
            adj.add(node, node, -rate);
        }
    }
    // the kernel is one-dimensional iff the system with the anchor equation
    // replaced by a normalization is nonsingular
    let pin = grid.nearest_node(&anchor(d));
    adj.clear_row(pin);
    adj.add(pin, pin, 1.0);
    let lu = adj.lu().map_err(|_| Error::Degenerate {
        x: grid.coord(pin),
        detail: "invariant-measure kernel is not one-dimensional".into(),
    })?;
    let mut x = vec![0.0; n];
    x[pin] = 1.0;
    lu.solve(&mut x);
    let total: f64 = x.iter().sum();
    let peak = x.iter().fold(0.0_f64, |m, v| m.max((v / total).abs()));
    let mut mass = Vec::with_capacity(n);
    for (node, v) in x.iter().enumerate() {
        let m = v / total;
        if m < -1e-10 * peak {
            return Err(Error::Degenerate {
                x: grid.coord(node),
                detail: format!("invariant mass {m:.3e} is negative"),
            });
        }
        mass.push(m.max(0.0));
    }
    let sum: f64 = mass.iter().sum();
    mass.iter_mut().for_each(|m| *m /= sum);
    Ok(InvariantMeasure::from_mass(grid.clone(), mass))
}

/// Requires the drift to point strictly into the box on every face.
fn check_inward(grid: &Grid, drift: &[f64]) -> Result<()> {
    let d = grid.dim();
    for node in 0..grid.len() {
        let mi = grid.multi_index(node);
        for k in 0..d {
            let b = drift[node * d + k];
            let last = grid.axis(k).nodes - 1;
            let outward = (mi[k] == 0 && !(b > 0.0)) || (mi[k] == last && !(b < 0.0));
            if outward {
                return Err(Error::DomainTooSmall {
                    detail: format!("drift component {k} = {b:.3e} does not point into the box"),
                    at: grid.coord(node),
                });
            }
        }
    }
    Ok(())
}

/// Nonnegative jump rates out of `node`. Jumps that would leave the grid are
/// dropped, which makes the boundary reflecting.
fn jump_rates(grid: &Grid, node: usize, a: &[f64], b: &[f64]) -> Result<Vec<(usize, f64)>> {
    let d = grid.dim();
    let mi = grid.multi_index(node);
    let mut out = Vec::with_capacity(8);
    let cross = if d == 2 { 0.5 * (a[1] + a[2]) } else { 0.0 };
    let hx = grid.spacing(0);
    let hy = if d == 2 { grid.spacing(1) } else { 1.0 };
    let wc = cross.abs() / (2.0 * hx * hy);
    for k in 0..d {
        let h = grid.spacing(k);
        let akk = a[k * d + k];
        let diff = 0.5 * akk / (h * h) - wc;
        let (mut lo, mut hi) = (diff, diff);
        let bk = b[k];
        if bk.abs() * h <= akk - 2.0 * wc * h * h {
            hi += 0.5 * bk / h;
            lo -= 0.5 * bk / h;
        } else if bk > 0.0 {
            hi += bk / h;
        } else {
            lo -= bk / h;
        }
        if lo < -1e-12 * akk.abs().max(1.0) || hi < -1e-12 * akk.abs().max(1.0) {
            return Err(Error::Degenerate {
                x: grid.coord(node),
                detail: "cross diffusion too large for the grid aspect ratio".into(),
            });
        }
        let s = grid.stride(k);
        if mi[k] + 1 < grid.axis(k).nodes {
            out.push((node + s, hi.max(0.0)));
        }
        if mi[k] > 0 {
            out.push((node - s, lo.max(0.0)));
        }
    }
    if wc > 0.0 {
        let (sx, sy) = (grid.stride(0) as isize, grid.stride(1) as isize);
        let dirs: [(isize, isize); 2] = if cross > 0.0 { [(1, 1), (-1, -1)] } else { [(1, -1), (-1, 1)] };
        for (dx, dy) in dirs {
            let ix = mi[0] as isize + dx;
            let iy = mi[1] as isize + dy;
            if ix >= 0 && iy >= 0 && (ix as usize) < grid.axis(0).nodes && (iy as usize) < grid.axis(1).nodes {
                out.push(((node as isize + dx * sx + dy * sy) as usize, wc));
            }
        }
    }
    Ok(out.into_iter().filter(|&(_, r)| r > 0.0).collect())
}

fn trajectory_measure(
    spec: &ModelSpec,
    drift: &VectorField,
    steps: usize,
    dt: f64,
    burn_in: usize,
    seed: u64,
) -> Result<InvariantMeasure> {
    if steps == 0 || !(dt > 0.0) {
        return Err(Error::InvalidInput("trajectory needs steps > 0 and dt > 0".into()));
    }
    let grid = &drift.grid;
    let d = grid.dim();
    let noise = spec.noise_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = anchor(d);
    let mut b = vec![0.0; d];
    let mut z = vec![0.0; noise];
    let mut mass = vec![0.0; grid.len()];
    let sq = dt.sqrt();
    let mut lambda = nalgebra::DMatrix::zeros(d, noise);
    let constant_lambda = spec.lambda.is_constant();
    if constant_lambda {
        lambda = spec.lambda.eval_matrix(&x);
    }
    for step in 0..burn_in + steps {
        drift.interpolate_into(&x, &mut b);
        if !constant_lambda {
            lambda = spec.lambda.eval_matrix(&x);
        }
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(&mut rng);
        }
        let dw = &lambda * DVector::from_column_slice(&z);
        for k in 0..d {
            let ax = grid.axis(k);
            let mut v = x[k] + b[k] * dt + dw[k] * sq;
            // reflect into the box
            for _ in 0..4 {
                if v < ax.lo {
                    v = 2.0 * ax.lo - v;
                } else if v > ax.hi {
                    v = 2.0 * ax.hi - v;
                } else {
                    break;
                }
            }
            x[k] = v.clamp(ax.lo, ax.hi);
        }
        if step >= burn_in {
            let st = grid.stencil(&x);
            for i in 0..st.len {
                mass[st.idx[i]] += st.w[i];
            }
        }
    }
    let total = steps as f64;
    mass.iter_mut().for_each(|m| *m /= total);
    Ok(InvariantMeasure::from_mass(grid.clone(), mass))
}

/// Total variation between two measures on the same grid after merging
/// `block x block` nodes into one bin.
pub fn total_variation(a: &InvariantMeasure, b: &InvariantMeasure, block: usize) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::InvalidInput("measures live on different grids".into()));
    }
    let g = &a.grid;
    let block = block.max(1);
    let bins_per: Vec<usize> = g.axes().iter().map(|ax| ax.nodes.div_ceil(block)).collect();
    let nb = bins_per.iter().product::<usize>();
    let mut diff = vec![0.0; nb];
    for node in 0..g.len() {
        let mi = g.multi_index(node);
        let bin = if g.dim() == 1 {
            mi[0] / block
        } else {
            (mi[0] / block) * bins_per[1] + mi[1] / block
        };
        diff[bin] += a.mass[node] - b.mass[node];
    }
    Ok(0.5 * diff.iter().map(|v| v.abs()).sum::<f64>())
}

#[derive(Debug, Clone, Serialize)]
pub struct PoissonSolution {
    pub gamma: f64,
    /// `chi'(gamma)`.
    pub theta: f64,
    /// `dw/dgamma`, zero at the anchor.
    pub u: ScalarField,
    pub v1: ScalarField,
    /// Largest `|L u + V1 - theta|` on interior nodes.
    pub residual: f64,
    pub normalization_error: f64,
    pub accuracy_warning: bool,
}

#[derive(Serialize)]
struct PoissonSummary {
    gamma: f64,
    theta: f64,
    normalization_error: f64,
    residual: f64,
}

impl PoissonSolution {
    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&PoissonSummary {
            gamma: self.gamma,
            theta: self.theta,
            normalization_error: self.normalization_error,
            residual: self.residual,
        })?)
    }

    /// Columns `x[, y], u, v1`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let g = &self.u.grid;
        crate::io::write_version(out, "poisson")?;
        let mut wtr = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = if g.dim() == 1 { vec!["x"] } else { vec!["x", "y"] };
        header.extend(["u", "v1"]);
        wtr.write_record(&header)?;
        for node in 0..g.len() {
            let mut rec: Vec<String> = g.coord(node).iter().map(|v| format!("{v:.12e}")).collect();
            rec.push(format!("{:.12e}", self.u.values[node]));
            rec.push(format!("{:.12e}", self.v1.values[node]));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// `V1 = |alpha_hat + sigma lambda^T Dw|^2_{(sigma sigma^T)^{-1}} / (2 (1 - gamma)^2)` per node.
pub fn v1_field(spec: &ModelSpec, gamma: f64, w: &ScalarField) -> Result<ScalarField> {
    let g = &w.grid;
    let mut p = vec![0.0; g.dim()];
    let mut out = Vec::with_capacity(g.len());
    for node in 0..g.len() {
        w.gradient_into(node, &mut p);
        let dc = spec.derived_gamma(&g.coord(node), gamma)?;
        let y = &dc.alpha_hat + &dc.sigma * (dc.lambda.transpose() * DVector::from_column_slice(&p));
        out.push(y.dot(&(&dc.sigma_sigma_inv * &y)) / (2.0 * (1.0 - gamma).powi(2)));
    }
    ScalarField::new(g.clone(), out)
}

/// `theta = int V1 dm` and the corrector `u` of `L u = theta - V1`.
pub fn chi_prime(spec: &ModelSpec, gamma: f64, w: &ScalarField, m: &InvariantMeasure) -> Result<PoissonSolution> {
    let g = &w.grid;
    if m.grid != *g {
        return Err(Error::InvalidInput("measure and potential live on different grids".into()));
    }
    if m.normalization_error > 1e-8 {
        return Err(Error::InvalidInput(format!(
            "measure is not normalized (error {:.3e})",
            m.normalization_error
        )));
    }
    let coef = NodeCoefficients::new(spec, gamma, g)?;
    let drift = drift_with(&coef, w);
    let v1 = v1_field(spec, gamma, w)?;
    let theta = m.integrate(&v1.values);

    let asm = Assembler::new(g);
    let pin = g.nearest_node(&anchor(g.dim()));
    if g.is_boundary(pin) {
        return Err(Error::Config("anchor lies on the grid boundary".into()));
    }
    // -L u = V1 - theta, with u(pin) = 0 replacing one equation
    let trip = asm.triplets(&coef.diffusion, &drift.data, 0.0, Some(pin));
    let mut rhs: Vec<f64> = v1.values.iter().map(|v| v - theta).collect();
    rhs[pin] = 0.0;
    let sys = asm.build(trip);
    let mut u = asm.solve(sys, &rhs, None)?;
    let shift = u[pin];
    u.iter_mut().for_each(|v| *v -= shift);

    let d = g.dim();
    let mut residual = 0.0_f64;
    for node in 0..g.len() {
        if g.is_boundary(node) {
            continue;
        }
        let lu = apply_generator(
            g,
            node,
            coef.a_at(node),
            &drift.data[node * d..(node + 1) * d],
            &u,
        );
        residual = residual.max((lu + v1.values[node] - theta).abs());
    }
    Ok(PoissonSolution {
        gamma,
        theta,
        u: ScalarField::new(g.clone(), u)?,
        v1,
        residual,
        normalization_error: m.normalization_error,
        accuracy_warning: m.accuracy_warning,
    })
}

/// Centered difference `(chi(gamma + delta) - chi(gamma - delta)) / (2 delta)`.
pub fn chi_prime_fd_check(spec: &ModelSpec, gamma: f64, delta: f64, grid: &Grid) -> Result<f64> {
    if !(delta > 0.0) || !(gamma + delta < 0.0) {
        return Err(Error::InvalidInput(format!(
            "need delta > 0 and gamma + delta < 0, got gamma = {gamma}, delta = {delta}"
        )));
    }
    let schedule = Schedule::default();
    let hi = extract_ergodic(spec, gamma + delta, grid, &schedule)?.chi;
    let lo = extract_ergodic(spec, gamma - delta, grid, &schedule)?.chi;
    Ok((hi - lo) / (2.0 * delta))
}

#[derive(Debug, Clone, Serialize)]
pub struct Chi0 {
    /// `int theta^2 / 2` against the invariant law of `dX = G dt + lambda dW`.
    pub value: f64,
    pub measure: InvariantMeasure,
}

/// Lower-bound constant for `-chi`, averaged over the law driven by
/// `G = beta - lambda Sigma^T alpha_hat`.
pub fn chi0(spec: &ModelSpec, grid: &Grid) -> Result<Chi0> {
    // G and theta^2 do not depend on gamma; any admissible gamma works here.
    let coef = NodeCoefficients::new(spec, -1.0, grid)?;
    let measure = generator_measure(grid, &coef.diffusion, &coef.g)?;
    let half: Vec<f64> = coef.theta_sq.iter().map(|t| 0.5 * t).collect();
    Ok(Chi0 {
        value: measure.integrate(&half),
        measure,
    })
}

/// Outcome of comparing the hedging term against the market price of risk.
#[derive(Debug, Clone, Serialize)]
pub struct GradientCondition {
    pub holds: bool,
    /// Largest `(Dw)^T lambda sigma^T (sigma sigma^T)^{-1} sigma lambda^T Dw / theta^2`.
    pub max_ratio: f64,
    pub worst: Vec<f64>,
}

/// Checks `(Dw)^T lambda P lambda^T Dw < alpha_hat^T (sigma sigma^T)^{-1} alpha_hat`
/// at interior nodes. Nodes where both sides vanish count as ratio zero.
pub fn check_gradient_condition(spec: &ModelSpec, gamma: f64, w: &ScalarField) -> Result<GradientCondition> {
    let g = &w.grid;
    let mut p = vec![0.0; g.dim()];
    let mut best = (0.0_f64, 0usize);
    for node in 0..g.len() {
        if g.is_boundary(node) {
            continue;
        }
        w.gradient_into(node, &mut p);
        let dc = spec.derived_gamma(&g.coord(node), gamma)?;
        let y = &dc.sigma * (dc.lambda.transpose() * DVector::from_column_slice(&p));
        let lhs = y.dot(&(&dc.sigma_sigma_inv * &y));
        let rhs = dc.theta_sq;
        let tiny = 1e-14 * (1.0 + lhs.abs() + rhs.abs());
        let ratio = if rhs > tiny {
            lhs / rhs
        } else if lhs > tiny {
            f64::INFINITY
        } else {
            0.0
        };
        if ratio > best.0 || (ratio.is_infinite() && !best.0.is_infinite()) {
            best = (ratio, node);
        }
    }
    Ok(GradientCondition {
        holds: best.0 < 1.0,
        max_ratio: best.0,
        worst: g.coord(best.1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hjb::extract_ergodic;
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

    fn exact_w(spec: &ModelSpec, gamma: f64) -> ScalarField {
        let s = lgq_riccati(spec, gamma).unwrap();
        ScalarField::from_fn(grid(), |x| 0.5 * s.p * x[0] * x[0] + s.q * x[0])
    }

    #[test]
    fn lgq_drift_is_linear() {
        let w = exact_w(&lgq(), -1.0);
        let b = optimal_drift(&lgq(), -1.0, &w).unwrap();
        for node in 0..w.grid.len() {
            let x = w.grid.coord(node)[0];
            assert!((b.at(node)[0] + 10f64.sqrt() / 2.0 * x).abs() < 1e-10);
        }
    }

    #[test]
    fn lgq_measure_is_gaussian() {
        let w = exact_w(&lgq(), -1.0);
        let m = invariant_measure(&lgq(), -1.0, &w, MeasureMethod::FokkerPlanck).unwrap();
        assert!(m.normalization_error < 1e-8);
        assert!(m.mass.iter().all(|v| *v >= 0.0));
        assert!((m.moment(0, 2) - 1.0 / 10f64.sqrt()).abs() < 2e-3, "{}", m.moment(0, 2));
        assert!(m.moment(0, 1).abs() < 1e-12);
        let delta = m.gaussian_tail_delta.unwrap();
        // discretization bias grows in the tail; the fit is a diagnostic only
        assert!((delta / (10f64.sqrt() / 2.0) - 1.0).abs() < 0.1, "{delta}");
        assert!(!m.accuracy_warning);
    }

    #[test]
    fn merton_measure_is_rejected() {
        let w = ScalarField::zeros(grid());
        let err = invariant_measure(&merton(), -0.5, &w, MeasureMethod::FokkerPlanck).unwrap_err();
        assert!(matches!(err, Error::DomainTooSmall { .. }));
    }

    #[test]
    fn trajectory_and_generator_agree() {
        let w = exact_w(&lgq(), -1.0);
        let fp = invariant_measure(&lgq(), -1.0, &w, MeasureMethod::FokkerPlanck).unwrap();
        let ea = invariant_measure(&lgq(), -1.0, &w, MeasureMethod::ergodic_average(7)).unwrap();
        let tv = total_variation(&fp, &ea, 10).unwrap();
        assert!(tv <= 0.02, "tv = {tv}");
    }

    #[test]
    fn lgq_theta_matches_oracle() {
        let spec = lgq();
        let e = extract_ergodic(&spec, -1.0, &grid(), &Schedule::default()).unwrap();
        let m = invariant_measure(&spec, -1.0, &e.w, MeasureMethod::FokkerPlanck).unwrap();
        let ps = chi_prime(&spec, -1.0, &e.w, &m).unwrap();
        let oracle = lgq_riccati(&spec, -1.0).unwrap().chi_prime;
        assert!((ps.theta - oracle).abs() < 1e-4, "{} vs {oracle}", ps.theta);
        assert!(ps.residual < 1e-3, "residual {}", ps.residual);
        assert_eq!(ps.u.values[grid().nearest_node(&[0.0])], 0.0);
    }

    #[test]
    fn merton_theta_is_constant() {
        // constant V1 needs no measure: any normalized mass gives theta
        let g = grid();
        let w = ScalarField::zeros(g.clone());
        let v1 = v1_field(&merton(), -0.5, &w).unwrap();
        assert!(v1.values.iter().all(|v| (v - 0.02).abs() < 1e-15));
    }

    #[test]
    fn chi0_lgq() {
        let c = chi0(&lgq(), &grid()).unwrap();
        assert!((c.value - 0.125).abs() < 1e-3, "{}", c.value);
        assert!((c.measure.moment(0, 2) - 0.25).abs() < 1e-3);
    }

    #[test]
    fn gradient_condition_cases() {
        let w = exact_w(&lgq(), -1.0);
        let r = check_gradient_condition(&lgq(), -1.0, &w).unwrap();
        let p = 3.0 - 10f64.sqrt();
        assert!(r.holds);
        assert!((r.max_ratio - p * p).abs() < 1e-9, "{}", r.max_ratio);
        let zero = check_gradient_condition(&merton(), -0.5, &ScalarField::zeros(grid())).unwrap();
        assert!(zero.holds && zero.max_ratio == 0.0);
        let no_premium = ModelSpec::new(
            1,
            1,
            CoefficientField::scalar(0.0),
            CoefficientField::vector(vec![0.0]),
            CoefficientField::matrix(&[vec![1.0, 0.0]]).unwrap(),
            CoefficientField::affine(DMatrix::from_element(1, 1, -1.0), vec![0.0]).unwrap(),
            CoefficientField::matrix(&[vec![1.0, 0.0]]).unwrap(),
            1.0,
        )
        .unwrap();
        let r = check_gradient_condition(&no_premium, -1.0, &w).unwrap();
        assert!(!r.holds);
    }

    #[test]
    fn symmetric_model_has_even_density() {
        let w = exact_w(&lgq(), -2.0);
        let m = invariant_measure(&lgq(), -2.0, &w, MeasureMethod::FokkerPlanck).unwrap();
        let n = m.density.len();
        for i in 0..n {
            assert!((m.density[i] - m.density[n - 1 - i]).abs() <= 1e-10 * m.density[i].max(1e-300));
        }
    }
}
