//! Market and factor model: coefficient fields, the gamma-dependent derived
//! coefficients of the risk-sensitive HJB equation, and sampled checks of the
//! standing growth/ellipticity assumptions.
//!
//! Conventions: `n` factors, `m` risky assets, driven by an `(n + m)`-dimensional
//! Brownian motion. `sigma` is `m x (n+m)`, `lambda` is `n x (n+m)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest accepted condition number of `sigma sigma^T` (and `lambda lambda^T`).
pub const MAX_CONDITION: f64 = 1e12;

type Callback = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// A coefficient `x -> value` with a fixed output shape, stored row-major.
#[derive(Clone)]
pub enum CoefficientField {
    Constant {
        rows: usize,
        cols: usize,
        values: Vec<f64>,
    },
    /// `value(x) = linear * x + offset`; only for scalar and vector outputs.
    Affine {
        rows: usize,
        linear: DMatrix<f64>,
        offset: Vec<f64>,
    },
    /// User-supplied evaluation; writes `rows * cols` values row-major.
    Callback {
        rows: usize,
        cols: usize,
        func: Callback,
    },
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoefficientField::Constant { rows, cols, values } => f
                .debug_struct("Constant")
                .field("shape", &(rows, cols))
                .field("values", values)
                .finish(),
            CoefficientField::Affine {
                rows,
                linear,
                offset,
            } => f
                .debug_struct("Affine")
                .field("rows", rows)
                .field("linear", &linear.as_slice())
                .field("offset", offset)
                .finish(),
            CoefficientField::Callback { rows, cols, .. } => f
                .debug_struct("Callback")
                .field("shape", &(rows, cols))
                .finish_non_exhaustive(),
        }
    }
}

impl CoefficientField {
    pub fn scalar(value: f64) -> Self {
        CoefficientField::Constant {
            rows: 1,
            cols: 1,
            values: vec![value],
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        CoefficientField::Constant {
            rows: values.len(),
            cols: 1,
            values,
        }
    }

    /// Constant matrix from its rows.
    pub fn matrix(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
            return Err(Error::Config("matrix rows must be non-empty and of equal length".into()));
        }
        Ok(CoefficientField::Constant {
            rows: r,
            cols: c,
            values: rows.iter().flatten().copied().collect(),
        })
    }

    /// `value(x) = linear * x + offset` with `linear` of shape `offset.len() x n`.
    pub fn affine(linear: DMatrix<f64>, offset: Vec<f64>) -> Result<Self> {
        if linear.nrows() != offset.len() {
            return Err(Error::Dimension {
                field: "affine offset",
                expected: linear.nrows().to_string(),
                got: offset.len().to_string(),
            });
        }
        Ok(CoefficientField::Affine {
            rows: offset.len(),
            linear,
            offset,
        })
    }

    pub fn callback<F>(rows: usize, cols: usize, func: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        CoefficientField::Callback {
            rows,
            cols,
            func: Arc::new(func),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            CoefficientField::Constant { rows, cols, .. } => (*rows, *cols),
            CoefficientField::Affine { rows, .. } => (*rows, 1),
            CoefficientField::Callback { rows, cols, .. } => (*rows, *cols),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, CoefficientField::Constant { .. })
    }

    /// Writes the row-major value at `x` into `out` without allocating.
    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            CoefficientField::Constant { values, .. } => out.copy_from_slice(values),
            CoefficientField::Affine { linear, offset, .. } => {
                for (i, o) in out.iter_mut().enumerate() {
                    let mut acc = offset[i];
                    for (j, xj) in x.iter().enumerate() {
                        acc += linear[(i, j)] * xj;
                    }
                    *o = acc;
                }
            }
            CoefficientField::Callback { func, .. } => func(x, out),
        }
    }

    pub fn eval_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let (r, c) = self.shape();
        let mut buf = vec![0.0; r * c];
        self.eval_into(x, &mut buf);
        DMatrix::from_row_slice(r, c, &buf)
    }

    pub fn eval_vector(&self, x: &[f64]) -> DVector<f64> {
        let (r, c) = self.shape();
        let mut buf = vec![0.0; r * c];
        self.eval_into(x, &mut buf);
        DVector::from_vec(buf)
    }

    fn affine_parts(&self, n: usize) -> Option<(DMatrix<f64>, DVector<f64>)> {
        match self {
            CoefficientField::Affine { linear, offset, .. } => {
                Some((linear.clone(), DVector::from_vec(offset.clone())))
            }
            CoefficientField::Constant { rows, cols: 1, values } => Some((
                DMatrix::zeros(*rows, n),
                DVector::from_vec(values.clone()),
            )),
            _ => None,
        }
    }
}

/// Full market/factor model.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub n: usize,
    pub m: usize,
    pub r: CoefficientField,
    pub alpha: CoefficientField,
    pub sigma: CoefficientField,
    pub beta: CoefficientField,
    pub lambda: CoefficientField,
    pub v0: f64,
}

/// Raw coefficient values at one point.
#[derive(Debug, Clone)]
pub struct RawCoefficients {
    pub r: f64,
    pub alpha: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub lambda: DMatrix<f64>,
}

/// Coefficients of the risk-sensitive HJB equation at one point and one gamma.
#[derive(Debug, Clone)]
pub struct DerivedCoefficients {
    pub gamma: f64,
    /// `alpha - r 1`.
    pub alpha_hat: DVector<f64>,
    /// `(sigma sigma^T)^{-1}`.
    pub sigma_sigma_inv: DMatrix<f64>,
    /// `Sigma = (sigma sigma^T)^{-1} sigma`, shape `m x (n+m)`.
    pub big_sigma: DMatrix<f64>,
    /// Orthogonal projector `sigma^T (sigma sigma^T)^{-1} sigma`.
    pub projector: DMatrix<f64>,
    pub n_inv: DMatrix<f64>,
    pub n_mat: DMatrix<f64>,
    pub beta_gamma: DVector<f64>,
    pub u_gamma: f64,
    pub g: DVector<f64>,
    pub theta_sq: f64,
    /// `Sigma^T alpha_hat`, the `(n+m)`-vector entering the control form.
    pub sigma_t_alpha: DVector<f64>,
    /// `lambda N^{-1} lambda^T`.
    pub q: DMatrix<f64>,
    /// `lambda lambda^T`.
    pub diffusion: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

impl ModelSpec {
    pub fn new(
        n: usize,
        m: usize,
        r: CoefficientField,
        alpha: CoefficientField,
        sigma: CoefficientField,
        beta: CoefficientField,
        lambda: CoefficientField,
        v0: f64,
    ) -> Result<Self> {
        let spec = ModelSpec {
            n,
            m,
            r,
            alpha,
            sigma,
            beta,
            lambda,
            v0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Width of the driving Brownian motion.
    pub fn noise_dim(&self) -> usize {
        self.n + self.m
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::Config("n and m must be at least 1".into()));
        }
        if !(self.v0.is_finite() && self.v0 >= 1.0) {
            return Err(Error::Config(format!("v0 must be >= 1, got {}", self.v0)));
        }
        let d = self.noise_dim();
        let checks: [(&'static str, &CoefficientField, (usize, usize)); 5] = [
            ("r", &self.r, (1, 1)),
            ("alpha", &self.alpha, (self.m, 1)),
            ("sigma", &self.sigma, (self.m, d)),
            ("beta", &self.beta, (self.n, 1)),
            ("lambda", &self.lambda, (self.n, d)),
        ];
        for (field, coef, want) in checks {
            if coef.shape() != want {
                return Err(Error::Dimension {
                    field,
                    expected: format!("{}x{}", want.0, want.1),
                    got: format!("{}x{}", coef.shape().0, coef.shape().1),
                });
            }
            if let CoefficientField::Affine { linear, .. } = coef {
                if linear.ncols() != self.n {
                    return Err(Error::Dimension {
                        field,
                        expected: format!("linear part with {} columns", self.n),
                        got: linear.ncols().to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::Dimension {
                field: "x",
                expected: self.n.to_string(),
                got: x.len().to_string(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite point {x:?}")));
        }
        Ok(())
    }

    pub fn eval_coefficients(&self, x: &[f64]) -> Result<RawCoefficients> {
        self.check_point(x)?;
        Ok(RawCoefficients {
            r: self.r.eval_vector(x)[0],
            alpha: self.alpha.eval_vector(x),
            sigma: self.sigma.eval_matrix(x),
            beta: self.beta.eval_vector(x),
            lambda: self.lambda.eval_matrix(x),
        })
    }

    pub fn derived_gamma(&self, x: &[f64], gamma: f64) -> Result<DerivedCoefficients> {
        if !(gamma < 1.0) || !gamma.is_finite() {
            return Err(Error::InvalidInput(format!("gamma must be < 1, got {gamma}")));
        }
        let raw = self.eval_coefficients(x)?;
        let ss = &raw.sigma * raw.sigma.transpose();
        let ss_inv = spd_inverse(&ss).map_err(|detail| Error::Degenerate {
            x: x.to_vec(),
            detail: format!("sigma sigma^T {detail}"),
        })?;
        let alpha_hat = &raw.alpha - DVector::from_element(self.m, raw.r);
        let big_sigma = &ss_inv * &raw.sigma;
        let projector = raw.sigma.transpose() * &big_sigma;
        let d = self.noise_dim();
        let eye = DMatrix::<f64>::identity(d, d);
        let ratio = gamma / (1.0 - gamma);
        let n_inv = &eye + &projector * ratio;
        let n_mat = &eye - &projector * gamma;
        let sigma_t_alpha = big_sigma.transpose() * &alpha_hat;
        let lambda_s = &raw.lambda * &sigma_t_alpha;
        let theta_sq = alpha_hat.dot(&(&ss_inv * &alpha_hat));
        let q = &raw.lambda * &n_inv * raw.lambda.transpose();
        let diffusion = &raw.lambda * raw.lambda.transpose();
        Ok(DerivedCoefficients {
            gamma,
            beta_gamma: &raw.beta + &lambda_s * ratio,
            g: &raw.beta - &lambda_s,
            u_gamma: -gamma / (2.0 * (1.0 - gamma)) * theta_sq,
            theta_sq,
            alpha_hat,
            sigma_sigma_inv: ss_inv,
            big_sigma,
            projector,
            n_inv,
            n_mat,
            sigma_t_alpha,
            q,
            diffusion,
            lambda: raw.lambda,
            sigma: raw.sigma,
        })
    }

    /// Constant `(sigma, lambda)` and affine `(alpha, beta, r)` parts, when the
    /// model belongs to the linear-Gaussian class.
    pub fn linear_gaussian_parts(&self) -> Option<LinearGaussianParts> {
        let (sigma, lambda) = match (&self.sigma, &self.lambda) {
            (CoefficientField::Constant { .. }, CoefficientField::Constant { .. }) => {
                let origin = vec![0.0; self.n];
                (self.sigma.eval_matrix(&origin), self.lambda.eval_matrix(&origin))
            }
            _ => return None,
        };
        let (a_lin, a_off) = self.alpha.affine_parts(self.n)?;
        let (b_lin, b_off) = self.beta.affine_parts(self.n)?;
        let (r_lin, r_off) = self.r.affine_parts(self.n)?;
        if r_lin.iter().any(|v| *v != 0.0) {
            // r(x) varying in x shifts A; keep the class strict
            return None;
        }
        Some(LinearGaussianParts {
            a: a_lin,
            a_offset: a_off,
            b: b_lin,
            b_offset: b_off,
            r: r_off[0],
            sigma,
            lambda,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text)?;
        cfg.into_spec()
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

/// `alpha(x) = A x + a`, `beta(x) = B x + b`, constant `r`, `sigma`, `lambda`.
#[derive(Debug, Clone)]
pub struct LinearGaussianParts {
    pub a: DMatrix<f64>,
    pub a_offset: DVector<f64>,
    pub b: DMatrix<f64>,
    pub b_offset: DVector<f64>,
    pub r: f64,
    pub sigma: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
}

/// Inverse of a symmetric positive-definite matrix via Cholesky, rejecting
/// condition numbers above [`MAX_CONDITION`].
pub(crate) fn spd_inverse(mat: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, String> {
    let (lo, hi) = sym_eig_range(mat);
    if !(lo > 0.0) || !lo.is_finite() {
        return Err(format!("is not positive definite (min eigenvalue {lo:.3e})"));
    }
    if hi / lo > MAX_CONDITION {
        return Err(format!("condition number {:.3e} exceeds {MAX_CONDITION:e}", hi / lo));
    }
    let chol = nalgebra::Cholesky::new(mat.clone())
        .ok_or_else(|| "Cholesky factorization failed".to_string())?;
    Ok(chol.inverse())
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub(crate) fn sym_eig_range(mat: &DMatrix<f64>) -> (f64, f64) {
    let sym = (mat + mat.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

// ---------------------------------------------------------------------------
// JSON configuration
// ---------------------------------------------------------------------------

/// On-disk model description. Matrices are row-major lists of rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n: usize,
    pub m: usize,
    #[serde(default = "default_v0")]
    pub v0: f64,
    pub r: FieldConfig,
    pub alpha: FieldConfig,
    pub sigma: FieldConfig,
    pub beta: FieldConfig,
    pub lambda: FieldConfig,
}

fn default_v0() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum FieldConfig {
    Constant {
        value: ConstValue,
    },
    Affine {
        #[serde(rename = "A", alias = "B")]
        linear: Vec<Vec<f64>>,
        #[serde(rename = "a", alias = "b")]
        offset: Vec<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConstValue {
    Scalar(f64),
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

impl FieldConfig {
    fn into_field(self, name: &'static str, want: (usize, usize)) -> Result<CoefficientField> {
        match self {
            FieldConfig::Constant { value } => {
                let field = match value {
                    ConstValue::Scalar(v) => CoefficientField::scalar(v),
                    ConstValue::Vector(v) if want.1 == 1 => CoefficientField::vector(v),
                    ConstValue::Vector(v) => CoefficientField::matrix(&[v])?,
                    ConstValue::Matrix(rows) => CoefficientField::matrix(&rows)?,
                };
                if field.shape() != want {
                    return Err(Error::Dimension {
                        field: name,
                        expected: format!("{}x{}", want.0, want.1),
                        got: format!("{}x{}", field.shape().0, field.shape().1),
                    });
                }
                Ok(field)
            }
            FieldConfig::Affine { linear, offset } => {
                if want.1 != 1 {
                    return Err(Error::Config(format!(
                        "{name}: affine fields are only supported for scalar and vector coefficients"
                    )));
                }
                let rows = linear.len();
                let cols = linear.first().map_or(0, Vec::len);
                if rows == 0 || linear.iter().any(|r| r.len() != cols) {
                    return Err(Error::Config(format!("{name}: ragged linear part")));
                }
                let lin = DMatrix::from_row_iterator(rows, cols, linear.into_iter().flatten());
                CoefficientField::affine(lin, offset)
            }
        }
    }

    fn from_field(field: &CoefficientField) -> Result<Self> {
        match field {
            CoefficientField::Constant { rows, cols, values } => {
                let value = if *rows == 1 && *cols == 1 {
                    ConstValue::Scalar(values[0])
                } else if *cols == 1 {
                    ConstValue::Vector(values.clone())
                } else {
                    ConstValue::Matrix(values.chunks(*cols).map(<[f64]>::to_vec).collect())
                };
                Ok(FieldConfig::Constant { value })
            }
            CoefficientField::Affine { linear, offset, .. } => Ok(FieldConfig::Affine {
                linear: linear.row_iter().map(|r| r.iter().copied().collect()).collect(),
                offset: offset.clone(),
            }),
            CoefficientField::Callback { .. } => Err(Error::Config(
                "callback coefficients cannot be serialized".into(),
            )),
        }
    }
}

impl ModelConfig {
    pub fn into_spec(self) -> Result<ModelSpec> {
        let d = self.n + self.m;
        ModelSpec::new(
            self.n,
            self.m,
            self.r.into_field("r", (1, 1))?,
            self.alpha.into_field("alpha", (self.m, 1))?,
            self.sigma.into_field("sigma", (self.m, d))?,
            self.beta.into_field("beta", (self.n, 1))?,
            self.lambda.into_field("lambda", (self.n, d))?,
            self.v0,
        )
    }

    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        Ok(ModelConfig {
            n: spec.n,
            m: spec.m,
            v0: spec.v0,
            r: FieldConfig::from_field(&spec.r)?,
            alpha: FieldConfig::from_field(&spec.alpha)?,
            sigma: FieldConfig::from_field(&spec.sigma)?,
            beta: FieldConfig::from_field(&spec.beta)?,
            lambda: FieldConfig::from_field(&spec.lambda)?,
        })
    }
}

// ---------------------------------------------------------------------------
// Sampled assumption checks
// ---------------------------------------------------------------------------

/// Axis-aligned sampling box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SampleBox {
    pub fn cube(n: usize, half_width: f64) -> Self {
        SampleBox {
            lo: vec![-half_width; n],
            hi: vec![half_width; n],
        }
    }
}

/// A pass/fail flag with the sample that violates it worst.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub ok: bool,
    pub worst: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExampleConditions {
    /// `A^T A >= C I`.
    pub a_full_rank: bool,
    /// Eigenvalues of `B - A^T A` have negative real parts.
    pub stable_drift: bool,
    /// `Range(lambda^T - sigma^T A)` inside `Kernel(sigma)`.
    pub range_in_kernel: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub elliptic: Check,
    pub c1: f64,
    pub c2: f64,
    pub drift: Check,
    pub c_g: f64,
    pub c_g_prime: f64,
    pub coercive: Check,
    pub c0: f64,
    pub c0_prime: f64,
    pub example_conditions: Option<ExampleConditions>,
    /// Filled once an ergodic solution is available.
    pub gradient_condition: Option<bool>,
    pub sample_box: SampleBox,
    pub samples: usize,
}

impl AssumptionReport {
    /// Conditions required by the PDE route: ellipticity, mean reversion of
    /// `G` and quadratic growth of the market price of risk.
    pub fn all_required_ok(&self) -> bool {
        self.elliptic.ok && self.drift.ok && self.coercive.ok
    }

    /// Half-width of the default computational box, `6 max(1, sqrt(c0'/c0))`.
    pub fn default_half_width(&self) -> f64 {
        if self.coercive.ok && self.c0 > 0.0 {
            6.0 * (self.c0_prime / self.c0).sqrt().max(1.0)
        } else {
            6.0
        }
    }
}

const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    out
}

/// Halton points in the box; `seed` offsets the sequence.
pub fn halton_points(bx: &SampleBox, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = bx.lo.len();
    (0..count as u64)
        .map(|k| {
            (0..n)
                .map(|d| {
                    let u = radical_inverse(seed + k + 1, PRIMES[d % PRIMES.len()]);
                    bx.lo[d] + u * (bx.hi[d] - bx.lo[d])
                })
                .collect()
        })
        .collect()
}

/// Least-squares slope of `y` on `s` with intercept.
fn ls_slope(s: &[f64], y: &[f64]) -> f64 {
    let k = s.len() as f64;
    let ms = s.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxy: f64 = s.iter().zip(y).map(|(a, b)| (a - ms) * (b - my)).sum();
    let sxx: f64 = s.iter().map(|a| (a - ms) * (a - ms)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc })
        .0
}

/// Samples the standing assumptions on a box and fits their constants.
pub fn check_assumptions(
    spec: &ModelSpec,
    bx: &SampleBox,
    samples: usize,
    seed: u64,
) -> Result<AssumptionReport> {
    if bx.lo.len() != spec.n || bx.hi.len() != spec.n {
        return Err(Error::Dimension {
            field: "sample box",
            expected: spec.n.to_string(),
            got: bx.lo.len().to_string(),
        });
    }
    if bx.lo.iter().zip(&bx.hi).any(|(l, h)| !(l < h)) {
        return Err(Error::InvalidInput("sample box is degenerate".into()));
    }
    let points = halton_points(bx, samples.max(2), seed);

    let mut c1 = f64::INFINITY;
    let mut c2 = 0.0_f64;
    let mut worst_ellip = None;
    let mut cond_ok = true;
    let mut sq = Vec::with_capacity(points.len());
    let mut gx = Vec::with_capacity(points.len());
    let mut theta = Vec::with_capacity(points.len());
    let mut all_finite = true;

    for x in &points {
        let raw = spec.eval_coefficients(x)?;
        let ss = &raw.sigma * raw.sigma.transpose();
        let ll = &raw.lambda * raw.lambda.transpose();
        let (slo, shi) = sym_eig_range(&ss);
        let (llo, lhi) = sym_eig_range(&ll);
        let lo = slo.min(llo);
        if lo < c1 {
            c1 = lo;
            worst_ellip = Some(x.clone());
        }
        c2 = c2.max(shi.max(lhi));
        if !(slo > 0.0 && shi / slo <= MAX_CONDITION && llo > 0.0 && lhi / llo <= MAX_CONDITION) {
            cond_ok = false;
        }
        sq.push(x.iter().map(|v| v * v).sum::<f64>());
        match spec.derived_gamma(x, 0.0) {
            Ok(d) => {
                gx.push(d.g.iter().zip(x).map(|(a, b)| a * b).sum::<f64>());
                theta.push(d.theta_sq);
            }
            Err(_) => {
                all_finite = false;
                gx.push(f64::NAN);
                theta.push(f64::NAN);
            }
        }
    }

    let elliptic_ok = cond_ok && c1.is_finite() && c1 > 0.0;
    let elliptic = Check {
        ok: elliptic_ok,
        worst: if elliptic_ok { None } else { worst_ellip.clone() },
    };

    let (drift, c_g, c_g_prime, coercive, c0, c0_prime) = if all_finite {
        let c_g = -ls_slope(&sq, &gx);
        let excess: Vec<f64> = gx.iter().zip(&sq).map(|(g, s)| g + c_g * s).collect();
        let c_g_prime = excess.iter().copied().fold(0.0, f64::max);
        let drift_ok = c_g > 1e-10;
        let drift = Check {
            ok: drift_ok,
            worst: if drift_ok {
                None
            } else {
                let ratio: Vec<f64> = gx.iter().zip(&sq).map(|(g, s)| g / (s + 1.0)).collect();
                Some(points[argmax(&ratio)].clone())
            },
        };
        let c0 = ls_slope(&sq, &theta);
        let deficit: Vec<f64> = theta.iter().zip(&sq).map(|(t, s)| c0 * s - t).collect();
        let c0_prime = deficit.iter().copied().fold(0.0, f64::max);
        let coercive_ok = c0 > 1e-10;
        let coercive = Check {
            ok: coercive_ok,
            worst: if coercive_ok {
                None
            } else {
                let ratio: Vec<f64> = theta.iter().zip(&sq).map(|(t, s)| -t / (s + 1.0)).collect();
                Some(points[argmax(&ratio)].clone())
            },
        };
        (drift, c_g, c_g_prime, coercive, c0, c0_prime)
    } else {
        let fail = Check {
            ok: false,
            worst: worst_ellip.clone(),
        };
        (fail.clone(), f64::NAN, f64::NAN, fail, f64::NAN, f64::NAN)
    };

    Ok(AssumptionReport {
        elliptic,
        c1,
        c2,
        drift,
        c_g,
        c_g_prime,
        coercive,
        c0,
        c0_prime,
        example_conditions: example_conditions(spec),
        gradient_condition: None,
        sample_box: bx.clone(),
        samples: points.len(),
    })
}

fn example_conditions(spec: &ModelSpec) -> Option<ExampleConditions> {
    let parts = spec.linear_gaussian_parts()?;
    let ata = parts.a.transpose() * &parts.a;
    let (lo, _) = sym_eig_range(&ata);
    let stable = {
        let mat = &parts.b - &ata;
        mat.complex_eigenvalues().iter().all(|z| z.re < 0.0)
    };
    let resid = &parts.sigma * (parts.lambda.transpose() - parts.sigma.transpose() * &parts.a);
    let scale = 1.0 + parts.sigma.norm() * (parts.lambda.norm() + parts.a.norm());
    Some(ExampleConditions {
        a_full_rank: lo > 1e-12,
        stable_drift: stable,
        range_in_kernel: resid.norm() <= 1e-10 * scale,
    })
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn random_model(c: f64, s: [f64; 4], l: [f64; 4]) -> Option<ModelSpec> {
        // 2 factors, 1 asset is too small for a general projector; use n = 1, m = 2.
        ModelSpec::new(
            1,
            2,
            CoefficientField::scalar(0.01),
            CoefficientField::affine(DMatrix::from_row_slice(2, 1, &[c, -0.5 * c]), vec![0.1, 0.2])
                .ok()?,
            CoefficientField::matrix(&[
                vec![1.0 + s[0].abs(), s[1], 0.0],
                vec![s[2], 1.0 + s[3].abs(), 0.3],
            ])
            .ok()?,
            CoefficientField::affine(DMatrix::from_element(1, 1, -1.0), vec![0.0]).ok()?,
            CoefficientField::matrix(&[vec![l[0], l[1], 1.0 + l[2].abs()]]).ok()?,
            1.0,
        )
        .ok()
    }

    proptest! {
        #[test]
        fn n_inv_spectrum_bounds(gamma in -50.0..-1e-3f64, x in -5.0..5.0f64,
                                 c in 0.1..2.0f64,
                                 s in proptest::array::uniform4(-0.5..0.5f64),
                                 l in proptest::array::uniform4(-0.5..0.5f64)) {
            let spec = random_model(c, s, l).unwrap();
            let d = spec.derived_gamma(&[x], gamma).unwrap();
            let (lo, hi) = sym_eig_range(&d.n_inv);
            let tol = 1e-10;
            prop_assert!(lo >= 1.0 / (1.0 - gamma) - tol);
            prop_assert!(hi <= 1.0 + tol);
            prop_assert!((&d.n_inv - d.n_inv.transpose()).norm() < 1e-12);
            prop_assert!(d.u_gamma >= 0.0);
            // projector is idempotent, Sigma sigma^T = I
            prop_assert!((&d.projector * &d.projector - &d.projector).norm() < 1e-10);
            let ident = &d.big_sigma * d.sigma.transpose();
            prop_assert!((ident - DMatrix::identity(2, 2)).norm() < 1e-10);
            let u0 = spec.derived_gamma(&[x], 0.0).unwrap().u_gamma;
            prop_assert_eq!(u0, 0.0);
        }

        #[test]
        fn affine_fields_stay_affine(gamma in -10.0..-0.01f64, x0 in -3.0..3.0f64, dx in 0.1..2.0f64,
                                     c in 0.1..2.0f64,
                                     s in proptest::array::uniform4(-0.5..0.5f64),
                                     l in proptest::array::uniform4(-0.5..0.5f64)) {
            let spec = random_model(c, s, l).unwrap();
            let pts = [x0, x0 + dx, x0 + 2.0 * dx];
            let d: Vec<_> = pts.iter().map(|x| spec.derived_gamma(&[*x], gamma).unwrap()).collect();
            let mid_bg = 0.5 * (d[0].beta_gamma[0] + d[2].beta_gamma[0]);
            let mid_g = 0.5 * (d[0].g[0] + d[2].g[0]);
            prop_assert!((mid_bg - d[1].beta_gamma[0]).abs() < 1e-10);
            prop_assert!((mid_g - d[1].g[0]).abs() < 1e-10);
        }
    }
}
