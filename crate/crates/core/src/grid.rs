//! Uniform tensor grids in one or two dimensions and node-sampled fields.
//!
//! Nodes are stored row-major: in 2-D, node `(i, j)` (x index `i`, y index `j`)
//! lives at `i * ny + j`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_NODES: usize = 16;
pub const MAX_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub nodes: usize,
}

impl Axis {
    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.nodes - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        if i + 1 == self.nodes {
            self.hi
        } else {
            self.lo + i as f64 * self.spacing()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    axes: Vec<Axis>,
}

/// Multilinear interpolation weights for one query point.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub idx: [usize; 4],
    pub w: [f64; 4],
    pub len: usize,
    pub clamped: bool,
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > MAX_DIM {
            return Err(Error::Config(format!(
                "PDE grids support 1 or 2 dimensions, got {}",
                axes.len()
            )));
        }
        for a in &axes {
            if a.nodes < MIN_NODES {
                return Err(Error::Config(format!(
                    "grid needs at least {MIN_NODES} nodes per axis, got {}",
                    a.nodes
                )));
            }
            if !(a.lo < a.hi) || !a.lo.is_finite() || !a.hi.is_finite() {
                return Err(Error::Config(format!("grid axis [{}, {}] is empty", a.lo, a.hi)));
            }
        }
        Ok(Grid { axes })
    }

    /// `[-half, half]^dim` with `nodes` nodes per axis.
    pub fn cube(dim: usize, half: f64, nodes: usize) -> Result<Self> {
        Grid::new(vec![
            Axis {
                lo: -half,
                hi: half,
                nodes
            };
            dim
        ])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, k: usize) -> &Axis {
        &self.axes[k]
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.nodes).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, k: usize) -> f64 {
        self.axes[k].spacing()
    }

    pub fn max_spacing(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).fold(0.0, f64::max)
    }

    /// Stride of axis `k` in the flat node index.
    pub fn stride(&self, k: usize) -> usize {
        if self.dim() == 2 && k == 0 {
            self.axes[1].nodes
        } else {
            1
        }
    }

    /// Per-axis indices of a flat node index.
    pub fn multi_index(&self, node: usize) -> [usize; 2] {
        if self.dim() == 1 {
            [node, 0]
        } else {
            let ny = self.axes[1].nodes;
            [node / ny, node % ny]
        }
    }

    pub fn flat_index(&self, mi: [usize; 2]) -> usize {
        if self.dim() == 1 {
            mi[0]
        } else {
            mi[0] * self.axes[1].nodes + mi[1]
        }
    }

    pub fn coord_into(&self, node: usize, out: &mut [f64]) {
        let mi = self.multi_index(node);
        for (k, o) in out.iter_mut().enumerate().take(self.dim()) {
            *o = self.axes[k].coord(mi[k]);
        }
    }

    pub fn coord(&self, node: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.coord_into(node, &mut x);
        x
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        let mi = self.multi_index(node);
        (0..self.dim()).any(|k| mi[k] == 0 || mi[k] + 1 == self.axes[k].nodes)
    }

    /// Nodes whose coordinates all lie within `frac` of the half-width of the
    /// box around its centre.
    pub fn is_inner(&self, node: usize, frac: f64) -> bool {
        let x = self.coord(node);
        self.axes.iter().zip(&x).all(|(a, xi)| {
            let c = 0.5 * (a.lo + a.hi);
            let half = 0.5 * (a.hi - a.lo);
            (xi - c).abs() <= frac * half + 1e-12
        })
    }

    /// Node nearest to `x` (clamped into the box).
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let mut mi = [0usize; 2];
        for (k, a) in self.axes.iter().enumerate() {
            let t = ((x[k] - a.lo) / a.spacing()).round();
            mi[k] = t.clamp(0.0, (a.nodes - 1) as f64) as usize;
        }
        self.flat_index(mi)
    }

    /// Trapezoid quadrature weights, one per node.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        (0..self.len())
            .map(|node| {
                let mi = self.multi_index(node);
                self.axes
                    .iter()
                    .enumerate()
                    .map(|(k, a)| {
                        let h = a.spacing();
                        if mi[k] == 0 || mi[k] + 1 == a.nodes {
                            0.5 * h
                        } else {
                            h
                        }
                    })
                    .product()
            })
            .collect()
    }

    /// Multilinear interpolation stencil; points outside the box are clamped.
    #[inline]
    pub fn stencil(&self, x: &[f64]) -> Stencil {
        let mut clamped = false;
        let mut base = [0usize; 2];
        let mut frac = [0.0f64; 2];
        for (k, a) in self.axes.iter().enumerate() {
            let mut t = (x[k] - a.lo) / a.spacing();
            let last = (a.nodes - 1) as f64;
            if !(t >= 0.0) {
                clamped = true;
                t = 0.0;
            } else if t > last {
                clamped = true;
                t = last;
            }
            let i = (t.floor() as usize).min(a.nodes - 2);
            base[k] = i;
            frac[k] = t - i as f64;
        }
        if self.dim() == 1 {
            Stencil {
                idx: [base[0], base[0] + 1, 0, 0],
                w: [1.0 - frac[0], frac[0], 0.0, 0.0],
                len: 2,
                clamped,
            }
        } else {
            let ny = self.axes[1].nodes;
            let n00 = base[0] * ny + base[1];
            let (fx, fy) = (frac[0], frac[1]);
            Stencil {
                idx: [n00, n00 + 1, n00 + ny, n00 + ny + 1],
                w: [
                    (1.0 - fx) * (1.0 - fy),
                    (1.0 - fx) * fy,
                    fx * (1.0 - fy),
                    fx * fy,
                ],
                len: 4,
                clamped,
            }
        }
    }

    fn write_coords<W: Write>(&self, node: usize, out: &mut W) -> std::io::Result<()> {
        for v in self.coord(node) {
            write!(out, "{v},")?;
        }
        Ok(())
    }

    fn csv_header(&self) -> &'static str {
        if self.dim() == 1 {
            "x"
        } else {
            "x,y"
        }
    }
}

/// Node values on a grid, optionally pinned to zero at an anchor point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<Vec<f64>>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension {
                field: "field values",
                expected: grid.len().to_string(),
                got: values.len().to_string(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Degenerate {
                x: grid.coord(i),
                detail: "non-finite field value".into(),
            });
        }
        Ok(ScalarField {
            grid,
            values,
            anchor: None,
        })
    }

    pub fn zeros(grid: Grid) -> Self {
        let n = grid.len();
        ScalarField {
            grid,
            values: vec![0.0; n],
            anchor: None,
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.coord(i))).collect();
        ScalarField {
            grid,
            values,
            anchor: None,
        }
    }

    /// Shifts values so the interpolated value at `x0` is zero.
    pub fn normalize_at(&mut self, x0: &[f64]) {
        let (v0, _) = self.interpolate(x0);
        for v in &mut self.values {
            *v -= v0;
        }
        self.anchor = Some(x0.to_vec());
    }

    /// Gradient at a node: central differences inside, second-order one-sided
    /// differences on the boundary (flagged by the returned bool).
    pub fn gradient_into(&self, node: usize, out: &mut [f64]) -> bool {
        let g = &self.grid;
        let mi = g.multi_index(node);
        let mut boundary = false;
        for k in 0..g.dim() {
            let h = g.spacing(k);
            let s = g.stride(k);
            let last = g.axis(k).nodes - 1;
            let v = &self.values;
            out[k] = if mi[k] == 0 {
                boundary = true;
                (-3.0 * v[node] + 4.0 * v[node + s] - v[node + 2 * s]) / (2.0 * h)
            } else if mi[k] == last {
                boundary = true;
                (3.0 * v[node] - 4.0 * v[node - s] + v[node - 2 * s]) / (2.0 * h)
            } else {
                (v[node + s] - v[node - s]) / (2.0 * h)
            };
        }
        boundary
    }

    pub fn gradient(&self, node: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.dim()];
        self.gradient_into(node, &mut out);
        out
    }

    /// Node-wise gradient as a vector field.
    pub fn gradient_field(&self) -> VectorField {
        let d = self.grid.dim();
        let mut data = vec![0.0; self.grid.len() * d];
        for (node, chunk) in data.chunks_mut(d).enumerate() {
            self.gradient_into(node, chunk);
        }
        VectorField {
            grid: self.grid.clone(),
            width: d,
            data,
        }
    }

    /// Hessian at an interior node, row-major `dim x dim`.
    pub fn hessian(&self, node: usize) -> Option<[f64; 4]> {
        let g = &self.grid;
        if g.is_boundary(node) {
            return None;
        }
        let v = &self.values;
        let mut hess = [0.0; 4];
        let d = g.dim();
        for k in 0..d {
            let h = g.spacing(k);
            let s = g.stride(k);
            hess[k * d + k] = (v[node + s] - 2.0 * v[node] + v[node - s]) / (h * h);
        }
        if d == 2 {
            let (hx, hy) = (g.spacing(0), g.spacing(1));
            let (sx, sy) = (g.stride(0), g.stride(1));
            let c = (v[node + sx + sy] - v[node + sx - sy] - v[node - sx + sy] + v[node - sx - sy])
                / (4.0 * hx * hy);
            hess[1] = c;
            hess[2] = c;
        }
        Some(hess)
    }

    /// Multilinear interpolation; the flag reports clamping to the box.
    pub fn interpolate(&self, x: &[f64]) -> (f64, bool) {
        let st = self.grid.stencil(x);
        let v = (0..st.len).map(|i| st.w[i] * self.values[st.idx[i]]).sum();
        (v, st.clamped)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Max minus min over nodes selected by `keep`.
    pub fn oscillation(&self, keep: impl Fn(usize) -> bool) -> f64 {
        let (lo, hi) = (0..self.values.len())
            .filter(|&i| keep(i))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
                (lo.min(self.values[i]), hi.max(self.values[i]))
            });
        if hi >= lo {
            hi - lo
        } else {
            0.0
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: ScalarField = serde_json::from_str(text)?;
        let grid = Grid::new(raw.grid.axes)?;
        let mut f = ScalarField::new(grid, raw.values)?;
        f.anchor = raw.anchor;
        Ok(f)
    }

    /// CSV with columns `x[,y],<value_name>`.
    pub fn write_csv<W: Write>(&self, out: &mut W, value_name: &str) -> Result<()> {
        crate::io::write_version(out, value_name)?;
        writeln!(out, "{},{value_name}", self.grid.csv_header())?;
        for (node, v) in self.values.iter().enumerate() {
            self.grid.write_coords(node, out)?;
            writeln!(out, "{v}")?;
        }
        Ok(())
    }
}

/// Fixed-width vectors per node, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: Grid,
    pub width: usize,
    pub data: Vec<f64>,
}

impl VectorField {
    pub fn zeros(grid: Grid, width: usize) -> Self {
        let n = grid.len() * width;
        VectorField {
            grid,
            width,
            data: vec![0.0; n],
        }
    }

    pub fn at(&self, node: usize) -> &[f64] {
        &self.data[node * self.width..(node + 1) * self.width]
    }

    pub fn at_mut(&mut self, node: usize) -> &mut [f64] {
        &mut self.data[node * self.width..(node + 1) * self.width]
    }

    /// Multilinear interpolation into `out`; returns true when `x` was clamped.
    #[inline]
    pub fn interpolate_into(&self, x: &[f64], out: &mut [f64]) -> bool {
        let st = self.grid.stencil(x);
        out.fill(0.0);
        for i in 0..st.len {
            let w = st.w[i];
            let base = st.idx[i] * self.width;
            for (c, o) in out.iter_mut().enumerate() {
                *o += w * self.data[base + c];
            }
        }
        st.clamped
    }

    pub fn component(&self, c: usize) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.data.iter().skip(c).step_by(self.width).copied().collect(),
            anchor: None,
        }
    }
}

/// Backward-in-time solution `vbar(t, x)` on `t in {0, dt, ..., T}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueSurface {
    pub grid: Grid,
    pub times: Vec<f64>,
    /// `values[k]` holds the slice at `times[k]`.
    pub values: Vec<Vec<f64>>,
}

impl ValueSurface {
    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn slice(&self, k: usize) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values[k].clone(),
            anchor: None,
        }
    }

    /// Index of the last time slice with `times[k] <= t`.
    pub fn slice_index(&self, t: f64) -> usize {
        match self.times.iter().rposition(|s| *s <= t + 1e-12) {
            Some(k) => k,
            None => 0,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// CSV with columns `t,x[,y],value`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        crate::io::write_version(out, "value-surface")?;
        writeln!(out, "t,{},value", self.grid.csv_header())?;
        for (t, slice) in self.times.iter().zip(&self.values) {
            for (node, v) in slice.iter().enumerate() {
                write!(out, "{t},")?;
                self.grid.write_coords(node, out)?;
                writeln!(out, "{v}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(Grid::cube(1, 1.0, 15).is_err());
        assert!(Grid::cube(3, 1.0, 20).is_err());
        assert!(Grid::new(vec![Axis { lo: 1.0, hi: 1.0, nodes: 20 }]).is_err());
        let g = Grid::cube(2, 1.0, 21).unwrap();
        assert_eq!(g.len(), 441);
        assert_eq!(g.coord(g.flat_index([20, 0])), vec![1.0, -1.0]);
    }

    #[test]
    fn quadratic_gradient_and_hessian_exact() {
        let g = Grid::cube(2, 2.0, 17).unwrap();
        let f = ScalarField::from_fn(g.clone(), |x| 1.5 * x[0] * x[0] - x[0] * x[1] + 0.25 * x[1] * x[1]);
        for node in 0..g.len() {
            let x = g.coord(node);
            let grad = f.gradient(node);
            assert!((grad[0] - (3.0 * x[0] - x[1])).abs() < 1e-12);
            assert!((grad[1] - (-x[0] + 0.5 * x[1])).abs() < 1e-12);
            if let Some(h) = f.hessian(node) {
                assert!((h[0] - 3.0).abs() < 1e-10 && (h[1] + 1.0).abs() < 1e-10);
                assert!((h[3] - 0.5).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn interpolation_is_exact_for_bilinear_and_clamps() {
        let g = Grid::cube(2, 1.0, 16).unwrap();
        let f = ScalarField::from_fn(g, |x| 2.0 + x[0] - 3.0 * x[1] + 0.5 * x[0] * x[1]);
        let (v, c) = f.interpolate(&[0.123, -0.77]);
        assert!(!c);
        assert!((v - (2.0 + 0.123 + 2.31 - 0.5 * 0.123 * 0.77)).abs() < 1e-12);
        let (_, c) = f.interpolate(&[3.0, 0.0]);
        assert!(c);
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let g = Grid::new(vec![Axis { lo: -1.0, hi: 3.0, nodes: 41 }]).unwrap();
        let w = g.quadrature_weights();
        let s: f64 = (0..g.len()).map(|i| w[i] * (1.0 + g.coord(i)[0])).sum();
        assert!((s - 8.0).abs() < 1e-12);
    }

    #[test]
    fn json_roundtrip_and_csv() {
        let g = Grid::cube(1, 1.0, 16).unwrap();
        let mut f = ScalarField::from_fn(g, |x| x[0] * x[0]);
        f.normalize_at(&[0.2]);
        let back = ScalarField::from_json(&f.to_json().unwrap()).unwrap();
        assert_eq!(back, f);
        let mut buf = Vec::new();
        f.write_csv(&mut buf, "w").unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# downside w v1\nx,w\n-1,"));
        assert_eq!(text.lines().count(), 18);
        let bad = r#"{"grid":{"axes":[{"lo":0,"hi":1,"nodes":3}]},"values":[0,0,0]}"#;
        assert!(ScalarField::from_json(bad).is_err());
    }
}
