//! Finite-difference stencils for `eps v - (1/2) tr[a D^2 v] - b . D v` on the
//! interior nodes of a [`Grid`], with boundary values eliminated by quadratic
//! extrapolation (zero third normal derivative).
//!
//! Diffusion uses central differences. The drift uses central differences where
//! `|b_k| h_k <= a_kk` (the stencil stays monotone) and first-order upwinding
//! elsewhere.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::{bicgstab, BandMatrix, CsrMatrix};

/// Up to nine `(node, weight)` pairs.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Combo {
    pub items: [(usize, f64); 9],
    pub len: usize,
}

impl Combo {
    fn single(node: usize) -> Self {
        let mut items = [(0usize, 0.0); 9];
        items[0] = (node, 1.0);
        Combo { items, len: 1 }
    }

    fn push(&mut self, node: usize, w: f64) {
        if let Some(slot) = self.items[..self.len].iter_mut().find(|(n, _)| *n == node) {
            slot.1 += w;
        } else {
            self.items[self.len] = (node, w);
            self.len += 1;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &(usize, f64)> {
        self.items[..self.len].iter()
    }
}

/// Boundary node expressed through interior nodes by quadratic extrapolation
/// along each axis on which it is a boundary node.
pub(crate) fn expand_node(grid: &Grid, node: usize) -> Combo {
    let mut combo = Combo::single(node);
    for k in 0..grid.dim() {
        let last = grid.axis(k).nodes - 1;
        let s = grid.stride(k) as isize;
        let mut next = Combo {
            items: [(0, 0.0); 9],
            len: 0,
        };
        for &(nd, w) in combo.iter() {
            let mi = grid.multi_index(nd);
            let dir = if mi[k] == 0 {
                s
            } else if mi[k] == last {
                -s
            } else {
                next.push(nd, w);
                continue;
            };
            for (step, c) in [(1isize, 3.0), (2, -3.0), (3, 1.0)] {
                next.push((nd as isize + step * dir) as usize, w * c);
            }
        }
        combo = next;
    }
    combo
}

/// Fills boundary values of a full-node vector from its interior values.
pub(crate) fn fill_boundary(grid: &Grid, v: &mut [f64]) {
    for node in 0..grid.len() {
        if grid.is_boundary(node) {
            let c = expand_node(grid, node);
            v[node] = c.iter().map(|&(nd, w)| w * v[nd]).sum();
        }
    }
}

/// Coefficients of `(1/2) tr[a D^2 v] + b . D v` at an interior node, as a
/// combination of full-grid nodes. `a` is `dim x dim` row-major.
pub(crate) fn generator_stencil(grid: &Grid, node: usize, a: &[f64], b: &[f64]) -> Combo {
    let d = grid.dim();
    let mut c = Combo {
        items: [(0, 0.0); 9],
        len: 0,
    };
    c.push(node, 0.0);
    for k in 0..d {
        let h = grid.spacing(k);
        let s = grid.stride(k);
        let akk = a[k * d + k];
        let diff = 0.5 * akk / (h * h);
        let (mut lo, mut hi) = (diff, diff);
        let bk = b[k];
        if bk.abs() * h <= akk {
            hi += 0.5 * bk / h;
            lo -= 0.5 * bk / h;
        } else if bk > 0.0 {
            hi += bk / h;
        } else {
            lo -= bk / h;
        }
        c.push(node + s, hi);
        c.push(node - s, lo);
        c.push(node, -(hi + lo));
    }
    if d == 2 {
        let axy = 0.5 * (a[1] + a[2]);
        if axy != 0.0 {
            let (sx, sy) = (grid.stride(0), grid.stride(1));
            let w = axy / (4.0 * grid.spacing(0) * grid.spacing(1));
            c.push(node + sx + sy, w);
            c.push(node - sx - sy, w);
            c.push(node + sx - sy, -w);
            c.push(node - sx + sy, -w);
        }
    }
    c
}

/// Map between interior nodes and unknown indices.
#[derive(Debug, Clone)]
pub(crate) struct InteriorMap {
    pub nodes: Vec<usize>,
    pub index: Vec<usize>,
}

impl InteriorMap {
    pub fn new(grid: &Grid) -> Self {
        let mut nodes = Vec::new();
        let mut index = vec![usize::MAX; grid.len()];
        for node in 0..grid.len() {
            if !grid.is_boundary(node) {
                index[node] = nodes.len();
                nodes.push(node);
            }
        }
        InteriorMap { nodes, index }
    }
}

/// Assembled interior system.
pub(crate) enum System {
    Band(BandMatrix),
    Sparse(CsrMatrix),
}

/// Largest band LU workload (unknowns x bandwidth^2) before switching to BiCGSTAB.
const BAND_WORK_LIMIT: f64 = 4e8;

pub(crate) struct Assembler<'a> {
    grid: &'a Grid,
    map: InteriorMap,
    expansions: Vec<Option<Combo>>,
}

impl<'a> Assembler<'a> {
    pub fn new(grid: &'a Grid) -> Self {
        let expansions = (0..grid.len())
            .map(|n| grid.is_boundary(n).then(|| expand_node(grid, n)))
            .collect();
        Assembler {
            grid,
            map: InteriorMap::new(grid),
            expansions,
        }
    }

    pub fn map(&self) -> &InteriorMap {
        &self.map
    }

    fn emit(&self, row: usize, node: usize, w: f64, out: &mut Vec<(usize, usize, f64)>) {
        match &self.expansions[node] {
            Some(combo) => {
                for &(nd, cw) in combo.iter() {
                    out.push((row, self.map.index[nd], w * cw));
                }
            }
            None => out.push((row, self.map.index[node], w)),
        }
    }

    /// Triplets of `eps v - (1/2) tr[a D^2 v] - b . D v`; `a`, `b` per full node.
    /// Rows listed in `pinned` are replaced by `v = 0` at that node.
    pub fn triplets(
        &self,
        diffusion: &[f64],
        drift: &[f64],
        eps: f64,
        pinned: Option<usize>,
    ) -> Vec<(usize, usize, f64)> {
        let d = self.grid.dim();
        let mut out = Vec::with_capacity(self.map.nodes.len() * 15);
        for (row, &node) in self.map.nodes.iter().enumerate() {
            if pinned == Some(node) {
                out.push((row, row, 1.0));
                continue;
            }
            let st = generator_stencil(
                self.grid,
                node,
                &diffusion[node * d * d..(node + 1) * d * d],
                &drift[node * d..(node + 1) * d],
            );
            out.push((row, row, eps));
            for &(nd, w) in st.iter() {
                if w != 0.0 {
                    self.emit(row, nd, -w, &mut out);
                }
            }
        }
        out
    }

    pub fn build(&self, triplets: Vec<(usize, usize, f64)>) -> System {
        let n = self.map.nodes.len();
        let (mut kl, mut ku) = (0usize, 0usize);
        for &(i, j, _) in &triplets {
            if j > i {
                ku = ku.max(j - i);
            } else {
                kl = kl.max(i - j);
            }
        }
        let bw = (kl + ku + 1) as f64;
        if self.grid.dim() == 1 || (n as f64) * bw * bw <= BAND_WORK_LIMIT {
            let mut band = BandMatrix::zeros(n, kl, ku);
            for (i, j, v) in triplets {
                band.add(i, j, v);
            }
            System::Band(band)
        } else {
            System::Sparse(CsrMatrix::from_triplets(n, triplets))
        }
    }

    /// Solves the interior system and returns a full-node vector with
    /// extrapolated boundary values. `guess` seeds the iterative solver.
    pub fn solve(&self, system: System, rhs_full: &[f64], guess: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut rhs: Vec<f64> = self.map.nodes.iter().map(|&n| rhs_full[n]).collect();
        match system {
            System::Band(band) => {
                let original = band.clone();
                let lu = band.lu().map_err(|e| match e {
                    Error::Singular { pivot } => Error::Degenerate {
                        x: self.grid.coord(self.map.nodes[pivot.min(self.map.nodes.len() - 1)]),
                        detail: "singular finite-difference system".into(),
                    },
                    other => other,
                })?;
                let b = rhs.clone();
                lu.solve(&mut rhs);
                // one step of iterative refinement against pivot growth
                let mut r = vec![0.0; b.len()];
                original.matvec(&rhs, &mut r);
                for (ri, bi) in r.iter_mut().zip(&b) {
                    *ri = bi - *ri;
                }
                lu.solve(&mut r);
                for (x, d) in rhs.iter_mut().zip(&r) {
                    *x += d;
                }
            }
            System::Sparse(csr) => {
                let mut x: Vec<f64> = match guess {
                    Some(g) => self.map.nodes.iter().map(|&n| g[n]).collect(),
                    None => vec![0.0; rhs.len()],
                };
                bicgstab(&csr, &rhs, &mut x, 1e-13, 4000)?;
                rhs = x;
            }
        }
        let mut full = vec![0.0; self.grid.len()];
        for (k, &node) in self.map.nodes.iter().enumerate() {
            full[node] = rhs[k];
        }
        fill_boundary(self.grid, &mut full);
        Ok(full)
    }
}

/// Applies `(1/2) tr[a D^2 v] + b . D v` at an interior node of a full vector.
pub(crate) fn apply_generator(grid: &Grid, node: usize, a: &[f64], b: &[f64], v: &[f64]) -> f64 {
    generator_stencil(grid, node, a, b)
        .iter()
        .map(|&(nd, w)| w * v[nd])
        .sum()
}

/// Central-difference gradient at an interior node of a full vector.
#[inline]
pub(crate) fn central_gradient(grid: &Grid, node: usize, v: &[f64], out: &mut [f64]) {
    for (k, o) in out.iter_mut().enumerate().take(grid.dim()) {
        let s = grid.stride(k);
        *o = (v[node + s] - v[node - s]) / (2.0 * grid.spacing(k));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extrapolation_reproduces_quadratics() {
        for dim in [1, 2] {
            let g = Grid::cube(dim, 1.5, 17).unwrap();
            let f = |x: &[f64]| {
                if dim == 1 {
                    1.0 - 2.0 * x[0] + 0.7 * x[0] * x[0]
                } else {
                    1.0 - 2.0 * x[0] + x[1] + 0.7 * x[0] * x[0] - 0.3 * x[0] * x[1] + 0.2 * x[1] * x[1]
                }
            };
            let mut v: Vec<f64> = (0..g.len()).map(|n| f(&g.coord(n))).collect();
            let exact = v.clone();
            for n in 0..g.len() {
                if g.is_boundary(n) {
                    v[n] = 1e3;
                }
            }
            fill_boundary(&g, &mut v);
            for n in 0..g.len() {
                assert!((v[n] - exact[n]).abs() < 1e-10, "dim {dim} node {n}");
            }
        }
    }

    #[test]
    fn ou_quadratic_solves_exactly() {
        // eps v - v''/2 + x v' = x^2 has the quadratic solution v = x^2/(eps+2) + 1/(eps (eps+2))
        let g = Grid::cube(1, 4.0, 41).unwrap();
        let eps = 0.3;
        let asm = Assembler::new(&g);
        let diff = vec![1.0; g.len()];
        let drift: Vec<f64> = (0..g.len()).map(|n| -g.coord(n)[0]).collect();
        let sys = asm.build(asm.triplets(&diff, &drift, eps, None));
        let rhs: Vec<f64> = (0..g.len()).map(|n| g.coord(n)[0].powi(2)).collect();
        let v = asm.solve(sys, &rhs, None).unwrap();
        for n in 0..g.len() {
            let x = g.coord(n)[0];
            let exact = x * x / (eps + 2.0) + 1.0 / (eps * (eps + 2.0));
            assert!((v[n] - exact).abs() < 1e-9, "{} vs {}", v[n], exact);
        }
    }

    #[test]
    fn sparse_and_band_paths_agree() {
        let g = Grid::cube(2, 2.0, 20).unwrap();
        let asm = Assembler::new(&g);
        let mut diff = Vec::new();
        let mut drift = Vec::new();
        for n in 0..g.len() {
            let x = g.coord(n);
            diff.extend_from_slice(&[1.0, 0.3, 0.3, 0.8]);
            drift.extend_from_slice(&[-x[0] + 0.2 * x[1], -0.5 * x[1]]);
        }
        let rhs: Vec<f64> = (0..g.len()).map(|n| 1.0 + g.coord(n)[0].powi(2)).collect();
        let t = asm.triplets(&diff, &drift, 0.5, None);
        let band = asm.solve(asm.build(t.clone()), &rhs, None).unwrap();
        let n = asm.map().nodes.len();
        let sparse = asm
            .solve(System::Sparse(CsrMatrix::from_triplets(n, t)), &rhs, None)
            .unwrap();
        for i in 0..g.len() {
            assert!((band[i] - sparse[i]).abs() < 1e-8);
        }
    }
}
