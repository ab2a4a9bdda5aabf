//! Sparse linear algebra for the finite-difference operators: banded LU with
//! partial pivoting (1-D and small 2-D systems) and ILU(0)-preconditioned
//! BiCGSTAB for large 2-D systems.

use crate::error::{Error, Result};

/// Square band matrix with `kl` sub- and `ku` super-diagonals. Storage reserves
/// `kl` extra super-diagonals for fill-in from row interchanges.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku + self.kl);
        i * self.width + (j + self.kl - i)
    }

    /// Adds `v` at `(i, j)`; `j` must lie inside the declared band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i}, {j}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.ku + self.kl {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    pub fn clear_row(&mut self, i: usize) {
        let w = self.width;
        self.data[i * w..(i + 1) * w].fill(0.0);
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            *yi = (lo..=hi).map(|j| self.get(i, j) * x[j]).sum();
        }
    }

    pub fn transpose(&self) -> BandMatrix {
        let mut t = BandMatrix::zeros(self.n, self.ku, self.kl);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            for j in lo..=hi {
                let v = self.get(i, j);
                if v != 0.0 {
                    t.add(j, i, v);
                }
            }
        }
        t
    }

    fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// LU factorization; fails on a (numerically) zero pivot.
    pub fn lu(self) -> Result<BandLu> {
        let lu = self.factor();
        match lu.zero_pivots.first() {
            Some(&pivot) => Err(Error::Singular { pivot }),
            None => Ok(lu),
        }
    }

    /// LU factorization that records zero pivots instead of failing.
    pub fn lu_singular(self) -> BandLu {
        self.factor()
    }

    fn factor(mut self) -> BandLu {
        let n = self.n;
        let kl = self.kl;
        let umax = self.ku + self.kl;
        let tol = 1e-12 * self.max_abs().max(f64::MIN_POSITIVE);
        let mut piv = vec![0usize; n];
        let mut mult = vec![0.0; n * kl.max(1)];
        let mut zero_pivots = Vec::new();
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last_row {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            piv[k] = p;
            let last_col = (k + umax).min(n - 1);
            if best <= tol {
                piv[k] = k;
                zero_pivots.push(k);
                for i in k..=last_row {
                    let s = self.slot(i, k);
                    self.data[s] = 0.0;
                }
                continue;
            }
            if p != k {
                for j in k..=last_col {
                    let (a, b) = (self.slot(k, j), self.slot(p, j));
                    self.data.swap(a, b);
                }
            }
            let pivot = self.get(k, k);
            for i in k + 1..=last_row {
                let si = self.slot(i, k);
                let m = self.data[si] / pivot;
                self.data[si] = 0.0;
                mult[k * kl + (i - k - 1)] = m;
                if m == 0.0 {
                    continue;
                }
                for j in k + 1..=last_col {
                    let sk = self.slot(k, j);
                    let sij = self.slot(i, j);
                    self.data[sij] -= m * self.data[sk];
                }
            }
        }
        BandLu {
            band: self,
            piv,
            mult,
            zero_pivots,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    band: BandMatrix,
    piv: Vec<usize>,
    mult: Vec<f64>,
    zero_pivots: Vec<usize>,
}

impl BandLu {
    pub fn zero_pivots(&self) -> &[usize] {
        &self.zero_pivots
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.band.n;
        let kl = self.band.kl;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + kl).min(n - 1) {
                    b[i] -= self.mult[k * kl + (i - k - 1)] * bk;
                }
            }
        }
        self.back_substitute(b, n);
    }

    fn back_substitute(&self, x: &mut [f64], upto: usize) {
        let umax = self.band.ku + self.band.kl;
        let n = self.band.n;
        for k in (0..upto).rev() {
            let mut acc = x[k];
            for j in k + 1..=(k + umax).min(n - 1) {
                acc -= self.band.get(k, j) * x[j];
            }
            x[k] = acc / self.band.get(k, k);
        }
    }

    /// Spanning vector of the kernel when exactly one pivot vanished.
    pub fn null_vector(&self) -> Option<Vec<f64>> {
        if self.zero_pivots.len() != 1 {
            return None;
        }
        let k0 = self.zero_pivots[0];
        let n = self.band.n;
        let mut x = vec![0.0; n];
        x[k0] = 1.0;
        self.back_substitute(&mut x, k0);
        Some(x)
    }
}

/// Compressed sparse row matrix with sorted column indices per row.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(t.len());
        let mut vals: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in t {
            if last == Some((i, j)) {
                *vals.last_mut().expect("duplicate follows an entry") += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[p] * x[self.cols[p]];
            }
            *yi = acc;
        }
    }

    fn diag_pos(&self, i: usize) -> Option<usize> {
        (self.row_ptr[i]..self.row_ptr[i + 1]).find(|&p| self.cols[p] == i)
    }

    /// Incomplete LU with the sparsity pattern of `self`.
    pub fn ilu0(&self) -> Result<Ilu0> {
        let mut lu = self.vals.clone();
        let mut diag = vec![0usize; self.n];
        for (i, d) in diag.iter_mut().enumerate() {
            *d = self.diag_pos(i).ok_or(Error::Singular { pivot: i })?;
        }
        let mut pos = vec![usize::MAX; self.n];
        for i in 0..self.n {
            let (start, end) = (self.row_ptr[i], self.row_ptr[i + 1]);
            for p in start..end {
                pos[self.cols[p]] = p;
            }
            for p in start..end {
                let k = self.cols[p];
                if k >= i {
                    break;
                }
                let pivot = lu[diag[k]];
                if pivot == 0.0 {
                    return Err(Error::Singular { pivot: k });
                }
                let m = lu[p] / pivot;
                lu[p] = m;
                for q in diag[k] + 1..self.row_ptr[k + 1] {
                    let target = pos[self.cols[q]];
                    if target != usize::MAX {
                        lu[target] -= m * lu[q];
                    }
                }
            }
            for p in start..end {
                pos[self.cols[p]] = usize::MAX;
            }
            if lu[diag[i]] == 0.0 {
                return Err(Error::Singular { pivot: i });
            }
        }
        Ok(Ilu0 {
            a: CsrMatrix {
                n: self.n,
                row_ptr: self.row_ptr.clone(),
                cols: self.cols.clone(),
                vals: lu,
            },
            diag,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Ilu0 {
    a: CsrMatrix,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let a = &self.a;
        for i in 0..a.n {
            let mut acc = r[i];
            for p in a.row_ptr[i]..self.diag[i] {
                acc -= a.vals[p] * z[a.cols[p]];
            }
            z[i] = acc;
        }
        for i in (0..a.n).rev() {
            let mut acc = z[i];
            for p in self.diag[i] + 1..a.row_ptr[i + 1] {
                acc -= a.vals[p] * z[a.cols[p]];
            }
            z[i] = acc / a.vals[self.diag[i]];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Right-preconditioned BiCGSTAB; `x` holds the initial guess on entry.
/// Returns the number of iterations used.
pub fn bicgstab(a: &CsrMatrix, b: &[f64], x: &mut [f64], rtol: f64, max_iter: usize) -> Result<usize> {
    let n = a.size();
    let pre = a.ilu0()?;
    let bnorm = norm(b).max(f64::MIN_POSITIVE);
    let mut r = vec![0.0; n];
    a.matvec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    if norm(&r) <= rtol * bnorm {
        return Ok(0);
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() < 1e-300 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        pre.apply(&p, &mut y);
        a.matvec(&y, &mut v);
        alpha = rho / dot(&r_hat, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) <= rtol * bnorm {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok(it);
        }
        pre.apply(&s, &mut z);
        a.matvec(&z, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        let res = norm(&r);
        if res <= rtol * bnorm {
            return Ok(it);
        }
        if omega == 0.0 || !res.is_finite() {
            break;
        }
    }
    let mut res = vec![0.0; n];
    a.matvec(x, &mut res);
    let rn = norm(&res.iter().zip(b).map(|(ax, bi)| bi - ax).collect::<Vec<_>>());
    Err(Error::NonConvergence {
        what: "BiCGSTAB",
        iterations: max_iter,
        residual: rn / bnorm,
        worst: Vec::new(),
    })
}
