//! Dense complex matrices and the small combinatorial kit shared by every module.
//!
//! Matrices are stored row-major. Decompositions (Schur, LU, SVD) are delegated to
//! nalgebra; everything else is done in place here.

use std::ops::{Index, IndexMut};

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Result, SovError};

pub type C64 = Complex64;

/// Default dense dimension cap (3^8).
pub const DENSE_CAP: usize = 6561;

/// Default relative threshold for rank and zero decisions.
pub const TAU: f64 = 1e-9;

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub fn cr(re: f64) -> C64 {
    C64::new(re, 0.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix { rows, cols, data: vec![C64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        Self::scalar(n, cr(1.0))
    }

    pub fn scalar(n: usize, s: C64) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = s;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CMatrix { rows, cols, data }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<C64>) -> Self {
        assert_eq!(rows * cols, data.len(), "entry count mismatch");
        CMatrix { rows, cols, data }
    }

    /// Builds a matrix whose rows are the given vectors.
    pub fn from_rows(rows: &[Vec<C64>]) -> Self {
        let n = rows.len();
        let m = if n == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(n * m);
        for r in rows {
            assert_eq!(r.len(), m);
            data.extend_from_slice(r);
        }
        CMatrix { rows: n, cols: m, data }
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(cols: &[Vec<C64>]) -> Self {
        let m = cols.len();
        let n = if m == 0 { 0 } else { cols[0].len() };
        Self::from_fn(n, m, |i, j| cols[j][i])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> Vec<C64> {
        self.data[i * self.cols..(i + 1) * self.cols].to_vec()
    }

    pub fn col(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }

    pub fn matmul(&self, other: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![C64::new(0.0, 0.0); n * m];
        let body = |(i, row): (usize, &mut [C64])| {
            let a = &self.data[i * k..(i + 1) * k];
            for (l, &al) in a.iter().enumerate() {
                if al.re == 0.0 && al.im == 0.0 {
                    continue;
                }
                let b = &other.data[l * m..(l + 1) * m];
                for (o, &bv) in row.iter_mut().zip(b) {
                    *o += al * bv;
                }
            }
        };
        if n * k * m > 1 << 18 {
            out.par_chunks_mut(m.max(1)).enumerate().for_each(body);
        } else {
            out.chunks_mut(m.max(1)).enumerate().for_each(body);
        }
        CMatrix { rows: n, cols: m, data: out }
    }

    pub fn matvec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| {
                let r = &self.data[i * self.cols..(i + 1) * self.cols];
                r.iter().zip(v).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    /// Row vector times matrix.
    pub fn vecmat(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.rows, v.len());
        let mut out = vec![C64::new(0.0, 0.0); self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi.re == 0.0 && vi.im == 0.0 {
                continue;
            }
            let r = &self.data[i * self.cols..(i + 1) * self.cols];
            for (o, &a) in out.iter_mut().zip(r) {
                *o += vi * a;
            }
        }
        out
    }

    pub fn add(&self, other: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        CMatrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        CMatrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, s: C64) -> CMatrix {
        CMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|a| a * s).collect() }
    }

    /// self += s * other
    pub fn axpy(&mut self, s: C64, other: &CMatrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn transpose(&self) -> CMatrix {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn adjoint(&self) -> CMatrix {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn norm_fro(&self) -> f64 {
        self.data.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, a| m.max(a.norm()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|a| a.re.is_finite() && a.im.is_finite())
    }

    /// Largest deviation from a multiple of the identity, relative to the largest entry.
    pub fn off_scalar_residual(&self) -> f64 {
        assert!(self.is_square());
        let n = self.rows;
        let s = self.trace() / n as f64;
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { s } else { C64::new(0.0, 0.0) };
                worst = worst.max((self[(i, j)] - target).norm());
            }
        }
        worst / scale
    }

    pub fn to_na(&self) -> DMatrix<C64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_na(m: &DMatrix<C64>) -> CMatrix {
        CMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }

    pub fn inverse(&self) -> Result<CMatrix> {
        assert!(self.is_square());
        let lu = self.to_na().lu();
        match lu.try_inverse() {
            Some(inv) => {
                let out = CMatrix::from_na(&inv);
                if out.is_finite() {
                    Ok(out)
                } else {
                    Err(SovError::SingularBasis { ratio: 0.0 })
                }
            }
            None => Err(SovError::SingularBasis { ratio: 0.0 }),
        }
    }

    /// Inverse after scaling rows, then columns, to unit max norm.
    pub fn inverse_equilibrated(&self) -> Result<CMatrix> {
        let n = self.rows();
        let rs: Vec<f64> = (0..n).map(|i| (0..n).map(|j| self[(i, j)].norm()).fold(0.0, f64::max)).collect();
        if rs.contains(&0.0) {
            return Err(SovError::SingularBasis { ratio: 0.0 });
        }
        let a = CMatrix::from_fn(n, n, |i, j| self[(i, j)] / rs[i]);
        let cs: Vec<f64> = (0..n).map(|j| (0..n).map(|i| a[(i, j)].norm()).fold(0.0, f64::max)).collect();
        if cs.contains(&0.0) {
            return Err(SovError::SingularBasis { ratio: 0.0 });
        }
        let a = CMatrix::from_fn(n, n, |i, j| a[(i, j)] / cs[j]);
        let inv = a.inverse()?;
        Ok(CMatrix::from_fn(n, n, |i, j| inv[(i, j)] / (cs[i] * rs[j])))
    }

    /// Solves self * X = b.
    pub fn solve(&self, b: &CMatrix) -> Result<CMatrix> {
        assert!(self.is_square());
        let lu = self.to_na().lu();
        match lu.solve(&b.to_na()) {
            Some(x) => Ok(CMatrix::from_na(&x)),
            None => Err(SovError::SingularBasis { ratio: 0.0 }),
        }
    }

    pub fn determinant(&self) -> C64 {
        self.to_na().determinant()
    }

    /// Singular values in descending order.
    pub fn singular_values(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.to_na().singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        s
    }

    /// sigma_min / sigma_max.
    pub fn condition_ratio(&self) -> f64 {
        let s = self.singular_values();
        match (s.first(), s.last()) {
            (Some(&hi), Some(&lo)) if hi > 0.0 => lo / hi,
            _ => 0.0,
        }
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Kronecker product with the default cap.
pub fn kron(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    kron_capped(a, b, DENSE_CAP)
}

pub fn kron_capped(a: &CMatrix, b: &CMatrix, cap: usize) -> Result<CMatrix> {
    let rows = a.rows * b.rows;
    let cols = a.cols * b.cols;
    if rows > cap || cols > cap {
        return Err(SovError::SizeCap { dim: rows.max(cols), cap });
    }
    let mut out = CMatrix::zeros(rows, cols);
    for i in 0..a.rows {
        for j in 0..a.cols {
            let aij = a[(i, j)];
            if aij.re == 0.0 && aij.im == 0.0 {
                continue;
            }
            for k in 0..b.rows {
                let dst = (i * b.rows + k) * cols + j * b.cols;
                let src = k * b.cols;
                for l in 0..b.cols {
                    out.data[dst + l] = aij * b.data[src + l];
                }
            }
        }
    }
    Ok(out)
}

/// Bilinear pairing of a co-vector with a vector (no conjugation).
pub fn pair(u: &[C64], v: &[C64]) -> C64 {
    assert_eq!(u.len(), v.len());
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn vec_norm(v: &[C64]) -> f64 {
    v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
}

pub fn vec_max_abs(v: &[C64]) -> f64 {
    v.iter().fold(0.0, |m, a| m.max(a.norm()))
}

/// max|a-b| / max(max|a|, max|b|).
pub fn rel_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    rel_diff_slices(a.data(), b.data())
}

pub fn rel_diff_slices(a: &[C64], b: &[C64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = vec_max_abs(a).max(vec_max_abs(b));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).norm()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// |a-b| / max(|a|, |b|), zero when both vanish.
pub fn rel_err(a: C64, b: C64) -> f64 {
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).norm() / scale
    }
}

/// All permutations of 0..m with their signs.
pub fn permutations(m: usize) -> Vec<(Vec<usize>, i32)> {
    fn rec(prefix: &mut Vec<usize>, rest: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..rest.len() {
            let x = rest.remove(i);
            prefix.push(x);
            rec(prefix, rest, out);
            prefix.pop();
            rest.insert(i, x);
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut (0..m).collect(), &mut out);
    out.into_iter()
        .map(|p| {
            let mut inv = 0;
            for i in 0..m {
                for j in i + 1..m {
                    if p[i] > p[j] {
                        inv += 1;
                    }
                }
            }
            let sign = if inv % 2 == 0 { 1 } else { -1 };
            (p, sign)
        })
        .collect()
}

/// (1/m!) sum_pi sign(pi) P_pi on (C^d)^{(x)m}; the first factor is the most significant digit.
pub fn antisymmetrizer(d: usize, m: usize) -> CMatrix {
    assert!((1..=3).contains(&m) && (d == 2 || d == 3));
    let dim = d.pow(m as u32);
    let perms = permutations(m);
    let fact: f64 = (1..=m).map(|x| x as f64).product();
    let mut p = CMatrix::zeros(dim, dim);
    for col in 0..dim {
        let digits = to_digits(col, d, m);
        for (pi, sign) in &perms {
            let permuted: Vec<usize> = (0..m).map(|k| digits[pi[k]]).collect();
            let row = from_digits(&permuted, d);
            p[(row, col)] += cr(*sign as f64 / fact);
        }
    }
    p
}

/// Most-significant-first digits of `x` in base `d`, `m` digits.
fn to_digits(mut x: usize, d: usize, m: usize) -> Vec<usize> {
    let mut out = vec![0; m];
    for k in (0..m).rev() {
        out[k] = x % d;
        x /= d;
    }
    out
}

fn from_digits(digits: &[usize], d: usize) -> usize {
    digits.iter().fold(0, |acc, &x| acc * d + x)
}

/// prod_{i<j} (x_j - x_i)
pub fn vandermonde(xs: &[C64]) -> C64 {
    let mut v = cr(1.0);
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            v *= xs[j] - xs[i];
        }
    }
    v
}

#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<C64>,
    /// Right eigenvectors as columns, unit 2-norm.
    pub right_eigvecs: CMatrix,
    /// Left eigenvectors as rows, scaled so that row_i . col_i = 1.
    pub left_eigvecs: CMatrix,
    /// max_i |A v_i - l_i v_i| / |A|
    pub residual_norm: f64,
}

impl EigenDecomposition {
    pub fn right(&self, i: usize) -> Vec<C64> {
        self.right_eigvecs.col(i)
    }

    pub fn left(&self, i: usize) -> Vec<C64> {
        self.left_eigvecs.row(i)
    }

    /// Smallest pairwise eigenvalue distance relative to the largest modulus.
    pub fn relative_gap(&self) -> f64 {
        let scale = self.eigenvalues.iter().fold(0.0f64, |m, l| m.max(l.norm())).max(f64::MIN_POSITIVE);
        let mut gap = f64::INFINITY;
        for i in 0..self.eigenvalues.len() {
            for j in i + 1..self.eigenvalues.len() {
                gap = gap.min((self.eigenvalues[i] - self.eigenvalues[j]).norm());
            }
        }
        gap / scale
    }
}

/// Canonical ordering key: real part, then imaginary part.
pub fn canonical_cmp(a: &C64, b: &C64) -> std::cmp::Ordering {
    a.re.partial_cmp(&b.re).unwrap().then(a.im.partial_cmp(&b.im).unwrap())
}

/// Eigendecomposition of a general complex matrix via complex Schur form and
/// triangular back-substitution for both eigenvector families.
pub fn eig_general(a: &CMatrix) -> Result<EigenDecomposition> {
    assert!(a.is_square());
    let n = a.rows();
    if n > DENSE_CAP {
        return Err(SovError::SizeCap { dim: n, cap: DENSE_CAP });
    }
    if n == 0 {
        return Ok(EigenDecomposition {
            eigenvalues: vec![],
            right_eigvecs: CMatrix::zeros(0, 0),
            left_eigvecs: CMatrix::zeros(0, 0),
            residual_norm: 0.0,
        });
    }
    let schur = Schur::try_new(a.to_na(), f64::EPSILON, 100 * n.max(10))
        .ok_or(SovError::EigFailure { residual: f64::INFINITY })?;
    let (q, t) = schur.unpack();
    let tnorm = t.iter().fold(0.0f64, |m, x| m.max(x.norm())).max(f64::MIN_POSITIVE);
    let smin = f64::EPSILON * tnorm;

    let mut values = Vec::with_capacity(n);
    let mut rights = Vec::with_capacity(n);
    let mut lefts = Vec::with_capacity(n);
    for k in 0..n {
        let lam = t[(k, k)];
        // (T - lam) y = 0 with y_k = 1, y_{>k} = 0
        let mut y = vec![C64::new(0.0, 0.0); n];
        y[k] = cr(1.0);
        for i in (0..k).rev() {
            let mut s = C64::new(0.0, 0.0);
            for j in i + 1..=k {
                s += t[(i, j)] * y[j];
            }
            let mut den = t[(i, i)] - lam;
            if den.norm() < smin {
                den = cr(smin);
            }
            y[i] = -s / den;
        }
        // w (T - lam) = 0 with w_k = 1, w_{<k} = 0
        let mut w = vec![C64::new(0.0, 0.0); n];
        w[k] = cr(1.0);
        for i in k + 1..n {
            let mut s = C64::new(0.0, 0.0);
            for j in k..i {
                s += w[j] * t[(j, i)];
            }
            let mut den = t[(i, i)] - lam;
            if den.norm() < smin {
                den = cr(smin);
            }
            w[i] = -s / den;
        }
        // v = Q y, u = w Q^H
        let v: Vec<C64> = (0..n).map(|i| (0..n).map(|j| q[(i, j)] * y[j]).sum()).collect();
        let u: Vec<C64> = (0..n).map(|i| (0..n).map(|j| w[j] * q[(i, j)].conj()).sum()).collect();
        let vn = vec_norm(&v);
        let v: Vec<C64> = v.iter().map(|x| x / vn).collect();
        let uv = pair(&u, &v);
        let u: Vec<C64> = u.iter().map(|x| x / uv).collect();
        values.push(lam);
        rights.push(v);
        lefts.push(u);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| canonical_cmp(&values[i], &values[j]));
    let eigenvalues: Vec<C64> = order.iter().map(|&i| values[i]).collect();
    let right_eigvecs = CMatrix::from_columns(&order.iter().map(|&i| rights[i].clone()).collect::<Vec<_>>());
    let left_eigvecs = CMatrix::from_rows(&order.iter().map(|&i| lefts[i].clone()).collect::<Vec<_>>());

    let anorm = a.norm_fro().max(f64::MIN_POSITIVE);
    let mut residual: f64 = 0.0;
    for (i, lam) in eigenvalues.iter().enumerate() {
        let v = right_eigvecs.col(i);
        let av = a.matvec(&v);
        let r: f64 = av.iter().zip(&v).map(|(x, y)| (x - lam * y).norm_sqr()).sum::<f64>().sqrt();
        residual = residual.max(r / (anorm * vec_norm(&v)));
    }
    if !residual.is_finite() || !right_eigvecs.is_finite() || !left_eigvecs.is_finite() {
        return Err(SovError::EigFailure { residual });
    }
    Ok(EigenDecomposition { eigenvalues, right_eigvecs, left_eigvecs, residual_norm: residual })
}
