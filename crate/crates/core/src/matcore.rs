//! Dense complex linear algebra.
//!
//! Everything here works on small dense matrices (the process matrices of the
//! two-qubit testbed are 16x16, sensing maps at most 256x256), so storage is a
//! plain column-major `Vec<Complex64>`. Column-major order is shared with
//! [`vec`], which keeps the natural operator basis and vectorization aligned.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Dense complex matrix in column-major order.
#[derive(Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self[(i, j)];
                write!(f, "{:>9.4}{:+.4}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row vectors. All rows must have equal length.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|row| row.len() != c) {
            return Err(Error::LengthMismatch {
                len: bad.len(),
                rows: r,
                cols: c,
            });
        }
        let m = Self::from_fn(r, c, |i, j| rows[i][j]);
        m.check_finite()?;
        Ok(m)
    }

    /// Takes ownership of column-major data.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                len: data.len(),
                rows,
                cols,
            });
        }
        let m = Self { rows, cols, data };
        m.check_finite()?;
        Ok(m)
    }

    pub fn diag_real(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = C64::new(v, 0.0);
        }
        m
    }

    /// Outer product `x y†`.
    pub fn outer(x: &[C64], y: &[C64]) -> Self {
        Self::from_fn(x.len(), y.len(), |i, j| x[i] * y[j].conj())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Column-major entries.
    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn column(&self, j: usize) -> &[C64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn column_mut(&mut self, j: usize) -> &mut [C64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite)
        }
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn conj(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn scale(&self, c: C64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * c).collect(),
        }
    }

    pub fn scale_real(&self, c: f64) -> Self {
        self.scale(C64::new(c, 0.0))
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `Tr(self† other)`, the Hilbert-Schmidt inner product.
    pub fn inner(&self, other: &Self) -> C64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// `‖A − A†‖_F`.
    pub fn hermitian_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows;
        let mut s = 0.0;
        for j in 0..n {
            for i in 0..n {
                s += (self[(i, j)] - self[(j, i)].conj()).norm_sqr();
            }
        }
        s.sqrt()
    }

    pub fn is_hermitian(&self, rel_tol: f64) -> bool {
        self.is_square() && self.hermitian_defect() <= rel_tol * self.frobenius_norm().max(1e-300)
    }

    /// `‖U†U − I‖_F`.
    pub fn unitary_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        (&self.adjoint() * self - &Self::identity(self.rows)).frobenius_norm()
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitary_defect() <= tol
    }

    /// `(A + A†)/2`.
    pub fn hermitian_part(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| {
            (self[(i, j)] + self[(j, i)].conj()) * 0.5
        })
    }

    pub fn mat_vec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.cols, "mat_vec dimension mismatch");
        let mut y = vec![ZERO; self.rows];
        for (j, &xj) in x.iter().enumerate() {
            if xj == ZERO {
                continue;
            }
            for (yi, a) in y.iter_mut().zip(self.column(j)) {
                *yi += a * xj;
            }
        }
        y
    }

    /// `x† A x` for square `A`.
    pub fn quadratic_form(&self, x: &[C64]) -> C64 {
        let ax = self.mat_vec(x);
        x.iter().zip(&ax).map(|(a, b)| a.conj() * b).sum()
    }

    fn require_hermitian(&self) -> Result<()> {
        if !self.is_square() {
            return Err(Error::NotSquare(self.rows, self.cols));
        }
        self.check_finite()?;
        let norm = self.frobenius_norm();
        let defect = self.hermitian_defect();
        if defect > 1e-10 * norm {
            return Err(Error::NotHermitian(defect / norm.max(1e-300)));
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i + j * self.rows]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i + j * self.rows]
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, rhs.rows, "matrix product dimension mismatch");
        let mut out = CMatrix::zeros(self.rows, rhs.cols);
        for j in 0..rhs.cols {
            let oc = &mut out.data[j * self.rows..(j + 1) * self.rows];
            for k in 0..self.cols {
                let b = rhs.data[k + j * rhs.rows];
                if b == ZERO {
                    continue;
                }
                for (o, a) in oc.iter_mut().zip(&self.data[k * self.rows..(k + 1) * self.rows]) {
                    *o += a * b;
                }
            }
        }
        out
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.shape(), rhs.shape(), "matrix sum dimension mismatch");
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.shape(), rhs.shape(), "matrix difference dimension mismatch");
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr<CMatrix> for CMatrix {
            type Output = CMatrix;
            fn $m(self, rhs: CMatrix) -> CMatrix {
                (&self).$m(&rhs)
            }
        }
        impl $tr<&CMatrix> for CMatrix {
            type Output = CMatrix;
            fn $m(self, rhs: &CMatrix) -> CMatrix {
                (&self).$m(rhs)
            }
        }
        impl $tr<CMatrix> for &CMatrix {
            type Output = CMatrix;
            fn $m(self, rhs: CMatrix) -> CMatrix {
                self.$m(&rhs)
            }
        }
    };
}

forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

/// Kronecker product `A ⊗ B`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (p, q) = b.shape();
    CMatrix::from_fn(a.rows * p, a.cols * q, |i, j| {
        a[(i / p, j / q)] * b[(i % p, j % q)]
    })
}

/// Stacks the columns of `a` into one vector.
pub fn vec(a: &CMatrix) -> Vec<C64> {
    a.data.clone()
}

/// Inverse of [`vec`].
pub fn unvec(v: &[C64], rows: usize, cols: usize) -> Result<CMatrix> {
    CMatrix::from_col_major(rows, cols, v.to_vec())
}

/// Eigendecomposition of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct HermEig {
    /// Sorted descending.
    pub values: Vec<f64>,
    /// Unitary matrix whose columns are the eigenvectors.
    pub vectors: CMatrix,
}

impl HermEig {
    /// `Q diag(f(λ)) Q†`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> CMatrix {
        let n = self.values.len();
        let q = &self.vectors;
        let mut out = CMatrix::zeros(n, n);
        for (k, &lam) in self.values.iter().enumerate() {
            let w = f(lam);
            if w == 0.0 {
                continue;
            }
            let col = q.column(k);
            for j in 0..n {
                let cj = col[j].conj() * w;
                for i in 0..n {
                    out.data[i + j * n] += col[i] * cj;
                }
            }
        }
        out
    }

    pub fn reconstruct(&self) -> CMatrix {
        self.reconstruct_with(|l| l)
    }
}

/// Eigendecomposition of a Hermitian matrix.
///
/// Householder reduction to a complex tridiagonal form, a diagonal phase
/// change to make it real symmetric, then implicit QL. Eigenvalues come back
/// sorted descending and every eigenvector is phase-normalized so that its
/// first non-negligible component is real and positive.
pub fn hermitian_eig(a: &CMatrix) -> Result<HermEig> {
    a.require_hermitian()?;
    Ok(hermitian_eig_unchecked(a))
}

/// As [`hermitian_eig`] but skips validation; the input is symmetrized.
pub(crate) fn hermitian_eig_unchecked(a: &CMatrix) -> HermEig {
    let n = a.rows;
    if n == 0 {
        return HermEig {
            values: vec![],
            vectors: CMatrix::zeros(0, 0),
        };
    }
    let mut work = a.hermitian_part();
    let (diag, sub, q) = tridiagonalize(&mut work);

    // Phase change D so that D† T D has a real non-negative subdiagonal.
    let mut phases = vec![ONE; n];
    let mut e = vec![0.0; n];
    for k in 0..n - 1 {
        let s = sub[k];
        let r = s.norm();
        e[k] = r;
        phases[k + 1] = if r > 0.0 { phases[k] * (s / r) } else { phases[k] };
    }
    let mut d = diag;
    let mut z = vec![0.0; n * n];
    for i in 0..n {
        z[i + i * n] = 1.0;
    }
    tql2(&mut d, &mut e, &mut z, n);

    // Eigenvectors of A are (Q D) Z.
    let mut qd = q;
    for j in 0..n {
        let ph = phases[j];
        for v in qd.column_mut(j) {
            *v *= ph;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].total_cmp(&d[i]));
    let mut vectors = CMatrix::zeros(n, n);
    for (out_col, &src) in order.iter().enumerate() {
        let col = vectors.column_mut(out_col);
        for k in 0..n {
            let zk = z[k + src * n];
            if zk == 0.0 {
                continue;
            }
            for (c, v) in col.iter_mut().zip(qd.column(k)) {
                *c += v * zk;
            }
        }
        normalize_phase(col);
    }
    HermEig {
        values: order.iter().map(|&i| d[i]).collect(),
        vectors,
    }
}

/// Makes the first component with magnitude above 1e-12 real and positive.
fn normalize_phase(v: &mut [C64]) {
    let peak = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if let Some(lead) = v.iter().copied().find(|z| z.norm() > 1e-12 * peak.max(1e-300)) {
        let rot = lead.conj() / lead.norm();
        for z in v.iter_mut() {
            *z *= rot;
        }
    }
}

/// Reduces a Hermitian matrix (overwritten) to tridiagonal form `A = Q T Q†`.
/// Returns the real diagonal, the complex subdiagonal `T[k+1, k]`, and `Q`.
fn tridiagonalize(a: &mut CMatrix) -> (Vec<f64>, Vec<C64>, CMatrix) {
    let n = a.rows;
    let mut q = CMatrix::identity(n);
    let mut sub = vec![ZERO; n.saturating_sub(1)];
    let mut v = vec![ZERO; n];
    let mut p = vec![ZERO; n];
    let mut x_buf = vec![ZERO; n];
    for k in 0..n.saturating_sub(1) {
        let m = n - k - 1;
        let x: Vec<C64> = (k + 1..n).map(|i| a[(i, k)]).collect();
        let alpha = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let tail = x[1..].iter().map(|z| z.norm_sqr()).sum::<f64>();
        if alpha == 0.0 || tail <= (1e-300_f64).max(f64::EPSILON * f64::EPSILON * alpha * alpha * 1e-4) {
            sub[k] = x[0];
            continue;
        }
        let ph = if x[0].norm() > 0.0 { x[0] / x[0].norm() } else { ONE };
        // v = x + ph·alpha·e1, H x = -ph·alpha·e1
        let v = &mut v[..m];
        v.copy_from_slice(&x);
        v[0] += ph * alpha;
        let vnorm2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        let tau = 2.0 / vnorm2;

        // Trailing block B = A[k+1.., k+1..]; p = tau B v.
        let p = &mut p[..m];
        for pi in p.iter_mut() {
            *pi = ZERO;
        }
        for jj in 0..m {
            let vj = v[jj];
            let col = &a.data[(k + 1) + (k + 1 + jj) * n..(k + 1) + (k + 1 + jj) * n + m];
            for (pi, b) in p.iter_mut().zip(col) {
                *pi += b * vj;
            }
        }
        for pi in p.iter_mut() {
            *pi *= tau;
        }
        let vp: C64 = v.iter().zip(p.iter()).map(|(a, b)| a.conj() * b).sum();
        let kk = 0.5 * tau * vp.re;
        // w = p - K v; B -= v w† + w v†
        let w: Vec<C64> = p.iter().zip(v.iter()).map(|(pi, vi)| pi - vi * kk).collect();
        for jj in 0..m {
            let wj = w[jj].conj();
            let vj = v[jj].conj();
            let base = (k + 1) + (k + 1 + jj) * n;
            for ii in 0..m {
                a.data[base + ii] -= v[ii] * wj + w[ii] * vj;
            }
        }
        let beta = -ph * alpha;
        sub[k] = beta;
        a[(k + 1, k)] = beta;
        a[(k, k + 1)] = beta.conj();
        for i in k + 2..n {
            a[(i, k)] = ZERO;
            a[(k, i)] = ZERO;
        }
        // Q ← Q H, acting on columns k+1..n.
        let s = &mut x_buf[..n];
        s.fill(ZERO);
        for (ii, vi) in v.iter().enumerate() {
            let col = &q.data[(k + 1 + ii) * n..(k + 2 + ii) * n];
            for (si, qv) in s.iter_mut().zip(col) {
                *si += qv * vi;
            }
        }
        for (ii, vi) in v.iter().enumerate() {
            let c = vi.conj() * tau;
            let col = &mut q.data[(k + 1 + ii) * n..(k + 2 + ii) * n];
            for (qv, si) in col.iter_mut().zip(s.iter()) {
                *qv -= si * c;
            }
        }
    }
    let diag = (0..n).map(|i| a[(i, i)].re).collect();
    (diag, sub, q)
}

/// Implicit-shift QL on a real symmetric tridiagonal matrix.
///
/// `d` holds the diagonal, `e[k]` the subdiagonal entry `T[k+1, k]` (the last
/// entry is ignored). On return `d` holds eigenvalues and the columns of the
/// column-major `z` are updated with the accumulated rotations.
fn tql2(d: &mut [f64], e: &mut [f64], z: &mut [f64], n: usize) {
    if n == 1 {
        return;
    }
    e[n - 1] = 0.0;
    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = (p * p + e[i] * e[i]).sqrt();
                    if !(r.is_finite() && r > 0.0) {
                        r = p.hypot(e[i]);
                    }
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let (lo, hi) = z.split_at_mut((i + 1) * n);
                    let zi = &mut lo[i * n..];
                    let zi1 = &mut hi[..n];
                    for k in 0..n {
                        let h = zi1[k];
                        zi1[k] = s * zi[k] + c * h;
                        zi[k] = c * zi[k] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 || iter > 60 * n {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
}

/// Singular value decomposition `A = U diag(s) V†`.
#[derive(Debug, Clone)]
pub struct Svd {
    /// Unitary, rows×rows.
    pub u: CMatrix,
    /// Non-negative, descending, length min(rows, cols).
    pub s: Vec<f64>,
    /// Unitary, cols×cols.
    pub v: CMatrix,
}

impl Svd {
    /// Number of singular values above `rel_tol · s₁`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let s1 = self.s.first().copied().unwrap_or(0.0);
        if s1 == 0.0 {
            return 0;
        }
        self.s.iter().filter(|&&s| s > rel_tol * s1).count()
    }

    pub fn reconstruct(&self) -> CMatrix {
        let (m, n) = (self.u.rows(), self.v.rows());
        CMatrix::from_fn(m, n, |i, j| {
            self.s
                .iter()
                .enumerate()
                .map(|(k, &s)| self.u[(i, k)] * self.v[(j, k)].conj() * s)
                .sum()
        })
    }
}

/// Singular value decomposition by one-sided (Hestenes) Jacobi rotations.
pub fn svd(a: &CMatrix) -> Result<Svd> {
    a.check_finite()?;
    if a.rows >= a.cols {
        Ok(svd_tall(a))
    } else {
        let t = svd_tall(&a.adjoint());
        Ok(Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        })
    }
}

/// Only the singular values, skipping the left factor completion.
pub fn singular_values(a: &CMatrix) -> Result<Vec<f64>> {
    a.check_finite()?;
    let w = if a.rows >= a.cols { a.clone() } else { a.adjoint() };
    let (w, _) = jacobi_orthogonalize(w, false);
    let mut s: Vec<f64> = (0..w.cols).map(|j| norm2(w.column(j))).collect();
    s.sort_by(|x, y| y.total_cmp(x));
    Ok(s)
}

fn norm2(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Orthogonalizes the columns of `w` by plane rotations; optionally
/// accumulates the right factor.
fn jacobi_orthogonalize(mut w: CMatrix, want_v: bool) -> (CMatrix, Option<CMatrix>) {
    let (m, n) = w.shape();
    let mut v = want_v.then(|| CMatrix::identity(n));
    let mut norms: Vec<f64> = (0..n).map(|j| w.column(j).iter().map(|z| z.norm_sqr()).sum()).collect();
    let tol = 1e-15;
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta) = (norms[p], norms[q]);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma: C64 = w
                    .column(p)
                    .iter()
                    .zip(w.column(q))
                    .map(|(a, b)| a.conj() * b)
                    .sum();
                let gabs = gamma.norm();
                if gabs <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let (c, s, ph) = jacobi_rotation(alpha, beta, gamma);
                rotate_columns(&mut w, p, q, c, s, ph, m);
                if let Some(v) = v.as_mut() {
                    rotate_columns(v, p, q, c, s, ph, n);
                }
                norms[p] = w.column(p).iter().map(|z| z.norm_sqr()).sum();
                norms[q] = w.column(q).iter().map(|z| z.norm_sqr()).sum();
            }
        }
        if !rotated {
            break;
        }
    }
    (w, v)
}

/// Rotation `J = [[c, s], [-s·conj(ph), c·conj(ph)]]` that diagonalizes the
/// Hermitian 2x2 block `[[app, apq], [conj(apq), aqq]]` under `J† · J`.
fn jacobi_rotation(app: f64, aqq: f64, apq: C64) -> (f64, f64, C64) {
    let r = apq.norm();
    let ph = apq / r;
    let theta = (aqq - app) / (2.0 * r);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let t = if theta == 0.0 { 1.0 } else { t };
    let c = 1.0 / (t * t + 1.0).sqrt();
    (c, t * c, ph)
}

fn rotate_columns(w: &mut CMatrix, p: usize, q: usize, c: f64, s: f64, ph: C64, m: usize) {
    let phc = ph.conj();
    let (lo, hi) = w.data.split_at_mut(q * m);
    let cp = &mut lo[p * m..p * m + m];
    let cq = &mut hi[..m];
    for (a, b) in cp.iter_mut().zip(cq.iter_mut()) {
        let bp = *b * phc;
        let na = *a * c - bp * s;
        let nb = *a * s + bp * c;
        *a = na;
        *b = nb;
    }
}

fn svd_tall(a: &CMatrix) -> Svd {
    let (m, n) = a.shape();
    let (w, v) = jacobi_orthogonalize(a.clone(), true);
    let v = v.expect("right factor requested");
    let norms: Vec<f64> = (0..n).map(|j| norm2(w.column(j))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let s1 = order.first().map_or(0.0, |&i| norms[i]);

    let mut u_cols: Vec<Vec<C64>> = Vec::with_capacity(m);
    let mut v_sorted = CMatrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (k, &j) in order.iter().enumerate() {
        v_sorted.column_mut(k).copy_from_slice(v.column(j));
        s.push(norms[j]);
        if norms[j] > 1e-14 * s1 && norms[j] > 0.0 {
            u_cols.push(w.column(j).iter().map(|z| z / norms[j]).collect());
        } else {
            u_cols.push(Vec::new());
        }
    }
    // Fill columns for (numerically) zero singular values and extend to m.
    let mut filled: Vec<Vec<C64>> = u_cols.iter().filter(|c| !c.is_empty()).cloned().collect();
    let mut candidates = (0..m).map(|i| {
        let mut e = vec![ZERO; m];
        e[i] = ONE;
        e
    });
    let mut complete = |filled: &mut Vec<Vec<C64>>| -> Vec<C64> {
        loop {
            let mut e = candidates.next().expect("basis completion exhausted");
            for _ in 0..2 {
                for f in filled.iter() {
                    let proj: C64 = f.iter().zip(&e).map(|(a, b)| a.conj() * b).sum();
                    for (x, y) in e.iter_mut().zip(f) {
                        *x -= proj * y;
                    }
                }
            }
            let nrm = norm2(&e);
            if nrm > 1e-8 {
                let e: Vec<C64> = e.iter().map(|z| z / nrm).collect();
                filled.push(e.clone());
                return e;
            }
        }
    };
    let mut u = CMatrix::zeros(m, m);
    for k in 0..m {
        let col = if k < n && !u_cols[k].is_empty() {
            u_cols[k].clone()
        } else {
            complete(&mut filled)
        };
        u.column_mut(k).copy_from_slice(&col);
    }
    Svd { u, s, v: v_sorted }
}

/// Frobenius-nearest positive semidefinite matrix, `Q diag(max(λ, 0)) Q†`.
pub fn psd_project(a: &CMatrix) -> Result<CMatrix> {
    a.require_hermitian()?;
    Ok(psd_project_unchecked(a))
}

pub(crate) fn psd_project_unchecked(a: &CMatrix) -> CMatrix {
    hermitian_eig_unchecked(a).reconstruct_with(|l| l.max(0.0))
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;

    fn assert_close(a: &CMatrix, b: &CMatrix, tol: f64) {
        let d = (a - b).frobenius_norm();
        assert!(d <= tol, "matrices differ by {d:e} (tol {tol:e})\n{a:?}\n{b:?}");
    }

    #[test]
    fn eig_identity() {
        let e = hermitian_eig(&CMatrix::identity(4)).unwrap();
        assert_eq!(e.values.len(), 4);
        for v in &e.values {
            assert!((v - 1.0).abs() < 1e-14);
        }
        assert!(e.vectors.unitary_defect() < 1e-12);
    }

    #[test]
    fn eig_diag_sorted_with_permuted_identity_vectors() {
        let a = CMatrix::diag_real(&[-1.0, 3.0]);
        let e = hermitian_eig(&a).unwrap();
        assert_eq!(e.values, vec![3.0, -1.0]);
        let expected = CMatrix::from_rows(&[vec![ZERO, ONE], vec![ONE, ZERO]]).unwrap();
        assert_close(&e.vectors, &expected, 1e-14);
    }

    #[test]
    fn eig_random_reconstruction() {
        let mut r = rng(7);
        for n in [1, 2, 3, 4, 7, 16, 40] {
            let a = random_hermitian(&mut r, n);
            let e = hermitian_eig(&a).unwrap();
            let rel = (&e.reconstruct() - &a).frobenius_norm() / a.frobenius_norm();
            assert!(rel <= 1e-10, "n={n}: relative residual {rel:e}");
            let qq = &e.vectors.adjoint() * &e.vectors;
            assert!((&qq - &CMatrix::identity(n)).max_abs() <= 1e-10);
            assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn eig_degenerate_and_rank_one() {
        let x: Vec<C64> = (0..16).map(|i| C64::new((i % 3) as f64, (i % 2) as f64)).collect();
        let a = CMatrix::outer(&x, &x);
        let e = hermitian_eig(&a).unwrap();
        let xx: f64 = x.iter().map(|z| z.norm_sqr()).sum();
        assert!((e.values[0] - xx).abs() < 1e-10 * xx);
        assert!(e.values[1..].iter().all(|v| v.abs() < 1e-10 * xx));
        assert!((&e.reconstruct() - &a).frobenius_norm() < 1e-10 * a.frobenius_norm());
    }

    #[test]
    fn eig_phase_convention() {
        let mut r = rng(3);
        let a = random_hermitian(&mut r, 6);
        let e = hermitian_eig(&a).unwrap();
        for j in 0..6 {
            let lead = e.vectors.column(j).iter().find(|z| z.norm() > 1e-12).unwrap();
            assert!(lead.im.abs() < 1e-14 && lead.re > 0.0);
        }
    }

    #[test]
    fn eig_rejects_bad_input() {
        assert!(matches!(
            hermitian_eig(&CMatrix::zeros(2, 3)),
            Err(Error::NotSquare(2, 3))
        ));
        let mut a = CMatrix::identity(2);
        a[(0, 1)] = ONE;
        assert!(matches!(hermitian_eig(&a), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn svd_rank_one() {
        let x = vec![ONE, I, C64::new(1.0, 1.0), ZERO];
        // x†x = 4
        let xx = CMatrix::outer(&x, &x);
        let s = svd(&xx).unwrap();
        assert!((s.s[0] - 4.0).abs() < 1e-12);
        assert!(s.s[1..].iter().all(|v| v.abs() < 1e-12));
        assert!(s.u.unitary_defect() < 1e-10 && s.v.unitary_defect() < 1e-10);
    }

    #[test]
    fn svd_zero() {
        let s = svd(&CMatrix::zeros(3, 3)).unwrap();
        assert!(s.s.iter().all(|&v| v == 0.0));
        assert!(s.u.unitary_defect() < 1e-12 && s.v.unitary_defect() < 1e-12);
        assert_eq!(s.rank(1e-10), 0);
    }

    #[test]
    fn svd_random_reconstruction() {
        let mut r = rng(11);
        for (m, n) in [(16, 16), (5, 9), (9, 5), (1, 4)] {
            let a = random_matrix(&mut r, m, n);
            let s = svd(&a).unwrap();
            let rel = (&s.reconstruct() - &a).frobenius_norm() / a.frobenius_norm();
            assert!(rel <= 1e-10, "{m}x{n}: residual {rel:e}");
            assert!(s.u.unitary_defect() < 1e-10, "U not unitary");
            assert!(s.v.unitary_defect() < 1e-10, "V not unitary");
            assert!(s.s.windows(2).all(|w| w[0] >= w[1]));
            let sv = singular_values(&a).unwrap();
            for (x, y) in sv.iter().zip(&s.s) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn svd_rank_deficient_completes_unitary() {
        let mut r = rng(5);
        let a = random_matrix(&mut r, 6, 2);
        let b = random_matrix(&mut r, 2, 6);
        let ab = &a * &b;
        let s = svd(&ab).unwrap();
        assert_eq!(s.rank(1e-10), 2);
        assert!(s.u.unitary_defect() < 1e-10);
        assert!((&s.reconstruct() - &ab).frobenius_norm() < 1e-10 * ab.frobenius_norm());
    }

    #[test]
    fn kron_identities() {
        let i2 = CMatrix::identity(2);
        assert_eq!(kron(&i2, &i2), CMatrix::identity(4));
        let x = CMatrix::from_rows(&[vec![ZERO, ONE], vec![ONE, ZERO]]).unwrap();
        let xi = kron(&x, &i2);
        // rows 0,1 swap with rows 2,3
        let mut expected = CMatrix::zeros(4, 4);
        for (i, j) in [(0, 2), (1, 3), (2, 0), (3, 1)] {
            expected[(i, j)] = ONE;
        }
        assert_eq!(xi, expected);
        assert_eq!(kron(&CMatrix::zeros(2, 3), &CMatrix::zeros(4, 5)).shape(), (8, 15));
    }

    #[test]
    fn kron_mixed_product() {
        let mut r = rng(21);
        let (a, b, c, d) = (
            random_matrix(&mut r, 2, 2),
            random_matrix(&mut r, 2, 2),
            random_matrix(&mut r, 2, 2),
            random_matrix(&mut r, 2, 2),
        );
        let lhs = &kron(&a, &b) * &kron(&c, &d);
        let rhs = kron(&(&a * &c), &(&b * &d));
        assert_close(&lhs, &rhs, 1e-12);
    }

    #[test]
    fn vec_column_major() {
        let mut e11 = CMatrix::zeros(2, 2);
        e11[(0, 0)] = ONE;
        assert_eq!(vec(&e11), vec![ONE, ZERO, ZERO, ZERO]);
        let mut e21 = CMatrix::zeros(2, 2);
        e21[(1, 0)] = ONE;
        assert_eq!(vec(&e21), vec![ZERO, ONE, ZERO, ZERO]);
    }

    #[test]
    fn vec_linear_and_round_trip() {
        let mut r = rng(2);
        let a = random_matrix(&mut r, 4, 4);
        let b = random_matrix(&mut r, 4, 4);
        let c = C64::new(0.3, -1.2);
        let lhs = vec(&(&a + &b.scale(c)));
        let rhs: Vec<C64> = vec(&a).iter().zip(vec(&b)).map(|(x, y)| x + c * y).collect();
        for (x, y) in lhs.iter().zip(&rhs) {
            assert!((x - y).norm() < 1e-14);
        }
        assert_eq!(unvec(&vec(&a), 4, 4).unwrap(), a);
        assert!(matches!(unvec(&vec(&a), 3, 4), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn psd_project_cases() {
        let p = psd_project(&CMatrix::diag_real(&[2.0, -3.0])).unwrap();
        assert_close(&p, &CMatrix::diag_real(&[2.0, 0.0]), 1e-14);

        let mut r = rng(4);
        let rho = random_density(&mut r, 5);
        assert_close(&psd_project(&rho).unwrap(), &rho, 1e-10);
    }

    #[test]
    fn psd_project_sampled_optimality() {
        let mut r = rng(8);
        let a = random_hermitian(&mut r, 4);
        let p = psd_project(&a).unwrap();
        let best = (&a - &p).frobenius_norm();
        for _ in 0..100 {
            let m = random_matrix(&mut r, 4, 4);
            let candidate = &m * &m.adjoint();
            assert!(best <= (&a - &candidate).frobenius_norm() + 1e-12);
        }
        // Perturbations of the projection stay PSD-feasible and cannot win.
        let e = hermitian_eig(&p).unwrap();
        assert!(e.values.iter().all(|&v| v >= -1e-12));
    }

    #[test]
    fn psd_project_rejects_non_hermitian() {
        let mut a = CMatrix::identity(2);
        a[(1, 0)] = I;
        assert!(psd_project(&a).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn psd_project_idempotent(seed in any::<u64>(), n in 1usize..10) {
                let mut r = rng(seed);
                let a = random_hermitian(&mut r, n);
                let p1 = psd_project(&a).unwrap();
                let p2 = psd_project(&p1).unwrap();
                prop_assert!((&p1 - &p2).frobenius_norm() <= 1e-10 * p1.frobenius_norm().max(1.0));
            }

            #[test]
            fn kron_shape_law(m in 1usize..4, n in 1usize..4, p in 1usize..4, q in 1usize..4) {
                let k = kron(&CMatrix::zeros(m, n), &CMatrix::zeros(p, q));
                prop_assert_eq!(k.shape(), (m * p, n * q));
            }

            #[test]
            fn eig_reconstructs(seed in any::<u64>(), n in 1usize..18) {
                let mut r = rng(seed);
                let a = random_hermitian(&mut r, n);
                let e = hermitian_eig(&a).unwrap();
                let rel = (&e.reconstruct() - &a).frobenius_norm() / a.frobenius_norm();
                prop_assert!(rel <= 1e-10);
            }
        }
    }
}
