//! Operator-splitting engine shared by all estimators.
//!
//! The unknown is the coordinate vector `y` of a Hermitian process matrix,
//! kept exactly on the trace-preserving affine set `y = y₀ + B t`. Three
//! copies are split off and handled by their own proximal steps:
//!
//! * `z₁ = y` projected onto the PSD cone,
//! * `z₂ = c·A y` with the data term (`A` has one row per configuration),
//! * `z₃ = y` with the regularizer, if any.
//!
//! `B` is chosen so that `(AB)ᵀ(AB)` is diagonal, which makes the `y`-update
//! a diagonal solve for every penalty value.

use std::sync::Arc;

use crate::channel::ProcessMatrix;
use crate::error::{Error, Result};
use crate::matcore::{hermitian_eig_unchecked, CMatrix, C64};
use crate::tomography::SensingMap;

use super::coords::{from_coords, to_coords};

/// Knobs of the inner solver.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AdmmSettings {
    /// Absolute bound on the primal and dual residual norms.
    pub tol: f64,
    pub max_iters: usize,
    pub rho: f64,
    /// Over-relaxation factor in `(0, 2)`.
    pub relax: f64,
    /// Anderson acceleration memory; 0 disables it.
    pub anderson: usize,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 50_000,
            rho: 1.0,
            relax: 1.6,
            anderson: 5,
        }
    }
}

impl AdmmSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.rho > 0.0 && self.max_iters > 0) {
            return Err(Error::InvalidProblem("solver tolerance, penalty and iteration cap must be positive".into()));
        }
        if !(self.relax > 0.0 && self.relax < 2.0) {
            return Err(Error::InvalidProblem(format!("relaxation {} outside (0, 2)", self.relax)));
        }
        Ok(())
    }
}

const ADAPT_EVERY: usize = 25;
const CHECK_EVERY: usize = 5;
const ADAPT_MU: f64 = 10.0;
const ADAPT_TAU: f64 = 2.0;

/// Precomputed linear algebra for one sensing map.
#[derive(Debug)]
pub struct Factorization {
    d: usize,
    n: usize,
    m: usize,
    /// Data rows, `m × n` row-major.
    a: Vec<f64>,
    /// Orthonormal basis of the row space of the trace-preserving map, column-major.
    q: Vec<f64>,
    /// Null-space directions seen by the data, `n × r` column-major, with
    /// `(AB)ᵀ(AB) = diag(λ)`.
    b: Vec<f64>,
    /// `A B`, `m × r` column-major.
    ab: Vec<f64>,
    lambda: Vec<f64>,
    /// Null-space directions invisible to the data.
    blind: usize,
    y0: Vec<f64>,
    ay0: Vec<f64>,
    scale: f64,
}

fn real_to_complex(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> CMatrix {
    CMatrix::from_fn(rows, cols, |i, j| C64::new(f(i, j), 0.0))
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (xc, yc) = (x.chunks_exact(4), y.chunks_exact(4));
    let tail: f64 = xc.remainder().iter().zip(yc.remainder()).map(|(a, b)| a * b).sum();
    for (a, b) in xc.zip(yc) {
        for k in 0..4 {
            acc[k] += a[k] * b[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out = Mᵀ v` for column-major `M` with columns of length `v.len()`.
fn mul_t(mat: &[f64], v: &[f64], out: &mut [f64]) {
    let len = v.len();
    for (j, o) in out.iter_mut().enumerate() {
        *o = dot(&mat[j * len..(j + 1) * len], v);
    }
}

/// `out += M t` for column-major `M`.
fn mul_acc(mat: &[f64], t: &[f64], out: &mut [f64]) {
    let len = out.len();
    for (j, &tj) in t.iter().enumerate() {
        if tj == 0.0 {
            continue;
        }
        for (o, m) in out.iter_mut().zip(&mat[j * len..(j + 1) * len]) {
            *o += m * tj;
        }
    }
}

/// Relative eigenvalue below which a null-space direction counts as blind.
const BLIND_TOL: f64 = 1e-10;

impl Factorization {
    pub fn build(map: &SensingMap) -> Result<Self> {
        let basis = map.basis();
        let d = basis.dim();
        let n_s = basis.n_s();
        let n = d * d;
        let m = map.len();

        let mut a = Vec::with_capacity(m * n);
        for cfg in map.configs() {
            a.extend(to_coords(&CMatrix::outer(&cfg.g, &cfg.g)));
        }

        // Trace-preserving map in coordinates, probed column by column.
        let ntp = n_s * n_s;
        let mut a_tp = vec![0.0; ntp * n]; // column-major ntp × n
        let mut e = vec![0.0; n];
        for i in 0..n {
            e[i] = 1.0;
            let pm = ProcessMatrix::new_unchecked(basis.clone(), from_coords(&e, d));
            a_tp[i * ntp..(i + 1) * ntp].copy_from_slice(&to_coords(&pm.tp_operator()));
            e[i] = 0.0;
        }
        let b_tp = to_coords(&CMatrix::identity(n_s));

        // K⁺ for K = A_tp A_tpᵀ.
        let k = real_to_complex(ntp, ntp, |i, j| (0..n).map(|c| a_tp[i + c * ntp] * a_tp[j + c * ntp]).sum());
        let keig = hermitian_eig_unchecked(&k);
        let kmax = keig.values.first().copied().unwrap_or(0.0);
        let kpinv = keig.reconstruct_with(|l| if l > 1e-12 * kmax { 1.0 / l } else { 0.0 });
        let tp_rank = keig.values.iter().filter(|&&l| l > 1e-12 * kmax).count();

        // y₀ = A_tpᵀ K⁺ b_tp is the minimum-norm TP point.
        let kb: Vec<f64> = (0..ntp).map(|i| (0..ntp).map(|j| kpinv[(i, j)].re * b_tp[j]).sum()).collect();
        let y0: Vec<f64> = (0..n).map(|c| dot(&a_tp[c * ntp..(c + 1) * ntp], &kb)).collect();
        let mut kat = vec![0.0; ntp * n]; // K⁺ A_tp, column-major
        for c in 0..n {
            for i in 0..ntp {
                kat[i + c * ntp] = (0..ntp).map(|j| kpinv[(i, j)].re * a_tp[j + c * ntp]).sum();
            }
        }
        let mut p = vec![0.0; n * n]; // projector onto the null space
        for j in 0..n {
            for i in 0..n {
                let c = dot(&a_tp[i * ntp..(i + 1) * ntp], &kat[j * ntp..(j + 1) * ntp]);
                p[i + j * n] = if i == j { 1.0 - c } else { -c };
            }
        }

        // M = P AᵀA P − (I − P): eigenvalues ≥ 0 on the null space, −1 off it.
        let mut ap = vec![0.0; m * n]; // A P, row-major
        for row in 0..m {
            let ar = &a[row * n..(row + 1) * n];
            for j in 0..n {
                ap[row * n + j] = dot(ar, &p[j * n..(j + 1) * n]);
            }
        }
        let mut mm = vec![0.0; n * n];
        for row in 0..m {
            let r = &ap[row * n..(row + 1) * n];
            for j in 0..n {
                let rj = r[j];
                if rj == 0.0 {
                    continue;
                }
                for i in 0..n {
                    mm[i + j * n] += r[i] * rj;
                }
            }
        }
        for j in 0..n {
            for i in 0..n {
                mm[i + j * n] -= if i == j { 1.0 - p[i + j * n] } else { -p[i + j * n] };
            }
        }
        let eig = hermitian_eig_unchecked(&real_to_complex(n, n, |i, j| 0.5 * (mm[i + j * n] + mm[j + i * n])));
        let lmax = eig.values.first().copied().unwrap_or(0.0).max(0.0);

        let mut q = Vec::new();
        let mut b = Vec::new();
        let mut lambda = Vec::new();
        let mut blind = 0;
        for (col, &l) in eig.values.iter().enumerate() {
            let v = eig.vectors.column(col);
            let imag = v.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
            if imag > 1e-10 {
                return Err(Error::ToleranceBreach(format!("complex eigenvector of a real matrix ({imag:.2e})")));
            }
            if l < -0.5 {
                q.extend(v.iter().map(|z| z.re));
            } else if l > BLIND_TOL * lmax {
                b.extend(v.iter().map(|z| z.re));
                lambda.push(l);
            } else {
                blind += 1;
            }
        }
        if q.len() / n != tp_rank {
            return Err(Error::ToleranceBreach(format!(
                "trace-preserving row space of dimension {}, expected {tp_rank}",
                q.len() / n
            )));
        }

        let r = lambda.len();
        let mut ab = vec![0.0; m * r];
        for j in 0..r {
            let bj = &b[j * n..(j + 1) * n];
            for row in 0..m {
                ab[row + j * m] = dot(&a[row * n..(row + 1) * n], bj);
            }
        }
        let ay0: Vec<f64> = (0..m).map(|row| dot(&a[row * n..(row + 1) * n], &y0)).collect();
        let scale = if lmax > 0.0 { 1.0 / lmax.sqrt() } else { 1.0 };

        Ok(Self {
            d,
            n,
            m,
            a,
            q,
            b,
            ab,
            lambda,
            blind,
            y0,
            ay0,
            scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of real coordinates.
    pub fn coords(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    /// Rank of the data rows restricted to the trace-preserving directions.
    pub fn restricted_rank(&self) -> usize {
        self.lambda.len()
    }

    /// Trace-preserving directions that leave every probability unchanged.
    pub fn blind_directions(&self) -> usize {
        self.blind
    }

    /// Rank of the real data matrix `A` via its Gram matrix.
    pub fn data_rank(&self, rel_tol: f64) -> usize {
        let (m, n) = (self.m, self.n);
        let gram = real_to_complex(m, m, |i, j| dot(&self.a[i * n..(i + 1) * n], &self.a[j * n..(j + 1) * n]));
        let ev = hermitian_eig_unchecked(&gram).values;
        let top = ev.first().copied().unwrap_or(0.0);
        // Gram eigenvalues are squared singular values.
        ev.iter().filter(|&&l| top > 0.0 && l > rel_tol * rel_tol * top).count()
    }

    /// `A y`.
    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        self.apply_into(y, &mut out);
        out
    }

    fn apply_into(&self, y: &[f64], out: &mut [f64]) {
        for (row, o) in out.iter_mut().enumerate() {
            *o = dot(&self.a[row * self.n..(row + 1) * self.n], y);
        }
    }

    /// `Σ_k w_k a_k`.
    pub fn apply_t(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (row, &wk) in w.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(&self.a[row * self.n..(row + 1) * self.n]) {
                *o += wk * a;
            }
        }
        out
    }

    /// Minimum-norm trace-preserving point.
    pub fn particular(&self) -> &[f64] {
        &self.y0
    }

    /// Removes the component along the trace-preserving row space.
    fn tangent(&self, v: &mut [f64]) {
        let kq = self.q.len() / self.n;
        let mut s = vec![0.0; kq];
        mul_t(&self.q, v, &mut s);
        for x in s.iter_mut() {
            *x = -*x;
        }
        mul_acc(&self.q, &s, v);
    }

    /// Orthogonal projection onto the trace-preserving affine set.
    pub fn project_affine(&self, y: &[f64]) -> Vec<f64> {
        let mut out = y.to_vec();
        self.tangent(&mut out);
        for (o, v) in out.iter_mut().zip(&self.y0) {
            *o += v;
        }
        out
    }
}

/// Data term acting on `A y`.
#[derive(Debug, Clone)]
pub enum DataTerm {
    /// `‖A y − p‖²`.
    LeastSquares(Vec<f64>),
    /// `‖A y − p‖² ≤ radius²`.
    Ball { p: Vec<f64>, radius: f64 },
    /// `A y = p`.
    Point(Vec<f64>),
    /// `−Σ ω_k [c_k log q_k + (1 − c_k) log(1 − q_k)]`.
    Likelihood { c: Vec<f64>, w: Vec<f64> },
}

#[derive(Debug, Clone)]
pub enum Regularizer {
    None,
    /// `Σ_i w_i |y_i|` in orthonormal coordinates.
    WeightedL1(Vec<f64>),
    /// `½‖y‖²`.
    HalfSquare,
}

/// Iterates kept for warm starts: packed `(z₁, z₂, z₃, u₁, u₂, u₃)` and penalties.
#[derive(Debug, Clone)]
pub struct AdmmState {
    w: Vec<f64>,
    rho: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct AdmmOutput {
    /// Trace-preserving iterate.
    pub y: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub state: AdmmState,
}

pub(crate) fn psd_prox(v: &[f64], d: usize) -> Vec<f64> {
    let eig = hermitian_eig_unchecked(&from_coords(v, d));
    to_coords(&eig.reconstruct_with(|l| l.max(0.0)))
}

/// Minimizer of `ω·φ(q) + (ρ/2)(q − v)²` with `φ(q) = −c log q − (1−c) log(1−q)`.
fn likelihood_prox(c: f64, w: f64, rho: f64, v: f64) -> f64 {
    if w == 0.0 {
        return v;
    }
    let deriv = |q: f64| w * (-c / q + (1.0 - c) / (1.0 - q)) + rho * (q - v);
    let curv = |q: f64| w * (c / (q * q) + (1.0 - c) / ((1.0 - q) * (1.0 - q))) + rho;
    let tiny = 1e-300;
    let (mut lo, mut hi) = if c <= 0.0 {
        (v.min(0.0) - w / rho, v.min(1.0 - 1e-16))
    } else if c >= 1.0 {
        (v.max(1e-16), v.max(1.0) + w / rho)
    } else {
        (tiny, 1.0 - 1e-16)
    };
    let mut q = v.clamp(lo, hi);
    if !(q > lo && q < hi) {
        q = 0.5 * (lo + hi);
    }
    for _ in 0..200 {
        let g = deriv(q);
        if g == 0.0 {
            return q;
        }
        if g > 0.0 {
            hi = q;
        } else {
            lo = q;
        }
        let step = q - g / curv(q);
        let next = if step > lo && step < hi { step } else { 0.5 * (lo + hi) };
        if (next - q).abs() <= 1e-15 * q.abs().max(1e-300) || hi - lo <= 1e-16 * hi.abs().max(1.0) {
            return next;
        }
        q = next;
    }
    q
}

impl DataTerm {
    fn prox(&self, v: &[f64], rho: f64, scale: f64, out: &mut [f64]) {
        // Prox of h(z / scale) is scale · prox_{h, ρ·scale²}(v / scale).
        let rs = rho * scale * scale;
        match self {
            DataTerm::LeastSquares(p) => {
                for ((o, vi), pi) in out.iter_mut().zip(v).zip(p) {
                    *o = scale * (2.0 * pi + rs * vi / scale) / (2.0 + rs);
                }
            }
            DataTerm::Point(p) => {
                for (o, pi) in out.iter_mut().zip(p) {
                    *o = scale * pi;
                }
            }
            DataTerm::Ball { p, radius } => {
                let dist: f64 = v.iter().zip(p).map(|(vi, pi)| (vi - scale * pi).powi(2)).sum::<f64>().sqrt();
                let rad = scale * radius;
                let f = if dist > rad { rad / dist } else { 1.0 };
                for ((o, vi), pi) in out.iter_mut().zip(v).zip(p) {
                    *o = scale * pi + f * (vi - scale * pi);
                }
            }
            DataTerm::Likelihood { c, w } => {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = scale * likelihood_prox(c[k], w[k], rs, v[k] / scale);
                }
            }
        }
    }
}

impl Regularizer {
    fn active(&self) -> bool {
        !matches!(self, Regularizer::None)
    }

    fn prox(&self, v: &[f64], rho: f64, out: &mut [f64]) {
        match self {
            Regularizer::None => out.copy_from_slice(v),
            Regularizer::HalfSquare => {
                for (o, vi) in out.iter_mut().zip(v) {
                    *o = rho * vi / (1.0 + rho);
                }
            }
            Regularizer::WeightedL1(w) => {
                for ((o, vi), wi) in out.iter_mut().zip(v).zip(w) {
                    let t = wi / rho;
                    *o = vi.signum() * (vi.abs() - t).max(0.0);
                }
            }
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Offsets of the blocks inside the packed state.
#[derive(Clone, Copy)]
struct Layout {
    n: usize,
    m: usize,
}

impl Layout {
    fn len(self) -> usize {
        2 * (2 * self.n + self.m)
    }
    fn z1(self) -> std::ops::Range<usize> {
        0..self.n
    }
    fn z2(self) -> std::ops::Range<usize> {
        self.n..self.n + self.m
    }
    fn z3(self) -> std::ops::Range<usize> {
        self.n + self.m..2 * self.n + self.m
    }
    fn u(self, block: std::ops::Range<usize>) -> std::ops::Range<usize> {
        let off = 2 * self.n + self.m;
        block.start + off..block.end + off
    }
}

struct Residuals {
    primal: f64,
    dual: f64,
    block_r: [f64; 3],
    block_s: [f64; 3],
}

struct Workspace {
    vbar: Vec<f64>,
    v2: Vec<f64>,
    t: Vec<f64>,
    h: Vec<f64>,
    y: Vec<f64>,
    ay: Vec<f64>,
}

/// One relaxed splitting step `w ↦ T(w)`; fills `ws.y` with the TP iterate.
#[allow(clippy::too_many_arguments)]
fn step(
    f: &Factorization,
    data: &DataTerm,
    reg: &Regularizer,
    rho: [f64; 3],
    alpha: f64,
    w: &[f64],
    out: &mut [f64],
    ws: &mut Workspace,
    want_residuals: bool,
) -> Option<Residuals> {
    let lay = Layout { n: f.n, m: f.m };
    let (n, m, c) = (f.n, f.m, f.scale);
    let use3 = reg.active();
    let [rho1, rho2, rho3] = rho;
    let kappa = rho1 + if use3 { rho3 } else { 0.0 };
    let (z1, z2, z3) = (&w[lay.z1()], &w[lay.z2()], &w[lay.z3()]);
    let (u1, u2, u3) = (&w[lay.u(lay.z1())], &w[lay.u(lay.z2())], &w[lay.u(lay.z3())]);

    // y-update: minimize κ/2‖y − v̄‖² + ρ₂/2‖cAy − v₂‖² over the TP set.
    for i in 0..n {
        let v3 = if use3 { rho3 * (z3[i] - u3[i]) } else { 0.0 };
        ws.vbar[i] = (rho1 * (z1[i] - u1[i]) + v3) / kappa;
    }
    for i in 0..m {
        ws.v2[i] = z2[i] - u2[i] - c * f.ay0[i];
    }
    ws.y.copy_from_slice(&ws.vbar);
    f.tangent(&mut ws.y);
    mul_t(&f.b, &ws.vbar, &mut ws.t);
    mul_t(&f.ab, &ws.v2, &mut ws.h);
    for i in 0..ws.t.len() {
        let target = (kappa * ws.t[i] + rho2 * c * ws.h[i]) / (kappa + rho2 * c * c * f.lambda[i]);
        ws.t[i] = target - ws.t[i];
    }
    mul_acc(&f.b, &ws.t, &mut ws.y);
    for (yi, y0) in ws.y.iter_mut().zip(&f.y0) {
        *yi += y0;
    }
    f.apply_into(&ws.y, &mut ws.ay);
    let (y, ay) = (&ws.y, &ws.ay);

    // Relaxed proximal steps and dual updates.
    let x1: Vec<f64> = y.iter().zip(z1).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
    let x2: Vec<f64> = ay.iter().zip(z2).map(|(a, b)| alpha * c * a + (1.0 - alpha) * b).collect();
    let arg1: Vec<f64> = x1.iter().zip(u1).map(|(a, b)| a + b).collect();
    out[lay.z1()].copy_from_slice(&psd_prox(&arg1, f.d));
    let arg2: Vec<f64> = x2.iter().zip(u2).map(|(a, b)| a + b).collect();
    data.prox(&arg2, rho2, c, &mut out[lay.z2()]);
    for i in 0..n {
        out[lay.u(lay.z1()).start + i] = u1[i] + x1[i] - out[i];
    }
    for i in 0..m {
        out[lay.u(lay.z2()).start + i] = u2[i] + x2[i] - out[lay.z2().start + i];
    }
    if use3 {
        let x3: Vec<f64> = y.iter().zip(z3).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
        let arg3: Vec<f64> = x3.iter().zip(u3).map(|(a, b)| a + b).collect();
        reg.prox(&arg3, rho3, &mut out[lay.z3()]);
        for i in 0..n {
            out[lay.u(lay.z3()).start + i] = u3[i] + x3[i] - out[lay.z3().start + i];
        }
    } else {
        out[lay.z3()].copy_from_slice(z3);
        out[lay.u(lay.z3())].copy_from_slice(u3);
    }

    if !want_residuals {
        return None;
    }
    let (nz1, nz2, nz3) = (&out[lay.z1()], &out[lay.z2()], &out[lay.z3()]);
    let cay: Vec<f64> = ay.iter().map(|v| c * v).collect();
    let block_r = [dist(y, nz1), dist(&cay, nz2), if use3 { dist(y, nz3) } else { 0.0 }];
    let mut s1: Vec<f64> = nz1.iter().zip(z1).map(|(a, b)| rho1 * (a - b)).collect();
    let dz2: Vec<f64> = nz2.iter().zip(z2).map(|(a, b)| rho2 * c * (a - b)).collect();
    let mut s2 = f.apply_t(&dz2);
    let mut s3: Vec<f64> = nz3.iter().zip(z3).map(|(a, b)| rho3 * (a - b)).collect();
    f.tangent(&mut s1);
    f.tangent(&mut s2);
    f.tangent(&mut s3);
    let norm = |v: &[f64]| dot(v, v).sqrt();
    // Data block measured in unscaled units for the stopping test.
    let r2 = block_r[1] / c;
    Some(Residuals {
        primal: (block_r[0].powi(2) + r2 * r2 + block_r[2].powi(2)).sqrt(),
        dual: (0..n).map(|i| (s1[i] + s2[i] + s3[i]).powi(2)).sum::<f64>().sqrt(),
        block_r,
        block_s: [norm(&s1), norm(&s2), norm(&s3)],
    })
}

/// Type-II Anderson acceleration over the last few fixed-point steps.
struct Anderson {
    memory: usize,
    dw: Vec<Vec<f64>>,
    df: Vec<Vec<f64>>,
    last: Option<(Vec<f64>, Vec<f64>)>,
}

impl Anderson {
    fn new(memory: usize) -> Self {
        Self {
            memory,
            dw: Vec::new(),
            df: Vec::new(),
            last: None,
        }
    }

    fn reset(&mut self) {
        self.dw.clear();
        self.df.clear();
        self.last = None;
    }

    /// Records `(w, T(w))` and returns the extrapolated next point, if any.
    fn extrapolate(&mut self, w: &[f64], tw: &[f64]) -> Option<Vec<f64>> {
        if self.memory == 0 {
            return None;
        }
        let fk: Vec<f64> = tw.iter().zip(w).map(|(a, b)| a - b).collect();
        if let Some((pw, pf)) = self.last.take() {
            if self.dw.len() == self.memory {
                self.dw.remove(0);
                self.df.remove(0);
            }
            self.dw.push(w.iter().zip(&pw).map(|(a, b)| a - b).collect());
            self.df.push(fk.iter().zip(&pf).map(|(a, b)| a - b).collect());
        }
        self.last = Some((w.to_vec(), fk.clone()));
        let k = self.df.len();
        if k == 0 {
            return None;
        }
        // γ = argmin ‖f_k − ΔF γ‖ with a small Tikhonov term.
        let mut g = vec![0.0; k * k];
        let mut rhs = vec![0.0; k];
        let mut trace = 0.0;
        for i in 0..k {
            rhs[i] = dot(&self.df[i], &fk);
            for j in 0..=i {
                let v = dot(&self.df[i], &self.df[j]);
                g[i * k + j] = v;
                g[j * k + i] = v;
            }
            trace += g[i * k + i];
        }
        let reg = 1e-10 * trace.max(f64::MIN_POSITIVE);
        for i in 0..k {
            g[i * k + i] += reg;
        }
        let gamma = solve_dense(&mut g, &mut rhs, k)?;
        let mut next = tw.to_vec();
        for i in 0..k {
            let gi = gamma[i];
            for ((x, a), b) in next.iter_mut().zip(&self.dw[i]).zip(&self.df[i]) {
                *x -= gi * (a + b);
            }
        }
        next.iter().all(|v| v.is_finite()).then_some(next)
    }
}

/// Gaussian elimination with partial pivoting on a row-major `k × k` system.
fn solve_dense(a: &mut [f64], b: &mut [f64], k: usize) -> Option<Vec<f64>> {
    for col in 0..k {
        let piv = (col..k).max_by(|&i, &j| a[i * k + col].abs().total_cmp(&a[j * k + col].abs()))?;
        if a[piv * k + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for j in 0..k {
                a.swap(piv * k + j, col * k + j);
            }
            b.swap(piv, col);
        }
        for i in col + 1..k {
            let fct = a[i * k + col] / a[col * k + col];
            for j in col..k {
                a[i * k + j] -= fct * a[col * k + j];
            }
            b[i] -= fct * b[col];
        }
    }
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let s: f64 = (i + 1..k).map(|j| a[i * k + j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i * k + i];
    }
    Some(x)
}

/// Growth of the fixed-point residual tolerated after an accelerated step.
const SAFEGUARD: f64 = 1.0;

/// Runs the splitting iterations.
pub fn solve(
    f: &Factorization,
    data: &DataTerm,
    reg: &Regularizer,
    settings: &AdmmSettings,
    warm: Option<AdmmState>,
) -> AdmmOutput {
    let lay = Layout { n: f.n, m: f.m };
    let c = f.scale;
    let blocks = if reg.active() { 3 } else { 2 };
    let rho_lo = settings.rho * 1e-6;
    let rho_hi = settings.rho * 1e6;

    let (mut w, mut rho) = match warm {
        Some(s) if s.w.len() == lay.len() => (s.w, s.rho),
        _ => {
            let mut w = vec![0.0; lay.len()];
            w[lay.z1()].copy_from_slice(&f.y0);
            for (o, v) in w[lay.z2()].iter_mut().zip(&f.ay0) {
                *o = c * v;
            }
            w[lay.z3()].copy_from_slice(&f.y0);
            (w, [settings.rho; 3])
        }
    };

    let mut ws = Workspace {
        vbar: vec![0.0; f.n],
        v2: vec![0.0; f.m],
        t: vec![0.0; f.lambda.len()],
        h: vec![0.0; f.lambda.len()],
        y: vec![0.0; f.n],
        ay: vec![0.0; f.m],
    };
    let mut tw = vec![0.0; lay.len()];
    let mut aa = Anderson::new(settings.anderson);
    // Plain step and its residual norm, kept while an accelerated point is on trial.
    let mut fallback: Option<(Vec<f64>, f64)> = None;
    let (mut rp, mut rd) = (f64::INFINITY, f64::INFINITY);
    let mut last = None;
    let mut converged = false;
    let mut iters = 0;

    for k in 1..=settings.max_iters {
        iters = k;
        let check = k % CHECK_EVERY == 0 || k == settings.max_iters;
        let res = step(f, data, reg, rho, settings.relax, &w, &mut tw, &mut ws, check);
        let fnorm = dist(&tw, &w);
        if let Some((plain, prev)) = fallback.take() {
            if !(fnorm <= SAFEGUARD * prev) {
                w = plain;
                aa.reset();
                continue;
            }
        }
        if let Some(r) = res {
            rp = r.primal;
            rd = r.dual;
            if rp <= settings.tol && rd <= settings.tol {
                converged = true;
                w.copy_from_slice(&tw);
                break;
            }
            last = Some(r);
        }
        if k % ADAPT_EVERY == 0 {
            if let Some(r) = last.take() {
                let mut changed = false;
                for b in 0..blocks {
                    let factor = if r.block_r[b] > ADAPT_MU * r.block_s[b] {
                        ADAPT_TAU
                    } else if r.block_s[b] > ADAPT_MU * r.block_r[b] {
                        1.0 / ADAPT_TAU
                    } else {
                        1.0
                    };
                    let next = (rho[b] * factor).clamp(rho_lo, rho_hi);
                    if next != rho[b] {
                        let ratio = next / rho[b];
                        rho[b] = next;
                        let ur = match b {
                            0 => lay.u(lay.z1()),
                            1 => lay.u(lay.z2()),
                            _ => lay.u(lay.z3()),
                        };
                        for v in &mut tw[ur] {
                            *v /= ratio;
                        }
                        changed = true;
                    }
                }
                if changed {
                    aa.reset();
                    std::mem::swap(&mut w, &mut tw);
                    continue;
                }
            }
        }
        match aa.extrapolate(&w, &tw) {
            Some(next) => {
                fallback = Some((tw.clone(), fnorm));
                w = next;
            }
            None => std::mem::swap(&mut w, &mut tw),
        }
    }

    AdmmOutput {
        y: ws.y,
        iterations: iters,
        converged,
        primal_residual: rp,
        dual_residual: rd,
        state: AdmmState { w, rho },
    }
}

/// Shared factorization for a sensing map, built on first use.
pub fn factorization(map: &SensingMap) -> Result<Arc<Factorization>> {
    if let Some(f) = map.factor.get() {
        return Ok(f.clone());
    }
    let f = Arc::new(Factorization::build(map)?);
    Ok(map.factor.get_or_init(|| f).clone())
}
