//! Real coordinates of Hermitian matrices.
//!
//! A `d×d` Hermitian matrix has `d²` real degrees of freedom. Entries are
//! visited column by column over the upper triangle; a diagonal entry
//! contributes one coordinate, an off-diagonal entry `(α, β)` with `α < β`
//! contributes its real and imaginary parts.
//!
//! The *orthonormal* coordinates scale the off-diagonal parts by `√2`, so the
//! Euclidean inner product of coordinates equals `Re Tr(X Y)`. The
//! *interleaved* coordinates are the raw values.

use crate::matcore::{CMatrix, C64};

const SQRT2: f64 = std::f64::consts::SQRT_2;

pub fn count(d: usize) -> usize {
    d * d
}

/// Orthonormal coordinates of the Hermitian part of `x`.
pub fn to_coords(x: &CMatrix) -> Vec<f64> {
    let d = x.rows();
    let mut out = Vec::with_capacity(d * d);
    for b in 0..d {
        for a in 0..b {
            let z = (x[(a, b)] + x[(b, a)].conj()) * 0.5;
            out.push(SQRT2 * z.re);
            out.push(SQRT2 * z.im);
        }
        out.push(x[(b, b)].re);
    }
    out
}

/// Inverse of [`to_coords`].
pub fn from_coords(y: &[f64], d: usize) -> CMatrix {
    debug_assert_eq!(y.len(), d * d);
    let mut x = CMatrix::zeros(d, d);
    let s = x.as_mut_slice();
    let mut k = 0;
    for b in 0..d {
        for a in 0..b {
            let z = C64::new(y[k], y[k + 1]) / SQRT2;
            s[a + b * d] = z;
            s[b + a * d] = z.conj();
            k += 2;
        }
        s[b + b * d] = C64::new(y[k], 0.0);
        k += 1;
    }
    x
}

/// Raw real/imaginary parts in coordinate order.
pub fn interleaved(x: &CMatrix) -> Vec<f64> {
    let d = x.rows();
    let mut out = Vec::with_capacity(d * d);
    for b in 0..d {
        for a in 0..b {
            let z = x[(a, b)];
            out.push(z.re);
            out.push(z.im);
        }
        out.push(x[(b, b)].re);
    }
    out
}

/// How often each coordinate appears in a sum over all `(α, β)`: 1 on the
/// diagonal, 2 off it.
pub fn multiplicities(d: usize) -> Vec<f64> {
    per_kind(d, 1.0, 2.0)
}

/// Factor converting orthonormal to interleaved coordinates: `1` or `1/√2`.
pub fn to_interleaved_scale(d: usize) -> Vec<f64> {
    per_kind(d, 1.0, 1.0 / SQRT2)
}

fn per_kind(d: usize, diag: f64, off: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(d * d);
    for b in 0..d {
        out.extend(std::iter::repeat_n(off, 2 * b));
        out.push(diag);
    }
    out
}
