//! Ground-truth quantum channels and their process matrices.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::basis::{coefficient_vector, matrix_to_nested, natural_basis, OperatorBasis};
use crate::error::{Error, Result};
use crate::matcore::{hermitian_eig_unchecked, kron, vec, CMatrix, ONE, ZERO};
#[cfg(test)]
use crate::matcore::C64;

/// Tolerance on `Σ K†K = I`.
pub const KRAUS_TP_TOL: f64 = 1e-10;
/// Smallest eigenvalue still accepted as PSD for numerically produced matrices.
pub const PSD_TOL: f64 = -1e-8;
/// Tolerance on the trace-preserving equality of a process matrix.
pub const TP_TOL: f64 = 1e-8;

/// A CPTP map given by Kraus operators.
#[derive(Debug, Clone)]
pub struct KrausChannel {
    n_s: usize,
    kraus: Vec<CMatrix>,
}

impl KrausChannel {
    pub fn new(kraus: Vec<CMatrix>) -> Result<Self> {
        let first = kraus
            .first()
            .ok_or_else(|| Error::InvalidProblem("channel needs at least one Kraus operator".into()))?;
        let n_s = first.rows();
        for k in &kraus {
            if k.shape() != (n_s, n_s) {
                return Err(Error::DimensionMismatch {
                    expected: n_s,
                    got: k.rows().max(k.cols()),
                });
            }
            k.check_finite()?;
        }
        let ch = Self { n_s, kraus };
        let res = ch.tp_residual();
        if res > KRAUS_TP_TOL {
            return Err(Error::NotTracePreserving(res));
        }
        Ok(ch)
    }

    pub fn n_s(&self) -> usize {
        self.n_s
    }

    pub fn kraus(&self) -> &[CMatrix] {
        &self.kraus
    }

    /// `‖Σ K†K − I‖_F`.
    pub fn tp_residual(&self) -> f64 {
        let mut acc = CMatrix::zeros(self.n_s, self.n_s);
        for k in &self.kraus {
            acc = &acc + &(&k.adjoint() * k);
        }
        (&acc - &CMatrix::identity(self.n_s)).frobenius_norm()
    }

    /// `Σ K ρ K†`.
    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(self.n_s, self.n_s);
        for k in &self.kraus {
            out = &out + &(&(k * rho) * &k.adjoint());
        }
        out
    }
}

/// The channel `ρ → UρU†`.
pub fn unitary_channel(u: &CMatrix) -> Result<KrausChannel> {
    if !u.is_square() {
        return Err(Error::NotSquare(u.rows(), u.cols()));
    }
    let defect = u.unitary_defect();
    if defect > KRAUS_TP_TOL {
        return Err(Error::NotUnitary(defect));
    }
    KrausChannel::new(vec![u.clone()])
}

pub fn pauli_x() -> CMatrix {
    CMatrix::from_fn(2, 2, |i, j| if i != j { ONE } else { ZERO })
}

/// Independent bit flips on each of `qubits` qubits with probability `p_bf`.
///
/// Kraus operators are the tensor products of `√(1−p)·I` and `√p·σ_x`,
/// ordered with the first qubit most significant.
pub fn bitflip_channel(qubits: usize, p_bf: f64) -> Result<KrausChannel> {
    if !(0.0..=1.0).contains(&p_bf) || p_bf.is_nan() {
        return Err(Error::InvalidProbability(p_bf));
    }
    if qubits == 0 {
        return Err(Error::InvalidProblem("at least one qubit is required".into()));
    }
    let single = [
        CMatrix::identity(2).scale_real((1.0 - p_bf).sqrt()),
        pauli_x().scale_real(p_bf.sqrt()),
    ];
    let mut ops = vec![CMatrix::identity(1)];
    for _ in 0..qubits {
        ops = ops
            .iter()
            .flat_map(|k| single.iter().map(move |s| kron(k, s)))
            .collect();
    }
    KrausChannel::new(ops)
}

/// Hermitian process matrix tied to an operator basis.
#[derive(Debug, Clone)]
pub struct ProcessMatrix {
    basis: Arc<OperatorBasis>,
    x: CMatrix,
}

/// Diagnostics for the feasibility conditions of a process matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CptpResiduals {
    pub min_eigenvalue: f64,
    pub tp_residual: f64,
    pub hermitian_defect: f64,
}

impl ProcessMatrix {
    /// Validates Hermiticity, positivity and the trace-preserving equality.
    pub fn new(basis: Arc<OperatorBasis>, x: CMatrix) -> Result<Self> {
        let d = basis.dim();
        if x.shape() != (d, d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.rows(),
            });
        }
        x.check_finite()?;
        let pm = Self { basis, x };
        let r = pm.residuals();
        let scale = pm.x.frobenius_norm().max(1.0);
        if r.hermitian_defect > 1e-10 * scale {
            return Err(Error::NotHermitian(r.hermitian_defect / scale));
        }
        if r.min_eigenvalue < PSD_TOL {
            return Err(Error::InvalidProblem(format!(
                "process matrix not PSD (min eigenvalue {:.3e})",
                r.min_eigenvalue
            )));
        }
        if r.tp_residual > TP_TOL {
            return Err(Error::NotTracePreserving(r.tp_residual));
        }
        Ok(pm)
    }

    pub(crate) fn new_unchecked(basis: Arc<OperatorBasis>, x: CMatrix) -> Self {
        Self { basis, x }
    }

    pub fn basis(&self) -> &Arc<OperatorBasis> {
        &self.basis
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.x
    }

    pub fn into_matrix(self) -> CMatrix {
        self.x
    }

    pub fn n_s(&self) -> usize {
        self.basis.n_s()
    }

    /// `Σ X_αβ Γ_β†Γ_α`, which equals `I` for a trace-preserving map.
    pub fn tp_operator(&self) -> CMatrix {
        let n = self.basis.n_s();
        let d = self.basis.dim();
        let mut acc = CMatrix::zeros(n, n);
        for b in 0..d {
            let gb = self.basis.gamma(b).adjoint();
            for a in 0..d {
                let xab = self.x[(a, b)];
                if xab == ZERO {
                    continue;
                }
                acc = &acc + &(&gb * self.basis.gamma(a)).scale(xab);
            }
        }
        acc
    }

    pub fn residuals(&self) -> CptpResiduals {
        let n = self.basis.n_s();
        let eig = hermitian_eig_unchecked(&self.x);
        CptpResiduals {
            min_eigenvalue: eig.values.last().copied().unwrap_or(0.0),
            tp_residual: (&self.tp_operator() - &CMatrix::identity(n)).frobenius_norm(),
            hermitian_defect: self.x.hermitian_defect(),
        }
    }

    pub fn to_json(&self) -> ProcessMatrixJson {
        ProcessMatrixJson {
            basis: self.basis.label().to_string(),
            n_s: self.basis.n_s(),
            x: matrix_to_nested(&self.x),
        }
    }
}

/// Serialized process matrix: rows of `[re, im]` pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProcessMatrixJson {
    pub basis: String,
    #[serde(rename = "n_S")]
    pub n_s: usize,
    #[serde(rename = "X")]
    pub x: Vec<Vec<[f64; 2]>>,
}

/// `X = Σ_i c_i c_i†` with `c_i` the coefficient vector of Kraus operator `K_i`.
pub fn process_matrix(ch: &KrausChannel, basis: &Arc<OperatorBasis>) -> Result<ProcessMatrix> {
    if ch.n_s != basis.n_s() {
        return Err(Error::DimensionMismatch {
            expected: basis.n_s(),
            got: ch.n_s,
        });
    }
    let d = basis.dim();
    let mut x = CMatrix::zeros(d, d);
    for k in &ch.kraus {
        let c = coefficient_vector(k, basis)?;
        x = &x + &CMatrix::outer(&c, &c);
    }
    ProcessMatrix::new(basis.clone(), x.hermitian_part())
}

fn check_density(rho: &CMatrix, n_s: usize) -> Result<()> {
    if rho.shape() != (n_s, n_s) {
        return Err(Error::DimensionMismatch {
            expected: n_s,
            got: rho.rows(),
        });
    }
    rho.check_finite()?;
    if rho.hermitian_defect() > 1e-10 * rho.frobenius_norm().max(1.0) {
        return Err(Error::InvalidState("not Hermitian".into()));
    }
    let tr = rho.trace();
    if (tr - ONE).norm() > 1e-10 {
        return Err(Error::InvalidState(format!("trace {tr}")));
    }
    let min = hermitian_eig_unchecked(rho).values.last().copied().unwrap_or(0.0);
    if min < -1e-10 {
        return Err(Error::InvalidState(format!("negative eigenvalue {min:.3e}")));
    }
    Ok(())
}

/// `ρ̂ = Σ X_αβ Γ_α ρ Γ_β†`.
pub fn apply(x: &ProcessMatrix, rho: &CMatrix) -> Result<CMatrix> {
    let basis = &x.basis;
    check_density(rho, basis.n_s())?;
    let d = basis.dim();
    let left: Vec<CMatrix> = (0..d).map(|a| basis.gamma(a) * rho).collect();
    let mut out = CMatrix::zeros(basis.n_s(), basis.n_s());
    for b in 0..d {
        let gb = basis.gamma(b).adjoint();
        let mut col = CMatrix::zeros(basis.n_s(), basis.n_s());
        for (a, l) in left.iter().enumerate() {
            let xab = x.x[(a, b)];
            if xab != ZERO {
                col = &col + &l.scale(xab);
            }
        }
        out = &out + &(&col * &gb);
    }
    Ok(out)
}

/// Process fidelity `u† X u / n_S²` with `u = vec(U)` and `X` in the natural basis.
pub fn process_fidelity(x: &ProcessMatrix, u: &CMatrix) -> Result<f64> {
    let n = x.n_s();
    if u.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: u.rows(),
        });
    }
    let nat = Arc::new(natural_basis(n)?);
    let x_nat = crate::basis::change_basis(x, &nat)?;
    let f = x_nat.matrix().quadratic_form(&vec(u)).re / (n * n) as f64;
    Ok(f.clamp(0.0, 1.0))
}

/// `(1/d)·‖X₁ − X₂‖_F` with `d = n_S²`, the dimension of the process matrix.
pub fn rms_distance(x1: &ProcessMatrix, x2: &ProcessMatrix) -> Result<f64> {
    same_basis(x1, x2)?;
    Ok(rms_norm(&(&x1.x - &x2.x)))
}

/// `(1/d)·‖X‖_F` for a `d × d` matrix.
pub fn rms_norm(x: &CMatrix) -> f64 {
    x.frobenius_norm() / x.rows() as f64
}

fn same_basis(x1: &ProcessMatrix, x2: &ProcessMatrix) -> Result<()> {
    if Arc::ptr_eq(&x1.basis, &x2.basis) || *x1.basis == *x2.basis {
        Ok(())
    } else {
        Err(Error::BasisMismatch(format!(
            "'{}' (n_S={}) vs '{}' (n_S={})",
            x1.basis.label(),
            x1.basis.n_s(),
            x2.basis.label(),
            x2.basis.n_s()
        )))
    }
}

/// Ideal unitary's process matrix, convenient for the bit-flip testbed.
pub fn ideal_process_matrix(u: &CMatrix, basis: &Arc<OperatorBasis>) -> Result<ProcessMatrix> {
    process_matrix(&unitary_channel(u)?, basis)
}

/// Closed-form RMS distance between `bitflip_channel(2, p)` and the identity.
///
/// The four Kraus directions are orthogonal, so `X_true − X_ideal` is diagonal
/// in that frame with weights `4((1−p)² − 1)`, `4p(1−p)` (twice) and `4p²`.
pub fn bitflip_baseline_rms(p: f64) -> f64 {
    let q = 1.0 - p;
    let s = ((q * q - 1.0).powi(2) + 2.0 * (p * q).powi(2) + p.powi(4)).sqrt();
    4.0 * s / 16.0
}

#[cfg(test)]
fn complex(re: f64) -> C64 {
    C64::new(re, 0.0)
}
