//! Orthonormal operator bases for `n_S × n_S` matrices.
//!
//! A basis is stored through its synthesis matrix: column `α` of
//! [`OperatorBasis::synthesis`] is `vec(Γ_α)`. The natural basis therefore has
//! the identity as synthesis matrix, and every change of basis is a unitary
//! product of synthesis matrices.

use serde::{Deserialize, Serialize};

use crate::channel::ProcessMatrix;
use crate::error::{Error, Result};
use crate::matcore::{unvec, vec, CMatrix, C64, ONE, ZERO};

/// Orthonormality tolerance for bases built here.
pub const CONSTRUCTION_TOL: f64 = 1e-12;
/// Orthonormality tolerance for bases supplied from outside.
pub const VALIDATION_TOL: f64 = 1e-10;

pub const NATURAL: &str = "natural";
pub const IDEAL_SVD: &str = "ideal-svd";

#[derive(Debug, Clone)]
pub struct OperatorBasis {
    n_s: usize,
    gammas: Vec<CMatrix>,
    synthesis: CMatrix,
    label: String,
}

impl PartialEq for OperatorBasis {
    fn eq(&self, other: &Self) -> bool {
        self.n_s == other.n_s
            && self.label == other.label
            && (&self.synthesis - &other.synthesis).max_abs() <= CONSTRUCTION_TOL
    }
}

impl OperatorBasis {
    /// Builds a basis from explicit matrices, checking orthonormality.
    pub fn from_gammas(label: impl Into<String>, gammas: Vec<CMatrix>) -> Result<Self> {
        let d = gammas.len();
        let n_s = (d as f64).sqrt().round() as usize;
        if n_s < 1 || n_s * n_s != d {
            return Err(Error::InvalidBasis(format!(
                "{d} matrices is not a perfect square count"
            )));
        }
        if let Some(g) = gammas.iter().find(|g| g.shape() != (n_s, n_s)) {
            return Err(Error::InvalidBasis(format!(
                "element of shape {:?} in a basis for {n_s}x{n_s} matrices",
                g.shape()
            )));
        }
        let mut data = Vec::with_capacity(d * d);
        for g in &gammas {
            data.extend(vec(g));
        }
        let synthesis = CMatrix::from_col_major(d, d, data)?;
        let basis = Self {
            n_s,
            gammas,
            synthesis,
            label: label.into(),
        };
        let err = basis.orthonormality_error();
        if err > VALIDATION_TOL {
            return Err(Error::InvalidBasis(format!(
                "Gram matrix deviates from identity by {err:.3e}"
            )));
        }
        Ok(basis)
    }

    fn from_synthesis(label: &str, n_s: usize, synthesis: CMatrix) -> Self {
        let d = n_s * n_s;
        let gammas = (0..d)
            .map(|a| unvec(synthesis.column(a), n_s, n_s).expect("column has n_S² entries"))
            .collect();
        Self {
            n_s,
            gammas,
            synthesis,
            label: label.to_string(),
        }
    }

    /// Hilbert-space dimension `n_S`.
    pub fn n_s(&self) -> usize {
        self.n_s
    }

    /// Number of basis elements, `n_S²`.
    pub fn dim(&self) -> usize {
        self.n_s * self.n_s
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn gammas(&self) -> &[CMatrix] {
        &self.gammas
    }

    pub fn gamma(&self, alpha: usize) -> &CMatrix {
        &self.gammas[alpha]
    }

    /// Matrix whose columns are `vec(Γ_α)`.
    pub fn synthesis(&self) -> &CMatrix {
        &self.synthesis
    }

    /// Gram matrix `G_αβ = Tr(Γ_α† Γ_β)`.
    pub fn gram(&self) -> CMatrix {
        &self.synthesis.adjoint() * &self.synthesis
    }

    /// Largest entrywise deviation of the Gram matrix from identity.
    pub fn orthonormality_error(&self) -> f64 {
        (&self.gram() - &CMatrix::identity(self.dim())).max_abs()
    }

    pub fn to_json(&self) -> BasisJson {
        BasisJson {
            label: self.label.clone(),
            n_s: self.n_s,
            gammas: self.gammas.iter().map(matrix_to_nested).collect(),
        }
    }

    pub fn from_json(json: &BasisJson) -> Result<Self> {
        let gammas = json
            .gammas
            .iter()
            .map(|g| nested_to_matrix(g))
            .collect::<Result<Vec<_>>>()?;
        let basis = Self::from_gammas(json.label.clone(), gammas)?;
        if basis.n_s != json.n_s {
            return Err(Error::DimensionMismatch {
                expected: json.n_s,
                got: basis.n_s,
            });
        }
        Ok(basis)
    }
}

/// Serialized basis: each element as rows of `[re, im]` pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisJson {
    pub label: String,
    #[serde(rename = "n_S")]
    pub n_s: usize,
    pub gammas: Vec<Vec<Vec<[f64; 2]>>>,
}

pub(crate) fn matrix_to_nested(m: &CMatrix) -> Vec<Vec<[f64; 2]>> {
    (0..m.rows())
        .map(|i| (0..m.cols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

pub(crate) fn nested_to_matrix(rows: &[Vec<[f64; 2]>]) -> Result<CMatrix> {
    let rows: Vec<Vec<C64>> = rows
        .iter()
        .map(|r| r.iter().map(|&[re, im]| C64::new(re, im)).collect())
        .collect();
    CMatrix::from_rows(&rows)
}

/// Matrix units `Γ_α = e_i e_jᵀ` with `α = i + j·n_S` (column-major).
pub fn natural_basis(n_s: usize) -> Result<OperatorBasis> {
    if n_s < 2 {
        return Err(Error::InvalidBasis(format!("n_S must be at least 2, got {n_s}")));
    }
    Ok(OperatorBasis::from_synthesis(
        NATURAL,
        n_s,
        CMatrix::identity(n_s * n_s),
    ))
}

/// Basis in which the unitary channel `ρ → UρU†` has a single non-zero
/// process-matrix entry, `X₁₁ = n_S`.
///
/// The first element is `U/√n_S`. The remaining elements complete it with a
/// Householder reflection that maps `e₁` onto `vec(U)/√n_S`; the reflection
/// leaves every direction with zero `(1,1)` natural coordinate untouched.
pub fn ideal_svd_basis(u: &CMatrix) -> Result<OperatorBasis> {
    if !u.is_square() {
        return Err(Error::NotSquare(u.rows(), u.cols()));
    }
    let defect = u.unitary_defect();
    if defect > VALIDATION_TOL {
        return Err(Error::NotUnitary(defect));
    }
    let n_s = u.rows();
    if n_s < 2 {
        return Err(Error::InvalidBasis(format!("n_S must be at least 2, got {n_s}")));
    }
    let d = n_s * n_s;
    let scale = 1.0 / (n_s as f64).sqrt();
    let target: Vec<C64> = vec(u).iter().map(|z| z * scale).collect();

    // Rotate the target so its first component is real non-negative.
    let lead = target[0];
    let phase = if lead.norm() > 0.0 { lead / lead.norm() } else { ONE };
    let w: Vec<C64> = target.iter().map(|z| z * phase.conj()).collect();
    let mut v = w.iter().map(|z| -z).collect::<Vec<_>>();
    v[0] += ONE;
    let vnorm2: f64 = v.iter().map(|z| z.norm_sqr()).sum();

    let mut synthesis = CMatrix::identity(d);
    if vnorm2 > 1e-30 {
        let tau = 2.0 / vnorm2;
        synthesis = CMatrix::from_fn(d, d, |i, j| {
            let delta = if i == j { ONE } else { ZERO };
            delta - v[i] * v[j].conj() * tau
        });
    }
    for z in synthesis.column_mut(0) {
        *z *= phase;
    }
    let basis = OperatorBasis::from_synthesis(IDEAL_SVD, n_s, synthesis);
    debug_assert!(basis.orthonormality_error() <= CONSTRUCTION_TOL);
    Ok(basis)
}

/// Expansion coefficients `c_α = Tr(Γ_α† A)`.
pub fn coefficient_vector(a: &CMatrix, basis: &OperatorBasis) -> Result<Vec<C64>> {
    if a.shape() != (basis.n_s, basis.n_s) {
        return Err(Error::DimensionMismatch {
            expected: basis.n_s,
            got: a.rows(),
        });
    }
    Ok(basis.synthesis.adjoint().mat_vec(&vec(a)))
}

/// `Σ c_α Γ_α`.
pub fn synthesize(coeffs: &[C64], basis: &OperatorBasis) -> Result<CMatrix> {
    if coeffs.len() != basis.dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            got: coeffs.len(),
        });
    }
    unvec(&basis.synthesis.mat_vec(coeffs), basis.n_s, basis.n_s)
}

/// Unitary `S_αγ = Tr(Γ_α† Γ'_γ)` taking coefficients in `to` to `from`.
pub fn transition_matrix(from: &OperatorBasis, to: &OperatorBasis) -> Result<CMatrix> {
    if from.n_s != to.n_s {
        return Err(Error::BasisMismatch(format!(
            "n_S {} vs {}",
            from.n_s, to.n_s
        )));
    }
    Ok(&from.synthesis.adjoint() * &to.synthesis)
}

/// Re-expresses a process matrix in another basis: `X' = S† X S`.
pub fn change_basis(x: &ProcessMatrix, to: &std::sync::Arc<OperatorBasis>) -> Result<ProcessMatrix> {
    let s = transition_matrix(x.basis(), to)?;
    let moved = &(&s.adjoint() * x.matrix()) * &s;
    Ok(ProcessMatrix::new_unchecked(to.clone(), moved.hermitian_part()))
}
