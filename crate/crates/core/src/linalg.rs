//! Dense helpers shared by the operator modules. Matrices act on nodal values,
//! so the continuum `L²` structure enters only through the quadrature weights.

use nalgebra::{DMatrix, DVector, Dyn, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type RMatrix = DMatrix<f64>;
pub type CVector = DVector<Complex64>;

pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn to_complex(m: &RMatrix) -> CMatrix {
    m.map(c)
}

fn norm1_complex(m: &CMatrix) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Inverse by partial-pivot LU plus a 1-norm condition estimate.
pub fn invert_with_condition(m: &CMatrix, what: &str) -> Result<(CMatrix, f64)> {
    let inv = m.clone().try_inverse().ok_or_else(|| Error::Singular {
        what: what.to_string(),
        condition: f64::INFINITY,
    })?;
    let condition = norm1_complex(m) * norm1_complex(&inv);
    if !condition.is_finite() || condition > 1e14 {
        return Err(Error::Singular { what: what.to_string(), condition });
    }
    Ok((inv, condition))
}

pub fn invert_real(m: &RMatrix, what: &str) -> Result<RMatrix> {
    let inv = m.clone().try_inverse().ok_or_else(|| Error::Singular {
        what: what.to_string(),
        condition: f64::INFINITY,
    })?;
    if inv.iter().any(|x| !x.is_finite()) {
        return Err(Error::Singular { what: what.to_string(), condition: f64::INFINITY });
    }
    Ok(inv)
}

/// Spectral norm of `A` as an operator on the weighted space `Σ wᵢ|fᵢ|²`.
pub fn weighted_operator_norm(a: &CMatrix, weights: &[f64]) -> f64 {
    let n = a.nrows();
    let sq: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let b = CMatrix::from_fn(n, n, |i, j| a[(i, j)] * (sq[i] / sq[j]));
    b.singular_values().iter().copied().fold(0.0, f64::max)
}

pub fn weighted_operator_norm_real(a: &RMatrix, weights: &[f64]) -> f64 {
    let n = a.nrows();
    let sq: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let b = RMatrix::from_fn(n, n, |i, j| a[(i, j)] * (sq[i] / sq[j]));
    b.singular_values().iter().copied().fold(0.0, f64::max)
}

pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Weighted inner product `⟨f, g⟩ = Σ wᵢ fᵢ conj(gᵢ)`.
pub fn inner(f: &CVector, g: &CVector, weights: &[f64]) -> Complex64 {
    f.iter().zip(g.iter()).zip(weights).map(|((a, b), w)| a * b.conj() * *w).sum()
}

pub fn weighted_norm(f: &CVector, weights: &[f64]) -> f64 {
    inner(f, f, weights).re.max(0.0).sqrt()
}

/// Symmetric eigendecomposition with off-diagonal tolerance `4ε`.
pub fn symmetric_eigen(m: RMatrix) -> SymmetricEigen<f64, Dyn> {
    let n = m.nrows();
    match SymmetricEigen::try_new(m.clone(), 4.0 * f64::EPSILON, 1000 * n.max(1)) {
        Some(eig) => eig,
        None => {
            log::warn!("symmetric eigensolver hit its iteration cap at n = {n}; retrying without a cap");
            SymmetricEigen::new(m)
        }
    }
}
