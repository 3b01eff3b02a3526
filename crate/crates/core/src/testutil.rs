//! Dense reference computations shared by unit tests.

use nalgebra::{DMatrix, DVector};

/// `B (BᵀB + λ DᵀD)⁻¹ Bᵀ` by a direct solve.
pub fn dense_smoother(b: &DMatrix<f64>, d: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let lhs = b.transpose() * b + d.transpose() * d * lambda;
    b * lhs.lu().solve(&b.transpose()).expect("nonsingular")
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Column stacking.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}
