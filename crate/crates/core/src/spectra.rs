//! Per-axis spectral preprocessing.
//!
//! For a design matrix `B` and difference matrix `D` we diagonalise
//! `G^{-1/2} DᵀD G^{-1/2} = U diag(s) Uᵀ` with `G = BᵀB`, and keep
//! `A = B G^{-1/2} U`. The univariate P-spline smoother is then
//! `S(λ) = A diag(1 / (1 + λ s)) Aᵀ`, so any `λ` costs `O(c)` for the trace
//! and two thin products for an application.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::basis::{design_matrix, diff_matrix, AxisSpec};
use crate::error::{Result, SmoothError};

/// Eigenvalues below this fraction of the largest are set to exactly zero.
pub const EIGEN_CLAMP: f64 = 1e-12;
/// Gram matrices whose eigenvalue ratio falls below this are rejected.
pub const GRAM_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct AxisSpectrum {
    /// `n x c`, orthonormal columns.
    pub a: DMatrix<f64>,
    /// Penalty eigenvalues, ascending, nonnegative.
    pub s: Vec<f64>,
    /// `G^{-1/2} U` (`c x c`); maps the rotated coefficient space back to
    /// B-spline coefficients, since `B · coef_map = A`.
    pub coef_map: DMatrix<f64>,
    /// Present when the spectrum was built from coordinates and a spec.
    pub spec: Option<AxisSpec>,
}

impl AxisSpectrum {
    /// Builds the spectrum for an axis observed at `points`.
    pub fn from_points(points: &[f64], spec: &AxisSpec) -> Result<Self> {
        let b = design_matrix(points, spec)?;
        let d = diff_matrix(spec.basis_dim(), spec.penalty_order)?;
        let mut out = build_spectrum(&b, &d)?;
        out.spec = Some(*spec);
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn c(&self) -> usize {
        self.a.ncols()
    }

    /// Number of exactly-zero penalty eigenvalues.
    pub fn null_dim(&self) -> usize {
        self.s.iter().filter(|&&v| v == 0.0).count()
    }

    /// Diagonal of `(I + λ diag(s))^{-1}`.
    pub fn shrinkage(&self, lambda: f64) -> Vec<f64> {
        shrinkage(&self.s, lambda)
    }

    pub fn trace(&self, lambda: f64) -> f64 {
        trace_smoother(&self.s, lambda)
    }

    /// Dense `n x n` smoother matrix. Intended for small problems and checks.
    pub fn smoother_matrix(&self, lambda: f64) -> Result<DMatrix<f64>> {
        check_lambda(lambda)?;
        let w = self.shrinkage(lambda);
        let mut aw = self.a.clone();
        for (j, mut col) in aw.column_iter_mut().enumerate() {
            col *= w[j];
        }
        Ok(aw * self.a.transpose())
    }
}

pub fn shrinkage(s: &[f64], lambda: f64) -> Vec<f64> {
    s.iter().map(|&v| 1.0 / (1.0 + lambda * v)).collect()
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(SmoothError::Domain {
            what: "lambda",
            value: lambda,
            domain: "[0, inf)",
        })
    }
}

/// Symmetric inverse square root of a symmetric positive definite matrix.
pub fn half_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(SmoothError::Dimension(format!(
            "half_inverse needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.max();
    let (imin, min) = eig.eigenvalues.argmin();
    if !(max > 0.0) || min < GRAM_TOLERANCE * max {
        let v = eig.eigenvectors.column(imin);
        let cut = 0.1 * v.amax();
        let indices = v
            .iter()
            .enumerate()
            .filter(|(_, x)| x.abs() >= cut)
            .map(|(i, _)| i)
            .collect();
        return Err(SmoothError::SingularGram { indices });
    }
    let inv_sqrt = eig.eigenvalues.map(|v| 1.0 / v.sqrt());
    let q = &eig.eigenvectors;
    let mut scaled = q.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= inv_sqrt[j];
    }
    let out = scaled * q.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

pub fn build_spectrum(b: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<AxisSpectrum> {
    if d.ncols() != b.ncols() {
        return Err(SmoothError::Dimension(format!(
            "design has {} columns but difference matrix has {}",
            b.ncols(),
            d.ncols()
        )));
    }
    let unsupported: Vec<usize> = b
        .column_iter()
        .enumerate()
        .filter(|(_, col)| col.iter().all(|&v| v == 0.0))
        .map(|(i, _)| i)
        .collect();
    if !unsupported.is_empty() {
        return Err(SmoothError::SingularGram {
            indices: unsupported,
        });
    }

    let gram = b.transpose() * b;
    let g_half_inv = half_inverse(&gram)?;
    let penalty = d.transpose() * d;
    let m = &g_half_inv * penalty * &g_half_inv;
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);

    let c = b.ncols();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let smax = eig.eigenvalues.max().max(0.0);
    let s: Vec<f64> = order
        .iter()
        .map(|&i| {
            let v = eig.eigenvalues[i];
            if v < EIGEN_CLAMP * smax {
                0.0
            } else {
                v
            }
        })
        .collect();
    let u = DMatrix::from_fn(c, c, |r, k| eig.eigenvectors[(r, order[k])]);

    let coef_map = g_half_inv * u;
    let a = b * &coef_map;
    Ok(AxisSpectrum {
        a,
        s,
        coef_map,
        spec: None,
    })
}

/// `S(λ) V` computed as `A diag(1/(1+λs)) Aᵀ V`.
pub fn apply_smoother(
    spectrum: &AxisSpectrum,
    lambda: f64,
    v: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_lambda(lambda)?;
    if v.nrows() != spectrum.n() {
        return Err(SmoothError::Dimension(format!(
            "smoother acts on {} rows, input has {}",
            spectrum.n(),
            v.nrows()
        )));
    }
    let w = spectrum.shrinkage(lambda);
    let mut inner = spectrum.a.tr_mul(v);
    for (k, mut row) in inner.row_iter_mut().enumerate() {
        row *= w[k];
    }
    Ok(&spectrum.a * inner)
}

/// `tr S(λ) = Σ 1 / (1 + λ s_k)`.
pub fn trace_smoother(s: &[f64], lambda: f64) -> f64 {
    s.iter().map(|&v| 1.0 / (1.0 + lambda * v)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn midpoints(n: usize) -> Vec<f64> {
        (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect()
    }

    fn dense_smoother(b: &DMatrix<f64>, d: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
        let lhs = b.transpose() * b + d.transpose() * d * lambda;
        let sol = lhs.lu().solve(&b.transpose()).unwrap();
        b * sol
    }

    fn setup(n: usize, seg: usize, p: usize, m: usize) -> (DMatrix<f64>, DMatrix<f64>, AxisSpectrum) {
        let spec = AxisSpec::new(p, m, seg).unwrap();
        let x = midpoints(n);
        let b = design_matrix(&x, &spec).unwrap();
        let d = diff_matrix(spec.basis_dim(), m).unwrap();
        let sp = build_spectrum(&b, &d).unwrap();
        (b, d, sp)
    }

    #[test]
    fn half_inverse_basic() {
        let i = DMatrix::<f64>::identity(4, 4);
        assert!((half_inverse(&i).unwrap() - &i).amax() < 1e-14);
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 9.0]));
        let h = half_inverse(&m).unwrap();
        assert_abs_diff_eq!(h[(0, 0)], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(h[(1, 1)], 1.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(h[(0, 1)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn half_inverse_recovers_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = DMatrix::from_fn(10, 10, |_, _| rng.random::<f64>() - 0.5);
        let m = x.transpose() * &x + DMatrix::identity(10, 10) * 0.5;
        let h = half_inverse(&m).unwrap();
        let eye = &h * &m * &h;
        assert!((eye - DMatrix::identity(10, 10)).amax() < 1e-10);
        assert!((&h - h.transpose()).amax() < 1e-14);
    }

    #[test]
    fn half_inverse_rejects_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            half_inverse(&m),
            Err(SmoothError::SingularGram { .. })
        ));
    }

    #[test]
    fn unsupported_basis_is_named() {
        // Points only in the left half leave the rightmost cubic bases empty.
        let spec = AxisSpec::cubic(10).unwrap();
        let x: Vec<f64> = (0..20).map(|i| i as f64 / 50.0).collect();
        let b = design_matrix(&x, &spec).unwrap();
        let d = diff_matrix(13, 2).unwrap();
        match build_spectrum(&b, &d) {
            Err(SmoothError::SingularGram { indices }) => {
                assert!(indices.contains(&12));
                assert!(!indices.contains(&0));
            }
            other => panic!("expected SingularGram, got {other:?}"),
        }
    }

    #[test]
    fn identity_design_gives_identity_projection() {
        let n = 6;
        let b = DMatrix::identity(n, n);
        let d = diff_matrix(n, 1).unwrap();
        let sp = build_spectrum(&b, &d).unwrap();
        assert!((sp.smoother_matrix(0.0).unwrap() - &b).amax() < 1e-12);
    }

    #[test]
    fn orthonormal_columns_and_projection() {
        let (b, _, sp) = setup(20, 10, 3, 2);
        let ata = sp.a.transpose() * &sp.a;
        assert!((ata - DMatrix::identity(13, 13)).amax() < 1e-10);
        let gram = b.transpose() * &b;
        let proj = &b * gram.lu().solve(&b.transpose()).unwrap();
        assert!((&sp.a * sp.a.transpose() - proj).amax() < 1e-10);
        assert!((&b * &sp.coef_map - &sp.a).amax() < 1e-12);
    }

    #[test]
    fn null_space_dimension_equals_penalty_order() {
        for (n, seg, p, m) in [(20, 10, 3, 2), (30, 15, 3, 3), (12, 6, 1, 1), (40, 20, 2, 2)] {
            let (_, _, sp) = setup(n, seg, p, m);
            let smax = sp.s.iter().cloned().fold(0.0, f64::max);
            let small = sp.s.iter().filter(|&&v| v < 1e-8 * smax).count();
            assert_eq!(small, m);
            assert_eq!(sp.null_dim(), m);
            assert!(sp.s.windows(2).all(|w| w[0] <= w[1]));
            assert!(sp.s.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn spectral_form_matches_direct_solve() {
        let (b, d, sp) = setup(20, 10, 3, 2);
        let direct = dense_smoother(&b, &d, 1.0);
        assert!((sp.smoother_matrix(1.0).unwrap() - &direct).amax() <= 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let lam = 10f64.powf(rng.random_range(-4.0..4.0));
            let direct = dense_smoother(&b, &d, lam);
            assert!((sp.smoother_matrix(lam).unwrap() - direct).amax() <= 1e-9);
        }
    }

    #[test]
    fn apply_fixes_column_space_at_zero_lambda() {
        let (b, _, sp) = setup(20, 10, 3, 2);
        let coef = DMatrix::from_fn(13, 3, |i, j| (i as f64 * 0.3 - j as f64).sin());
        let v = &b * coef;
        let out = apply_smoother(&sp, 0.0, &v).unwrap();
        assert!((out - v).amax() < 1e-10);
    }

    #[test]
    fn huge_lambda_gives_linear_least_squares() {
        let n = 20;
        let (_, _, sp) = setup(n, 10, 3, 2);
        let x = midpoints(n);
        let v = DMatrix::from_fn(n, 2, |i, j| (3.0 * x[i] + j as f64).sin() + x[i] * x[i]);
        let out = apply_smoother(&sp, 1e12, &v).unwrap();
        // oracle: ordinary least squares on [1, x]
        let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { x[i] });
        let beta = (design.transpose() * &design)
            .lu()
            .solve(&(design.transpose() * &v))
            .unwrap();
        let fit = design * beta;
        assert!((out - fit).amax() < 1e-4);
    }

    #[test]
    fn small_case_matches_dense_formula() {
        let (b, d, sp) = setup(6, 3, 1, 1);
        let v = DMatrix::from_fn(6, 2, |i, j| (i * 3 + j) as f64 - 4.0);
        let out = apply_smoother(&sp, 0.7, &v).unwrap();
        let want = dense_smoother(&b, &d, 0.7) * &v;
        assert!((out - want).amax() < 1e-10);
    }

    #[test]
    fn negative_lambda_rejected() {
        let (_, _, sp) = setup(6, 3, 1, 1);
        let v = DMatrix::zeros(6, 1);
        assert!(matches!(
            apply_smoother(&sp, -1.0, &v),
            Err(SmoothError::Domain { .. })
        ));
        assert!(apply_smoother(&sp, 0.1, &DMatrix::zeros(5, 1)).is_err());
    }

    #[test]
    fn trace_limits_and_dense_agreement() {
        let (b, d, sp) = setup(20, 10, 3, 2);
        assert_eq!(trace_smoother(&sp.s, 0.0), 13.0);
        assert_abs_diff_eq!(trace_smoother(&sp.s, 1e12), 2.0, epsilon = 1e-6);
        let dense = dense_smoother(&b, &d, 1.0).trace();
        assert_abs_diff_eq!(trace_smoother(&sp.s, 1.0), dense, epsilon = 1e-9);
    }

    proptest! {
        #[test]
        fn trace_strictly_decreasing(l1 in -4.0f64..4.0, gap in 0.01f64..2.0) {
            let (_, _, sp) = setup(20, 10, 3, 2);
            let lo = 10f64.powf(l1);
            let hi = 10f64.powf(l1 + gap);
            let t_lo = trace_smoother(&sp.s, lo);
            let t_hi = trace_smoother(&sp.s, hi);
            prop_assert!(t_hi < t_lo);
            prop_assert!(t_hi >= 2.0 && t_lo <= 13.0);
        }

        #[test]
        fn smoother_is_linear(a in -3.0f64..3.0, bcoef in -3.0f64..3.0, lam in 0.0f64..50.0) {
            let (_, _, sp) = setup(15, 6, 3, 2);
            let u = DMatrix::from_fn(15, 2, |i, j| ((i + 2 * j) as f64).cos());
            let v = DMatrix::from_fn(15, 2, |i, j| ((i * j) as f64 * 0.1).sin() + 1.0);
            let lhs = apply_smoother(&sp, lam, &(&u * a + &v * bcoef)).unwrap();
            let rhs = apply_smoother(&sp, lam, &u).unwrap() * a + apply_smoother(&sp, lam, &v).unwrap() * bcoef;
            prop_assert!((lhs - rhs).amax() < 1e-10);
        }
    }
}
