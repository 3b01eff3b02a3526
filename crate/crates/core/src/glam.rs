//! d-dimensional sandwich smoothing on array data.
//!
//! The smoother `S_d ⊗ ... ⊗ S_1` is never formed. It is applied through a
//! chain of rotated H-transforms: contract a matrix against the first axis of
//! the array, then move that axis to the back. After `d` steps every axis has
//! been processed once and the axes are back in their original order.

use nalgebra::{DMatrix, DMatrixView};
use rayon::prelude::*;

use crate::basis::AxisSpec;
use crate::error::{Result, SmoothError};
use crate::sandwich2d::{check_axis, gcv_score, log_spaced};
use crate::spectra::AxisSpectrum;

/// Upper bound on the number of smoothing-parameter tuples searched.
pub const MAX_COMBINATIONS: usize = 100_000;

/// Dense array stored with the first axis varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct NdArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl NdArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if shape.is_empty() || len != data.len() {
            return Err(SmoothError::Dimension(format!(
                "shape {shape:?} holds {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let len: usize = shape.iter().product();
        let mut idx = vec![0; shape.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&idx));
            for (a, i) in idx.iter_mut().enumerate() {
                *i += 1;
                if *i < shape[a] {
                    break;
                }
                *i = 0;
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    fn offset(&self, idx: &[usize]) -> usize {
        let mut off = 0;
        let mut stride = 1;
        for (a, &i) in idx.iter().enumerate() {
            off += i * stride;
            stride *= self.shape[a];
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    /// Reorders axes so that new axis `k` is old axis `order[k]`.
    pub fn permute_axes(&self, order: &[usize]) -> NdArray {
        let shape: Vec<usize> = order.iter().map(|&a| self.shape[a]).collect();
        let mut old = vec![0; self.ndim()];
        NdArray::from_fn(shape, |idx| {
            for (k, &a) in order.iter().enumerate() {
                old[a] = idx[k];
            }
            self.get(&old)
        })
    }

    fn leading_matrix(&self) -> DMatrixView<'_, f64> {
        let n1 = self.shape[0];
        DMatrixView::from_slice(&self.data, n1, self.data.len() / n1)
    }
}

/// Rotated H-transform: contract `s` (`m x n₁`) against the first axis of
/// `a` (shape `(n₁, n₂, ..., n_d)`) and return shape `(n₂, ..., n_d, m)`.
pub fn rh(s: &DMatrix<f64>, a: &NdArray) -> Result<NdArray> {
    if s.ncols() != a.shape[0] {
        return Err(SmoothError::Dimension(format!(
            "matrix has {} columns but the array's first axis has length {}",
            s.ncols(),
            a.shape[0]
        )));
    }
    let product = s * a.leading_matrix();
    let rotated = product.transpose();
    let mut shape: Vec<usize> = a.shape[1..].to_vec();
    shape.push(s.nrows());
    Ok(NdArray {
        shape,
        data: rotated.as_slice().to_vec(),
    })
}

/// Apply one matrix per axis, in axis order.
pub fn rh_chain(mats: &[&DMatrix<f64>], a: &NdArray) -> Result<NdArray> {
    if mats.len() != a.ndim() {
        return Err(SmoothError::Dimension(format!(
            "{} matrices for a {}-dimensional array",
            mats.len(),
            a.ndim()
        )));
    }
    let mut cur = a.clone();
    for m in mats {
        cur = rh(m, &cur)?;
    }
    Ok(cur)
}

/// Array responses with per-axis coordinates in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct ArrayData {
    pub values: NdArray,
    pub coords: Vec<Vec<f64>>,
}

impl ArrayData {
    pub fn new(values: NdArray, coords: Vec<Vec<f64>>) -> Result<Self> {
        if values.ndim() < 2 {
            return Err(SmoothError::Dimension(
                "array smoothing needs at least two axes".into(),
            ));
        }
        if coords.len() != values.ndim()
            || coords.iter().zip(values.shape()).any(|(c, &n)| c.len() != n)
        {
            return Err(SmoothError::Dimension(
                "coordinate lengths do not match the array shape".into(),
            ));
        }
        for c in &coords {
            check_axis("array", c)?;
        }
        Ok(Self { values, coords })
    }

    pub fn on_midpoints(values: NdArray) -> Result<Self> {
        let coords = values
            .shape()
            .iter()
            .map(|&n| crate::basis::midpoints(n))
            .collect();
        Self::new(values, coords)
    }
}

/// Number of λ values per axis used by default for a `d`-dimensional fit.
pub fn default_grid_points(d: usize) -> usize {
    match d {
        0..=2 => 20,
        3 => 10,
        _ => {
            let cap = (MAX_COMBINATIONS as f64).powf(1.0 / d as f64).floor() as usize;
            cap.min(6).max(2)
        }
    }
}

/// Default per-axis grids, log10 range `[-5, 4]`.
pub fn default_grids(d: usize) -> Vec<Vec<f64>> {
    vec![log_spaced(default_grid_points(d), -5.0, 4.0); d]
}

#[derive(Debug, Clone)]
pub struct MultiFit {
    pub lambda: Vec<f64>,
    pub fitted: NdArray,
    pub edf: f64,
    pub gcv_value: f64,
    pub sse: f64,
}

/// Per-axis spectra for a fixed set of coordinates.
#[derive(Debug, Clone)]
pub struct ArraySmoother {
    pub spectra: Vec<AxisSpectrum>,
}

impl ArraySmoother {
    pub fn new(coords: &[Vec<f64>], specs: &[AxisSpec]) -> Result<Self> {
        if coords.len() != specs.len() {
            return Err(SmoothError::Dimension(format!(
                "{} axes but {} specs",
                coords.len(),
                specs.len()
            )));
        }
        let spectra = coords
            .par_iter()
            .zip(specs.par_iter())
            .map(|(c, s)| AxisSpectrum::from_points(c, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spectra })
    }

    /// `Ỹ`, the data rotated into every axis's spectral coordinates.
    pub fn transform(&self, y: &NdArray) -> Result<NdArray> {
        let ats: Vec<DMatrix<f64>> = self.spectra.iter().map(|s| s.a.transpose()).collect();
        let refs: Vec<&DMatrix<f64>> = ats.iter().collect();
        rh_chain(&refs, y)
    }

    fn shrink_weights(&self, lambdas: &[f64]) -> Vec<f64> {
        let mut w = vec![1.0];
        for (sp, &l) in self.spectra.iter().zip(lambdas) {
            let s = sp.shrinkage(l);
            let mut next = Vec::with_capacity(w.len() * s.len());
            for &b in &s {
                next.extend(w.iter().map(|&a| a * b));
            }
            w = next;
        }
        w
    }

    pub fn edf(&self, lambdas: &[f64]) -> f64 {
        self.spectra
            .iter()
            .zip(lambdas)
            .map(|(s, &l)| s.trace(l))
            .product()
    }

    /// SSE by the weighted-norm identity on the transformed array.
    pub fn sse(&self, yt_sq: &[f64], yty: f64, lambdas: &[f64]) -> Result<f64> {
        let w = self.shrink_weights(lambdas);
        let mut fitted_sq = 0.0;
        let mut cross = 0.0;
        for (&y2, &wk) in yt_sq.iter().zip(&w) {
            let wy = y2 * wk;
            cross += wy;
            fitted_sq += wy * wk;
        }
        crate::sandwich2d::SseTerms {
            fitted_sq,
            cross,
            yty,
        }
        .sse()
    }

    /// `(S_d ⊗ ... ⊗ S_1) y` through the transformed array.
    pub fn smooth_transformed(&self, yt: &NdArray, lambdas: &[f64]) -> Result<NdArray> {
        let w = self.shrink_weights(lambdas);
        let weighted = NdArray {
            shape: yt.shape.clone(),
            data: yt.data.iter().zip(&w).map(|(a, b)| a * b).collect(),
        };
        let refs: Vec<&DMatrix<f64>> = self.spectra.iter().map(|s| &s.a).collect();
        rh_chain(&refs, &weighted)
    }

    pub fn fit_at(&self, y: &NdArray, lambdas: &[f64]) -> Result<MultiFit> {
        self.check_lambdas(lambdas)?;
        let yt = self.transform(y)?;
        let fitted = self.smooth_transformed(&yt, lambdas)?;
        let sse: f64 = fitted
            .data
            .iter()
            .zip(&y.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let edf = self.edf(lambdas);
        Ok(MultiFit {
            lambda: lambdas.to_vec(),
            fitted,
            edf,
            gcv_value: gcv_score(sse, edf, y.len()).unwrap_or(f64::INFINITY),
            sse,
        })
    }

    fn check_lambdas(&self, lambdas: &[f64]) -> Result<()> {
        if lambdas.len() != self.spectra.len() {
            return Err(SmoothError::Dimension(format!(
                "{} smoothing parameters for {} axes",
                lambdas.len(),
                self.spectra.len()
            )));
        }
        if let Some(&bad) = lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(SmoothError::Domain {
                what: "lambda",
                value: bad,
                domain: "[0, inf)",
            });
        }
        Ok(())
    }

    /// Exhaustive GCV search over the Cartesian product of `grids`.
    pub fn select(&self, y: &NdArray, grids: &[Vec<f64>]) -> Result<MultiFit> {
        if grids.len() != self.spectra.len() {
            return Err(SmoothError::Dimension(format!(
                "{} grids for {} axes",
                grids.len(),
                self.spectra.len()
            )));
        }
        let combos = grids
            .iter()
            .try_fold(1usize, |acc, g| acc.checked_mul(g.len()))
            .unwrap_or(usize::MAX);
        if combos > MAX_COMBINATIONS {
            return Err(SmoothError::GridTooLarge {
                combinations: combos,
                limit: MAX_COMBINATIONS,
            });
        }
        if combos == 0 {
            return Err(SmoothError::InvalidInput(
                "smoothing-parameter grid is empty".into(),
            ));
        }
        if let Some(bad) = grids.iter().flatten().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(SmoothError::InvalidInput(format!(
                "smoothing parameters must be positive and finite, got {bad}"
            )));
        }

        let yt = self.transform(y)?;
        let yt_sq: Vec<f64> = yt.data.iter().map(|v| v * v).collect();
        let yty: f64 = y.data.iter().map(|v| v * v).sum();
        let n = y.len();

        let tuple = |mut k: usize| -> Vec<f64> {
            grids
                .iter()
                .map(|g| {
                    let v = g[k % g.len()];
                    k /= g.len();
                    v
                })
                .collect()
        };
        let scores: Vec<(f64, Vec<f64>)> = (0..combos)
            .into_par_iter()
            .map(|k| {
                let lam = tuple(k);
                let sse = self.sse(&yt_sq, yty, &lam)?;
                let gcv = gcv_score(sse, self.edf(&lam), n).unwrap_or(f64::INFINITY);
                Ok((gcv, lam))
            })
            .collect::<Result<_>>()?;

        // ties: larger λ on the last axis first, then the one before, ...
        let mut best: Option<usize> = None;
        for (k, (g, lam)) in scores.iter().enumerate() {
            if !g.is_finite() {
                continue;
            }
            best = match best {
                None => Some(k),
                Some(b) => {
                    let (bg, blam) = &scores[b];
                    let better = g < bg
                        || (g == bg
                            && cmp_from_last(lam, blam).is_gt());
                    Some(if better { k } else { b })
                }
            };
        }
        let best = best.ok_or_else(|| {
            SmoothError::Degenerate("every smoothing-parameter tuple saturates the data".into())
        })?;
        let (gcv_value, lambda) = scores[best].clone();
        let fitted = self.smooth_transformed(&yt, &lambda)?;
        let sse = fitted
            .data
            .iter()
            .zip(&y.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(MultiFit {
            edf: self.edf(&lambda),
            lambda,
            fitted,
            gcv_value,
            sse,
        })
    }
}

// Compare tuples starting from the last axis.
fn cmp_from_last(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .rev()
        .zip(b.iter().rev())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Fit a d-dimensional array with GCV over the Cartesian λ grid.
pub fn fit_array(data: &ArrayData, specs: &[AxisSpec], grids: &[Vec<f64>]) -> Result<MultiFit> {
    ArraySmoother::new(&data.coords, specs)?.select(&data.values, grids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{design_matrix, diff_matrix, midpoints};
    use crate::sandwich2d::{LambdaGrid, SandwichSmoother};
    use crate::testutil::{dense_smoother, kron};
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_array(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> NdArray {
        NdArray::from_fn(shape, |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn dense_axis(n: usize, spec: &AxisSpec, lambda: f64) -> DMatrix<f64> {
        let b = design_matrix(&midpoints(n), spec).unwrap();
        let d = diff_matrix(spec.basis_dim(), spec.penalty_order).unwrap();
        dense_smoother(&b, &d, lambda)
    }

    #[test]
    fn column_major_layout() {
        let a = NdArray::from_fn(vec![2, 3], |i| (i[0] + 10 * i[1]) as f64);
        assert_eq!(a.as_slice(), &[0.0, 1.0, 10.0, 11.0, 20.0, 21.0]);
        assert_eq!(a.get(&[1, 2]), 21.0);
        assert!(NdArray::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn identity_rh_rotates_axes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_array(&mut rng, vec![3, 4, 5]);
        let out = rh(&DMatrix::identity(3, 3), &a).unwrap();
        assert_eq!(out.shape(), &[4, 5, 3]);
        assert_eq!(out, a.permute_axes(&[1, 2, 0]));
    }

    #[test]
    fn rh_dimension_mismatch() {
        let a = NdArray::zeros(vec![3, 4]);
        assert!(matches!(
            rh(&DMatrix::identity(4, 4), &a),
            Err(SmoothError::Dimension(_))
        ));
        assert!(rh_chain(&[&DMatrix::identity(3, 3)], &a).is_err());
    }

    #[test]
    fn two_dimensional_chain_is_matrix_sandwich() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = random_matrix(&mut rng, 4, 5);
        let r1 = random_matrix(&mut rng, 4, 4);
        let r2 = random_matrix(&mut rng, 5, 5);
        let s1 = &r1 + r1.transpose();
        let s2 = &r2 + r2.transpose();
        let arr = NdArray::new(vec![4, 5], y.as_slice().to_vec()).unwrap();
        let out = rh_chain(&[&s1, &s2], &arr).unwrap();
        let want = &s1 * &y * s2.transpose();
        assert_eq!(out.shape(), &[4, 5]);
        for (a, b) in out.as_slice().iter().zip(want.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn three_dimensional_chain_is_kronecker_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_array(&mut rng, vec![3, 4, 5]);
        let s1 = random_matrix(&mut rng, 2, 3);
        let s2 = random_matrix(&mut rng, 4, 4);
        let s3 = random_matrix(&mut rng, 6, 5);
        let out = rh_chain(&[&s1, &s2, &s3], &a).unwrap();
        assert_eq!(out.shape(), &[2, 4, 6]);
        let big = kron(&kron(&s3, &s2), &s1);
        let want = big * DVector::from_column_slice(a.as_slice());
        for (x, y) in out.as_slice().iter().zip(want.iter()) {
            assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn axis_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_array(&mut rng, vec![3, 4, 5]);
        let s: Vec<DMatrix<f64>> = [3, 4, 5]
            .iter()
            .map(|&n| random_matrix(&mut rng, n, n))
            .collect();
        let direct = rh_chain(&[&s[0], &s[1], &s[2]], &a).unwrap();
        // start from axis 2: permute (2, 3, 1), smooth, permute back
        let p = a.permute_axes(&[1, 2, 0]);
        let other = rh_chain(&[&s[1], &s[2], &s[0]], &p).unwrap();
        let back = other.permute_axes(&[2, 0, 1]);
        for (x, y) in direct.as_slice().iter().zip(back.as_slice()) {
            assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn matches_bivariate_smoother() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = random_matrix(&mut rng, 10, 12);
        let sp1 = AxisSpec::cubic(4).unwrap();
        let sp2 = AxisSpec::cubic(5).unwrap();
        let grid = LambdaGrid::default();
        let biv = SandwichSmoother::new(&midpoints(10), &midpoints(12), &sp1, &sp2)
            .unwrap()
            .select(&y, &grid)
            .unwrap();
        let data = ArrayData::on_midpoints(NdArray::new(vec![10, 12], y.as_slice().to_vec()).unwrap())
            .unwrap();
        let multi = fit_array(&data, &[sp1, sp2], &[grid.x.clone(), grid.z.clone()]).unwrap();
        assert_eq!(multi.lambda, vec![biv.lambda.0, biv.lambda.1]);
        for (a, b) in multi.fitted.as_slice().iter().zip(biv.fitted.as_slice()) {
            assert!((a - b).abs() <= 1e-10);
        }
        assert!((multi.edf - biv.edf).abs() < 1e-12);
    }

    #[test]
    fn three_dimensional_sse_and_trace_match_dense() {
        let shape = vec![8, 9, 10];
        let spec = AxisSpec::cubic(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let y = random_array(&mut rng, shape.clone());
        let coords: Vec<Vec<f64>> = shape.iter().map(|&n| midpoints(n)).collect();
        let sm = ArraySmoother::new(&coords, &[spec; 3]).unwrap();
        let lam = [1.0, 1.0, 1.0];
        let yt = sm.transform(&y).unwrap();
        let yt_sq: Vec<f64> = yt.as_slice().iter().map(|v| v * v).collect();
        let yty: f64 = y.as_slice().iter().map(|v| v * v).sum();
        let fast = sm.sse(&yt_sq, yty, &lam).unwrap();

        let big = kron(
            &kron(&dense_axis(10, &spec, 1.0), &dense_axis(9, &spec, 1.0)),
            &dense_axis(8, &spec, 1.0),
        );
        let yv = DVector::from_column_slice(y.as_slice());
        let dense = (&big * &yv - &yv).norm_squared();
        assert!((fast - dense).abs() <= 1e-8 * dense);
        assert!((sm.edf(&lam) - big.trace()).abs() <= 1e-10 * big.trace());

        let fit = sm.fit_at(&y, &lam).unwrap();
        let want = &big * &yv;
        for (a, b) in fit.fitted.as_slice().iter().zip(want.iter()) {
            assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn constant_array_is_unpenalised() {
        let y = NdArray::from_fn(vec![8, 9, 10], |_| 3.0);
        let data = ArrayData::on_midpoints(y.clone()).unwrap();
        let spec = AxisSpec::cubic(4).unwrap();
        let fit = fit_array(&data, &[spec; 3], &default_grids(3)).unwrap();
        let yty: f64 = y.as_slice().iter().map(|v| v * v).sum();
        assert!(fit.sse <= 1e-12 * yty);
        assert!(fit.edf >= 8.0 && fit.edf <= 343.0);
    }

    #[test]
    fn grid_explosion_is_rejected() {
        let y = NdArray::zeros(vec![6, 6, 6]);
        let data = ArrayData::on_midpoints(y).unwrap();
        let spec = AxisSpec::cubic(2).unwrap();
        let big = vec![log_spaced(50, -3.0, 3.0); 3];
        assert!(matches!(
            fit_array(&data, &[spec; 3], &big),
            Err(SmoothError::GridTooLarge { .. })
        ));
    }

    #[test]
    fn default_grids_respect_the_guard() {
        assert_eq!(default_grid_points(2), 20);
        assert_eq!(default_grid_points(3), 10);
        assert_eq!(default_grid_points(4), 6);
        for d in 2..9 {
            assert!(default_grid_points(d).pow(d as u32) <= MAX_COMBINATIONS);
        }
    }

    #[test]
    fn array_data_validation() {
        assert!(ArrayData::on_midpoints(NdArray::zeros(vec![5])).is_err());
        let ok = NdArray::zeros(vec![3, 4]);
        assert!(ArrayData::new(ok.clone(), vec![midpoints(3)]).is_err());
        assert!(ArrayData::new(ok, vec![midpoints(3), midpoints(5)]).is_err());
    }
}
