//! Bivariate sandwich smoother `Ŷ = S₁ Y S₂` with fast GCV selection.
//!
//! After the one-off transform `Ỹ = A₁ᵀ Y A₂`, every smoothing-parameter pair
//! costs two weighted sums over the `c₁ x c₂` entries of `Ỹ`:
//!
//! ```text
//! ŷᵀŷ = Σ Ỹ²ₖₗ (s̃₁ₖ s̃₂ₗ)²      ŷᵀy = Σ Ỹ²ₖₗ s̃₁ₖ s̃₂ₗ
//! SSE  = ŷᵀŷ - 2 ŷᵀy + yᵀy     edf = tr(S₁) tr(S₂)
//! ```
//!
//! where `s̃ᵢ = 1 / (1 + λᵢ sᵢ)`. No object of size `n₁n₂ x n₁n₂` is formed.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::basis::{make_knots, AxisSpec};
use crate::error::{Result, SmoothError};
use crate::spectra::{shrinkage, trace_smoother, AxisSpectrum};

/// Relative slack allowed when roundoff drives the fast SSE below zero.
pub const SSE_CLAMP: f64 = 1e-9;

/// Responses on a rectangular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridData {
    pub y: DMatrix<f64>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

impl GridData {
    pub fn new(y: DMatrix<f64>, x: Vec<f64>, z: Vec<f64>) -> Result<Self> {
        if x.len() != y.nrows() || z.len() != y.ncols() {
            return Err(SmoothError::Dimension(format!(
                "grid is {}x{} but coordinates have lengths {} and {}",
                y.nrows(),
                y.ncols(),
                x.len(),
                z.len()
            )));
        }
        check_axis("x", &x)?;
        check_axis("z", &z)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SmoothError::InvalidInput(
                "grid values must be finite".into(),
            ));
        }
        Ok(Self { y, x, z })
    }

    /// Grid observed at the midpoint design on both axes.
    pub fn on_midpoints(y: DMatrix<f64>) -> Self {
        let x = crate::basis::midpoints(y.nrows());
        let z = crate::basis::midpoints(y.ncols());
        Self { y, x, z }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.y.shape()
    }
}

pub(crate) fn check_axis(name: &str, coords: &[f64]) -> Result<()> {
    if coords.is_empty() {
        return Err(SmoothError::InvalidInput(format!("{name} axis is empty")));
    }
    if coords.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(SmoothError::InvalidInput(format!(
            "{name} coordinates must lie in [0, 1]"
        )));
    }
    if coords.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SmoothError::InvalidInput(format!(
            "{name} coordinates must be strictly increasing"
        )));
    }
    Ok(())
}

/// `count` values log-spaced between `10^lo` and `10^hi` inclusive.
pub fn log_spaced(count: usize, lo: f64, hi: f64) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![10f64.powf(lo)],
        _ => (0..count)
            .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (count - 1) as f64))
            .collect(),
    }
}

/// Candidate smoothing parameters per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaGrid {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

impl Default for LambdaGrid {
    /// 20 x 20 points, log10 range `[-5, 4]` on each axis.
    fn default() -> Self {
        Self::log_square(20, -5.0, 4.0)
    }
}

impl LambdaGrid {
    /// All `(λ₁, λ₂)` pairs with `λ₁` varying fastest.
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.z
            .iter()
            .flat_map(|&l2| self.x.iter().map(move |&l1| (l1, l2)))
            .collect()
    }

    pub fn new(x: Vec<f64>, z: Vec<f64>) -> Result<Self> {
        for v in x.iter().chain(&z) {
            if !(*v > 0.0 && v.is_finite()) {
                return Err(SmoothError::InvalidInput(format!(
                    "smoothing parameters must be positive and finite, got {v}"
                )));
            }
        }
        if x.is_empty() || z.is_empty() {
            return Err(SmoothError::InvalidInput(
                "smoothing-parameter grid is empty".into(),
            ));
        }
        Ok(Self { x, z })
    }

    pub fn log_square(count: usize, lo: f64, hi: f64) -> Self {
        let v = log_spaced(count, lo, hi);
        Self { x: v.clone(), z: v }
    }

    pub fn len(&self) -> usize {
        self.x.len() * self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Finer grid centred on `(lx, lz)`, spanning one coarse step either side
    /// on the log scale.
    pub fn refined_around(&self, lx: f64, lz: f64, count: usize) -> Self {
        fn axis(values: &[f64], centre: f64, count: usize) -> Vec<f64> {
            let step = if values.len() > 1 {
                let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = values.iter().cloned().fold(0.0, f64::max);
                (hi / lo).log10() / (values.len() - 1) as f64
            } else {
                1.0
            };
            let c = centre.log10();
            log_spaced(count, c - step, c + step)
        }
        Self {
            x: axis(&self.x, lx, count),
            z: axis(&self.z, lz, count),
        }
    }
}

/// Data reduced to the spectral coordinates, computed once per dataset.
#[derive(Debug, Clone)]
pub struct Transformed {
    /// `Ỹ = A₁ᵀ Y A₂`.
    pub yt: DMatrix<f64>,
    /// `yᵀy`.
    pub yty: f64,
    /// Number of observations `n₁ n₂`.
    pub n: usize,
    yt_sq: DMatrix<f64>,
}

pub fn transform_data(
    y: &DMatrix<f64>,
    sx: &AxisSpectrum,
    sz: &AxisSpectrum,
) -> Result<Transformed> {
    if y.nrows() != sx.n() || y.ncols() != sz.n() {
        return Err(SmoothError::Dimension(format!(
            "data are {}x{} but spectra expect {}x{}",
            y.nrows(),
            y.ncols(),
            sx.n(),
            sz.n()
        )));
    }
    let yt = sx.a.tr_mul(y) * &sz.a;
    let yt_sq = yt.map(|v| v * v);
    Ok(Transformed {
        yt,
        yty: y.norm_squared(),
        n: y.len(),
        yt_sq,
    })
}

/// The three terms of `‖Ŷ - Y‖² = ŷᵀŷ - 2ŷᵀy + yᵀy`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SseTerms {
    pub fitted_sq: f64,
    pub cross: f64,
    pub yty: f64,
}

impl SseTerms {
    /// Residual sum of squares, clamped at zero within [`SSE_CLAMP`].
    pub fn sse(&self) -> Result<f64> {
        let raw = self.fitted_sq - 2.0 * self.cross + self.yty;
        if raw >= 0.0 {
            Ok(raw)
        } else if raw >= -SSE_CLAMP * self.yty {
            Ok(0.0)
        } else {
            Err(SmoothError::Internal(format!(
                "fast SSE is negative ({raw:e}) beyond roundoff for yᵀy = {:e}",
                self.yty
            )))
        }
    }
}

/// `ŷᵀŷ` and `ŷᵀy` from the transformed data and per-axis shrinkage vectors.
pub fn sse_terms(t: &Transformed, shrink_x: &[f64], shrink_z: &[f64]) -> SseTerms {
    let mut fitted_sq = 0.0;
    let mut cross = 0.0;
    for (l, col) in t.yt_sq.column_iter().enumerate() {
        let wz = shrink_z[l];
        for (k, &y2) in col.iter().enumerate() {
            let w = shrink_x[k] * wz;
            let wy = w * y2;
            cross += wy;
            fitted_sq += wy * w;
        }
    }
    SseTerms {
        fitted_sq,
        cross,
        yty: t.yty,
    }
}

/// Residual sum of squares for `(λ₁, λ₂)` without touching `n`-sized data.
pub fn sse_fast(t: &Transformed, s1: &[f64], s2: &[f64], lambda1: f64, lambda2: f64) -> Result<f64> {
    if !(lambda1 >= 0.0 && lambda2 >= 0.0) {
        return Err(SmoothError::Domain {
            what: "lambda",
            value: lambda1.min(lambda2),
            domain: "[0, inf)",
        });
    }
    if s1.len() != t.yt.nrows() || s2.len() != t.yt.ncols() {
        return Err(SmoothError::Dimension(
            "eigenvalue vectors do not match the transformed data".into(),
        ));
    }
    sse_terms(t, &shrinkage(s1, lambda1), &shrinkage(s2, lambda2)).sse()
}

/// `GCV = (SSE / n) / (1 - edf / n)²`.
pub fn gcv_score(sse: f64, edf: f64, n: usize) -> Result<f64> {
    let n = n as f64;
    if edf >= n {
        return Err(SmoothError::Degenerate(format!(
            "effective degrees of freedom {edf} reach the sample size {n}"
        )));
    }
    let r = 1.0 - edf / n;
    Ok(sse / n / (r * r))
}

/// One evaluated grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcvPoint {
    pub lambda: (f64, f64),
    pub sse: f64,
    pub edf: f64,
    /// `+inf` where the fit saturates the data.
    pub gcv: f64,
}

/// GCV over a rectangular smoothing-parameter grid.
#[derive(Debug, Clone)]
pub struct GcvSurface {
    pub lambda_x: Vec<f64>,
    pub lambda_z: Vec<f64>,
    /// `points[i + j * lambda_x.len()]` is the pair `(lambda_x[i], lambda_z[j])`.
    pub points: Vec<GcvPoint>,
}

impl GcvSurface {
    pub fn get(&self, i: usize, j: usize) -> &GcvPoint {
        &self.points[i + j * self.lambda_x.len()]
    }

    pub fn argmin(&self) -> Result<usize> {
        argmin_gcv(&self.points)
    }
}

/// Index of the smallest GCV. Ties go to the larger `λ₂`, then the larger `λ₁`.
pub fn argmin_gcv(points: &[GcvPoint]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, p) in points.iter().enumerate() {
        if !p.gcv.is_finite() {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let q = &points[b];
                let better = p.gcv < q.gcv
                    || (p.gcv == q.gcv
                        && (p.lambda.1 > q.lambda.1
                            || (p.lambda.1 == q.lambda.1 && p.lambda.0 > q.lambda.0)));
                Some(if better { i } else { b })
            }
        };
    }
    best.ok_or_else(|| {
        SmoothError::Degenerate("every smoothing-parameter candidate saturates the data".into())
    })
}

/// Result of a bivariate fit.
#[derive(Debug, Clone)]
pub struct SandwichFit {
    pub lambda: (f64, f64),
    /// `c₁ x c₂` B-spline coefficients.
    pub theta: DMatrix<f64>,
    pub fitted: DMatrix<f64>,
    pub gcv_value: f64,
    pub sse: f64,
    pub edf: f64,
    pub gcv_surface: Option<GcvSurface>,
}

/// Spectra for both axes; reusable across datasets observed on the same grid.
#[derive(Debug, Clone)]
pub struct SandwichSmoother {
    pub sx: AxisSpectrum,
    pub sz: AxisSpectrum,
}

impl SandwichSmoother {
    pub fn new(x: &[f64], z: &[f64], spec_x: &AxisSpec, spec_z: &AxisSpec) -> Result<Self> {
        check_axis("x", x)?;
        check_axis("z", z)?;
        let (sx, sz) = rayon::join(
            || AxisSpectrum::from_points(x, spec_x),
            || AxisSpectrum::from_points(z, spec_z),
        );
        Ok(Self { sx: sx?, sz: sz? })
    }

    pub fn from_spectra(sx: AxisSpectrum, sz: AxisSpectrum) -> Self {
        Self { sx, sz }
    }

    pub fn transform(&self, y: &DMatrix<f64>) -> Result<Transformed> {
        transform_data(y, &self.sx, &self.sz)
    }

    /// Evaluate GCV at arbitrary `(λ₁, λ₂)` pairs; `n` is the sample size
    /// used in the criterion.
    pub fn evaluate_pairs(&self, t: &Transformed, pairs: &[(f64, f64)]) -> Result<Vec<GcvPoint>> {
        pairs
            .par_iter()
            .map(|&(l1, l2)| {
                let wx = self.sx.shrinkage(l1);
                let wz = self.sz.shrinkage(l2);
                let sse = sse_terms(t, &wx, &wz).sse()?;
                let edf = wx.iter().sum::<f64>() * wz.iter().sum::<f64>();
                let gcv = gcv_score(sse, edf, t.n).unwrap_or(f64::INFINITY);
                Ok(GcvPoint {
                    lambda: (l1, l2),
                    sse,
                    edf,
                    gcv,
                })
            })
            .collect()
    }

    pub fn gcv_surface(&self, t: &Transformed, grid: &LambdaGrid) -> Result<GcvSurface> {
        let pairs = grid.pairs();
        Ok(GcvSurface {
            lambda_x: grid.x.clone(),
            lambda_z: grid.z.clone(),
            points: self.evaluate_pairs(t, &pairs)?,
        })
    }

    /// GCV where the residual sum runs only over cells with `observed` set,
    /// and `n` is the number of observed cells. The trace is still the
    /// full-grid product `tr(S₁) tr(S₂)`. The mask breaks the Kronecker
    /// factorisation of the SSE, so each pair costs one sandwich product.
    pub fn masked_gcv(
        &self,
        y: &DMatrix<f64>,
        observed: &DMatrix<bool>,
        pairs: &[(f64, f64)],
    ) -> Result<Vec<GcvPoint>> {
        if observed.shape() != y.shape() {
            return Err(SmoothError::Dimension(
                "mask and data shapes differ".into(),
            ));
        }
        let n_obs = observed.iter().filter(|&&b| b).count();
        if n_obs == 0 {
            return Err(SmoothError::InvalidInput("no observed cells".into()));
        }
        let t = self.transform(y)?;
        pairs
            .par_iter()
            .map(|&(l1, l2)| {
                let wx = self.sx.shrinkage(l1);
                let wz = self.sz.shrinkage(l2);
                let fitted = &self.sx.a * weighted_core(&t.yt, &wx, &wz) * self.sz.a.transpose();
                let sse: f64 = fitted
                    .iter()
                    .zip(y.iter())
                    .zip(observed.iter())
                    .filter(|(_, &o)| o)
                    .map(|((f, v), _)| (f - v) * (f - v))
                    .sum();
                let edf = wx.iter().sum::<f64>() * wz.iter().sum::<f64>();
                Ok(GcvPoint {
                    lambda: (l1, l2),
                    sse,
                    edf,
                    gcv: gcv_score(sse, edf, n_obs).unwrap_or(f64::INFINITY),
                })
            })
            .collect()
    }

    /// Exhaustive GCV search over `grid`, then the fit at the minimiser.
    pub fn select(&self, y: &DMatrix<f64>, grid: &LambdaGrid) -> Result<SandwichFit> {
        let t = self.transform(y)?;
        let surface = self.gcv_surface(&t, grid)?;
        let best = surface.points[surface.argmin()?];
        let mut fit = self.fit_transformed(y, &t, best.lambda.0, best.lambda.1)?;
        fit.gcv_value = best.gcv;
        fit.gcv_surface = Some(surface);
        Ok(fit)
    }

    /// Coarse search followed by a finer pass around the coarse minimiser.
    pub fn select_refined(
        &self,
        y: &DMatrix<f64>,
        grid: &LambdaGrid,
        fine_points: usize,
    ) -> Result<SandwichFit> {
        let coarse = self.select(y, grid)?;
        let fine = grid.refined_around(coarse.lambda.0, coarse.lambda.1, fine_points);
        let refined = self.select(y, &fine)?;
        Ok(if refined.gcv_value <= coarse.gcv_value {
            refined
        } else {
            coarse
        })
    }

    /// Fit at a fixed `(λ₁, λ₂)`.
    pub fn fit_at(&self, y: &DMatrix<f64>, lambda1: f64, lambda2: f64) -> Result<SandwichFit> {
        let t = self.transform(y)?;
        self.fit_transformed(y, &t, lambda1, lambda2)
    }

    /// The reported SSE is the direct residual `‖Ŷ - Y‖²`, which avoids the
    /// cancellation in the three-term form once `Ŷ` exists anyway.
    pub(crate) fn fit_transformed(
        &self,
        y: &DMatrix<f64>,
        t: &Transformed,
        lambda1: f64,
        lambda2: f64,
    ) -> Result<SandwichFit> {
        for l in [lambda1, lambda2] {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(SmoothError::Domain {
                    what: "lambda",
                    value: l,
                    domain: "[0, inf)",
                });
            }
        }
        let wx = self.sx.shrinkage(lambda1);
        let wz = self.sz.shrinkage(lambda2);
        let core = weighted_core(&t.yt, &wx, &wz);
        let fitted = &self.sx.a * &core * self.sz.a.transpose();
        let theta = &self.sx.coef_map * &core * self.sz.coef_map.transpose();
        let sse = (&fitted - y).norm_squared();
        let edf = wx.iter().sum::<f64>() * wz.iter().sum::<f64>();
        let gcv_value = gcv_score(sse, edf, t.n).unwrap_or(f64::INFINITY);
        Ok(SandwichFit {
            lambda: (lambda1, lambda2),
            theta,
            fitted,
            gcv_value,
            sse,
            edf,
            gcv_surface: None,
        })
    }

    /// `Ŷ = S₁ Y S₂` at a fixed pair, without coefficients or diagnostics.
    pub fn smooth(&self, y: &DMatrix<f64>, lambda1: f64, lambda2: f64) -> Result<DMatrix<f64>> {
        let t = self.transform(y)?;
        let core = weighted_core(
            &t.yt,
            &self.sx.shrinkage(lambda1),
            &self.sz.shrinkage(lambda2),
        );
        Ok(&self.sx.a * core * self.sz.a.transpose())
    }

    pub fn edf(&self, lambda1: f64, lambda2: f64) -> f64 {
        trace_smoother(&self.sx.s, lambda1) * trace_smoother(&self.sz.s, lambda2)
    }
}

// diag(wx) · Ỹ · diag(wz)
fn weighted_core(yt: &DMatrix<f64>, wx: &[f64], wz: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(yt.nrows(), yt.ncols(), |k, l| yt[(k, l)] * wx[k] * wz[l])
}

/// Grid search with freshly built spectra.
pub fn select_lambda(
    data: &GridData,
    spec_x: &AxisSpec,
    spec_z: &AxisSpec,
    grid: &LambdaGrid,
) -> Result<SandwichFit> {
    SandwichSmoother::new(&data.x, &data.z, spec_x, spec_z)?.select(&data.y, grid)
}

/// `Θ̂` solving `Λ₁ Θ̂ Λ₂ = B₁ᵀ Y B₂`, via the spectral factors.
pub fn solve_coefficients(
    y: &DMatrix<f64>,
    sx: &AxisSpectrum,
    sz: &AxisSpectrum,
    lambda1: f64,
    lambda2: f64,
) -> Result<DMatrix<f64>> {
    let t = transform_data(y, sx, sz)?;
    for l in [lambda1, lambda2] {
        if !(l >= 0.0) {
            return Err(SmoothError::Domain {
                what: "lambda",
                value: l,
                domain: "[0, inf)",
            });
        }
    }
    let core = weighted_core(&t.yt, &sx.shrinkage(lambda1), &sz.shrinkage(lambda2));
    Ok(&sx.coef_map * core * sz.coef_map.transpose())
}

/// `μ̂(x, z) = Σ θ̂ₖₗ B¹ₖ(x) B²ₗ(z)`.
pub fn predict(
    theta: &DMatrix<f64>,
    spec_x: &AxisSpec,
    spec_z: &AxisSpec,
    x: f64,
    z: f64,
) -> Result<f64> {
    if theta.nrows() != spec_x.basis_dim() || theta.ncols() != spec_z.basis_dim() {
        return Err(SmoothError::Dimension(format!(
            "coefficients are {}x{} but specs give {}x{}",
            theta.nrows(),
            theta.ncols(),
            spec_x.basis_dim(),
            spec_z.basis_dim()
        )));
    }
    let (fx, bx) = make_knots(spec_x).eval_nonzero(x)?;
    let (fz, bz) = make_knots(spec_z).eval_nonzero(z)?;
    let mut acc = 0.0;
    for (l, wz) in bz.iter().enumerate() {
        for (k, wx) in bx.iter().enumerate() {
            acc += theta[(fx + k, fz + l)] * wx * wz;
        }
    }
    Ok(acc)
}
