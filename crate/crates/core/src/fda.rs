//! Covariance smoothing for densely observed functional data.
//!
//! The sample covariance of curves observed on a common grid is smoothed with
//! the same univariate smoother on both sides, `S C S`, so only one smoothing
//! parameter is selected. Eigenpairs of the smoothed surface are reported in
//! function-space scaling: eigenvalues divided by `J`, eigenvectors
//! multiplied by `√J`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::basis::{midpoints, AxisSpec};
use crate::error::{Result, SmoothError};
use crate::sandwich2d::{argmin_gcv, log_spaced, GcvPoint, SandwichSmoother};
use crate::sim::{MiseSummary, NoiseRng};

/// Curves stored row-wise: `y[(i, j)] = Yᵢ(tⱼ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSet {
    pub y: DMatrix<f64>,
    pub t: Vec<f64>,
}

impl CurveSet {
    pub fn new(y: DMatrix<f64>, t: Vec<f64>) -> Result<Self> {
        if t.len() < 2 {
            return Err(SmoothError::InvalidInput(
                "curves need at least two sampling points".into(),
            ));
        }
        if y.ncols() != t.len() {
            return Err(SmoothError::Dimension(format!(
                "{} columns but {} grid points",
                y.ncols(),
                t.len()
            )));
        }
        crate::sandwich2d::check_axis("t", &t)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SmoothError::InvalidInput("curve values must be finite".into()));
        }
        Ok(Self { y, t })
    }

    /// Curves on `tⱼ = (j - 1/2)/J`.
    pub fn on_midpoints(y: DMatrix<f64>) -> Result<Self> {
        let t = midpoints(y.ncols());
        Self::new(y, t)
    }

    pub fn n_curves(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_points(&self) -> usize {
        self.t.len()
    }
}

/// `n⁻¹ Σ YᵢYᵢᵀ`. With `center`, the mean curve is subtracted first.
pub fn sample_cov(curves: &CurveSet, center: bool) -> Result<DMatrix<f64>> {
    let n = curves.n_curves();
    if n < 2 {
        return Err(SmoothError::InvalidInput(format!(
            "need at least two curves, got {n}"
        )));
    }
    let mut y = curves.y.clone();
    if center {
        for mut col in y.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
    }
    Ok(y.transpose() * y / n as f64)
}

const SYMMETRY_TOLERANCE: f64 = 1e-8;

/// Options for [`smooth_cov`].
#[derive(Debug, Clone, PartialEq)]
pub struct CovSmoothOptions {
    /// Candidate smoothing parameters; each is used on both axes.
    pub lambdas: Vec<f64>,
    /// Leave the diagonal out of the GCV residuals and re-impute it from the
    /// fit until it settles, instead of smoothing the noise-inflated diagonal.
    pub exclude_diagonal: bool,
}

impl Default for CovSmoothOptions {
    fn default() -> Self {
        Self {
            lambdas: log_spaced(20, -5.0, 4.0),
            exclude_diagonal: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CovModel {
    pub raw_cov: DMatrix<f64>,
    pub smoothed_cov: DMatrix<f64>,
    pub lambda: f64,
    pub gcv: Vec<GcvPoint>,
    /// Function-space eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Columns are eigenfunctions on the grid, normalised so that
    /// `(1/J) Σⱼ ψ(tⱼ)² = 1`.
    pub eigenfunctions: DMatrix<f64>,
}

pub fn smooth_cov(
    c: &DMatrix<f64>,
    t: &[f64],
    spec: &AxisSpec,
    opts: &CovSmoothOptions,
) -> Result<CovModel> {
    let j = c.nrows();
    if c.ncols() != j || t.len() != j {
        return Err(SmoothError::Dimension(format!(
            "covariance is {}x{} on {} grid points",
            c.nrows(),
            c.ncols(),
            t.len()
        )));
    }
    let asym = (c - c.transpose()).amax();
    if asym > SYMMETRY_TOLERANCE * c.amax().max(1.0) {
        return Err(SmoothError::Asymmetric(asym));
    }
    if opts.lambdas.is_empty() {
        return Err(SmoothError::InvalidInput("empty smoothing-parameter list".into()));
    }
    if let Some(&bad) = opts.lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(SmoothError::Domain {
            what: "lambda",
            value: bad,
            domain: "[0, inf)",
        });
    }
    let smoother = SandwichSmoother::new(t, t, spec, spec)?;
    let pairs: Vec<(f64, f64)> = opts.lambdas.iter().map(|&l| (l, l)).collect();

    let (lambda, gcv, smoothed) = if opts.exclude_diagonal {
        smooth_off_diagonal(&smoother, c, &pairs)?
    } else {
        let tr = smoother.transform(c)?;
        let gcv = smoother.evaluate_pairs(&tr, &pairs)?;
        let lambda = pick(&gcv)?;
        let smoothed = smoother.smooth(c, lambda, lambda)?;
        (lambda, gcv, smoothed)
    };
    let smoothed = (&smoothed + smoothed.transpose()) * 0.5;
    let (eigenvalues, eigenfunctions) = function_eigen(&smoothed);
    Ok(CovModel {
        raw_cov: c.clone(),
        smoothed_cov: smoothed,
        lambda,
        gcv,
        eigenvalues,
        eigenfunctions,
    })
}

// A single candidate is taken as given, even where GCV is undefined.
fn pick(gcv: &[GcvPoint]) -> Result<f64> {
    if gcv.len() == 1 {
        return Ok(gcv[0].lambda.0);
    }
    Ok(gcv[argmin_gcv(gcv)?].lambda.0)
}

fn smooth_off_diagonal(
    smoother: &SandwichSmoother,
    c: &DMatrix<f64>,
    pairs: &[(f64, f64)],
) -> Result<(f64, Vec<GcvPoint>, DMatrix<f64>)> {
    const MAX_ITER: usize = 20;
    let j = c.nrows();
    let observed = DMatrix::from_fn(j, j, |a, b| a != b);
    let threshold = 1e-6 * c.amax().max(f64::MIN_POSITIVE);
    let mut current = c.clone();
    let mut last = None;
    for _ in 0..MAX_ITER {
        let gcv = smoother.masked_gcv(&current, &observed, pairs)?;
        let lambda = pick(&gcv)?;
        let fitted = smoother.smooth(&current, lambda, lambda)?;
        let mut change = 0.0f64;
        for a in 0..j {
            change = change.max((fitted[(a, a)] - current[(a, a)]).abs());
            current[(a, a)] = fitted[(a, a)];
        }
        let done = change <= threshold;
        last = Some((lambda, gcv, fitted));
        if done {
            break;
        }
    }
    Ok(last.expect("at least one iteration"))
}

// Descending eigenpairs scaled to the midpoint-rule inner product.
fn function_eigen(cov: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let j = cov.nrows();
    let eig = SymmetricEigen::new(cov.clone());
    let mut order: Vec<usize> = (0..j).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let scale = (j as f64).sqrt();
    let values = order.iter().map(|&k| eig.eigenvalues[k] / j as f64).collect();
    let mut vectors = DMatrix::zeros(j, j);
    for (dst, &src) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(src) * scale;
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                v.neg_mut();
            }
        }
        vectors.set_column(dst, &v);
    }
    (values, vectors)
}

/// The leading `k` eigenpairs. With `reference` functions sampled on the grid,
/// each eigenfunction's sign is chosen to make its inner product with the
/// matching reference nonnegative; otherwise its first nonzero coordinate is
/// positive.
pub fn eigenpairs(
    model: &CovModel,
    k: usize,
    reference: Option<&[DVector<f64>]>,
) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    let j = model.smoothed_cov.nrows();
    if k > j {
        return Err(SmoothError::InvalidInput(format!(
            "asked for {k} eigenpairs of a {j}-point grid"
        )));
    }
    let mut funcs: Vec<DVector<f64>> = (0..k)
        .map(|i| model.eigenfunctions.column(i).into_owned())
        .collect();
    if let Some(refs) = reference {
        for (f, r) in funcs.iter_mut().zip(refs) {
            if r.len() != j {
                return Err(SmoothError::Dimension(format!(
                    "reference has {} points, grid has {j}",
                    r.len()
                )));
            }
            if f.dot(r) < 0.0 {
                f.neg_mut();
            }
        }
    }
    Ok((model.eigenvalues[..k].to_vec(), funcs))
}

/// The two eigenfunction families used in the covariance study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdaCase {
    /// `√2 sin 2πt, √2 cos 2πt, √2 sin 4πt, √2 cos 4πt`
    Trig,
    /// Shifted Legendre polynomials of degree 0..3, unit `L²[0,1]` norm.
    Legendre,
}

impl FdaCase {
    pub fn from_index(case: u8) -> Result<Self> {
        match case {
            1 => Ok(Self::Trig),
            2 => Ok(Self::Legendre),
            other => Err(SmoothError::InvalidInput(format!(
                "unknown case {other}, expected 1 or 2"
            ))),
        }
    }

    /// `ψₖ(t)` for `k` in `0..4`.
    pub fn eigenfunction(self, k: usize, t: f64) -> f64 {
        use std::f64::consts::{PI, SQRT_2};
        match (self, k) {
            (Self::Trig, 0) => SQRT_2 * (2.0 * PI * t).sin(),
            (Self::Trig, 1) => SQRT_2 * (2.0 * PI * t).cos(),
            (Self::Trig, 2) => SQRT_2 * (4.0 * PI * t).sin(),
            (Self::Trig, 3) => SQRT_2 * (4.0 * PI * t).cos(),
            (Self::Legendre, 0) => 1.0,
            (Self::Legendre, 1) => 3f64.sqrt() * (2.0 * t - 1.0),
            (Self::Legendre, 2) => 5f64.sqrt() * (6.0 * t * t - 6.0 * t + 1.0),
            (Self::Legendre, 3) => {
                7f64.sqrt() * (20.0 * t.powi(3) - 30.0 * t * t + 12.0 * t - 1.0)
            }
            _ => panic!("eigenfunction index {k} out of range"),
        }
    }

    /// `0.5^k` for `k` in `0..4`.
    pub fn eigenvalue(k: usize) -> f64 {
        0.5f64.powi(k as i32)
    }

    pub fn true_cov(self, t: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(t.len(), t.len(), |a, b| {
            (0..4)
                .map(|k| Self::eigenvalue(k) * self.eigenfunction(k, t[a]) * self.eigenfunction(k, t[b]))
                .sum()
        })
    }
}

/// `n` curves on `J` midpoints: `Yᵢ(t) = Σₖ √λₖ ξᵢₖ ψₖ(t) + σ εᵢ(t)`.
pub fn simulate_fda(case: FdaCase, n: usize, j: usize, sigma: f64, seed: u64) -> Result<CurveSet> {
    simulate_fda_stream(case, n, j, sigma, seed, 0)
}

/// As [`simulate_fda`], drawing from stream `stream` of the seeded generator.
/// Scores are drawn curve by curve, then the noise row by row.
pub fn simulate_fda_stream(
    case: FdaCase,
    n: usize,
    j: usize,
    sigma: f64,
    seed: u64,
    stream: u64,
) -> Result<CurveSet> {
    let t = midpoints(j);
    let mut rng = NoiseRng::new(seed, stream);
    let basis = DMatrix::from_fn(4, j, |k, b| {
        FdaCase::eigenvalue(k).sqrt() * case.eigenfunction(k, t[b])
    });
    let scores = DMatrix::from_row_iterator(n, 4, (0..n * 4).map(|_| rng.normal()));
    let noise = DMatrix::from_row_iterator(n, j, (0..n * j).map(|_| rng.normal()));
    CurveSet::new(scores * basis + noise * sigma, t)
}

/// Mean of squared differences over the `J × J` grid.
pub fn cov_ise(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    (estimate - truth).norm_squared() / truth.len() as f64
}

#[derive(Debug, Clone)]
pub struct FdaStudy {
    pub case: FdaCase,
    pub n: usize,
    pub j: usize,
    pub sigma: f64,
    pub spec: AxisSpec,
    pub options: CovSmoothOptions,
    pub center: bool,
    pub reps: usize,
    pub seed: u64,
}

impl FdaStudy {
    /// Uncentred second moments, cubic splines with `min(J/2, 35)` segments,
    /// the default twenty candidates.
    pub fn standard(case: FdaCase, n: usize, j: usize, sigma: f64, reps: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            case,
            n,
            j,
            sigma,
            spec: AxisSpec::auto(j)?,
            options: CovSmoothOptions::default(),
            center: false,
            reps,
            seed,
        })
    }
}

/// Replicate `r` uses stream `r` of the study seed; replicates run in parallel.
pub fn covariance_mise(study: &FdaStudy) -> Result<MiseSummary> {
    if study.reps == 0 {
        return Err(SmoothError::InvalidInput("need at least one replicate".into()));
    }
    let t = midpoints(study.j);
    let truth = study.case.true_cov(&t);
    let ise = (0..study.reps as u64)
        .into_par_iter()
        .map(|r| {
            let curves =
                simulate_fda_stream(study.case, study.n, study.j, study.sigma, study.seed, r)?;
            let c = sample_cov(&curves, study.center)?;
            let model = smooth_cov(&c, &t, &study.spec, &study.options)?;
            Ok(cov_ise(&model.smoothed_cov, &truth))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(MiseSummary::from_ise(ise))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::AxisSpectrum;
    use proptest::prelude::*;

    fn curves(rows: &[&[f64]]) -> CurveSet {
        let j = rows[0].len();
        let y = DMatrix::from_row_iterator(rows.len(), j, rows.iter().flat_map(|r| r.iter().copied()));
        CurveSet::on_midpoints(y).unwrap()
    }

    #[test]
    fn second_moment_of_identical_and_opposite_curves() {
        let v = [1.0, -2.0, 0.5];
        let vv = DMatrix::from_fn(3, 3, |a, b| v[a] * v[b]);
        let c = sample_cov(&curves(&[&v, &v]), false).unwrap();
        assert!((c - &vv).amax() < 1e-15);
        let w = v.map(|x| -x);
        let c = sample_cov(&curves(&[&v, &w]), false).unwrap();
        assert!((c - &vv).amax() < 1e-15);
        // centring removes the common curve entirely
        let c = sample_cov(&curves(&[&v, &v]), true).unwrap();
        assert!(c.amax() < 1e-15);
        assert!(sample_cov(&curves(&[&v]), false).is_err());
    }

    #[test]
    fn large_sample_covariance_is_close_to_truth() {
        let cs = simulate_fda(FdaCase::Trig, 1000, 20, 0.0, 42).unwrap();
        let c = sample_cov(&cs, false).unwrap();
        let truth = FdaCase::Trig.true_cov(&cs.t);
        assert!((c - truth).amax() < 0.15);
    }

    #[test]
    fn zero_penalty_with_square_basis_is_identity() {
        let j = 8;
        let t = midpoints(j);
        let spec = AxisSpec::new(0, 1, j).unwrap();
        let mut c = DMatrix::from_fn(j, j, |a, b| ((a + 1) * (b + 1)) as f64 / 10.0);
        c[(2, 2)] += 1.0;
        let opts = CovSmoothOptions {
            lambdas: vec![0.0],
            exclude_diagonal: false,
        };
        let m = smooth_cov(&c, &t, &spec, &opts).unwrap();
        assert!((&m.smoothed_cov - &c).amax() < 1e-10);
    }

    #[test]
    fn rank_one_commutes_through_sandwich() {
        let j = 15;
        let t = midpoints(j);
        let v = DVector::from_fn(j, |a, _| (3.0 * t[a]).sin() + t[a]);
        let c = &v * v.transpose();
        let spec = AxisSpec::cubic(6).unwrap();
        let m = smooth_cov(&c, &t, &spec, &CovSmoothOptions::default()).unwrap();
        let sp = AxisSpectrum::from_points(&t, &spec).unwrap();
        let sv = sp.smoother_matrix(m.lambda).unwrap() * &v;
        assert!((&m.smoothed_cov - &sv * sv.transpose()).amax() < 1e-10);
    }

    #[test]
    fn asymmetric_input_rejected() {
        let t = midpoints(6);
        let mut c = DMatrix::identity(6, 6);
        c[(0, 1)] = 1e-3;
        let err = smooth_cov(&c, &t, &AxisSpec::cubic(3).unwrap(), &CovSmoothOptions::default());
        assert!(matches!(err, Err(SmoothError::Asymmetric(_))));
    }

    #[test]
    fn identity_eigenvalues() {
        let j = 10;
        let model = CovModel {
            raw_cov: DMatrix::identity(j, j),
            smoothed_cov: DMatrix::identity(j, j),
            lambda: 0.0,
            gcv: Vec::new(),
            eigenvalues: function_eigen(&DMatrix::identity(j, j)).0,
            eigenfunctions: function_eigen(&DMatrix::identity(j, j)).1,
        };
        let (vals, _) = eigenpairs(&model, j, None).unwrap();
        assert!(vals.iter().all(|&v| (v - 0.1).abs() < 1e-14));
        assert!(eigenpairs(&model, j + 1, None).is_err());
    }

    #[test]
    fn population_legendre_eigenvalues() {
        let t = midpoints(40);
        let k = FdaCase::Legendre.true_cov(&t);
        let (vals, _) = function_eigen(&k);
        for (i, want) in [1.0, 0.5, 0.25, 0.125].iter().enumerate() {
            assert!((vals[i] - want).abs() < 0.02, "{i}: {}", vals[i]);
        }
        assert!(vals[4].abs() < 1e-10);
    }

    #[test]
    fn trig_functions_are_quadrature_orthonormal() {
        let t = midpoints(100);
        for a in 0..4 {
            for b in 0..4 {
                let ip: f64 = t
                    .iter()
                    .map(|&s| FdaCase::Trig.eigenfunction(a, s) * FdaCase::Trig.eigenfunction(b, s))
                    .sum::<f64>()
                    / 100.0;
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((ip - want).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn noiseless_curve_lies_in_span() {
        for case in [FdaCase::Trig, FdaCase::Legendre] {
            let cs = simulate_fda(case, 1, 30, 0.0, 9).unwrap();
            let basis = DMatrix::from_fn(30, 4, |j, k| case.eigenfunction(k, cs.t[j]));
            let y = cs.y.row(0).transpose();
            let coef = basis.clone().svd(true, true).solve(&y, 1e-14).unwrap();
            assert!((basis * coef - y).amax() < 1e-10);
        }
    }

    #[test]
    fn projected_score_variances() {
        let n = 10_000;
        let j = 100;
        let cs = simulate_fda(FdaCase::Trig, n, j, 0.0, 77).unwrap();
        let psi = DMatrix::from_fn(j, 4, |b, k| FdaCase::Trig.eigenfunction(k, cs.t[b]));
        // quadrature projection onto each eigenfunction
        let scores = &cs.y * psi / j as f64;
        for k in 0..4 {
            let col = scores.column(k);
            let var = col.iter().map(|v| v * v).sum::<f64>() / n as f64;
            let want = FdaCase::eigenvalue(k);
            assert!((var - want).abs() < 0.05 * want, "{k}: {var}");
        }
    }

    #[test]
    fn leading_eigenfunction_recovered() {
        let j = 20;
        let t = midpoints(j);
        let spec = AxisSpec::auto(j).unwrap();
        let truth = DVector::from_fn(j, |a, _| FdaCase::Trig.eigenfunction(0, t[a]));
        let good = (0..100u64)
            .into_par_iter()
            .filter(|&seed| {
                let cs = simulate_fda_stream(FdaCase::Trig, 100, j, 0.5, 2024, seed).unwrap();
                let c = sample_cov(&cs, false).unwrap();
                let m = smooth_cov(&c, &t, &spec, &CovSmoothOptions::default()).unwrap();
                let (_, f) = eigenpairs(&m, 1, Some(std::slice::from_ref(&truth))).unwrap();
                (&f[0] - &truth).norm_squared() / (j as f64) < 0.5
            })
            .count();
        assert!(good >= 90, "{good} of 100");
    }

    #[test]
    fn matches_sandwich_fit_at_selected_lambda() {
        let cs = simulate_fda(FdaCase::Legendre, 30, 16, 0.3, 4).unwrap();
        let c = sample_cov(&cs, false).unwrap();
        let spec = AxisSpec::auto(16).unwrap();
        let m = smooth_cov(&c, &cs.t, &spec, &CovSmoothOptions::default()).unwrap();
        let fit = SandwichSmoother::new(&cs.t, &cs.t, &spec, &spec)
            .unwrap()
            .fit_at(&c, m.lambda, m.lambda)
            .unwrap();
        assert!((&m.smoothed_cov - fit.fitted).amax() < 1e-10);
    }

    #[test]
    fn diagonal_exclusion_reduces_noise_inflation() {
        let j = 20;
        let t = midpoints(j);
        let truth = FdaCase::Trig.true_cov(&t);
        let spec = AxisSpec::auto(j).unwrap();
        let cs = simulate_fda(FdaCase::Trig, 400, j, 1.0, 8).unwrap();
        let c = sample_cov(&cs, false).unwrap();
        let plain = smooth_cov(&c, &t, &spec, &CovSmoothOptions::default()).unwrap();
        let opts = CovSmoothOptions {
            exclude_diagonal: true,
            ..Default::default()
        };
        let masked = smooth_cov(&c, &t, &spec, &opts).unwrap();
        let diag_err = |m: &DMatrix<f64>| (0..j).map(|a| (m[(a, a)] - truth[(a, a)]).abs()).sum::<f64>();
        assert!(diag_err(&masked.smoothed_cov) < diag_err(&plain.smoothed_cov));
    }

    #[test]
    fn study_is_deterministic() {
        let s = FdaStudy::standard(FdaCase::Legendre, 25, 20, 0.5, 6, 3).unwrap();
        let a = covariance_mise(&s).unwrap();
        assert_eq!(a, covariance_mise(&s).unwrap());
        assert!(a.mean > 0.0);
    }

    proptest! {
        #[test]
        fn smoothed_symmetric_and_eigen_orthonormal(seed in 0u64..500, lambda_exp in -4.0f64..4.0) {
            let cs = simulate_fda_stream(FdaCase::Trig, 12, 14, 0.4, seed, 1).unwrap();
            let c = sample_cov(&cs, false).unwrap();
            let opts = CovSmoothOptions { lambdas: vec![10f64.powf(lambda_exp)], exclude_diagonal: false };
            let m = smooth_cov(&c, &cs.t, &AxisSpec::auto(14).unwrap(), &opts).unwrap();
            prop_assert!((&m.smoothed_cov - m.smoothed_cov.transpose()).amax() <= 1e-10);
            for w in m.eigenvalues.windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
            let gram = m.eigenfunctions.transpose() * &m.eigenfunctions / 14.0;
            prop_assert!((gram - DMatrix::<f64>::identity(14, 14)).amax() <= 1e-8);
        }
    }
}
