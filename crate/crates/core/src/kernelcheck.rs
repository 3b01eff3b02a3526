//! Equivalent-kernel diagnostics for penalised splines.
//!
//! `H_m(x) = Σ_ν ψ_ν/(2m) exp(-ψ_ν|x|)` where the `ψ_ν` are the roots of
//! `x^{2m} + (-1)^m = 0` with positive real part. Integrals are computed on
//! `[0, T]` by panelled double-exponential quadrature, with `T` grown until
//! the analytic tail bound drops below [`TAIL_TOLERANCE`].

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::basis::{midpoints, AxisSpec};
use crate::error::{Result, SmoothError};
use crate::spectra::AxisSpectrum;

pub const TAIL_TOLERANCE: f64 = 1e-10;
const IMAG_TOLERANCE: f64 = 1e-12;
const PANEL_WIDTH: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalentKernel {
    m: usize,
    roots: Vec<Complex64>,
}

impl EquivalentKernel {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(SmoothError::Domain {
                what: "kernel order",
                value: 0.0,
                domain: "m >= 1",
            });
        }
        // exp(iπ(2j - 1 + m)/(2m)), j = 1..2m, keeping Re > 0
        let roots = (1..=2 * m)
            .map(|j| Complex64::from_polar(1.0, PI * (2 * j - 1 + m) as f64 / (2 * m) as f64))
            .filter(|z| z.re > 1e-12)
            .collect::<Vec<_>>();
        debug_assert_eq!(roots.len(), m);
        Ok(Self { m, roots })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn roots(&self) -> &[Complex64] {
        &self.roots
    }

    fn min_real(&self) -> f64 {
        self.roots.iter().map(|z| z.re).fold(f64::INFINITY, f64::min)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let ax = x.abs();
        let total: Complex64 = self
            .roots
            .iter()
            .map(|&psi| psi * (-psi * ax).exp())
            .sum::<Complex64>()
            / (2 * self.m) as f64;
        debug_assert!(total.im.abs() <= IMAG_TOLERANCE, "imaginary residue {}", total.im);
        total.re
    }

    /// Smallest `T` of the form `T₀ 2^k`, `T₀ = 40 / min Re ψ`, for which
    /// `2 ∫_T^∞ |x|^l |H_m(x)| dx` is bounded by [`TAIL_TOLERANCE`].
    pub fn truncation(&self, l: usize) -> (f64, f64) {
        let r = self.min_real();
        let mut t = 40.0 / r;
        loop {
            let bound = tail_bound(r, l, t);
            if bound < TAIL_TOLERANCE {
                return (t, bound);
            }
            t *= 2.0;
        }
    }
}

// |H_m(x)| ≤ e^{-r|x|}/2, so both tails together are at most
// Γ(l+1, rT)/r^{l+1} = l!/r^{l+1} e^{-rT} Σ_{k≤l} (rT)^k/k!.
fn tail_bound(r: f64, l: usize, t: f64) -> f64 {
    let rt = r * t;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..=l {
        term *= rt / k as f64;
        sum += term;
    }
    let fact: f64 = (1..=l).map(|k| k as f64).product();
    fact / r.powi(l as i32 + 1) * (-rt).exp() * sum
}

/// `∫₀^T f` as a sum of panel integrals.
fn integrate_half(f: impl Fn(f64) -> f64, t: f64, tol: f64) -> f64 {
    let panels = (t / PANEL_WIDTH).ceil() as usize;
    let w = t / panels as f64;
    (0..panels)
        .map(|k| {
            let a = k as f64 * w;
            quadrature::double_exponential::integrate(&f, a, a + w, tol / panels as f64).integral
        })
        .sum()
}

pub fn kernel_eval(m: usize, x: f64) -> Result<f64> {
    Ok(EquivalentKernel::new(m)?.eval(x))
}

/// `∫ x^l H_m(x) dx` for `l ≤ 2m`.
pub fn kernel_moment(m: usize, l: usize) -> Result<f64> {
    let k = EquivalentKernel::new(m)?;
    if l > 2 * m {
        return Err(SmoothError::InvalidInput(format!(
            "moment order {l} exceeds 2m = {}",
            2 * m
        )));
    }
    if l % 2 == 1 {
        return Ok(0.0);
    }
    let (t, _) = k.truncation(l);
    Ok(2.0 * integrate_half(|x| x.powi(l as i32) * k.eval(x), t, 1e-13))
}

/// The value the moment must take: 1, then zeros, then `(-1)^{m+1}(2m)!`.
pub fn moment_target(m: usize, l: usize) -> f64 {
    if l == 0 {
        1.0
    } else if l < 2 * m {
        0.0
    } else {
        let f: f64 = (1..=2 * m).map(|k| k as f64).product();
        if m % 2 == 1 {
            f
        } else {
            -f
        }
    }
}

/// `∫ H_m(u)² du`.
pub fn kernel_l2(m: usize) -> Result<f64> {
    let k = EquivalentKernel::new(m)?;
    // H² decays twice as fast; the l = 0 truncation is ample
    let (t, _) = k.truncation(0);
    Ok(2.0 * integrate_half(|x| k.eval(x).powi(2), t, 1e-14))
}

/// `h = K⁻¹ (λK/n)^{1/(2m)}` for one axis.
pub fn equivalent_bandwidth(lambda: f64, k: usize, n: usize, m: usize) -> f64 {
    (lambda * k as f64 / n as f64).powf(1.0 / (2 * m) as f64) / k as f64
}

/// Inverse of [`equivalent_bandwidth`].
pub fn lambda_for_bandwidth(h: f64, k: usize, n: usize, m: usize) -> f64 {
    (h * k as f64).powi(2 * m as i32) * n as f64 / k as f64
}

/// `(h_{n,1}, h_{n,2}, h_{n,1} h_{n,2})`.
#[allow(clippy::too_many_arguments)]
pub fn equivalent_bandwidths(
    lambda1: f64,
    lambda2: f64,
    k1: usize,
    k2: usize,
    n1: usize,
    n2: usize,
    m1: usize,
    m2: usize,
) -> (f64, f64, f64) {
    let h1 = equivalent_bandwidth(lambda1, k1, n1, m1);
    let h2 = equivalent_bandwidth(lambda2, k2, n2, m2);
    (h1, h2, h1 * h2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticReport {
    pub m1: usize,
    pub m2: usize,
    pub h1: f64,
    pub h2: f64,
    /// `m₃ = 4m₁m₂ + m₁ + m₂`.
    pub m3: usize,
    /// The error is `O(n^{-rate})` with `rate = 2m₁m₂/m₃`.
    pub rate: f64,
    pub bias: f64,
    pub variance: f64,
}

/// Limiting bias and variance of the scaled error at one point.
/// `d_x` and `d_z` are `∂^{2m₁}μ/∂x^{2m₁}` and `∂^{2m₂}μ/∂z^{2m₂}` there.
pub fn asymptotic_report(
    d_x: f64,
    d_z: f64,
    sigma2: f64,
    h1: f64,
    h2: f64,
    m1: usize,
    m2: usize,
) -> Result<AsymptoticReport> {
    let sign = |m: usize| if m % 2 == 1 { 1.0 } else { -1.0 };
    let bias = sign(m1) * h1.powi(2 * m1 as i32) * d_x + sign(m2) * h2.powi(2 * m2 as i32) * d_z;
    let variance = sigma2 * kernel_l2(m1)? * kernel_l2(m2)?;
    let m3 = 4 * m1 * m2 + m1 + m2;
    Ok(AsymptoticReport {
        m1,
        m2,
        h1,
        h2,
        m3,
        rate: (2 * m1 * m2) as f64 / m3 as f64,
        bias,
        variance,
    })
}

/// Univariate smoother weights compared with the rescaled kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelProfile {
    pub n: usize,
    pub bandwidth: f64,
    pub lambda: f64,
    /// `max |n h S_{ij} - H_m((x_i - x_j)/h)|` over interior rows `i`.
    pub max_abs_error: f64,
    /// Rows inspected.
    pub rows: Vec<usize>,
}

/// On `n` midpoints, pick `λ` so the equivalent bandwidth is `h`, then compare
/// every weight of rows whose design point lies in `interior`.
pub fn kernel_profile(n: usize, spec: &AxisSpec, h: f64, interior: (f64, f64)) -> Result<KernelProfile> {
    let x = midpoints(n);
    let lambda = lambda_for_bandwidth(h, spec.segments, n, spec.penalty_order);
    let s = AxisSpectrum::from_points(&x, spec)?.smoother_matrix(lambda)?;
    let kernel = EquivalentKernel::new(spec.penalty_order)?;
    let rows: Vec<usize> = (0..n)
        .filter(|&i| x[i] >= interior.0 && x[i] <= interior.1)
        .collect();
    let mut max_abs_error = 0.0f64;
    for &i in &rows {
        for j in 0..n {
            let approx = n as f64 * h * s[(i, j)];
            let err = (approx - kernel.eval((x[i] - x[j]) / h)).abs();
            max_abs_error = max_abs_error.max(err);
        }
    }
    Ok(KernelProfile {
        n,
        bandwidth: h,
        lambda,
        max_abs_error,
        rows,
    })
}
