//! Equidistant-knot B-spline bases and difference penalties for a single axis.
//!
//! Every axis lives on `[0, 1]`. With `K` segments and degree `p` the knot
//! sequence is `(j - p) / K` for `j = 0..=K + 2p`, i.e. the interior knots
//! `0, 1/K, ..., 1` extended by `p` equally spaced knots on each side. This
//! yields `c = K + p` basis functions, all of which carry a full polynomial
//! piece inside the unit interval.

use nalgebra::DMatrix;

use crate::error::{Result, SmoothError};

/// Largest knot count suggested by the default rule.
pub const MAX_DEFAULT_SEGMENTS: usize = 35;

/// Per-axis smoothing configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AxisSpec {
    /// Spline degree `p`.
    pub degree: usize,
    /// Order `m` of the difference penalty.
    pub penalty_order: usize,
    /// Number of knot segments `K` (so `K - 1` interior knots).
    pub segments: usize,
}

impl AxisSpec {
    pub fn new(degree: usize, penalty_order: usize, segments: usize) -> Result<Self> {
        let spec = Self {
            degree,
            penalty_order,
            segments,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Cubic B-splines with a second-order difference penalty.
    pub fn cubic(segments: usize) -> Result<Self> {
        Self::new(3, 2, segments)
    }

    /// Cubic, second-order penalty, knot count from [`default_segments`].
    pub fn auto(n_points: usize) -> Result<Self> {
        Self::cubic(default_segments(n_points))
    }

    pub fn validate(&self) -> Result<()> {
        if self.penalty_order == 0 {
            return Err(SmoothError::InvalidSpec(
                "penalty order must be at least 1".into(),
            ));
        }
        if self.segments == 0 {
            return Err(SmoothError::InvalidSpec(
                "number of knot segments must be at least 1".into(),
            ));
        }
        if self.basis_dim() <= self.penalty_order {
            return Err(SmoothError::InvalidSpec(format!(
                "basis dimension {} must exceed penalty order {}",
                self.basis_dim(),
                self.penalty_order
            )));
        }
        Ok(())
    }

    /// Basis dimension `c = K + p`.
    pub fn basis_dim(&self) -> usize {
        self.segments + self.degree
    }

    /// Degree-zero splines are allowed but sit outside the asymptotic theory,
    /// which needs `p >= 1`.
    pub fn within_theory(&self) -> bool {
        self.degree >= 1
    }
}

/// Default knot count for an axis with `n` observations: `min(n / 2, 35)`,
/// rounded down and at least one.
pub fn default_segments(n: usize) -> usize {
    (n / 2).clamp(1, MAX_DEFAULT_SEGMENTS)
}

/// Midpoint design `(i - 1/2) / n`, `i = 1..=n`.
pub fn midpoints(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect()
}

/// Equally spaced knot sequence for an [`AxisSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    knots: Vec<f64>,
    degree: usize,
    segments: usize,
}

impl KnotVector {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn basis_dim(&self) -> usize {
        self.segments + self.degree
    }

    /// Index of the interior segment containing `x`. Segments are half-open
    /// except the last, which is closed at `x = 1`.
    fn segment_of(&self, x: f64) -> usize {
        let s = (x * self.segments as f64).floor() as usize;
        s.min(self.segments - 1)
    }

    /// The `p + 1` possibly nonzero basis values at `x`, together with the
    /// index of the first of them.
    pub fn eval_nonzero(&self, x: f64) -> Result<(usize, Vec<f64>)> {
        if !(0.0..=1.0).contains(&x) {
            return Err(SmoothError::Domain {
                what: "x",
                value: x,
                domain: "[0, 1]",
            });
        }
        let p = self.degree;
        let seg = self.segment_of(x);
        let span = seg + p;
        let t = &self.knots;

        // de Boor / Cox triangular scheme on the active span.
        let mut vals = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        vals[0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let tmp = vals[r] / (right[r + 1] + left[j - r]);
                vals[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            vals[j] = saved;
        }
        Ok((seg, vals))
    }
}

pub fn make_knots(spec: &AxisSpec) -> KnotVector {
    let p = spec.degree;
    let k = spec.segments as f64;
    let count = spec.basis_dim() + p + 1;
    let knots = (0..count).map(|j| (j as f64 - p as f64) / k).collect();
    KnotVector {
        knots,
        degree: p,
        segments: spec.segments,
    }
}

/// All `c` basis values at `x`.
pub fn eval_basis(knots: &KnotVector, x: f64) -> Result<Vec<f64>> {
    let (first, vals) = knots.eval_nonzero(x)?;
    let mut out = vec![0.0; knots.basis_dim()];
    out[first..first + vals.len()].copy_from_slice(&vals);
    Ok(out)
}

/// `n x c` matrix whose row `r` holds the basis evaluated at `points[r]`.
pub fn design_matrix(points: &[f64], spec: &AxisSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let knots = make_knots(spec);
    let mut b = DMatrix::zeros(points.len(), spec.basis_dim());
    for (r, &x) in points.iter().enumerate() {
        let (first, vals) = knots.eval_nonzero(x)?;
        for (k, v) in vals.into_iter().enumerate() {
            b[(r, first + k)] = v;
        }
    }
    Ok(b)
}

/// `(c - m) x c` matrix of `m`-th order differences.
pub fn diff_matrix(c: usize, m: usize) -> Result<DMatrix<f64>> {
    if c <= m {
        return Err(SmoothError::Dimension(format!(
            "difference order {m} needs more than {m} coefficients, got {c}"
        )));
    }
    let coeffs = signed_binomials(m);
    let mut d = DMatrix::zeros(c - m, c);
    for i in 0..c - m {
        for (k, &w) in coeffs.iter().enumerate() {
            d[(i, i + k)] = w;
        }
    }
    Ok(d)
}

// (-1)^(m-k) * C(m, k), k = 0..=m
fn signed_binomials(m: usize) -> Vec<f64> {
    let mut row = vec![1.0];
    for _ in 0..m {
        let mut next = vec![0.0; row.len() + 1];
        for (k, &v) in row.iter().enumerate() {
            next[k] -= v;
            next[k + 1] += v;
        }
        row = next;
    }
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    // Plain recursive Cox-de Boor definition, used as an independent oracle.
    fn cox_de_boor(t: &[f64], i: usize, p: usize, x: f64, last_segment_right: f64) -> f64 {
        if p == 0 {
            let inside = if x == last_segment_right {
                t[i] < x && t[i + 1] == x
            } else {
                t[i] <= x && x < t[i + 1]
            };
            return if inside { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = t[i + p] - t[i];
        if d1 > 0.0 {
            v += (x - t[i]) / d1 * cox_de_boor(t, i, p - 1, x, last_segment_right);
        }
        let d2 = t[i + p + 1] - t[i + 1];
        if d2 > 0.0 {
            v += (t[i + p + 1] - x) / d2 * cox_de_boor(t, i + 1, p - 1, x, last_segment_right);
        }
        v
    }

    #[test]
    fn knots_follow_spacing_rule() {
        // c = 1 admits no difference penalty, but the knots are still defined.
        let single = AxisSpec {
            degree: 0,
            penalty_order: 1,
            segments: 1,
        };
        assert!(single.validate().is_err());
        assert_eq!(make_knots(&single).knots(), &[0.0, 1.0]);

        let k = make_knots(&AxisSpec::new(1, 1, 2).unwrap());
        assert_eq!(k.knots(), &[-0.5, 0.0, 0.5, 1.0, 1.5]);

        let k = make_knots(&AxisSpec::new(3, 2, 10).unwrap());
        assert_eq!(k.knots().len(), 17);
        assert_abs_diff_eq!(k.knots()[0], -0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(k.knots()[16], 1.3, epsilon = 1e-15);
        for w in k.knots().windows(2) {
            assert_abs_diff_eq!(w[1] - w[0], 0.1, epsilon = 1e-15);
        }
    }

    #[test]
    fn knot_count_is_c_plus_p_plus_one() {
        for (p, m, seg) in [(0, 1, 2), (1, 1, 2), (3, 2, 10), (2, 3, 7)] {
            let spec = AxisSpec::new(p, m, seg).unwrap();
            assert_eq!(make_knots(&spec).knots().len(), spec.basis_dim() + p + 1);
        }
    }

    #[test]
    fn spec_validation() {
        assert!(AxisSpec::new(0, 1, 2).is_ok());
        assert!(AxisSpec::new(0, 1, 1).is_err());
        assert!(AxisSpec::new(3, 0, 5).is_err());
        assert!(AxisSpec::new(3, 2, 0).is_err());
        assert!(!AxisSpec::new(0, 1, 4).unwrap().within_theory());
        assert_eq!(default_segments(20), 10);
        assert_eq!(default_segments(30), 15);
        assert_eq!(default_segments(1000), 35);
        assert_eq!(default_segments(1), 1);
    }

    #[test]
    fn piecewise_constant_basis_is_bin_indicator() {
        let k = make_knots(&AxisSpec::new(0, 1, 4).unwrap());
        assert_eq!(eval_basis(&k, 0.3).unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(eval_basis(&k, 1.0).unwrap(), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn linear_hat_functions() {
        let k = make_knots(&AxisSpec::new(1, 1, 2).unwrap());
        let v = eval_basis(&k, 0.25).unwrap();
        assert_eq!(v.len(), 3);
        assert_abs_diff_eq!(v[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(v[2], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn cubic_matches_recursive_oracle() {
        let spec = AxisSpec::new(3, 2, 10).unwrap();
        let k = make_knots(&spec);
        for &x in &[0.0, 0.05, 0.5, 0.37, 0.999, 1.0] {
            let v = eval_basis(&k, x).unwrap();
            for (i, &vi) in v.iter().enumerate() {
                let want = cox_de_boor(k.knots(), i, 3, x, 1.0);
                assert_abs_diff_eq!(vi, want, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn outside_unit_interval_is_domain_error() {
        let k = make_knots(&AxisSpec::cubic(5).unwrap());
        assert!(matches!(
            eval_basis(&k, 1.01),
            Err(SmoothError::Domain { .. })
        ));
        assert!(eval_basis(&k, -1e-9).is_err());
        assert!(eval_basis(&k, f64::NAN).is_err());
    }

    #[test]
    fn midpoint_design_with_degree_zero_is_identity() {
        let n = 7;
        let x: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let b = design_matrix(&x, &AxisSpec::new(0, 1, n).unwrap()).unwrap();
        assert_eq!(b, DMatrix::identity(n, n));
    }

    #[test]
    fn cubic_design_has_local_support() {
        let x: Vec<f64> = (0..20).map(|i| (i as f64 + 0.5) / 20.0).collect();
        let b = design_matrix(&x, &AxisSpec::cubic(10).unwrap()).unwrap();
        assert_eq!(b.ncols(), 13);
        for row in b.row_iter() {
            assert!(row.iter().filter(|v| **v != 0.0).count() <= 4);
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn difference_matrices() {
        let d = diff_matrix(3, 1).unwrap();
        assert_eq!(
            d,
            DMatrix::from_row_slice(2, 3, &[-1.0, 1.0, 0.0, 0.0, -1.0, 1.0])
        );
        let d = diff_matrix(4, 2).unwrap();
        assert_eq!(
            d,
            DMatrix::from_row_slice(2, 4, &[1.0, -2.0, 1.0, 0.0, 0.0, 1.0, -2.0, 1.0])
        );
        assert!(matches!(diff_matrix(2, 2), Err(SmoothError::Dimension(_))));
    }

    #[test]
    fn difference_recursion_identity() {
        for c in 3..9 {
            for m in 2..c {
                let lhs = diff_matrix(c, m).unwrap();
                let rhs = diff_matrix(c - 1, m - 1).unwrap() * diff_matrix(c, 1).unwrap();
                assert_eq!(lhs, rhs);
            }
        }
    }

    #[test]
    fn penalty_annihilates_low_degree_polynomials() {
        let c = 12;
        for m in 1..5 {
            let d = diff_matrix(c, m).unwrap();
            for deg in 0..m {
                let v = nalgebra::DVector::from_fn(c, |i, _| (i as f64 * 0.5 - 1.0).powi(deg as i32));
                let dv = &d * v;
                assert!(dv.amax() < 1e-9, "m={m} deg={deg} residual {}", dv.amax());
            }
        }
    }

    proptest! {
        #[test]
        fn partition_of_unity(x in 0.0f64..=1.0, p in 0usize..5, seg in 1usize..30) {
            let spec = AxisSpec { degree: p, penalty_order: 1, segments: seg };
            let k = make_knots(&spec);
            let v = eval_basis(&k, x).unwrap();
            prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(v.iter().all(|b| (-1e-15..=1.0 + 1e-15).contains(b)));
            prop_assert!(v.iter().filter(|b| **b != 0.0).count() <= p + 1);
        }

        #[test]
        fn local_support(x in 0.0f64..=1.0, seg in 1usize..20) {
            let spec = AxisSpec::cubic(seg).unwrap();
            let k = make_knots(&spec);
            let v = eval_basis(&k, x).unwrap();
            for (i, &b) in v.iter().enumerate() {
                let lo = k.knots()[i];
                let hi = k.knots()[i + 4];
                if b != 0.0 {
                    prop_assert!(lo <= x && x <= hi);
                }
            }
        }
    }
}
