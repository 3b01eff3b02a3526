//! Scattered data: bin onto a regular grid, impute empty bins, smooth.

use nalgebra::DMatrix;

use crate::basis::AxisSpec;
use crate::error::{Result, SmoothError};
use crate::sandwich2d::{argmin_gcv, LambdaGrid, SandwichFit, SandwichSmoother};

/// Observations `(xᵢ, zᵢ, yᵢ)` with `(xᵢ, zᵢ)` in the unit square.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterData {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
}

impl ScatterData {
    pub fn new(x: Vec<f64>, z: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != z.len() || x.len() != y.len() {
            return Err(SmoothError::Dimension(format!(
                "column lengths differ: x {}, z {}, y {}",
                x.len(),
                z.len(),
                y.len()
            )));
        }
        if x.iter().chain(&z).any(|v| !(0.0..=1.0).contains(v)) {
            return Err(SmoothError::InvalidInput(
                "scatter coordinates must lie in [0, 1]".into(),
            ));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SmoothError::InvalidInput(
                "responses must be finite".into(),
            ));
        }
        Ok(Self { x, z, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Bin index along one axis: bins are half-open, the last one closed at 1.
pub fn bin_index(v: f64, bins: usize) -> usize {
    ((v * bins as f64).floor() as usize).min(bins - 1)
}

/// Bins per axis for `n` scattered points: `ceil(min(√n / 2, 35))`.
pub fn default_bins(n: usize) -> usize {
    ((n as f64).sqrt() / 2.0).min(35.0).ceil().max(1.0) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinnedGrid {
    /// Bin means; empty bins hold whatever value was imputed (zero after
    /// [`bin_scatter`]).
    pub means: DMatrix<f64>,
    pub counts: DMatrix<usize>,
    pub centers_x: Vec<f64>,
    pub centers_z: Vec<f64>,
}

impl BinnedGrid {
    pub fn shape(&self) -> (usize, usize) {
        self.means.shape()
    }

    /// `true` where a bin received no observations.
    pub fn empty_mask(&self) -> DMatrix<bool> {
        self.counts.map(|c| c == 0)
    }

    pub fn n_empty(&self) -> usize {
        self.counts.iter().filter(|&&c| c == 0).count()
    }
}

pub fn bin_centers(bins: usize) -> Vec<f64> {
    (0..bins).map(|k| (k as f64 + 0.5) / bins as f64).collect()
}

pub fn bin_scatter(data: &ScatterData, bins_x: usize, bins_z: usize) -> Result<BinnedGrid> {
    if bins_x == 0 || bins_z == 0 {
        return Err(SmoothError::InvalidInput(
            "need at least one bin per axis".into(),
        ));
    }
    let mut sums = DMatrix::<f64>::zeros(bins_x, bins_z);
    let mut counts = DMatrix::<usize>::zeros(bins_x, bins_z);
    for i in 0..data.len() {
        let k = bin_index(data.x[i], bins_x);
        let l = bin_index(data.z[i], bins_z);
        sums[(k, l)] += data.y[i];
        counts[(k, l)] += 1;
    }
    let means = sums.zip_map(&counts, |s, c| if c > 0 { s / c as f64 } else { 0.0 });
    Ok(BinnedGrid {
        means,
        counts,
        centers_x: bin_centers(bins_x),
        centers_z: bin_centers(bins_z),
    })
}

/// Set every empty bin to the mean response of the `m` observations closest
/// to its centre. Distance ties are broken by observation order.
pub fn fill_nearest(grid: &BinnedGrid, data: &ScatterData, m: usize) -> Result<BinnedGrid> {
    if data.is_empty() {
        return Err(SmoothError::InvalidInput(
            "cannot impute empty bins without any observations".into(),
        ));
    }
    if m == 0 {
        return Err(SmoothError::InvalidInput(
            "nearest-neighbour count must be at least 1".into(),
        ));
    }
    let m = m.min(data.len());
    let mut out = grid.clone();
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(data.len());
    for l in 0..grid.centers_z.len() {
        for k in 0..grid.centers_x.len() {
            if grid.counts[(k, l)] > 0 {
                continue;
            }
            let (cx, cz) = (grid.centers_x[k], grid.centers_z[l]);
            order.clear();
            order.extend((0..data.len()).map(|i| {
                let dx = data.x[i] - cx;
                let dz = data.z[i] - cz;
                (dx * dx + dz * dz, i)
            }));
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mean = order[..m].iter().map(|&(_, i)| data.y[i]).sum::<f64>() / m as f64;
            out.means[(k, l)] = mean;
        }
    }
    Ok(out)
}

/// Starting values for empty bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImputeInit {
    Zero,
    Nearest(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterativeOptions {
    pub init: ImputeInit,
    /// Stop once the largest change in imputed values is at most
    /// `tol * max|y|`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IterativeOptions {
    fn default() -> Self {
        Self {
            init: ImputeInit::Nearest(3),
            tol: 1e-6,
            max_iter: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BinnedFit {
    pub fit: SandwichFit,
    /// Binned data with the final imputed values in the empty bins.
    pub grid: BinnedGrid,
    pub iterations: usize,
    pub converged: bool,
    /// Largest absolute change of the imputed values, per iteration.
    pub changes: Vec<f64>,
}

/// Bin, impute and smooth, alternating between smoothing-parameter selection
/// (SSE over occupied bins only) and re-imputation of empty bins from the fit.
pub fn iterative_fit(
    data: &ScatterData,
    bins_x: usize,
    bins_z: usize,
    spec_x: &AxisSpec,
    spec_z: &AxisSpec,
    grid: &LambdaGrid,
    opts: &IterativeOptions,
) -> Result<BinnedFit> {
    let binned = bin_scatter(data, bins_x, bins_z)?;
    let smoother = SandwichSmoother::new(&binned.centers_x, &binned.centers_z, spec_x, spec_z)?;
    iterate_binned(&smoother, binned, data, grid, opts)
}

/// The iteration on an already binned grid, reusing `smoother`.
pub fn iterate_binned(
    smoother: &SandwichSmoother,
    binned: BinnedGrid,
    data: &ScatterData,
    grid: &LambdaGrid,
    opts: &IterativeOptions,
) -> Result<BinnedFit> {
    if binned.n_empty() == 0 {
        let fit = smoother.select(&binned.means, grid)?;
        return Ok(BinnedFit {
            fit,
            grid: binned,
            iterations: 1,
            converged: true,
            changes: Vec::new(),
        });
    }
    if binned.n_empty() == binned.means.len() {
        return Err(SmoothError::InvalidInput("every bin is empty".into()));
    }

    let mut current = match opts.init {
        ImputeInit::Zero => binned,
        ImputeInit::Nearest(m) => fill_nearest(&binned, data, m)?,
    };
    let observed = current.counts.map(|c| c > 0);
    let scale = data.y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let threshold = opts.tol * if scale > 0.0 { scale } else { 1.0 };
    let pairs = grid.pairs();

    let mut changes = Vec::new();
    let mut converged = false;
    let mut fit = None;
    for _ in 0..opts.max_iter.max(1) {
        let points = smoother.masked_gcv(&current.means, &observed, &pairs)?;
        let best = points[argmin_gcv(&points)?];
        let mut f = smoother.fit_at(&current.means, best.lambda.0, best.lambda.1)?;
        f.gcv_value = best.gcv;
        f.sse = best.sse;

        let mut change = 0.0f64;
        for (idx, obs) in observed.iter().enumerate() {
            if !obs {
                let new = f.fitted[idx];
                change = change.max((new - current.means[idx]).abs());
                current.means[idx] = new;
            }
        }
        changes.push(change);
        fit = Some(f);
        if change <= threshold {
            converged = true;
            break;
        }
    }
    Ok(BinnedFit {
        fit: fit.expect("at least one iteration"),
        grid: current,
        iterations: changes.len(),
        converged,
        changes,
    })
}
