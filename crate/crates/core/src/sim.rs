//! Test surfaces, reproducible Gaussian noise and the Monte Carlo surface study.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::f64::consts::PI;

use crate::basis::{midpoints, AxisSpec};
use crate::error::{Result, SmoothError};
use crate::sandwich2d::{LambdaGrid, SandwichSmoother};

/// Standard normal draws from a ChaCha8 stream via Box–Muller.
///
/// The generator is seeded with `seed_from_u64(seed)` and placed on stream
/// `stream`, so replicate `r` of a study uses `NoiseRng::new(seed, r)` and the
/// draws do not depend on scheduling. Each pair of uniforms `(u₁, u₂)`, with
/// `u₁` mapped into `(0, 1]`, yields `√(-2 ln u₁) cos 2πu₂` followed by
/// `√(-2 ln u₁) sin 2πu₂`.
#[derive(Debug, Clone)]
pub struct NoiseRng {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NoiseRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, spare: None }
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        let u1 = 1.0 - self.rng.random::<f64>();
        let u2 = self.rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * PI * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> DMatrix<f64> {
        // column-major fill order
        let data: Vec<f64> = (0..rows * cols).map(|_| self.normal()).collect();
        DMatrix::from_vec(rows, cols, data)
    }
}

const SIGMA_X: f64 = 0.3;
const SIGMA_Z: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TestFunction {
    /// `sin{2π(x - 0.5)³} cos(4πz)`
    F1,
    /// Two Gaussian bumps with scales 0.3 and 0.4.
    F2,
}

impl std::str::FromStr for TestFunction {
    type Err = SmoothError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f1" => Ok(Self::F1),
            "f2" => Ok(Self::F2),
            other => Err(SmoothError::InvalidInput(format!(
                "unknown test function {other:?}, expected f1 or f2"
            ))),
        }
    }
}

impl TestFunction {
    pub fn name(self) -> &'static str {
        match self {
            Self::F1 => "f1",
            Self::F2 => "f2",
        }
    }

    pub fn eval(self, x: f64, z: f64) -> f64 {
        match self {
            Self::F1 => (2.0 * PI * (x - 0.5).powi(3)).sin() * (4.0 * PI * z).cos(),
            Self::F2 => bump(0.75, 0.2, 0.3, x, z) + bump(0.45, 0.7, 0.8, x, z),
        }
    }

    /// `∂⁴f/∂x⁴` at `(x, z)`.
    pub fn d4x(self, x: f64, z: f64) -> f64 {
        match self {
            Self::F1 => {
                let u = x - 0.5;
                let g = 2.0 * PI * u.powi(3);
                let g1 = 6.0 * PI * u * u;
                let g2 = 12.0 * PI * u;
                let g3 = 12.0 * PI;
                let (s, c) = g.sin_cos();
                let h4 = s * g1.powi(4) - 6.0 * c * g1 * g1 * g2 - 3.0 * s * g2 * g2 - 4.0 * s * g1 * g3;
                h4 * (4.0 * PI * z).cos()
            }
            Self::F2 => {
                bump_d4(0.75, 0.2, 0.3, x, z, true) + bump_d4(0.45, 0.7, 0.8, x, z, true)
            }
        }
    }

    /// `∂⁴f/∂z⁴` at `(x, z)`.
    pub fn d4z(self, x: f64, z: f64) -> f64 {
        match self {
            Self::F1 => {
                (2.0 * PI * (x - 0.5).powi(3)).sin() * (4.0 * PI).powi(4) * (4.0 * PI * z).cos()
            }
            Self::F2 => {
                bump_d4(0.75, 0.2, 0.3, x, z, false) + bump_d4(0.45, 0.7, 0.8, x, z, false)
            }
        }
    }

    /// Values on the tensor grid `x × z`.
    pub fn sample(self, x: &[f64], z: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(x.len(), z.len(), |i, j| self.eval(x[i], z[j]))
    }
}

fn bump(w: f64, cx: f64, cz: f64, x: f64, z: f64) -> f64 {
    let u = (x - cx) / SIGMA_X;
    let v = (z - cz) / SIGMA_Z;
    w / (PI * SIGMA_X * SIGMA_Z) * (-u * u - v * v).exp()
}

// d⁴/du⁴ e^{-u²} = H₄(u) e^{-u²} with the physicists' Hermite polynomial
fn bump_d4(w: f64, cx: f64, cz: f64, x: f64, z: f64, along_x: bool) -> f64 {
    let (u, s) = if along_x {
        ((x - cx) / SIGMA_X, SIGMA_X)
    } else {
        ((z - cz) / SIGMA_Z, SIGMA_Z)
    };
    let h4 = 16.0 * u.powi(4) - 48.0 * u * u + 12.0;
    bump(w, cx, cz, x, z) * h4 / s.powi(4)
}

/// Setup for the surface study: midpoint design, fixed specs, grid search.
#[derive(Debug, Clone)]
pub struct SurfaceStudy {
    pub function: TestFunction,
    pub sigma: f64,
    pub n1: usize,
    pub n2: usize,
    pub spec_x: AxisSpec,
    pub spec_z: AxisSpec,
    pub grid: LambdaGrid,
    /// Points per axis of an optional second, finer search.
    pub fine_pass: Option<usize>,
    pub reps: usize,
    pub seed: u64,
}

impl SurfaceStudy {
    /// 20 × 30 midpoints, cubic splines with 10 and 15 segments, 100 replicates.
    pub fn standard(function: TestFunction, sigma: f64, seed: u64) -> Self {
        Self {
            function,
            sigma,
            n1: 20,
            n2: 30,
            spec_x: AxisSpec::cubic(10).expect("valid spec"),
            spec_z: AxisSpec::cubic(15).expect("valid spec"),
            grid: LambdaGrid::default(),
            fine_pass: None,
            reps: 100,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiseSummary {
    pub mean: f64,
    /// Sample standard deviation (divisor `reps - 1`; zero for one replicate).
    pub sd: f64,
    pub ise: Vec<f64>,
}

impl MiseSummary {
    pub fn from_ise(ise: Vec<f64>) -> Self {
        let n = ise.len() as f64;
        let mean = ise.iter().sum::<f64>() / n;
        let sd = if ise.len() > 1 {
            (ise.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, sd, ise }
    }
}

/// Mean of squared differences over all cells.
pub fn grid_ise(fitted: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    (fitted - truth).norm_squared() / truth.len() as f64
}

/// Replicates run in parallel; replicate `r` draws from `NoiseRng::new(seed, r)`.
pub fn surface_mise(study: &SurfaceStudy) -> Result<MiseSummary> {
    if study.reps == 0 {
        return Err(SmoothError::InvalidInput("need at least one replicate".into()));
    }
    if !(study.sigma >= 0.0 && study.sigma.is_finite()) {
        return Err(SmoothError::Domain {
            what: "sigma",
            value: study.sigma,
            domain: "[0, inf)",
        });
    }
    let x = midpoints(study.n1);
    let z = midpoints(study.n2);
    let truth = study.function.sample(&x, &z);
    let smoother = SandwichSmoother::new(&x, &z, &study.spec_x, &study.spec_z)?;
    let ise = (0..study.reps as u64)
        .into_par_iter()
        .map(|r| {
            let mut noise = NoiseRng::new(study.seed, r);
            let y = &truth + noise.normal_matrix(study.n1, study.n2) * study.sigma;
            let fit = match study.fine_pass {
                Some(k) => smoother.select_refined(&y, &study.grid, k)?,
                None => smoother.select(&y, &study.grid)?,
            };
            Ok(grid_ise(&fit.fitted, &truth))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(MiseSummary::from_ise(ise))
}
