use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde_json::{json, Map, Value};

use sandwich::basis::{default_segments, midpoints, AxisSpec};
use sandwich::binning::{
    bin_scatter, default_bins, iterate_binned, BinnedGrid, ImputeInit, IterativeOptions, ScatterData,
};
use sandwich::fda::{
    covariance_mise, eigenpairs, sample_cov, smooth_cov as fit_cov, CovSmoothOptions, CurveSet,
    FdaCase, FdaStudy,
};
use sandwich::glam::{fit_array, ArrayData};
use sandwich::kernelcheck::{kernel_l2, kernel_moment, kernel_profile, moment_target};
use sandwich::sandwich2d::{GridData, LambdaGrid, SandwichFit, SandwichSmoother};
use sandwich::sim::{surface_mise, MiseSummary, NoiseRng, SurfaceStudy, TestFunction};

use crate::io::{self, fmt_num};
use crate::{alloc, CliError, Context, Study};

fn out(ctx: &Context, name: &str) -> PathBuf {
    ctx.out_dir.join(name)
}

fn spec_json(s: &AxisSpec) -> Value {
    json!({
        "degree": s.degree,
        "penalty_order": s.penalty_order,
        "segments": s.segments,
        "basis_dim": s.basis_dim(),
    })
}

fn grid_json(values: &[f64]) -> Value {
    json!({
        "count": values.len(),
        "min": values.first(),
        "max": values.last(),
    })
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<T>()
                .map_err(|e| CliError::Input(format!("{what}: {p:?}: {e}")))
        })
        .collect()
}

struct SurfaceFit {
    fit: SandwichFit,
    specs: Vec<AxisSpec>,
    grid: LambdaGrid,
    seconds: f64,
}

fn fit_surface(ctx: &Context, x: &[f64], z: &[f64], y: &DMatrix<f64>) -> Result<SurfaceFit, CliError> {
    let specs = ctx.smoothing.specs(&[x.len(), z.len()])?;
    let grids = ctx.smoothing.grids(2)?;
    let grid = LambdaGrid::new(grids[0].clone(), grids[1].clone())?;
    let start = Instant::now();
    let sm = SandwichSmoother::new(x, z, &specs[0], &specs[1])?;
    let fit = match ctx.smoothing.fine_pass {
        Some(k) => sm.select_refined(y, &grid, k)?,
        None => sm.select(y, &grid)?,
    };
    Ok(SurfaceFit {
        fit,
        specs,
        grid,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn surface_summary(ctx: &Context, command: &str, s: &SurfaceFit, shape: (usize, usize)) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("command".into(), json!(command));
    m.insert("shape".into(), json!([shape.0, shape.1]));
    m.insert("spec_x".into(), spec_json(&s.specs[0]));
    m.insert("spec_z".into(), spec_json(&s.specs[1]));
    m.insert(
        "lambda_grid".into(),
        json!({"x": grid_json(&s.grid.x), "z": grid_json(&s.grid.z)}),
    );
    m.insert("fine_pass".into(), json!(ctx.smoothing.fine_pass));
    m.insert("lambda".into(), json!([s.fit.lambda.0, s.fit.lambda.1]));
    m.insert("edf".into(), json!(s.fit.edf));
    m.insert("gcv".into(), json!(s.fit.gcv_value));
    m.insert("sse".into(), json!(s.fit.sse));
    if ctx.timings {
        m.insert("seconds".into(), json!(s.seconds));
    }
    m
}

fn write_surface_plotdata(
    ctx: &Context,
    x: &[f64],
    z: &[f64],
    y: &DMatrix<f64>,
    fit: &SandwichFit,
) -> Result<(), CliError> {
    if !ctx.emit_plotdata {
        return Ok(());
    }
    let mut long = String::from("x,z,observed,fitted\n");
    for j in 0..z.len() {
        for i in 0..x.len() {
            writeln!(
                long,
                "{},{},{},{}",
                fmt_num(x[i]),
                fmt_num(z[j]),
                fmt_num(y[(i, j)]),
                fmt_num(fit.fitted[(i, j)])
            )
            .unwrap();
        }
    }
    io::write_file(&out(ctx, "fit_long.csv"), &long)?;
    if let Some(surface) = &fit.gcv_surface {
        let mut g = String::from("lambda_x,lambda_z,sse,edf,gcv\n");
        for p in &surface.points {
            writeln!(
                g,
                "{},{},{},{},{}",
                fmt_num(p.lambda.0),
                fmt_num(p.lambda.1),
                fmt_num(p.sse),
                fmt_num(p.edf),
                fmt_num(p.gcv)
            )
            .unwrap();
        }
        io::write_file(&out(ctx, "gcv_surface.csv"), &g)?;
    }
    Ok(())
}

pub fn smooth_grid(ctx: &Context, input: &Path) -> Result<(), CliError> {
    let g = io::read_grid(input)?;
    let data = GridData::new(g.values, g.x, g.z)?;
    let s = fit_surface(ctx, &data.x, &data.z, &data.y)?;
    io::write_file(&out(ctx, "fitted.csv"), &io::grid_csv(&data.x, &data.z, &s.fit.fitted))?;
    let summary = surface_summary(ctx, "smooth-grid", &s, data.shape());
    io::write_json(&out(ctx, "summary.json"), &Value::Object(summary))?;
    write_surface_plotdata(ctx, &data.x, &data.z, &data.y, &s.fit)?;
    println!(
        "lambda = ({:e}, {:e}), edf = {:.4}, gcv = {:e}",
        s.fit.lambda.0, s.fit.lambda.1, s.fit.edf, s.fit.gcv_value
    );
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct ScatterOptions {
    pub bins: Option<String>,
    pub init: Option<String>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
}

fn parse_init(s: &str) -> Result<ImputeInit, CliError> {
    match s.trim() {
        "zero" => Ok(ImputeInit::Zero),
        "nearest" => Ok(ImputeInit::Nearest(3)),
        other => match other.strip_prefix("nearest:").map(str::parse::<usize>) {
            Some(Ok(m)) if m > 0 => Ok(ImputeInit::Nearest(m)),
            _ => Err(CliError::Input(format!(
                "init: expected zero, nearest or nearest:M, got {other:?}"
            ))),
        },
    }
}

fn counts_as_f64(g: &BinnedGrid) -> DMatrix<f64> {
    g.counts.map(|c| c as f64)
}

pub fn smooth_scatter(ctx: &Context, input: &Path, opts: &ScatterOptions) -> Result<(), CliError> {
    let (x, z, y) = io::read_scatter(input)?;
    let data = ScatterData::new(x, z, y)?;
    let (b1, b2) = match &opts.bins {
        None => {
            let b = default_bins(data.len());
            (b, b)
        }
        Some(s) => match parse_list::<usize>(s, "bins")?.as_slice() {
            [b] => (*b, *b),
            [b1, b2] => (*b1, *b2),
            _ => return Err(CliError::Input("bins: expected I or I1,I2".into())),
        },
    };
    let iter_opts = IterativeOptions {
        init: match &opts.init {
            Some(s) => parse_init(s)?,
            None => IterativeOptions::default().init,
        },
        tol: opts.tol.unwrap_or(IterativeOptions::default().tol),
        max_iter: opts.max_iter.unwrap_or(IterativeOptions::default().max_iter),
    };
    let binned = bin_scatter(&data, b1, b2)?;
    let empty = binned.n_empty();
    let cx = binned.centers_x.clone();
    let cz = binned.centers_z.clone();

    let (fit, filled, iterations, converged, changes, specs, grid, seconds) = if empty == 0 {
        // identical to smoothing the binned means as a grid
        let s = fit_surface(ctx, &cx, &cz, &binned.means)?;
        (s.fit, binned, 1, true, Vec::new(), s.specs, s.grid, s.seconds)
    } else {
        if ctx.smoothing.fine_pass.is_some() {
            eprintln!("sandwich: --fine-pass is ignored when bins are empty");
        }
        let specs = ctx.smoothing.specs(&[b1, b2])?;
        let grids = ctx.smoothing.grids(2)?;
        let grid = LambdaGrid::new(grids[0].clone(), grids[1].clone())?;
        let start = Instant::now();
        let sm = SandwichSmoother::new(&cx, &cz, &specs[0], &specs[1])?;
        let r = iterate_binned(&sm, binned, &data, &grid, &iter_opts)?;
        let secs = start.elapsed().as_secs_f64();
        (r.fit, r.grid, r.iterations, r.converged, r.changes, specs, grid, secs)
    };

    io::write_file(&out(ctx, "binned.csv"), &io::grid_csv(&cx, &cz, &filled.means))?;
    io::write_file(&out(ctx, "counts.csv"), &io::grid_csv(&cx, &cz, &counts_as_f64(&filled)))?;
    io::write_file(&out(ctx, "fitted.csv"), &io::grid_csv(&cx, &cz, &fit.fitted))?;
    let s = SurfaceFit {
        fit,
        specs,
        grid,
        seconds,
    };
    let mut summary = surface_summary(ctx, "smooth-scatter", &s, (b1, b2));
    summary.insert("n_points".into(), json!(data.len()));
    summary.insert("empty_bins".into(), json!(empty));
    summary.insert("iterations".into(), json!(iterations));
    summary.insert("converged".into(), json!(converged));
    summary.insert("changes".into(), json!(changes));
    io::write_json(&out(ctx, "summary.json"), &Value::Object(summary))?;
    write_surface_plotdata(ctx, &cx, &cz, &filled.means, &s.fit)?;
    println!(
        "{} points in {b1}x{b2} bins ({empty} empty), lambda = ({:e}, {:e}), {iterations} iteration(s){}",
        data.len(),
        s.fit.lambda.0,
        s.fit.lambda.1,
        if converged { "" } else { ", NOT converged" }
    );
    Ok(())
}

pub fn smooth_cov(
    ctx: &Context,
    input: &Path,
    center: bool,
    exclude_diagonal: bool,
    components: Option<usize>,
) -> Result<(), CliError> {
    let (t, y) = io::read_curves(input)?;
    let curves = CurveSet::new(y, t)?;
    let j = curves.n_points();
    let c = sample_cov(&curves, center)?;
    let spec = ctx.smoothing.specs(&[j])?[0];
    let lambdas = ctx.smoothing.grids(1)?.remove(0);
    let start = Instant::now();
    let model = fit_cov(
        &c,
        &curves.t,
        &spec,
        &CovSmoothOptions {
            lambdas: lambdas.clone(),
            exclude_diagonal,
        },
    )?;
    let seconds = start.elapsed().as_secs_f64();
    let k = components.unwrap_or(4.min(j));
    let (values, funcs) = eigenpairs(&model, k, None)?;

    let t = &curves.t;
    io::write_file(&out(ctx, "raw_cov.csv"), &io::grid_csv(t, t, &model.raw_cov))?;
    io::write_file(&out(ctx, "smoothed_cov.csv"), &io::grid_csv(t, t, &model.smoothed_cov))?;
    let mut eig = String::from("t");
    for i in 1..=k {
        write!(eig, ",psi{i}").unwrap();
    }
    eig.push('\n');
    for (a, ta) in t.iter().enumerate() {
        eig.push_str(&fmt_num(*ta));
        for f in &funcs {
            write!(eig, ",{}", fmt_num(f[a])).unwrap();
        }
        eig.push('\n');
    }
    io::write_file(&out(ctx, "eigenfunctions.csv"), &eig)?;

    let mut m = Map::new();
    m.insert("command".into(), json!("smooth-cov"));
    m.insert("curves".into(), json!(curves.n_curves()));
    m.insert("points".into(), json!(j));
    m.insert("center".into(), json!(center));
    m.insert("exclude_diagonal".into(), json!(exclude_diagonal));
    m.insert("spec".into(), spec_json(&spec));
    m.insert("lambda_grid".into(), grid_json(&lambdas));
    m.insert("lambda".into(), json!(model.lambda));
    m.insert("eigenvalues".into(), json!(values));
    if ctx.timings {
        m.insert("seconds".into(), json!(seconds));
    }
    io::write_json(&out(ctx, "summary.json"), &Value::Object(m))?;

    if ctx.emit_plotdata {
        let mut long = String::from("s,t,raw,smoothed\n");
        for b in 0..j {
            for a in 0..j {
                writeln!(
                    long,
                    "{},{},{},{}",
                    fmt_num(t[a]),
                    fmt_num(t[b]),
                    fmt_num(model.raw_cov[(a, b)]),
                    fmt_num(model.smoothed_cov[(a, b)])
                )
                .unwrap();
            }
        }
        io::write_file(&out(ctx, "cov_long.csv"), &long)?;
        let mut g = String::from("lambda,sse,edf,gcv\n");
        for p in &model.gcv {
            writeln!(g, "{},{},{},{}", fmt_num(p.lambda.0), fmt_num(p.sse), fmt_num(p.edf), fmt_num(p.gcv)).unwrap();
        }
        io::write_file(&out(ctx, "gcv.csv"), &g)?;
    }
    println!(
        "{} curves on {j} points, lambda = {:e}, leading eigenvalues {:?}",
        curves.n_curves(),
        model.lambda,
        values
    );
    Ok(())
}

pub fn smooth_array(ctx: &Context, input: &Path) -> Result<(), CliError> {
    let (coords, values) = io::read_array(input)?;
    let shape = values.shape().to_vec();
    let data = ArrayData::new(values, coords)?;
    let specs = ctx.smoothing.specs(&shape)?;
    let grids = ctx.smoothing.grids(shape.len())?;
    if ctx.smoothing.fine_pass.is_some() {
        eprintln!("sandwich: --fine-pass is ignored for array smoothing");
    }
    let start = Instant::now();
    let fit = fit_array(&data, &specs, &grids)?;
    let seconds = start.elapsed().as_secs_f64();
    io::write_file(&out(ctx, "fitted.csv"), &io::array_csv(&data.coords, &fit.fitted))?;
    let mut m = Map::new();
    m.insert("command".into(), json!("smooth-array"));
    m.insert("shape".into(), json!(shape));
    m.insert("specs".into(), Value::Array(specs.iter().map(spec_json).collect()));
    m.insert(
        "lambda_grid".into(),
        Value::Array(grids.iter().map(|g| grid_json(g)).collect()),
    );
    m.insert("lambda".into(), json!(fit.lambda));
    m.insert("edf".into(), json!(fit.edf));
    m.insert("gcv".into(), json!(fit.gcv_value));
    m.insert("sse".into(), json!(fit.sse));
    if ctx.timings {
        m.insert("seconds".into(), json!(seconds));
    }
    io::write_json(&out(ctx, "summary.json"), &Value::Object(m))?;
    println!("array {shape:?}, lambda = {:?}, edf = {:.4}", fit.lambda, fit.edf);
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub study: Study,
    pub function: Option<String>,
    pub sigma: Option<f64>,
    pub n1: Option<usize>,
    pub n2: Option<usize>,
    pub case: Option<u8>,
    pub curves: Option<usize>,
    pub points: Option<usize>,
    pub center: bool,
    pub exclude_diagonal: bool,
}

fn mise_json(m: &mut Map<String, Value>, s: &MiseSummary) {
    m.insert("mean".into(), json!(s.mean));
    m.insert("sd".into(), json!(s.sd));
    m.insert("ise".into(), json!(s.ise));
}

fn write_ise(ctx: &Context, s: &MiseSummary) -> Result<(), CliError> {
    if ctx.emit_plotdata {
        let mut text = String::from("replicate,ise\n");
        for (r, v) in s.ise.iter().enumerate() {
            writeln!(text, "{r},{}", fmt_num(*v)).unwrap();
        }
        io::write_file(&out(ctx, "ise.csv"), &text)?;
    }
    Ok(())
}

pub fn simulate(ctx: &Context, opts: &SimulateOptions) -> Result<(), CliError> {
    let reps = ctx.reps.unwrap_or(100);
    let mut m = Map::new();
    m.insert("command".into(), json!("simulate"));
    m.insert("reps".into(), json!(reps));
    m.insert("seed".into(), json!(ctx.seed));
    let start = Instant::now();
    let summary = match opts.study {
        Study::Surface => {
            let function: TestFunction = opts.function.as_deref().unwrap_or("f1").parse()?;
            let sigma = opts.sigma.unwrap_or(0.1);
            let (n1, n2) = (opts.n1.unwrap_or(20), opts.n2.unwrap_or(30));
            let specs = ctx.smoothing.specs(&[n1, n2])?;
            let grids = ctx.smoothing.grids(2)?;
            let study = SurfaceStudy {
                function,
                sigma,
                n1,
                n2,
                spec_x: specs[0],
                spec_z: specs[1],
                grid: LambdaGrid::new(grids[0].clone(), grids[1].clone())?,
                fine_pass: ctx.smoothing.fine_pass,
                reps,
                seed: ctx.seed,
            };
            let s = surface_mise(&study)?;
            m.insert("study".into(), json!("surface"));
            m.insert("function".into(), json!(function.name()));
            m.insert("sigma".into(), json!(sigma));
            m.insert("shape".into(), json!([n1, n2]));
            m.insert("spec_x".into(), spec_json(&specs[0]));
            m.insert("spec_z".into(), spec_json(&specs[1]));
            println!("{} sigma={sigma} {n1}x{n2}: MISE {:.4e} (sd {:.2e}) over {reps} replicates", function.name(), s.mean, s.sd);
            s
        }
        Study::Fda => {
            let case_id = opts.case.unwrap_or(1);
            let case = FdaCase::from_index(case_id)?;
            let sigma = opts.sigma.unwrap_or(0.5);
            let (n, j) = (opts.curves.unwrap_or(25), opts.points.unwrap_or(20));
            let spec = ctx.smoothing.specs(&[j])?[0];
            let study = FdaStudy {
                case,
                n,
                j,
                sigma,
                spec,
                options: CovSmoothOptions {
                    lambdas: ctx.smoothing.grids(1)?.remove(0),
                    exclude_diagonal: opts.exclude_diagonal,
                },
                center: opts.center,
                reps,
                seed: ctx.seed,
            };
            let s = covariance_mise(&study)?;
            m.insert("study".into(), json!("fda"));
            m.insert("case".into(), json!(case_id));
            m.insert("sigma".into(), json!(sigma));
            m.insert("curves".into(), json!(n));
            m.insert("points".into(), json!(j));
            m.insert("center".into(), json!(opts.center));
            m.insert("exclude_diagonal".into(), json!(opts.exclude_diagonal));
            m.insert("spec".into(), spec_json(&spec));
            println!("case {case_id} n={n} J={j} sigma={sigma}: mean covariance ISE {:.4} (sd {:.4}) over {reps} replicates", s.mean, s.sd);
            s
        }
    };
    mise_json(&mut m, &summary);
    if ctx.timings {
        m.insert("seconds".into(), json!(start.elapsed().as_secs_f64()));
    }
    io::write_json(&out(ctx, "summary.json"), &Value::Object(m))?;
    write_ise(ctx, &summary)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

pub fn kernel_check(ctx: &Context, orders: Option<String>, profile: bool) -> Result<(), CliError> {
    let orders: Vec<usize> = match orders {
        Some(s) => parse_list(&s, "orders")?,
        None => vec![1, 2, 3],
    };
    if orders.contains(&0) {
        return Err(CliError::Input("orders must be at least 1".into()));
    }
    let mut all_pass = true;
    let mut rows = Vec::new();
    println!("{:>3} {:>3} {:>24} {:>14} {:>10}  result", "m", "l", "moment", "target", "error");
    for &m in &orders {
        for l in 0..=2 * m {
            let q = kernel_moment(m, l)?;
            let target = moment_target(m, l);
            let scale = if l == 2 * m { factorial(2 * m) } else { 1.0 };
            let err = (q - target).abs() / scale;
            let pass = err <= 1e-6;
            all_pass &= pass;
            println!(
                "{m:>3} {l:>3} {q:>24.16e} {target:>14} {err:>10.2e}  {}",
                if pass { "pass" } else { "FAIL" }
            );
            rows.push(json!({"m": m, "l": l, "moment": q, "target": target, "scaled_error": err, "pass": pass}));
        }
    }
    let l2: Vec<Value> = orders
        .iter()
        .map(|&m| Ok(json!({"m": m, "l2": kernel_l2(m)?})))
        .collect::<Result<_, CliError>>()?;
    let mut report = Map::new();
    report.insert("command".into(), json!("kernel-check"));
    report.insert("tolerance".into(), json!(1e-6));
    report.insert("moments".into(), Value::Array(rows));
    report.insert("l2".into(), Value::Array(l2));
    if profile {
        let spec = AxisSpec::cubic(80)?;
        let p = kernel_profile(400, &spec, 0.05, (0.3, 0.7))?;
        println!(
            "weight profile n=400 K=80 h=0.05: max |n h S - H_2| = {:.3e} over {} rows",
            p.max_abs_error,
            p.rows.len()
        );
        report.insert(
            "profile".into(),
            json!({"n": p.n, "segments": 80, "bandwidth": p.bandwidth, "lambda": p.lambda,
                   "rows": p.rows.len(), "max_abs_error": p.max_abs_error}),
        );
    }
    report.insert("pass".into(), json!(all_pass));
    io::write_json(&out(ctx, "kernel_check.json"), &Value::Object(report))?;
    if all_pass {
        Ok(())
    } else {
        Err(CliError::Numeric("moment check failed".into()))
    }
}

/// Knot segments per axis for an `n x n` benchmark grid: `min(n/2, 35)` up
/// to `80 x 80`, beyond that `K² ≈ (n²)^0.65`.
pub fn bench_segments(n: usize) -> usize {
    if n <= 80 {
        default_segments(n)
    } else {
        ((n * n) as f64).powf(0.325).round() as usize
    }
}

/// Bookkeeping (GCV surface, bases) may exceed a tiny data matrix.
const ALLOC_SLACK: usize = 64 * 1024;

pub fn bench(ctx: &Context, sizes: Option<String>) -> Result<(), CliError> {
    let sizes: Vec<usize> = match sizes {
        Some(s) => parse_list(&s, "sizes")?,
        None => vec![20, 40, 80, 300, 500],
    };
    let reps = ctx.reps.unwrap_or(1).max(1);
    let grids = ctx.smoothing.grids(2)?;
    let grid = LambdaGrid::new(grids[0].clone(), grids[1].clone())?;
    let mut rows = Vec::new();
    println!("{:>6} {:>4} {:>7} {:>12} {:>12} {:>14}", "n", "K", "pairs", "seconds", "peak MB", "largest MB");
    for (idx, &n) in sizes.iter().enumerate() {
        if n < 4 {
            return Err(CliError::Input(format!("size {n} is too small")));
        }
        let x = midpoints(n);
        let spec = match ctx.smoothing.knots {
            crate::config::Knots::Auto => AxisSpec::new(
                ctx.smoothing.degree,
                ctx.smoothing.penalty_order,
                bench_segments(n),
            )?,
            _ => ctx.smoothing.specs(&[n])?[0],
        };
        let y = TestFunction::F2.sample(&x, &x)
            + NoiseRng::new(ctx.seed, idx as u64).normal_matrix(n, n) * 0.1;
        let base = alloc::reset();
        let start = Instant::now();
        for _ in 0..reps {
            let sm = SandwichSmoother::new(&x, &x, &spec, &spec)?;
            let fit = sm.select(&y, &grid)?;
            std::hint::black_box(&fit);
        }
        let seconds = start.elapsed().as_secs_f64() / reps as f64;
        let (peak, largest) = alloc::usage(base);
        if !(seconds.is_finite() && seconds > 0.0) {
            return Err(CliError::Numeric(format!("non-positive timing at n = {n}")));
        }
        let data_bytes = n * n * std::mem::size_of::<f64>();
        let within = largest <= data_bytes.max(ALLOC_SLACK);
        if cfg!(debug_assertions) && !within {
            return Err(CliError::Numeric(format!(
                "n = {n}: a {largest}-byte block exceeds the {data_bytes}-byte data matrix"
            )));
        }
        println!(
            "{:>6} {:>4} {:>7} {:>12.5} {:>12.2} {:>14.2}",
            format!("{n}^2"),
            spec.segments,
            grid.len(),
            seconds,
            peak as f64 / 1e6,
            largest as f64 / 1e6
        );
        rows.push(json!({
            "n_per_axis": n,
            "segments": spec.segments,
            "pairs": grid.len(),
            "seconds": seconds,
            "peak_bytes": peak,
            "largest_allocation_bytes": largest,
            "data_bytes": data_bytes,
            "largest_within_data": within,
        }));
    }
    let report = json!({"command": "bench", "reps": reps, "seed": ctx.seed, "sizes": rows});
    io::write_json(&out(ctx, "bench.json"), &report)
}
