use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod alloc;
mod commands;
mod config;
mod io;

use config::{ConfigFile, Knots, LambdaGridSetting, Smoothing};

#[global_allocator]
static GLOBAL: alloc::Tracking = alloc::Tracking;

/// Environment variable consulted for the thread count when neither the flag
/// nor the config file sets one.
pub const THREADS_ENV: &str = "SANDWICH_THREADS";

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, unreadable or malformed files. Exit code 2.
    Input(String),
    /// The computation itself failed. Exit code 1.
    Numeric(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Input(m) => write!(f, "input error: {m}"),
            Self::Numeric(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<sandwich::error::SmoothError> for CliError {
    fn from(e: sandwich::error::SmoothError) -> Self {
        use sandwich::error::SmoothError as E;
        match e {
            E::Degenerate(_) | E::SingularGram { .. } | E::Internal(_) => Self::Numeric(e.to_string()),
            _ => Self::Input(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sandwich", version, about = "Tensor-product P-spline smoothing with GCV")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// key = value file; command-line flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Spline degree [default: 3]
    #[arg(long, global = true)]
    degree: Option<usize>,
    /// Order of the difference penalty [default: 2]
    #[arg(long, global = true)]
    penalty_order: Option<usize>,
    /// Knot segments: `auto`, one count, or one per axis (`10,15`) [default: auto]
    #[arg(long, global = true)]
    knots: Option<Knots>,
    /// log10 smoothing-parameter grid `count:lo:hi`, comma-separated per axis
    #[arg(long, global = true)]
    lambda_grid: Option<LambdaGridSetting>,
    /// Points per axis of a second search around the coarse optimum
    #[arg(long, global = true)]
    fine_pass: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo replicates or benchmark repetitions
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Worker threads [default: $SANDWICH_THREADS, else all cores]
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Also write tidy long-format CSVs for plotting
    #[arg(long, global = true)]
    emit_plotdata: bool,
    /// Record wall-clock timings in the summary (makes it non-reproducible)
    #[arg(long, global = true)]
    timings: bool,
    /// Directory for output files [default: .]
    #[arg(long, short, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Study {
    Surface,
    Fda,
}

impl std::str::FromStr for Study {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Smooth a gridded surface (grid CSV)
    SmoothGrid {
        input: PathBuf,
    },
    /// Bin scattered x,z,y data, impute empty bins and smooth
    SmoothScatter {
        input: PathBuf,
        /// Bins per axis, `I` or `I1,I2` [default: ceil(min(sqrt(n)/2, 35))]
        #[arg(long)]
        bins: Option<String>,
        /// Empty-bin start values: `zero`, `nearest` or `nearest:M` [default: nearest:3]
        #[arg(long)]
        init: Option<String>,
        #[arg(long)]
        max_iter: Option<usize>,
        /// Convergence tolerance relative to max|y| [default: 1e-6]
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Smooth the sample covariance of curves (one curve per row)
    SmoothCov {
        input: PathBuf,
        /// Subtract the mean curve first
        #[arg(long)]
        center: bool,
        /// Leave the diagonal out of the GCV residuals
        #[arg(long)]
        exclude_diagonal: bool,
        /// Eigenpairs to report [default: min(4, J)]
        #[arg(long)]
        components: Option<usize>,
    },
    /// Smooth a d-dimensional array given in long format x1..xd,value
    SmoothArray {
        input: PathBuf,
    },
    /// Monte Carlo study on simulated data
    Simulate {
        #[arg(long, value_enum)]
        study: Option<Study>,
        /// Surface: test function f1 or f2 [default: f1]
        #[arg(long)]
        function: Option<String>,
        /// Noise standard deviation [default: 0.1 surface, 0.5 fda]
        #[arg(long)]
        sigma: Option<f64>,
        /// Surface grid size along x [default: 20]
        #[arg(long)]
        n1: Option<usize>,
        /// Surface grid size along z [default: 30]
        #[arg(long)]
        n2: Option<usize>,
        /// Covariance study: 1 (trigonometric) or 2 (Legendre) [default: 1]
        #[arg(long)]
        case: Option<u8>,
        /// Covariance study: curves per sample [default: 25]
        #[arg(long)]
        curves: Option<usize>,
        /// Covariance study: grid points per curve [default: 20]
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        center: bool,
        #[arg(long)]
        exclude_diagonal: bool,
    },
    /// Moments and L2 norms of the equivalent kernels
    KernelCheck {
        /// Penalty orders, comma-separated [default: 1,2,3]
        #[arg(long)]
        orders: Option<String>,
        /// Also compare smoother weights with the kernel (n=400, K=80, h=0.05)
        #[arg(long)]
        profile: bool,
    },
    /// Time the full GCV search on square grids
    Bench {
        /// Grid sizes per axis, comma-separated [default: 20,40,80,300,500]
        #[arg(long)]
        sizes: Option<String>,
    },
}

const KNOWN_KEYS: &[&str] = &[
    "degree",
    "penalty-order",
    "knots",
    "lambda-grid",
    "fine-pass",
    "seed",
    "reps",
    "threads",
    "emit-plotdata",
    "timings",
    "out-dir",
    "bins",
    "init",
    "max-iter",
    "tol",
    "center",
    "exclude-diagonal",
    "components",
    "study",
    "function",
    "sigma",
    "n1",
    "n2",
    "case",
    "curves",
    "points",
    "orders",
    "profile",
    "sizes",
];

/// Settings common to every command after merging flags and config.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: ConfigFile,
    pub smoothing: Smoothing,
    pub seed: u64,
    pub reps: Option<usize>,
    pub emit_plotdata: bool,
    pub timings: bool,
    pub out_dir: PathBuf,
}

fn resolve(g: GlobalArgs) -> Result<(Context, Option<usize>), CliError> {
    let cfg = match &g.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    cfg.check_known(KNOWN_KEYS)?;
    let smoothing = Smoothing {
        degree: cfg.pick(g.degree, "degree")?.unwrap_or(3),
        penalty_order: cfg.pick(g.penalty_order, "penalty-order")?.unwrap_or(2),
        knots: cfg.pick(g.knots, "knots")?.unwrap_or(Knots::Auto),
        grid: cfg.pick(g.lambda_grid, "lambda-grid")?.map(|s| s.0),
        fine_pass: cfg.pick(g.fine_pass, "fine-pass")?,
    };
    let threads = match cfg.pick(g.threads, "threads")? {
        Some(t) => Some(t),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.trim().parse::<usize>().map_err(|e| {
                CliError::Input(format!("{THREADS_ENV}={v:?}: {e}"))
            })?),
            Err(_) => None,
        },
    };
    let ctx = Context {
        seed: cfg.pick(g.seed, "seed")?.unwrap_or(1),
        reps: cfg.pick(g.reps, "reps")?,
        emit_plotdata: cfg.flag(g.emit_plotdata, "emit-plotdata")?,
        timings: cfg.flag(g.timings, "timings")?,
        out_dir: cfg.pick(g.out_dir, "out-dir")?.unwrap_or_else(|| PathBuf::from(".")),
        smoothing,
        cfg,
    };
    Ok((ctx, threads))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (ctx, threads) = resolve(cli.global)?;
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::Input("threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    }
    let cfg = &ctx.cfg;
    match cli.command {
        Command::SmoothGrid { input } => commands::smooth_grid(&ctx, &input),
        Command::SmoothScatter {
            input,
            bins,
            init,
            max_iter,
            tol,
        } => commands::smooth_scatter(
            &ctx,
            &input,
            &commands::ScatterOptions {
                bins: cfg.pick(bins, "bins")?,
                init: cfg.pick(init, "init")?,
                max_iter: cfg.pick(max_iter, "max-iter")?,
                tol: cfg.pick(tol, "tol")?,
            },
        ),
        Command::SmoothCov {
            input,
            center,
            exclude_diagonal,
            components,
        } => commands::smooth_cov(
            &ctx,
            &input,
            cfg.flag(center, "center")?,
            cfg.flag(exclude_diagonal, "exclude-diagonal")?,
            cfg.pick(components, "components")?,
        ),
        Command::SmoothArray { input } => commands::smooth_array(&ctx, &input),
        Command::Simulate {
            study,
            function,
            sigma,
            n1,
            n2,
            case,
            curves,
            points,
            center,
            exclude_diagonal,
        } => commands::simulate(
            &ctx,
            &commands::SimulateOptions {
                study: cfg.pick(study, "study")?.unwrap_or(Study::Surface),
                function: cfg.pick(function, "function")?,
                sigma: cfg.pick(sigma, "sigma")?,
                n1: cfg.pick(n1, "n1")?,
                n2: cfg.pick(n2, "n2")?,
                case: cfg.pick(case, "case")?,
                curves: cfg.pick(curves, "curves")?,
                points: cfg.pick(points, "points")?,
                center: cfg.flag(center, "center")?,
                exclude_diagonal: cfg.flag(exclude_diagonal, "exclude-diagonal")?,
            },
        ),
        Command::KernelCheck { orders, profile } => commands::kernel_check(
            &ctx,
            cfg.pick(orders, "orders")?,
            cfg.flag(profile, "profile")?,
        ),
        Command::Bench { sizes } => commands::bench(&ctx, cfg.pick(sizes, "sizes")?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sandwich: {e}");
            ExitCode::from(match e {
                CliError::Input(_) => 2,
                CliError::Numeric(_) => 1,
            })
        }
    }
}
