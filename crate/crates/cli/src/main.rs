use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use smgp::dense_gp::{GpModel, KernelFamily, KernelSpec, MeanBasis};
use smgp::experiments::{self, ExperimentConfig, ExperimentKind};
use smgp::gppca::{factor_posterior, gppca_shared, marginal_likelihood_shared, shared_covariance};
use smgp::io;
use smgp::particles::{simulate_ensemble, BenchmarkKernel, DesignFamily, InitialDesign, SimulationConfig};
use smgp::sparse_cg::{linspace, nrmse, EstimatorConfig, FittedKernel};
use smgp::state_space::{estimate_parameters, SearchConfig, StateSpaceGp, StateSpaceParams};

#[derive(Parser)]
#[command(name = "smgp", version, about = "Scalable marginalization of latent Gaussian processes")]
struct Cli {
    /// Random seed for every experiment and simulation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Key-value experiment config; flags and --set override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// Override one config key, e.g. --set replicates=3 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate first-order particle trajectories.
    Simulate(SimulateArgs),
    /// Estimate an interaction kernel from a trajectory file.
    Estimate(EstimateArgs),
    /// Train on one ensemble and forecast a hold-out configuration.
    Forecast(Overrides),
    /// Scaling benchmark of the sparse estimator against dense assembly.
    Bench(Overrides),
    /// Accuracy table over designs, particle counts and trajectory lengths.
    NrmseTable(Overrides),
    /// Timing and agreement of the Kalman filter against the dense GP.
    FilterVsDense(Overrides),
    /// Kernel estimate with posterior variance from a fresh simulation.
    KernelEstimation(Overrides),
    /// Shared-covariance GPPCA on a data matrix, or the synthetic demo without --input.
    Gppca(GppcaArgs),
    /// Dense-GP emulation of the Branin function.
    Emulate(Overrides),
    /// Dense GP regression on CSV training data.
    Predict(PredictArgs),
    /// State-space GP regression on one-dimensional CSV data.
    SsPredict(SsPredictArgs),
    /// Print the default configuration of an experiment.
    Defaults {
        /// Experiment name, e.g. nrmse-table.
        experiment: String,
    },
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value = "lj")]
    kernel: String,
    #[arg(long, default_value = "uniform")]
    design: String,
    /// Particles per simulation.
    #[arg(long, default_value_t = 50)]
    n: usize,
    /// Spatial dimension.
    #[arg(long = "D", default_value_t = 2)]
    dim: usize,
    /// Independent simulations.
    #[arg(long = "M", default_value_t = 1)]
    sims: usize,
    /// Recorded frames per simulation.
    #[arg(long = "L", default_value_t = 1)]
    frames: usize,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    /// Variance of the noise added to recorded velocities.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Output file (default: <out-dir>/trajectories.csv).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Trajectory CSV written by `simulate`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 5.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1e-5)]
    eta: f64,
    /// Prior variance of the kernel; profiled from the data when omitted.
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 100_000)]
    max_iter: usize,
    #[arg(long, default_value_t = 0.0)]
    grid_min: f64,
    #[arg(long, default_value_t = 5.0)]
    grid_max: f64,
    #[arg(long, default_value_t = 200)]
    grid_points: usize,
    /// Also compute the pointwise posterior variance (one CG solve per grid point).
    #[arg(long)]
    variance: bool,
    /// Report NRMSE against a benchmark kernel (lj or od).
    #[arg(long)]
    truth: Option<String>,
    /// Output file (default: <out-dir>/kernel_estimate.csv).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GppcaArgs {
    /// Headerless n₁ × n₂ data matrix; factor inputs are taken equally spaced on [0, 1].
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Noise variance σ₀².
    #[arg(long)]
    sigma0sq: Option<f64>,
    /// Factor variance σ².
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[arg(long, default_value = "2.5")]
    nu: String,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Clone, Copy, ValueEnum)]
enum MeanArg {
    Zero,
    Constant,
    Linear,
}

#[derive(Args)]
struct PredictArgs {
    /// Training CSV: input columns then the output column.
    #[arg(long)]
    train: PathBuf,
    /// Test inputs CSV with the same input columns.
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value = "2.5")]
    nu: String,
    /// One range per input column, comma separated.
    #[arg(long, value_delimiter = ',')]
    gamma: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[arg(long, default_value_t = 0.0)]
    nugget: f64,
    #[arg(long, value_enum, default_value = "constant")]
    mean: MeanArg,
    /// Gaussian predictions at the given σ² instead of the Student-t predictive.
    #[arg(long)]
    fixed: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SsPredictArgs {
    /// Training CSV with columns x,y.
    #[arg(long)]
    train: PathBuf,
    /// Test inputs CSV with one column; omitted means a grid over the training range.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    grid_points: usize,
    #[arg(long, default_value = "2.5")]
    nu: String,
    /// Range; estimated by maximum profile likelihood when omitted.
    #[arg(long)]
    gamma: Option<f64>,
    /// Signal variance; profiled when omitted.
    #[arg(long)]
    sigma2: Option<f64>,
    /// Noise-to-signal variance ratio; estimated when omitted.
    #[arg(long)]
    nugget: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Globals {
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    config: Option<PathBuf>,
}

impl Globals {
    fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Defaults, then the config file, then global flags, then `--set` pairs.
    fn experiment(&self, kind: ExperimentKind, overrides: &Overrides, extra: &[(&str, String)]) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(Some(kind), p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::new(kind),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.out_dir {
            cfg.out_dir = d.clone();
        }
        for (k, v) in extra {
            cfg.set(k, v)?;
        }
        for pair in &overrides.set {
            let (k, v) = pair
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {pair:?}"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

fn run_experiment(g: &Globals, kind: ExperimentKind, overrides: &Overrides, extra: &[(&str, String)]) -> Result<()> {
    let cfg = g.experiment(kind, overrides, extra)?;
    let summary = experiments::run(&cfg).with_context(|| format!("{} failed", kind.name()))?;
    println!("{}", serde_json::to_string(&summary)?);
    eprintln!("wrote {}", experiments::manifest_path(&cfg.out_dir, kind).display());
    Ok(())
}

fn simulate(g: &Globals, a: &SimulateArgs) -> Result<()> {
    let kernel = BenchmarkKernel::parse(&a.kernel)?;
    let design = InitialDesign::new(DesignFamily::parse(&a.design)?, a.n, a.dim, g.seed());
    let cfg = SimulationConfig {
        num_frames: a.frames,
        dt: a.dt,
        noise_var: a.noise,
        seed: g.seed() ^ 0x5EED,
    };
    let traj = simulate_ensemble(&design, a.sims, kernel.kernel().as_ref(), &cfg)?;
    let out = a.out.clone().unwrap_or_else(|| g.out_dir().join("trajectories.csv"));
    io::write_trajectories_csv(&out, &traj)?;
    eprintln!("wrote {} ({} velocity entries)", out.display(), traj.num_observations());
    Ok(())
}

fn estimate(g: &Globals, a: &EstimateArgs) -> Result<()> {
    let traj = io::read_trajectories_csv(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let config = EstimatorConfig {
        gamma: a.gamma,
        eta: a.eta,
        sigma2: a.sigma2,
        tol: a.tol,
        max_iter: a.max_iter,
    };
    let t = Instant::now();
    let fit = FittedKernel::from_trajectories(&traj, config)?;
    let fit_seconds = t.elapsed().as_secs_f64();
    let grid = linspace(a.grid_min, a.grid_max, a.grid_points);
    let t = Instant::now();
    let est = fit.predict(&grid, a.variance)?;
    let predict_seconds = t.elapsed().as_secs_f64();
    let out = a.out.clone().unwrap_or_else(|| g.out_dir().join("kernel_estimate.csv"));
    io::write_kernel_estimate_csv(&out, &est)?;
    let score = match &a.truth {
        Some(k) => Some(nrmse(std::slice::from_ref(&est), BenchmarkKernel::parse(k)?.kernel().as_ref())?),
        None => None,
    };
    let diag = serde_json::json!({
        "input": a.input.display().to_string(),
        "observations": fit.index.num_observations(),
        "unique_distances": fit.index.num_unique(),
        "sigma2": fit.sigma2,
        "cg_iterations": fit.iterations,
        "cg_residual": fit.residual,
        "max_variance_iterations": est.max_variance_iterations,
        "fit_seconds": fit_seconds,
        "predict_seconds": predict_seconds,
        "nrmse": score,
    });
    let diag_path = out.with_extension("diagnostics.jsonl");
    io::write_jsonl(&diag_path, &[&diag])?;
    println!("{diag}");
    eprintln!("wrote {} and {}", out.display(), diag_path.display());
    Ok(())
}

fn gppca(g: &Globals, a: &GppcaArgs) -> Result<()> {
    let Some(input) = &a.input else {
        let mut extra = vec![("nu", a.nu.clone()), ("sigma2", a.sigma2.to_string())];
        if let Some(d) = a.d {
            extra.push(("d", d.to_string()));
        }
        if let Some(gm) = a.gamma {
            extra.push(("gamma", gm.to_string()));
        }
        if let Some(s) = a.sigma0sq {
            extra.push(("snr", (a.sigma2 / s).to_string()));
        }
        return run_experiment(g, ExperimentKind::GppcaDemo, &a.overrides, &extra);
    };
    if !a.overrides.set.is_empty() {
        bail!("--set only applies to the synthetic demo");
    }
    let (Some(d), Some(gamma), Some(noise_var)) = (a.d, a.gamma, a.sigma0sq) else {
        bail!("--input needs --d, --gamma and --sigma0sq");
    };
    let y = io::read_matrix_csv(input)?;
    let kernel = KernelSpec::one_dim(KernelFamily::from_nu(&a.nu)?, gamma, a.sigma2, 0.0)?;
    let sigma = shared_covariance(&kernel, &linspace(0.0, 1.0, y.ncols()))?;
    let loadings = gppca_shared(&y, &sigma, noise_var, d)?;
    let mut means = DMatrix::zeros(y.ncols(), d);
    for c in 0..d {
        means.set_column(c, &factor_posterior(&y, &loadings.column(c).into_owned(), &sigma, noise_var)?.0);
    }
    let dir = g.out_dir();
    io::write_matrix_csv(&dir.join("gppca_loadings.csv"), &loadings)?;
    io::write_matrix_csv(&dir.join("gppca_factor_means.csv"), &means)?;
    let ll = marginal_likelihood_shared(&y, &loadings, &sigma, noise_var).ok();
    println!("{}", serde_json::json!({ "n1": y.nrows(), "n2": y.ncols(), "d": d, "log_likelihood": ll }));
    eprintln!("wrote gppca_loadings.csv and gppca_factor_means.csv in {}", dir.display());
    Ok(())
}

fn predict(g: &Globals, a: &PredictArgs) -> Result<()> {
    let (x, y) = io::read_training_csv(&a.train)?;
    let test = io::read_inputs_csv(&a.test)?;
    if test.ncols() != x.ncols() {
        bail!("test file has {} columns but training inputs have {}", test.ncols(), x.ncols());
    }
    let ranges = match a.gamma.len() {
        1 => vec![a.gamma[0]; x.ncols()],
        k if k == x.ncols() => a.gamma.clone(),
        k => bail!("--gamma needs 1 or {} values, got {k}", x.ncols()),
    };
    let mean = match a.mean {
        MeanArg::Zero => MeanBasis::Zero,
        MeanArg::Constant => MeanBasis::Constant,
        MeanArg::Linear => MeanBasis::Linear,
    };
    let kernel = KernelSpec::new(KernelFamily::from_nu(&a.nu)?, ranges, a.sigma2, a.nugget)?;
    let model = GpModel::fit(kernel, x, y, mean)?;
    let pred = if a.fixed { model.predict_fixed(&test)? } else { model.predict(&test)? };
    let out = a.out.clone().unwrap_or_else(|| g.out_dir().join("predictions.csv"));
    io::write_predictions_csv(&out, &test, &pred)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn ss_predict(g: &Globals, a: &SsPredictArgs) -> Result<()> {
    let (x, y) = io::read_xy_csv(&a.train)?;
    if x.is_empty() {
        bail!("no training data in {}", a.train.display());
    }
    let family = KernelFamily::from_nu(&a.nu)?;
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let (gamma, nugget, profiled) = match (a.gamma, a.nugget) {
        (Some(gm), Some(nu)) => (gm, nu, smgp::state_space::profiled_log_likelihood(&xs, &ys, family, gm, nu)?.1),
        (gm, nu) => {
            let mut search = SearchConfig { fixed_nugget: nu, ..SearchConfig::default() };
            if let Some(gm) = gm {
                search.log_gamma_bounds = (gm.ln(), gm.ln());
            }
            let est = estimate_parameters(&xs, &ys, family, &search)?;
            log::info!("estimated gamma = {:.6}, nugget = {:.3e}", est.gamma, est.nugget);
            (est.gamma, est.nugget, est.sigma2)
        }
    };
    let sigma2 = a.sigma2.unwrap_or(profiled);
    let fit = StateSpaceGp::fit(&xs, &ys, StateSpaceParams::with_nugget(family, gamma, sigma2, nugget))?;
    let test = match &a.test {
        Some(p) => {
            let t = io::read_inputs_csv(p)?;
            if t.ncols() != 1 {
                bail!("test file must have one column");
            }
            t.column(0).iter().copied().collect()
        }
        None => linspace(xs[0], xs[xs.len() - 1], a.grid_points),
    };
    let preds = fit.predict_many(&test)?;
    let out = a.out.clone().unwrap_or_else(|| g.out_dir().join("ss_predictions.csv"));
    io::write_point_predictions_csv(&out, &test, &preds)?;
    println!(
        "{}",
        serde_json::json!({ "gamma": gamma, "sigma2": sigma2, "nugget": nugget, "log_likelihood": fit.log_likelihood() })
    );
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn ensure_no_config(g: &Globals, what: &str) -> Result<()> {
    if let Some(p) = &g.config {
        bail!("{what} takes flags only; --config {} applies to experiment subcommands", p.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let g = Globals {
        seed: cli.seed,
        out_dir: cli.out_dir,
        config: cli.config,
    };
    match &cli.command {
        Command::Simulate(a) => {
            ensure_no_config(&g, "simulate")?;
            simulate(&g, a)
        }
        Command::Estimate(a) => {
            ensure_no_config(&g, "estimate")?;
            estimate(&g, a)
        }
        Command::Forecast(o) => run_experiment(&g, ExperimentKind::Forecast, o, &[]),
        Command::Bench(o) => run_experiment(&g, ExperimentKind::ScalingBench, o, &[]),
        Command::NrmseTable(o) => run_experiment(&g, ExperimentKind::NrmseTable, o, &[]),
        Command::FilterVsDense(o) => run_experiment(&g, ExperimentKind::FilterVsDense, o, &[]),
        Command::KernelEstimation(o) => run_experiment(&g, ExperimentKind::KernelEstimation, o, &[]),
        Command::Gppca(a) => gppca(&g, a),
        Command::Emulate(o) => run_experiment(&g, ExperimentKind::Emulate, o, &[]),
        Command::Predict(a) => {
            ensure_no_config(&g, "predict")?;
            predict(&g, a)
        }
        Command::SsPredict(a) => {
            ensure_no_config(&g, "ss-predict")?;
            ss_predict(&g, a)
        }
        Command::Defaults { experiment } => {
            let kind = ExperimentKind::parse(experiment)?;
            let cfg = g.experiment(kind, &Overrides::default(), &[])?;
            print!("{}", cfg.to_text());
            Ok(())
        }
    }
}
