use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::{derive_seed, out_path, seconds_since, write_manifest, ExperimentConfig};
use crate::error::{Error, Result};
use crate::io::{cell, write_kernel_estimate_csv, write_trajectories_csv, CsvTable};
use crate::particles::{
    forecast, sample_initial, simulate_ensemble, spread, BenchmarkKernel, DesignFamily, InitialDesign, InteractionKernel,
    SimulationConfig,
};
use crate::sparse_cg::{linspace, nrmse, predict_phi_dense, DistanceIndex, EstimatorConfig, FittedKernel, KernelEstimate};

fn estimator(cfg: &ExperimentConfig) -> Result<EstimatorConfig> {
    let e = EstimatorConfig {
        gamma: cfg.f64("gamma")?,
        eta: cfg.f64("eta")?,
        sigma2: None,
        tol: cfg.f64("tol")?,
        max_iter: cfg.usize("max_iter")?,
    };
    e.validate()?;
    Ok(e)
}

fn sim_config(cfg: &ExperimentConfig, frames: usize, noise_var: f64, seed: u64) -> Result<SimulationConfig> {
    Ok(SimulationConfig {
        num_frames: frames,
        dt: cfg.f64("dt")?,
        noise_var,
        seed,
    })
}

/// Published accuracy of the method for the benchmark grid, indexed as
/// `[kernel][design][column]` with columns `(50,1), (200,1), (50,10), (200,10)` for `(n, L)`.
const REFERENCE: [[[f64; 4]; 3]; 2] = [
    [[0.11, 0.021, 0.026, 0.0051], [0.037, 0.012, 0.0090, 0.0028], [0.043, 0.0036, 0.0018, 0.00091]],
    [[0.024, 0.0086, 0.0031, 0.0036], [0.13, 0.013, 0.038, 0.0064], [0.076, 0.0045, 0.0018, 0.00081]],
];

/// Reference NRMSE for one benchmark cell, if the cell is part of the published grid.
pub fn reference_nrmse(kernel: BenchmarkKernel, design: DesignFamily, n: usize, frames: usize) -> Option<f64> {
    let k = match kernel {
        BenchmarkKernel::Lj => 0,
        BenchmarkKernel::Od => 1,
    };
    let d = DesignFamily::ALL.iter().position(|&f| f == design)?;
    let c = match (n, frames) {
        (50, 1) => 0,
        (200, 1) => 1,
        (50, 10) => 2,
        (200, 10) => 3,
        _ => return None,
    };
    Some(REFERENCE[k][d][c])
}

#[derive(Debug, Clone, Serialize)]
pub struct NrmseCell {
    pub kernel: BenchmarkKernel,
    pub design: DesignFamily,
    pub n: usize,
    pub frames: usize,
    pub replicates: usize,
    /// Pooled over all replicates; `None` if the cell failed.
    pub nrmse: Option<f64>,
    pub reference: Option<f64>,
    pub max_cg_iterations: usize,
    pub mean_cg_iterations: f64,
    pub seconds: f64,
    /// `"ok"` or the failure message.
    pub status: String,
}

impl NrmseCell {
    /// `nrmse / reference`.
    pub fn ratio(&self) -> Option<f64> {
        Some(self.nrmse? / self.reference?)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NrmseTableReport {
    pub cells: Vec<NrmseCell>,
}

impl NrmseTableReport {
    pub fn cell(&self, kernel: BenchmarkKernel, design: DesignFamily, n: usize, frames: usize) -> Option<&NrmseCell> {
        self.cells
            .iter()
            .find(|c| c.kernel == kernel && c.design == design && c.n == n && c.frames == frames)
    }
}

struct Replicate {
    estimate: KernelEstimate,
    iterations: usize,
}

#[allow(clippy::too_many_arguments)]
fn replicate(
    cfg: &ExperimentConfig,
    est: &EstimatorConfig,
    kernel: BenchmarkKernel,
    design: DesignFamily,
    n: usize,
    frames: usize,
    seed: u64,
    grid: &[f64],
) -> Result<Replicate> {
    let phi = kernel.kernel();
    let init = InitialDesign::new(design, n, cfg.usize("dim")?, seed);
    let traj = simulate_ensemble(&init, 1, phi.as_ref(), &sim_config(cfg, frames, cfg.f64("noise")?, seed)?)?;
    let fit = FittedKernel::from_trajectories(&traj, *est)?;
    Ok(Replicate {
        estimate: fit.predict(grid, false)?,
        iterations: fit.iterations,
    })
}

/// Estimates each benchmark kernel on every `(design, n, L)` cell with independent
/// replicates and scores the pooled NRMSE on a uniform grid over `[0, d_max]`.
///
/// A failure in any replicate marks the whole cell as failed and is recorded in its status.
pub fn run_nrmse_table(cfg: &ExperimentConfig) -> Result<NrmseTableReport> {
    let est = estimator(cfg)?;
    let kernels = cfg.list("kernels")?.iter().map(|s| BenchmarkKernel::parse(s)).collect::<Result<Vec<_>>>()?;
    let designs = cfg.list("designs")?.iter().map(|s| DesignFamily::parse(s)).collect::<Result<Vec<_>>>()?;
    let sizes = cfg.usize_list("sizes")?;
    let frame_counts = cfg.usize_list("frames")?;
    let reps = cfg.usize("replicates")?;
    let points = cfg.usize("grid_points")?;
    if reps == 0 || points < 2 {
        return Err(Error::Config("need at least one replicate and two grid points".into()));
    }

    let mut cells = Vec::new();
    for &kernel in &kernels {
        let grid = linspace(0.0, kernel.grid_max(), points);
        let truth = kernel.kernel();
        for &design in &designs {
            for &frames in &frame_counts {
                for &n in &sizes {
                    let t = Instant::now();
                    let tags = |r: usize| [kernel as u64, design as u64, n as u64, frames as u64, r as u64];
                    let results: Result<Vec<Replicate>> = (0..reps)
                        .into_par_iter()
                        .map(|r| replicate(cfg, &est, kernel, design, n, frames, derive_seed(cfg.seed, &tags(r)), &grid))
                        .collect();
                    let reference = reference_nrmse(kernel, design, n, frames);
                    let cell = match results.and_then(|rs| {
                        let estimates: Vec<KernelEstimate> = rs.iter().map(|r| r.estimate.clone()).collect();
                        let its: Vec<usize> = rs.iter().map(|r| r.iterations).collect();
                        Ok((nrmse(&estimates, truth.as_ref())?, its))
                    }) {
                        Ok((value, its)) => NrmseCell {
                            kernel,
                            design,
                            n,
                            frames,
                            replicates: reps,
                            nrmse: Some(value),
                            reference,
                            max_cg_iterations: its.iter().copied().max().unwrap_or(0),
                            mean_cg_iterations: its.iter().sum::<usize>() as f64 / its.len() as f64,
                            seconds: seconds_since(t),
                            status: "ok".into(),
                        },
                        Err(e) => {
                            log::error!("{} {} n={n} L={frames}: {e}", kernel.name(), design.name());
                            NrmseCell {
                                kernel,
                                design,
                                n,
                                frames,
                                replicates: reps,
                                nrmse: None,
                                reference,
                                max_cg_iterations: 0,
                                mean_cg_iterations: 0.0,
                                seconds: seconds_since(t),
                                status: e.to_string(),
                            }
                        }
                    };
                    log::info!(
                        "{} {} n={n} L={frames}: nrmse {:?} (reference {:?}), max CG iterations {}, {:.1}s",
                        kernel.name(),
                        design.name(),
                        cell.nrmse,
                        cell.reference,
                        cell.max_cg_iterations,
                        cell.seconds
                    );
                    cells.push(cell);
                }
            }
        }
    }

    let mut long = CsvTable::new(&[
        "kernel",
        "design",
        "n",
        "L",
        "replicates",
        "nrmse",
        "reference",
        "ratio",
        "max_cg_iterations",
        "status",
    ])?;
    for c in &cells {
        long.row(&[
            c.kernel.name().to_string(),
            c.design.name().to_string(),
            c.n.to_string(),
            c.frames.to_string(),
            c.replicates.to_string(),
            cell(c.nrmse),
            cell(c.reference),
            cell(c.ratio()),
            c.max_cg_iterations.to_string(),
            c.status.clone(),
        ])?;
    }
    let mut header = vec!["kernel".to_string(), "design".to_string()];
    for &frames in &frame_counts {
        for &n in &sizes {
            header.push(format!("n{n}_L{frames}"));
        }
    }
    let mut wide = CsvTable::new(&header)?;
    for &kernel in &kernels {
        for &design in &designs {
            let mut row = vec![kernel.name().to_string(), design.name().to_string()];
            for &frames in &frame_counts {
                for &n in &sizes {
                    let c = cells
                        .iter()
                        .find(|c| c.kernel == kernel && c.design == design && c.n == n && c.frames == frames);
                    row.push(cell(c.and_then(|c| c.nrmse)));
                }
            }
            wide.row(&row)?;
        }
    }
    let long_path = out_path(cfg, "nrmse_table.csv");
    let wide_path = out_path(cfg, "nrmse_table_wide.csv");
    long.save(&long_path)?;
    wide.save(&wide_path)?;
    let report = NrmseTableReport { cells };
    write_manifest(cfg, &[long_path, wide_path], &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelEstimationReport {
    pub kernel: BenchmarkKernel,
    pub observations: usize,
    pub unique_distances: usize,
    pub sigma2: f64,
    pub cg_iterations: usize,
    pub cg_residual: f64,
    pub max_variance_iterations: usize,
    pub nrmse: f64,
    pub seconds: f64,
}

/// Simulates one ensemble, estimates `φ` with pointwise posterior variance on a grid
/// and writes the trajectories alongside the estimate.
pub fn run_kernel_estimation(cfg: &ExperimentConfig) -> Result<KernelEstimationReport> {
    let est = estimator(cfg)?;
    let kernel = BenchmarkKernel::parse(cfg.get("kernel")?)?;
    let design = DesignFamily::parse(cfg.get("design")?)?;
    let grid_max = match cfg.get("grid_max")? {
        "auto" => kernel.grid_max(),
        _ => cfg.f64("grid_max")?,
    };
    let grid = linspace(cfg.f64("grid_min")?, grid_max, cfg.usize("grid_points")?);
    let truth = kernel.kernel();
    let init = InitialDesign::new(design, cfg.usize("n")?, cfg.usize("dim")?, derive_seed(cfg.seed, &[0]));
    let sim = sim_config(cfg, cfg.usize("frames")?, cfg.f64("noise")?, derive_seed(cfg.seed, &[1]))?;
    let traj = simulate_ensemble(&init, cfg.usize("sims")?, truth.as_ref(), &sim)?;

    let t = Instant::now();
    let fit = FittedKernel::from_trajectories(&traj, est)?;
    let estimate = fit.predict(&grid, cfg.bool("variance")?)?;
    let seconds = seconds_since(t);

    let traj_path = out_path(cfg, "trajectories.csv");
    let est_path = out_path(cfg, "kernel_estimate.csv");
    let mut truth_table = CsvTable::new(&["d_star", "truth"])?;
    for &d in &grid {
        truth_table.numeric_row(&[d, truth.phi(d)])?;
    }
    let truth_path = out_path(cfg, "kernel_truth.csv");
    write_trajectories_csv(&traj_path, &traj)?;
    write_kernel_estimate_csv(&est_path, &estimate)?;
    truth_table.save(&truth_path)?;
    let report = KernelEstimationReport {
        kernel,
        observations: fit.index.num_observations(),
        unique_distances: fit.index.num_unique(),
        sigma2: fit.sigma2,
        cg_iterations: fit.iterations,
        cg_residual: fit.residual,
        max_variance_iterations: estimate.max_variance_iterations,
        nrmse: nrmse(std::slice::from_ref(&estimate), truth.as_ref())?,
        seconds,
    };
    write_manifest(cfg, &[traj_path, est_path, truth_path], &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct ForecastReport {
    pub kernel: BenchmarkKernel,
    pub steps: usize,
    pub injected_truth: bool,
    pub cg_iterations: usize,
    /// Largest coordinate range of the hold-out initial positions.
    pub domain_scale: f64,
    /// Per step `0..=steps`: `sqrt(mean_i ‖x̂_i − x_i‖²)`.
    pub rmse: Vec<f64>,
    pub spread_truth: Vec<f64>,
    pub spread_forecast: Vec<f64>,
}

impl ForecastReport {
    pub fn final_rmse(&self) -> f64 {
        self.rmse.last().copied().unwrap_or(0.0)
    }
}

fn position_rmse(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    ((a - b).norm_squared() / a.nrows() as f64).sqrt()
}

/// Learns `φ̂` from one training ensemble, then rolls a fresh hold-out configuration
/// forward under both `φ̂` and the true kernel from identical initial positions.
pub fn run_forecast(cfg: &ExperimentConfig) -> Result<ForecastReport> {
    let est = estimator(cfg)?;
    let kernel = BenchmarkKernel::parse(cfg.get("kernel")?)?;
    let design = DesignFamily::parse(cfg.get("design")?)?;
    let (n, dim, steps, dt) = (cfg.usize("n")?, cfg.usize("dim")?, cfg.usize("steps")?, cfg.f64("dt")?);
    let inject = cfg.bool("inject_truth")?;
    let truth = kernel.kernel();

    let (learned, cg_iterations): (Box<dyn InteractionKernel>, usize) = if inject {
        (kernel.kernel(), 0)
    } else {
        let train = InitialDesign::new(design, n, dim, derive_seed(cfg.seed, &[0]));
        let sim = sim_config(cfg, cfg.usize("train_frames")?, 0.0, derive_seed(cfg.seed, &[1]))?;
        let traj = simulate_ensemble(&train, 1, truth.as_ref(), &sim)?;
        let fit = FittedKernel::from_trajectories(&traj, est)?;
        let its = fit.iterations;
        (Box::new(fit), its)
    };

    let init = sample_initial(&InitialDesign::new(design, n, dim, derive_seed(cfg.seed, &[2])))?;
    let domain_scale = (0..dim)
        .map(|j| {
            let col = init.column(j);
            col.max() - col.min()
        })
        .fold(0.0, f64::max);
    let true_path = forecast(&init, truth.as_ref(), steps, dt)?;
    let pred_path = forecast(&init, learned.as_ref(), steps, dt)?;

    let rmse: Vec<f64> = true_path.iter().zip(&pred_path).map(|(a, b)| position_rmse(a, b)).collect();
    let spread_truth: Vec<f64> = true_path.iter().map(spread).collect();
    let spread_forecast: Vec<f64> = pred_path.iter().map(spread).collect();

    let mut per_step = CsvTable::new(&["step", "rmse", "spread_truth", "spread_forecast"])?;
    for s in 0..=steps {
        per_step.numeric_row(&[s as f64, rmse[s], spread_truth[s], spread_forecast[s]])?;
    }
    let mut header = vec!["source".to_string(), "step".into(), "i".into()];
    header.extend((1..=dim).map(|j| format!("x{j}")));
    let mut paths = CsvTable::new(&header)?;
    for (source, frames) in [("truth", &true_path), ("forecast", &pred_path)] {
        for (s, x) in frames.iter().enumerate() {
            for i in 0..n {
                let mut row = vec![source.to_string(), s.to_string(), i.to_string()];
                row.extend((0..dim).map(|j| format!("{}", x[(i, j)])));
                paths.row(&row)?;
            }
        }
    }
    let rmse_path = out_path(cfg, "forecast_rmse.csv");
    let traj_path = out_path(cfg, "forecast_trajectories.csv");
    per_step.save(&rmse_path)?;
    paths.save(&traj_path)?;
    let report = ForecastReport {
        kernel,
        steps,
        injected_truth: inject,
        cg_iterations,
        domain_scale,
        rmse,
        spread_truth,
        spread_forecast,
    };
    write_manifest(cfg, &[rmse_path, traj_path], &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub observations: usize,
    pub unique_distances: usize,
    pub cg_iterations: usize,
    /// Time to evaluate every entry of the dense `Ñ × Ñ` correlation matrix.
    pub assembly_seconds: Option<f64>,
    /// Index construction, CG solve and grid prediction.
    pub sparse_seconds: f64,
    /// Largest gap between the matrix-free and the dense-Cholesky posterior mean.
    pub max_dense_difference: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingBenchReport {
    pub rows: Vec<BenchRow>,
    /// Least-squares slope of `log sparse_seconds` against `log n`.
    pub slope: f64,
    pub slope_limit: f64,
}

/// Visits every entry of the dense distance-correlation matrix, as assembling it would.
fn dense_assembly(d: &[f64], gamma: f64) -> f64 {
    let mut acc = 0.0;
    for &a in d {
        for &b in d {
            acc += (-(a - b).abs() / gamma).exp();
        }
    }
    acc
}

fn log_log_slope(rows: &[BenchRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.sparse_seconds > 0.0)
        .map(|r| ((r.n as f64).ln(), r.sparse_seconds.ln()))
        .collect();
    let m = pts.len() as f64;
    if m < 2.0 {
        return 0.0;
    }
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / m, pts.iter().map(|p| p.1).sum::<f64>() / m);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Times the matrix-free estimator against dense assembly over a range of particle
/// counts and checks the fitted cost exponent in `n`.
pub fn run_scaling_bench(cfg: &ExperimentConfig) -> Result<ScalingBenchReport> {
    let est = estimator(cfg)?;
    let kernel = BenchmarkKernel::parse(cfg.get("kernel")?)?;
    let design = DesignFamily::parse(cfg.get("design")?)?;
    let (dim, sims, frames) = (cfg.usize("dim")?, cfg.usize("sims")?, cfg.usize("frames")?);
    let grid = linspace(0.0, kernel.grid_max(), cfg.usize("grid_points")?);
    let (assembly_max, check_max) = (cfg.usize("assembly_max_n")?, cfg.usize("dense_check_max_n")?);
    let dense_tol = cfg.f64("dense_tolerance")?;
    let slope_limit = cfg.f64("slope_limit")?;
    let truth = kernel.kernel();

    let mut rows = Vec::new();
    for &n in &cfg.usize_list("sizes")? {
        let init = InitialDesign::new(design, n, dim, derive_seed(cfg.seed, &[n as u64]));
        let traj = simulate_ensemble(&init, sims, truth.as_ref(), &sim_config(cfg, frames, 0.0, init.seed)?)?;
        let v = traj.velocity_vector();

        let t = Instant::now();
        let idx = DistanceIndex::build(&traj, est.gamma)?;
        let fit = FittedKernel::fit(idx, est, v.as_slice())?;
        let estimate = fit.predict(&grid, false)?;
        let sparse_seconds = seconds_since(t);

        let assembly_seconds = (n <= assembly_max).then(|| {
            let t = Instant::now();
            std::hint::black_box(dense_assembly(std::hint::black_box(&fit.index.d_s), est.gamma));
            seconds_since(t)
        });
        let max_dense_difference = if n <= check_max {
            let dense = predict_phi_dense(&fit.index, &est, v.as_slice(), &grid)?;
            Some(dense.iter().zip(&estimate.mean).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        } else {
            None
        };
        log::info!("bench n={n}: sparse {sparse_seconds:.3}s, assembly {assembly_seconds:?}s, {} CG iterations", fit.iterations);
        rows.push(BenchRow {
            n,
            observations: fit.index.num_observations(),
            unique_distances: fit.index.num_unique(),
            cg_iterations: fit.iterations,
            assembly_seconds,
            sparse_seconds,
            max_dense_difference,
        });
    }

    let mut table = CsvTable::new(&[
        "n",
        "observations",
        "unique_distances",
        "cg_iterations",
        "assembly_seconds",
        "sparse_seconds",
        "max_dense_difference",
    ])?;
    for r in &rows {
        table.row(&[
            r.n.to_string(),
            r.observations.to_string(),
            r.unique_distances.to_string(),
            r.cg_iterations.to_string(),
            cell(r.assembly_seconds),
            format!("{}", r.sparse_seconds),
            cell(r.max_dense_difference),
        ])?;
    }
    let path = out_path(cfg, "bench.csv");
    table.save(&path)?;
    let report = ScalingBenchReport {
        slope: log_log_slope(&rows),
        rows,
        slope_limit,
    };
    write_manifest(cfg, &[path], &report)?;

    if let Some(r) = report.rows.iter().find(|r| r.max_dense_difference.is_some_and(|d| !(d <= dense_tol))) {
        return Err(Error::Numerical(format!(
            "matrix-free and dense estimates differ by {:e} at n = {}",
            r.max_dense_difference.unwrap_or(f64::NAN),
            r.n
        )));
    }
    if !(report.slope <= slope_limit) {
        return Err(Error::Numerical(format!(
            "sparse cost grows like n^{:.2}, above the limit {slope_limit}",
            report.slope
        )));
    }
    Ok(report)
}
