use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::{derive_seed, out_path, seconds_since, write_manifest, ExperimentConfig};
use crate::dense_gp::{GpModel, KernelFamily, KernelSpec, MeanBasis};
use crate::error::{Error, Result};
use crate::io::{cell, CsvTable};
use crate::sparse_cg::linspace;
use crate::state_space::{StateSpaceGp, StateSpaceParams};

/// `sin(10πx) / (2x) + (x − 1)⁴`, sampled on `[0.5, 2.5]`.
pub fn test_function(x: f64) -> f64 {
    (10.0 * std::f64::consts::PI * x).sin() / (2.0 * x) + (x - 1.0).powi(4)
}

const DOMAIN: (f64, f64) = (0.5, 2.5);

#[derive(Debug, Clone, Serialize)]
pub struct FilterVsDenseRow {
    pub n: usize,
    pub dense_seconds: Option<f64>,
    pub filter_seconds: f64,
    /// Root mean squared difference of the two predictive means over the test grid.
    pub rms_difference: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FilterVsDenseReport {
    pub rows: Vec<FilterVsDenseRow>,
    pub rms_tolerance: f64,
}

struct Setup {
    family: KernelFamily,
    gamma: f64,
    nugget: f64,
    sigma2: f64,
    noise_sd: f64,
    test: Vec<f64>,
}

/// Latent-mean predictions by Kalman filter plus RTS smoother.
fn filter_means(s: &Setup, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let params = StateSpaceParams::with_nugget(s.family, s.gamma, s.sigma2, s.nugget);
    let fit = StateSpaceGp::fit(x, y, params)?;
    Ok(fit.predict_many(&s.test)?.into_iter().map(|p| p.mean).collect())
}

/// The same predictions by Cholesky of the full `N × N` correlation matrix.
fn dense_means(s: &Setup, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let kernel = KernelSpec::one_dim(s.family, s.gamma, s.sigma2, s.nugget)?;
    let model = GpModel::fit(kernel, DMatrix::from_column_slice(x.len(), 1, x), DVector::from_column_slice(y), MeanBasis::Zero)?;
    model.predict_mean(&DMatrix::from_column_slice(s.test.len(), 1, &s.test))
}

/// Times both paths on noisy samples of [`test_function`] for every `N` in `sizes` and
/// fails if their predictive means differ by more than `rms_tolerance` at any `N`.
pub fn run_filter_vs_dense(cfg: &ExperimentConfig) -> Result<FilterVsDenseReport> {
    let sizes = cfg.usize_list("sizes")?;
    let dense_max = cfg.usize("dense_max_n")?;
    let tol = cfg.f64("rms_tolerance")?;
    let s = Setup {
        family: KernelFamily::from_nu(cfg.get("nu")?)?,
        gamma: cfg.f64("gamma")?,
        nugget: cfg.f64("nugget")?,
        sigma2: cfg.f64("sigma2")?,
        noise_sd: cfg.f64("noise_sd")?,
        test: linspace(DOMAIN.0, DOMAIN.1, cfg.usize("test_points")?),
    };
    let noise = Normal::new(0.0, s.noise_sd).map_err(|e| Error::Config(format!("noise_sd: {e}")))?;

    let mut rows = Vec::new();
    let mut preds = CsvTable::new(&["n", "x_star", "filter_mean", "dense_mean"])?;
    for &n in &sizes {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[n as u64]));
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(DOMAIN.0..DOMAIN.1)).collect();
        let y: Vec<f64> = x.iter().map(|&v| test_function(v) + noise.sample(&mut rng)).collect();

        let t = Instant::now();
        let fm = filter_means(&s, &x, &y)?;
        let filter_seconds = seconds_since(t);
        let (dense_seconds, dm) = if n <= dense_max {
            let t = Instant::now();
            let dm = dense_means(&s, &x, &y)?;
            (Some(seconds_since(t)), Some(dm))
        } else {
            (None, None)
        };
        let rms_difference = dm.as_ref().map(|dm| {
            (dm.iter().zip(&fm).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / fm.len().max(1) as f64).sqrt()
        });
        for (k, &xs) in s.test.iter().enumerate() {
            let d = dm.as_ref().map(|v| v[k]);
            preds.row(&[n.to_string(), format!("{xs}"), format!("{}", fm[k]), cell(d)])?;
        }
        log::info!("filter-vs-dense N={n}: filter {filter_seconds:.4}s dense {dense_seconds:?}s rms {rms_difference:?}");
        rows.push(FilterVsDenseRow {
            n,
            dense_seconds,
            filter_seconds,
            rms_difference,
        });
    }

    let mut table = CsvTable::new(&["n", "dense_seconds", "filter_seconds", "rms_difference"])?;
    for r in &rows {
        table.row(&[r.n.to_string(), cell(r.dense_seconds), format!("{}", r.filter_seconds), cell(r.rms_difference)])?;
    }
    let main = out_path(cfg, "filter_vs_dense.csv");
    let pred_path = out_path(cfg, "filter_vs_dense_predictions.csv");
    table.save(&main)?;
    preds.save(&pred_path)?;
    let report = FilterVsDenseReport { rows, rms_tolerance: tol };
    write_manifest(cfg, &[main, pred_path], &report)?;

    if let Some(bad) = report.rows.iter().find(|r| r.rms_difference.is_some_and(|d| !(d < tol))) {
        return Err(Error::Numerical(format!(
            "filter and dense predictions differ by RMS {:e} at N = {} (tolerance {tol:e})",
            bad.rms_difference.unwrap_or(f64::NAN),
            bad.n
        )));
    }
    Ok(report)
}
