use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{derive_seed, out_path, write_manifest, ExperimentConfig};
use crate::dense_gp::{cholesky, GpModel, KernelFamily, KernelSpec, MeanBasis};
use crate::error::{Error, Result};
use crate::gppca::{factor_posterior, gppca_shared, marginal_likelihood_shared, principal_angles, shared_covariance};
use crate::io::{write_matrix_csv, write_predictions_csv, CsvTable};
use crate::sparse_cg::linspace;

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn random_orthonormal(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    gaussian(rng, r, c).qr().q()
}

#[derive(Debug, Clone, Serialize)]
pub struct GppcaDemoReport {
    pub n1: usize,
    pub n2: usize,
    pub d: usize,
    pub noise_var: f64,
    /// Principal angles (radians) between the estimated and the true loading spans.
    pub principal_angles: Vec<f64>,
    /// `max |ÂᵀÂ − I|`.
    pub orthonormality_error: f64,
    pub log_likelihood: f64,
    pub best_competitor_log_likelihood: f64,
    /// Random orthonormal competitors whose likelihood exceeds the estimate's.
    pub competitors_above: usize,
}

/// Synthetic `Y = A₀Z + E` with GP factors on `[0, 1]`: recovers the loadings and the
/// factor posterior means, then compares the likelihood against random orthonormal loadings.
///
/// The signal-to-noise ratio is `σ² / σ₀²`.
pub fn run_gppca_demo(cfg: &ExperimentConfig) -> Result<GppcaDemoReport> {
    let (n1, n2, d) = (cfg.usize("n1")?, cfg.usize("n2")?, cfg.usize("d")?);
    if d == 0 || d > n1 {
        return Err(Error::Config(format!("need 1 ≤ d ≤ n1, got d = {d}, n1 = {n1}")));
    }
    let sigma2 = cfg.f64("sigma2")?;
    let noise_var = sigma2 / cfg.f64("snr")?;
    let kernel = KernelSpec::one_dim(KernelFamily::from_nu(cfg.get("nu")?)?, cfg.f64("gamma")?, sigma2, 0.0)?;
    let inputs = linspace(0.0, 1.0, n2);
    let sigma = shared_covariance(&kernel, &inputs)?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0]));
    let a0 = random_orthonormal(&mut rng, n1, d);
    // A tiny jitter keeps the sampling factor stable for smooth kernels on dense grids.
    let l = cholesky(&sigma + DMatrix::identity(n2, n2) * (1e-10 * sigma2), "factor covariance")?.unpack();
    let z = (l * gaussian(&mut rng, n2, d)).transpose();
    let y = &a0 * z + gaussian(&mut rng, n1, n2) * noise_var.sqrt();

    let a_hat = gppca_shared(&y, &sigma, noise_var, d)?;
    let orthonormality_error = (a_hat.transpose() * &a_hat - DMatrix::identity(d, d)).amax();
    let angles = principal_angles(&a0, &a_hat)?;
    let log_likelihood = marginal_likelihood_shared(&y, &a_hat, &sigma, noise_var)?;
    let competitors: Vec<f64> = (0..cfg.usize("competitors")?)
        .map(|_| marginal_likelihood_shared(&y, &random_orthonormal(&mut rng, n1, d), &sigma, noise_var))
        .collect::<Result<_>>()?;

    let mut means = DMatrix::zeros(n2, d);
    for c in 0..d {
        let (m, _) = factor_posterior(&y, &a_hat.column(c).into_owned(), &sigma, noise_var)?;
        means.set_column(c, &m);
    }
    let files = [
        ("gppca_data.csv", &y),
        ("gppca_loadings.csv", &a_hat),
        ("gppca_true_loadings.csv", &a0),
        ("gppca_factor_means.csv", &means),
    ];
    let mut paths = Vec::new();
    for (name, m) in files {
        let p = out_path(cfg, name);
        write_matrix_csv(&p, m)?;
        paths.push(p);
    }
    let report = GppcaDemoReport {
        n1,
        n2,
        d,
        noise_var,
        principal_angles: angles,
        orthonormality_error,
        log_likelihood,
        best_competitor_log_likelihood: competitors.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        competitors_above: competitors.iter().filter(|&&c| c > log_likelihood).count(),
    };
    write_manifest(cfg, &paths, &report)?;
    Ok(report)
}

/// The Branin function on `[−5, 10] × [0, 15]`.
pub fn branin(x1: f64, x2: f64) -> f64 {
    use std::f64::consts::PI;
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

const BRANIN_BOX: [(f64, f64); 2] = [(-5.0, 10.0), (0.0, 15.0)];

/// One point per stratum in every coordinate, strata paired by random permutations.
fn stratified_sample(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, BRANIN_BOX.len());
    for (j, &(lo, hi)) in BRANIN_BOX.iter().enumerate() {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (i, &s) in strata.iter().enumerate() {
            x[(i, j)] = lo + (hi - lo) * (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    x
}

#[derive(Debug, Clone, Serialize)]
pub struct EmulateReport {
    pub train_points: usize,
    pub test_points: usize,
    pub rmse: f64,
    /// `rmse` divided by the standard deviation of the function over the test grid.
    pub nrmse: f64,
    pub dof: Option<usize>,
}

/// Emulates the Branin function with a constant-mean dense GP at fixed ranges.
pub fn run_emulate(cfg: &ExperimentConfig) -> Result<EmulateReport> {
    let n = cfg.usize("train_points")?;
    let side = cfg.usize("test_side")?;
    let kernel = KernelSpec::new(
        KernelFamily::from_nu(cfg.get("nu")?)?,
        vec![cfg.f64("gamma1")?, cfg.f64("gamma2")?],
        1.0,
        cfg.f64("nugget")?,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0]));
    let x = stratified_sample(&mut rng, n);
    let y = DVector::from_iterator(n, (0..n).map(|i| branin(x[(i, 0)], x[(i, 1)])));
    let model = GpModel::fit(kernel, x.clone(), y.clone(), MeanBasis::Constant)?;

    let g1 = linspace(BRANIN_BOX[0].0, BRANIN_BOX[0].1, side);
    let g2 = linspace(BRANIN_BOX[1].0, BRANIN_BOX[1].1, side);
    let test = DMatrix::from_fn(side * side, 2, |k, j| if j == 0 { g1[k % side] } else { g2[k / side] });
    let pred = model.predict(&test)?;
    let truth: Vec<f64> = (0..test.nrows()).map(|k| branin(test[(k, 0)], test[(k, 1)])).collect();
    let m = truth.len() as f64;
    let rmse = (pred.mean.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / m).sqrt();
    let mean = truth.iter().sum::<f64>() / m;
    let sd = (truth.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / m).sqrt();

    let mut train = CsvTable::new(&["x1", "x2", "y"])?;
    for i in 0..n {
        train.numeric_row(&[x[(i, 0)], x[(i, 1)], y[i]])?;
    }
    let train_path = out_path(cfg, "emulate_training.csv");
    let pred_path = out_path(cfg, "emulate_predictions.csv");
    train.save(&train_path)?;
    write_predictions_csv(&pred_path, &test, &pred)?;
    let report = EmulateReport {
        train_points: n,
        test_points: truth.len(),
        rmse,
        nrmse: rmse / sd,
        dof: pred.dof,
    };
    write_manifest(cfg, &[train_path, pred_path], &report)?;
    Ok(report)
}
