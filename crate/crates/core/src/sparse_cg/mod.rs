//! Interaction-kernel estimation from particle trajectories.
//!
//! `φ` gets a zero-mean GP prior with exponential correlation. Observed velocities are
//! `ṽ = U_s φ + ε`, so after marginalising `φ` their covariance is
//! `σ²(U_s R_s U_sᵀ + η I)`. The operator is applied matrix-free and inverted by CG.

mod bidiag;
mod cg;
mod index;

pub use bidiag::{
    apply_inverse_lower, apply_inverse_upper, correlation_steps, precision_factor, solve_lower_bidiagonal,
    solve_upper_bidiagonal,
};
pub use cg::{conjugate_gradient, CgSolution};
pub use index::{DistanceIndex, TIE_TOLERANCE};

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::particles::{InteractionKernel, TrajectoryEnsemble};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub gamma: f64,
    pub eta: f64,
    /// Prior variance of `φ`. `None` uses the profile estimate `ṽᵀ R̃_v⁻¹ ṽ / N`.
    pub sigma2: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            gamma: 5.0,
            eta: 1e-5,
            sigma2: None,
            tol: 1e-6,
            max_iter: 2000,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be non-negative, got {}", self.eta)));
        }
        if let Some(s) = self.sigma2 {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("sigma2 must be positive, got {s}")));
            }
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Config("CG tolerance must be positive and max_iter at least 1".into()));
        }
        Ok(())
    }
}

/// `ρ` computed for a different range than requested is a caller bug.
fn check_range(idx: &DistanceIndex, cfg: &EstimatorConfig) -> Result<()> {
    if idx.gamma != cfg.gamma {
        return Err(Error::Config(format!(
            "index was built with gamma = {} but the estimator uses {}",
            idx.gamma, cfg.gamma
        )));
    }
    Ok(())
}

/// `R_s g` via the two bi-diagonal sweeps.
pub fn apply_rs(idx: &DistanceIndex, g: &[f64]) -> Result<Vec<f64>> {
    if g.len() != idx.num_unique() {
        return Err(Error::Dimension(format!("expected {} kernel entries, got {}", idx.num_unique(), g.len())));
    }
    let g2 = bidiag::upper_sweep(&idx.rho, &idx.scales, g);
    Ok(bidiag::lower_sweep(&idx.rho, &idx.scales, &g2))
}

/// `(U_s R_s U_sᵀ + η I) z`.
pub fn apply_rv(idx: &DistanceIndex, eta: f64, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != idx.num_observations() {
        return Err(Error::Dimension(format!("expected {} velocity entries, got {}", idx.num_observations(), z.len())));
    }
    Ok(idx.apply_rv_fused(eta, z))
}

/// The same operator composed from the four separate steps.
pub fn apply_rv_stepwise(idx: &DistanceIndex, eta: f64, z: &[f64]) -> Result<Vec<f64>> {
    let g3 = apply_rs(idx, &idx.apply_ut(z)?)?;
    let mut out = idx.apply_u(&g3)?;
    for (o, zi) in out.iter_mut().zip(z) {
        *o += eta * zi;
    }
    Ok(out)
}

/// Solves `R̃_v z = rhs` by conjugate gradients.
pub fn cg_solve(idx: &DistanceIndex, cfg: &EstimatorConfig, rhs: &[f64]) -> Result<CgSolution> {
    cfg.validate()?;
    check_range(idx, cfg)?;
    if rhs.len() != idx.num_observations() {
        return Err(Error::Dimension(format!("expected {} entries, got {}", idx.num_observations(), rhs.len())));
    }
    // Shapes are checked above, so the operator cannot fail inside the loop.
    conjugate_gradient(
        |z| apply_rv(idx, cfg.eta, z).expect("shape-checked operator"),
        rhs,
        cfg.tol,
        cfg.max_iter,
    )
}

/// `Σ_r exp(−|d − d_r|/γ) w_r` in `O(Ñ)` setup and `O(log Ñ)` per query.
#[derive(Debug, Clone)]
struct ExpSum {
    d: Vec<f64>,
    gamma: f64,
    /// `Σ_{t ≤ r} e^{−(d_r − d_t)/γ} w_t`
    left: Vec<f64>,
    /// `Σ_{t ≥ r} e^{−(d_t − d_r)/γ} w_t`
    right: Vec<f64>,
}

impl ExpSum {
    fn new(d: &[f64], rho: &[f64], w: &[f64], gamma: f64) -> Self {
        let n = d.len();
        let mut left = w.to_vec();
        for r in 1..n {
            left[r] += rho[r - 1] * left[r - 1];
        }
        let mut right = w.to_vec();
        for r in (0..n.saturating_sub(1)).rev() {
            right[r] += rho[r] * right[r + 1];
        }
        ExpSum { d: d.to_vec(), gamma, left, right }
    }

    fn eval(&self, x: f64) -> f64 {
        let p = self.d.partition_point(|&v| v <= x);
        let mut s = 0.0;
        if p > 0 {
            s += (-(x - self.d[p - 1]) / self.gamma).exp() * self.left[p - 1];
        }
        if p < self.d.len() {
            s += (-(self.d[p] - x) / self.gamma).exp() * self.right[p];
        }
        s
    }
}

/// Test-point correlation vector `r(d*)`.
fn cross_correlation(idx: &DistanceIndex, d_star: f64) -> Vec<f64> {
    idx.d_s.iter().map(|d| (-(d - d_star).abs() / idx.gamma).exp()).collect()
}

/// A kernel posterior conditioned on one velocity vector; the mean is reusable as an
/// [`InteractionKernel`] for forecasting.
#[derive(Debug, Clone)]
pub struct FittedKernel {
    pub index: DistanceIndex,
    pub config: EstimatorConfig,
    pub sigma2: f64,
    pub iterations: usize,
    pub residual: f64,
    mean: ExpSum,
}

impl FittedKernel {
    pub fn fit(index: DistanceIndex, config: EstimatorConfig, velocities: &[f64]) -> Result<Self> {
        let sol = cg_solve(&index, &config, velocities)?;
        let w = index.apply_ut(&sol.x)?;
        let n_obs = velocities.len() as f64;
        let sigma2 = match config.sigma2 {
            Some(s) => s,
            None => {
                let quad: f64 = velocities.iter().zip(&sol.x).map(|(a, b)| a * b).sum();
                if quad > 0.0 {
                    quad / n_obs
                } else {
                    1.0
                }
            }
        };
        let mean = ExpSum::new(&index.d_s, &index.rho, &w, index.gamma);
        Ok(FittedKernel {
            index,
            config,
            sigma2,
            iterations: sol.iterations,
            residual: sol.residual,
            mean,
        })
    }

    pub fn from_trajectories(traj: &TrajectoryEnsemble, config: EstimatorConfig) -> Result<Self> {
        config.validate()?;
        let index = DistanceIndex::build(traj, config.gamma)?;
        Self::fit(index, config, traj.velocity_vector().as_slice())
    }

    pub fn mean_at(&self, d: f64) -> f64 {
        self.mean.eval(d)
    }

    /// `σ²(1 − r(d)ᵀ U_sᵀ R̃_v⁻¹ U_s r(d))`, one CG solve; returns it with the iteration count.
    pub fn variance_at(&self, d: f64) -> Result<(f64, usize)> {
        let rhs = self.index.apply_u(&cross_correlation(&self.index, d))?;
        let sol = cg_solve(&self.index, &self.config, &rhs)?;
        let reduction: f64 = rhs.iter().zip(&sol.x).map(|(a, b)| a * b).sum();
        let k = 1.0 - reduction;
        let k = if k >= 0.0 {
            k
        } else if k >= -1e-8 {
            warn!("clamping predictive variance {k:e} at d = {d} to zero");
            0.0
        } else {
            return Err(Error::Numerical(format!("negative predictive variance {k:e} at d = {d}")));
        };
        Ok((self.sigma2 * k, sol.iterations))
    }

    pub fn predict(&self, d_star: &[f64], with_variance: bool) -> Result<KernelEstimate> {
        let mean = d_star.iter().map(|&d| self.mean_at(d)).collect();
        let (variance, variance_iterations) = if with_variance {
            let parts = d_star.par_iter().map(|&d| self.variance_at(d)).collect::<Result<Vec<_>>>()?;
            let (v, it): (Vec<f64>, Vec<usize>) = parts.into_iter().unzip();
            (Some(v), it.into_iter().max().unwrap_or(0))
        } else {
            (None, 0)
        };
        Ok(KernelEstimate {
            d_star: d_star.to_vec(),
            mean,
            variance,
            cg_iterations: self.iterations,
            cg_residual: self.residual,
            max_variance_iterations: variance_iterations,
        })
    }
}

impl InteractionKernel for FittedKernel {
    fn phi(&self, d: f64) -> f64 {
        self.mean_at(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelEstimate {
    pub d_star: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Option<Vec<f64>>,
    pub cg_iterations: usize,
    pub cg_residual: f64,
    pub max_variance_iterations: usize,
}

/// Posterior mean (and optionally variance) of `φ` at `d_star`.
pub fn predict_phi(
    idx: &DistanceIndex,
    cfg: &EstimatorConfig,
    velocities: &[f64],
    d_star: &[f64],
    with_variance: bool,
) -> Result<KernelEstimate> {
    FittedKernel::fit(idx.clone(), *cfg, velocities)?.predict(d_star, with_variance)
}

/// Dense reference for small systems: forms `U_s`, `R_s` and `R̃_v` explicitly and
/// solves by Cholesky. Cost is cubic in `N`; use it to cross-check the matrix-free path.
pub fn predict_phi_dense(idx: &DistanceIndex, cfg: &EstimatorConfig, velocities: &[f64], d_star: &[f64]) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_range(idx, cfg)?;
    let (n, dim, nobs, nu) = (idx.n, idx.dim, idx.num_observations(), idx.num_unique());
    if velocities.len() != nobs {
        return Err(Error::Dimension(format!("expected {nobs} velocity entries, got {}", velocities.len())));
    }
    let mut u = DMatrix::zeros(nobs, nu);
    for f in 0..idx.num_frames {
        for j in 0..dim {
            for i in 0..n {
                let k = f * n * dim + j * n + i;
                for ip in (0..n).filter(|&ip| ip != i) {
                    u[(k, idx.p_c[(f * n + i) * n + ip] as usize)] += idx.u_re[k * n + ip];
                }
            }
        }
    }
    let r = DMatrix::from_fn(nu, nu, |a, b| (-(idx.d_s[a] - idx.d_s[b]).abs() / idx.gamma).exp());
    let rv = &u * &r * u.transpose() + DMatrix::identity(nobs, nobs) * cfg.eta;
    let chol = crate::dense_gp::cholesky(rv, "dense velocity covariance")?;
    let w = u.transpose() * chol.solve(&DVector::from_column_slice(velocities));
    Ok(d_star
        .iter()
        .map(|&d| cross_correlation(idx, d).iter().zip(w.iter()).map(|(a, b)| a * b).sum())
        .collect())
}

/// Equally spaced grid of `points` values on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect(),
    }
}

/// Root mean squared error pooled over all estimates, divided by the standard deviation
/// of the true kernel over the same test points.
pub fn nrmse(estimates: &[KernelEstimate], truth: &dyn InteractionKernel) -> Result<f64> {
    let pts: Vec<(f64, f64)> = estimates
        .iter()
        .flat_map(|e| e.d_star.iter().zip(&e.mean).map(|(&d, &m)| (m, truth.phi(d))))
        .collect();
    if pts.is_empty() {
        return Err(Error::Precondition("no test points".into()));
    }
    let n = pts.len() as f64;
    let mse = pts.iter().map(|(m, t)| (m - t).powi(2)).sum::<f64>() / n;
    let mean = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sd = (pts.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(sd > 0.0) {
        return Err(Error::Domain("true kernel is constant on the test grid".into()));
    }
    Ok(mse.sqrt() / sd)
}

#[cfg(test)]
mod tests;
