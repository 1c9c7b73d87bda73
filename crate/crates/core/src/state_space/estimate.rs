//! Grid + golden-section search for (γ, η) under the filter likelihood, with σ² profiled out.

use rayon::prelude::*;

use super::{build_state_space, kalman_filter};
use crate::dense_gp::KernelFamily;
use crate::error::{Error, Result};

/// Log-likelihood at `(γ, η)` with σ² replaced by its closed-form maximizer.
///
/// Running the filter at σ² = 1 and σ₀² = η scales every `Q_i` by σ², so
/// `σ̂² = N⁻¹ Σ (y_i − f_i)² / Q_i`.
pub fn profiled_log_likelihood(x_sorted: &[f64], y: &[f64], family: KernelFamily, gamma: f64, nugget: f64) -> Result<(f64, f64)> {
    let model = build_state_space(x_sorted, gamma, 1.0, family)?;
    let f = kalman_filter(&model, y, nugget)?;
    let n = y.len() as f64;
    let sigma2 = f
        .observations
        .iter()
        .zip(&f.innovation_mean)
        .zip(&f.innovation_var)
        .map(|((y, m), q)| (y - m).powi(2) / q)
        .sum::<f64>()
        / n;
    let log_q: f64 = f.innovation_var.iter().map(|q| q.ln()).sum();
    let ll = -0.5 * (n * (2.0 * std::f64::consts::PI * sigma2).ln() + log_q + n);
    Ok((ll, sigma2))
}

#[derive(Debug, Clone)]
pub struct SearchConfig {
    pub log_gamma_bounds: (f64, f64),
    pub log_nugget_bounds: (f64, f64),
    pub grid_points: usize,
    pub golden_iters: usize,
    /// Optimize γ only, keeping η at this value.
    pub fixed_nugget: Option<f64>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            log_gamma_bounds: ((1e-2f64).ln(), (1e2f64).ln()),
            log_nugget_bounds: ((1e-8f64).ln(), (1.0f64).ln()),
            grid_points: 12,
            golden_iters: 40,
            fixed_nugget: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterEstimate {
    pub gamma: f64,
    pub nugget: f64,
    pub sigma2: f64,
    pub log_likelihood: f64,
}

fn golden<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Maximizes the profiled filter likelihood: coarse log-grid, then alternating
/// golden-section refinements in log space bracketed by neighbouring grid cells.
pub fn estimate_parameters(x_sorted: &[f64], y: &[f64], family: KernelFamily, cfg: &SearchConfig) -> Result<ParameterEstimate> {
    if cfg.grid_points < 2 {
        return Err(Error::Config("grid needs at least two points per axis".into()));
    }
    let eval = |lg: f64, ln: f64| -> f64 {
        profiled_log_likelihood(x_sorted, y, family, lg.exp(), ln.exp())
            .map(|(ll, _)| ll)
            .unwrap_or(f64::NEG_INFINITY)
    };
    let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
        (0..cfg.grid_points)
            .map(|i| lo + (hi - lo) * i as f64 / (cfg.grid_points - 1) as f64)
            .collect()
    };
    let gammas = axis(cfg.log_gamma_bounds);
    let nuggets = match cfg.fixed_nugget {
        Some(eta) => vec![eta.ln()],
        None => axis(cfg.log_nugget_bounds),
    };
    let cells: Vec<(f64, f64)> = gammas
        .iter()
        .flat_map(|&g| nuggets.iter().map(move |&e| (g, e)))
        .collect();
    let scores: Vec<f64> = cells.par_iter().map(|&(g, e)| eval(g, e)).collect();
    let best = scores
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    if !scores[best].is_finite() {
        return Err(Error::Numerical("likelihood is not finite anywhere on the grid".into()));
    }
    let (mut lg, mut ln) = cells[best];
    let step_g = (cfg.log_gamma_bounds.1 - cfg.log_gamma_bounds.0) / (cfg.grid_points - 1) as f64;
    let step_n = (cfg.log_nugget_bounds.1 - cfg.log_nugget_bounds.0) / (cfg.grid_points - 1) as f64;
    for _ in 0..3 {
        lg = golden(|g| eval(g, ln), lg - step_g, lg + step_g, cfg.golden_iters);
        if cfg.fixed_nugget.is_none() {
            ln = golden(|e| eval(lg, e), ln - step_n, ln + step_n, cfg.golden_iters);
        }
    }
    let (ll, sigma2) = profiled_log_likelihood(x_sorted, y, family, lg.exp(), ln.exp())?;
    Ok(ParameterEstimate {
        gamma: lg.exp(),
        nugget: ln.exp(),
        sigma2,
        log_likelihood: ll,
    })
}
