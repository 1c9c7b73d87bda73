//! O(N) inference for zero-mean Matérn GPs (ν ∈ {1/2, 5/2}) on 1-D inputs.
//!
//! The GP is rewritten as a linear-Gaussian state-space model over the value
//! and its derivatives; the Kalman filter then gives the exact likelihood and the
//! RTS smoother the exact posterior, both in linear time.

mod estimate;
mod filter;
mod model;

pub use estimate::{estimate_parameters, profiled_log_likelihood, ParameterEstimate, SearchConfig};
pub use filter::{
    filter_log_likelihood, kalman_filter, kalman_log_likelihood, predict_between, rts_smoother, FilterState,
    SmootherState,
};
pub use model::{build_state_space, innovation, rate, state_dim, stationary, transition, StateSpaceModel};

use crate::dense_gp::KernelFamily;
use crate::error::{Error, Result};

/// Parameters of the 1-D GP regression model `y = z + ε`, `z ~ GP(0, σ²K)`, `ε ~ N(0, σ₀²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateSpaceParams {
    pub family: KernelFamily,
    pub gamma: f64,
    pub sigma2: f64,
    pub noise_var: f64,
}

impl StateSpaceParams {
    /// From the nugget parameterization `η = σ₀² / σ²`.
    pub fn with_nugget(family: KernelFamily, gamma: f64, sigma2: f64, nugget: f64) -> Self {
        StateSpaceParams {
            family,
            gamma,
            sigma2,
            noise_var: nugget * sigma2,
        }
    }
}

/// Filtered and smoothed fit on unsorted data.
#[derive(Debug, Clone)]
pub struct StateSpaceGp {
    pub params: StateSpaceParams,
    pub model: StateSpaceModel,
    pub filter: FilterState,
    pub smoother: SmootherState,
}

/// Observable predictive moments at one input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointPrediction {
    pub mean: f64,
    pub variance: f64,
}

impl StateSpaceGp {
    /// Sorts `(x, y)` by input, then runs filter and smoother.
    pub fn fit(x: &[f64], y: &[f64], params: StateSpaceParams) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Dimension(format!("{} inputs but {} outputs", x.len(), y.len())));
        }
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
        let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
        let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        let model = build_state_space(&xs, params.gamma, params.sigma2, params.family)?;
        let filter = kalman_filter(&model, &ys, params.noise_var)?;
        let smoother = rts_smoother(&model, &filter)?;
        Ok(StateSpaceGp {
            params,
            model,
            filter,
            smoother,
        })
    }

    pub fn log_likelihood(&self) -> f64 {
        filter_log_likelihood(&self.filter)
    }

    /// Posterior of the latent `z(x*)`; add `noise_var` for a new noisy observation.
    pub fn predict_latent(&self, x_star: f64) -> Result<PointPrediction> {
        let (m, c) = predict_between(&self.model, &self.filter, &self.smoother, x_star)?;
        Ok(PointPrediction {
            mean: m[0],
            variance: c[(0, 0)].max(0.0),
        })
    }

    pub fn predict_observation(&self, x_star: f64) -> Result<PointPrediction> {
        let p = self.predict_latent(x_star)?;
        Ok(PointPrediction {
            variance: p.variance + self.params.noise_var,
            ..p
        })
    }

    pub fn predict_many(&self, xs: &[f64]) -> Result<Vec<PointPrediction>> {
        xs.iter().map(|&x| self.predict_latent(x)).collect()
    }
}
