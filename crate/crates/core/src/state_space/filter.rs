use nalgebra::{DMatrix, DVector};

use super::model::StateSpaceModel;
use crate::error::{Error, Result};

/// Per-location moments from the forward pass, plus per-observation innovations.
#[derive(Debug, Clone)]
pub struct FilterState {
    /// One-step-ahead predictive mean `b_u` of the state at each location.
    pub predicted_mean: Vec<DVector<f64>>,
    /// One-step-ahead predictive covariance `B_u`.
    pub predicted_cov: Vec<DMatrix<f64>>,
    /// Filtered mean `m_u` after all observations at location `u`.
    pub filtered_mean: Vec<DVector<f64>>,
    /// Filtered covariance `C_u`.
    pub filtered_cov: Vec<DMatrix<f64>>,
    /// Innovation mean `f_i` per observation.
    pub innovation_mean: Vec<f64>,
    /// Innovation variance `Q_i` per observation.
    pub innovation_var: Vec<f64>,
    /// Observations the filter consumed, in sorted order.
    pub observations: Vec<f64>,
    pub noise_var: f64,
}

/// Backward-pass moments `s_u`, `S_u` and smoother gains.
#[derive(Debug, Clone)]
pub struct SmootherState {
    pub smoothed_mean: Vec<DVector<f64>>,
    pub smoothed_cov: Vec<DMatrix<f64>>,
    /// `gains[u] = C_u G_{u+1}ᵀ B_{u+1}⁻¹`; the last entry is zero.
    pub gains: Vec<DMatrix<f64>>,
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Forward Kalman recursion with stationary initialization `b_1 = 0`, `B_1 = W_1`.
///
/// Observations at a repeated input are folded in as successive measurement updates
/// of the same state.
pub fn kalman_filter(model: &StateSpaceModel, y: &[f64], noise_var: f64) -> Result<FilterState> {
    if y.len() != model.num_observations() {
        return Err(Error::Dimension(format!(
            "model has {} observations, got {}",
            model.num_observations(),
            y.len()
        )));
    }
    if !(noise_var >= 0.0) {
        return Err(Error::Domain(format!("noise variance must be non-negative, got {noise_var}")));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("observations contain non-finite values".into()));
    }
    let k = model.state_dim();
    let u_len = model.num_locations();
    let mut out = FilterState {
        predicted_mean: Vec::with_capacity(u_len),
        predicted_cov: Vec::with_capacity(u_len),
        filtered_mean: Vec::with_capacity(u_len),
        filtered_cov: Vec::with_capacity(u_len),
        innovation_mean: Vec::with_capacity(y.len()),
        innovation_var: Vec::with_capacity(y.len()),
        observations: y.to_vec(),
        noise_var,
    };

    for u in 0..u_len {
        let (b, big_b) = if u == 0 {
            (DVector::zeros(k), model.stationary().clone())
        } else {
            let g = &model.transitions[u];
            let mut bb = g * &out.filtered_cov[u - 1] * g.transpose() + &model.innovations[u];
            symmetrize(&mut bb);
            (g * &out.filtered_mean[u - 1], bb)
        };
        let mut m = b.clone();
        let mut c = big_b.clone();
        for i in model.obs_ranges[u].clone() {
            let f = m[0];
            let q = c[(0, 0)] + noise_var;
            if !(q > 0.0) || !q.is_finite() {
                return Err(Error::Numerical(format!(
                    "innovation variance Q = {q:e} at observation {i} is not positive"
                )));
            }
            let gain = c.column(0) / q;
            m += &gain * (y[i] - f);
            c -= &gain * gain.transpose() * q;
            symmetrize(&mut c);
            out.innovation_mean.push(f);
            out.innovation_var.push(q);
        }
        out.predicted_mean.push(b);
        out.predicted_cov.push(big_b);
        out.filtered_mean.push(m);
        out.filtered_cov.push(c);
    }
    Ok(out)
}

/// `Σ_i −½ log(2π Q_i) − (y_i − f_i)² / (2 Q_i)` from a completed filter pass.
pub fn filter_log_likelihood(filter: &FilterState) -> f64 {
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    filter
        .observations
        .iter()
        .zip(&filter.innovation_mean)
        .zip(&filter.innovation_var)
        .map(|((y, f), q)| -0.5 * (ln2pi + q.ln()) - (y - f).powi(2) / (2.0 * q))
        .sum()
}

/// Runs the filter and returns the exact Gaussian log-likelihood.
pub fn kalman_log_likelihood(model: &StateSpaceModel, y: &[f64], noise_var: f64) -> Result<f64> {
    kalman_filter(model, y, noise_var).map(|f| filter_log_likelihood(&f))
}

/// Rauch–Tung–Striebel backward recursion.
pub fn rts_smoother(model: &StateSpaceModel, filter: &FilterState) -> Result<SmootherState> {
    let u_len = model.num_locations();
    if filter.filtered_mean.len() != u_len {
        return Err(Error::Dimension("filter state does not match model".into()));
    }
    let k = model.state_dim();
    let mut s = vec![DVector::zeros(k); u_len];
    let mut big_s = vec![DMatrix::zeros(k, k); u_len];
    let mut gains = vec![DMatrix::zeros(k, k); u_len];
    s[u_len - 1] = filter.filtered_mean[u_len - 1].clone();
    big_s[u_len - 1] = filter.filtered_cov[u_len - 1].clone();
    for u in (0..u_len - 1).rev() {
        let b_next = &filter.predicted_cov[u + 1];
        let chol = b_next.clone().cholesky().ok_or_else(|| {
            Error::Numerical(format!("predictive covariance B at location {} is singular", u + 1))
        })?;
        let c = &filter.filtered_cov[u];
        // Jᵀ = B⁻¹ G C
        let gain = chol.solve(&(&model.transitions[u + 1] * c)).transpose();
        s[u] = &filter.filtered_mean[u] + &gain * (&s[u + 1] - &filter.predicted_mean[u + 1]);
        let mut su = c + &gain * (&big_s[u + 1] - b_next) * gain.transpose();
        symmetrize(&mut su);
        big_s[u] = su;
        gains[u] = gain;
    }
    Ok(SmootherState {
        smoothed_mean: s,
        smoothed_cov: big_s,
        gains,
    })
}

fn solve_spd(m: &DMatrix<f64>, rhs: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.solve(rhs))
        .ok_or_else(|| Error::Numerical(format!("{what} is singular")))
}

/// Posterior moments of the full state at an arbitrary input.
///
/// Between two locations the test input is treated as an extra unobserved state in
/// the chain, giving the exact posterior. Outside the data range the state is
/// propagated one-sidedly from the nearest end.
pub fn predict_between(
    model: &StateSpaceModel,
    filter: &FilterState,
    smoother: &SmootherState,
    x_star: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !x_star.is_finite() {
        return Err(Error::Domain("test input must be finite".into()));
    }
    let locs = &model.locations;
    let u_len = locs.len();
    let idx = locs.partition_point(|v| *v < x_star);
    if idx < u_len && locs[idx] == x_star {
        return Ok((smoother.smoothed_mean[idx].clone(), smoother.smoothed_cov[idx].clone()));
    }
    let w1 = model.stationary();

    if idx == u_len {
        // Beyond the last input: forward propagation.
        let g = model.transition_for_gap(x_star - locs[u_len - 1]);
        let w = model.innovation_for_gap(x_star - locs[u_len - 1]);
        let mean = &g * &smoother.smoothed_mean[u_len - 1];
        let mut cov = &g * &smoother.smoothed_cov[u_len - 1] * g.transpose() + w;
        symmetrize(&mut cov);
        return Ok((mean, cov));
    }
    if idx == 0 {
        // Before the first input: θ* | θ_1 under the stationary joint law.
        let g = model.transition_for_gap(locs[0] - x_star);
        // A = W₁ Gᵀ W₁⁻¹, computed as (W₁⁻¹ G W₁)ᵀ
        let a = solve_spd(w1, &(&g * w1), "stationary covariance")?.transpose();
        let mean = &a * &smoother.smoothed_mean[0];
        let mut cov = w1 - &a * &g * w1 + &a * &smoother.smoothed_cov[0] * a.transpose();
        symmetrize(&mut cov);
        return Ok((mean, cov));
    }

    // Insert x* between its neighbours: predict it from the filtered moments at `lo`,
    // then take one smoother step against the smoothed state at `hi`. The step only
    // inverts the filter's own predictive covariance at `hi`, which stays well
    // conditioned when x* nearly coincides with a training input.
    let (lo, hi) = (idx - 1, idx);
    let g_a = model.transition_for_gap(x_star - locs[lo]);
    let g_b = model.transition_for_gap(locs[hi] - x_star);
    let m_star = &g_a * &filter.filtered_mean[lo];
    let mut p_star = &g_a * &filter.filtered_cov[lo] * g_a.transpose() + model.innovation_for_gap(x_star - locs[lo]);
    symmetrize(&mut p_star);
    let b_hi = &filter.predicted_cov[hi];
    // Jᵀ = B⁻¹ G_b P*
    let gain = solve_spd(b_hi, &(&g_b * &p_star), "predictive covariance B")?.transpose();
    let mean = &m_star + &gain * (&smoother.smoothed_mean[hi] - &filter.predicted_mean[hi]);
    let mut cov = &p_star + &gain * (&smoother.smoothed_cov[hi] - b_hi) * gain.transpose();
    symmetrize(&mut cov);
    Ok((mean, cov))
}
