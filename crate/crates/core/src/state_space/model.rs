use nalgebra::DMatrix;

use crate::dense_gp::KernelFamily;
use crate::error::{Error, Result};

/// `λ = √(2ν)/γ`.
pub fn rate(family: KernelFamily, gamma: f64) -> Result<f64> {
    match family {
        KernelFamily::Exponential => Ok(1.0 / gamma),
        KernelFamily::Matern52 => Ok(5f64.sqrt() / gamma),
        KernelFamily::SquaredExponential => Err(Error::Domain(
            "squared-exponential kernel has no finite state-space form".into(),
        )),
    }
}

/// Dimension of the latent state: value plus derivatives up to order ν − 1/2.
pub fn state_dim(family: KernelFamily) -> Result<usize> {
    match family {
        KernelFamily::Exponential => Ok(1),
        KernelFamily::Matern52 => Ok(3),
        KernelFamily::SquaredExponential => rate(family, 1.0).map(|_| 0),
    }
}

/// Transition `G(d) = exp(J d)`.
pub fn transition(family: KernelFamily, lambda: f64, d: f64) -> DMatrix<f64> {
    match family {
        KernelFamily::Exponential => DMatrix::from_element(1, 1, (-lambda * d).exp()),
        _ => {
            let (l, l2, l3, l4) = (lambda, lambda * lambda, lambda.powi(3), lambda.powi(4));
            let d2 = d * d;
            let s = 0.5 * (-l * d).exp();
            DMatrix::from_row_slice(
                3,
                3,
                &[
                    s * (l2 * d2 + 2.0 * l * d + 2.0),
                    s * 2.0 * (l * d2 + d),
                    s * d2,
                    s * (-l3 * d2),
                    s * (-2.0) * (l2 * d2 - l * d - 1.0),
                    s * (2.0 * d - l * d2),
                    s * (l4 * d2 - 2.0 * l3 * d),
                    s * 2.0 * (l3 * d2 - 3.0 * l2 * d),
                    s * (l2 * d2 - 4.0 * l * d + 2.0),
                ],
            )
        }
    }
}

/// Innovation covariance `W(d) = ∫_0^d e^{Jt} L c Lᵀ e^{Jᵀt} dt` with `c = (16/3)σ²λ⁵`.
pub fn innovation(family: KernelFamily, lambda: f64, sigma2: f64, d: f64) -> DMatrix<f64> {
    match family {
        KernelFamily::Exponential => {
            DMatrix::from_element(1, 1, sigma2 * -(-2.0 * lambda * d).exp_m1())
        }
        _ => {
            let x = lambda * d;
            let (x2, x3, x4) = (x * x, x.powi(3), x.powi(4));
            let e = (-2.0 * x).exp();
            let l = lambda;
            let pre = 4.0 * sigma2 * l.powi(5) / 3.0;
            let w11 = (e * (3.0 + 6.0 * x + 6.0 * x2 + 4.0 * x3 + 2.0 * x4) - 3.0) / (-4.0 * l.powi(5));
            let w12 = e * d.powi(4) / 2.0;
            let w13 = (e * (1.0 + 2.0 * x + 2.0 * x2 + 4.0 * x3 - 2.0 * x4) - 1.0) / (4.0 * l.powi(3));
            let w22 = (e * (1.0 + 2.0 * x + 2.0 * x2 - 4.0 * x3 + 2.0 * x4) - 1.0) / (-4.0 * l.powi(3));
            let w23 = e * d * d * (4.0 - 4.0 * x + x2) / 2.0;
            let w33 = (e * (-3.0 + 10.0 * x - 22.0 * x2 + 12.0 * x3 - 2.0 * x4) + 3.0) / (4.0 * l);
            pre * DMatrix::from_row_slice(3, 3, &[w11, w12, w13, w12, w22, w23, w13, w23, w33])
        }
    }
}

/// Stationary covariance of the state, `W(∞)`.
pub fn stationary(family: KernelFamily, lambda: f64, sigma2: f64) -> DMatrix<f64> {
    match family {
        KernelFamily::Exponential => DMatrix::from_element(1, 1, sigma2),
        _ => {
            let l2 = lambda * lambda;
            let a = sigma2 * l2 / 3.0;
            DMatrix::from_row_slice(3, 3, &[sigma2, 0.0, -a, 0.0, a, 0.0, -a, 0.0, sigma2 * l2 * l2])
        }
    }
}

/// Discretized state-space form of a zero-mean Matérn GP on sorted 1-D inputs.
///
/// Repeated inputs share one latent state: `locations` holds the distinct inputs and
/// `obs_ranges[u]` the slice of observations made at location `u`.
#[derive(Debug, Clone)]
pub struct StateSpaceModel {
    pub family: KernelFamily,
    pub gamma: f64,
    pub sigma2: f64,
    pub lambda: f64,
    pub locations: Vec<f64>,
    pub obs_ranges: Vec<std::ops::Range<usize>>,
    /// `transitions[u]` maps the state at `u - 1` to `u`; entry 0 is the identity.
    pub transitions: Vec<DMatrix<f64>>,
    /// `innovations[u]` for `u >= 1`; entry 0 is the stationary covariance.
    pub innovations: Vec<DMatrix<f64>>,
}

impl StateSpaceModel {
    pub fn state_dim(&self) -> usize {
        self.transitions[0].nrows()
    }

    pub fn num_locations(&self) -> usize {
        self.locations.len()
    }

    pub fn num_observations(&self) -> usize {
        self.obs_ranges.last().map_or(0, |r| r.end)
    }

    pub fn stationary(&self) -> &DMatrix<f64> {
        &self.innovations[0]
    }

    pub fn transition_for_gap(&self, d: f64) -> DMatrix<f64> {
        transition(self.family, self.lambda, d)
    }

    pub fn innovation_for_gap(&self, d: f64) -> DMatrix<f64> {
        innovation(self.family, self.lambda, self.sigma2, d)
    }

    /// Dense precision of the stacked states (distinct locations). Block tri-diagonal.
    pub fn joint_precision(&self) -> Result<DMatrix<f64>> {
        let k = self.state_dim();
        let u = self.num_locations();
        let mut lam = DMatrix::<f64>::zeros(k * u, k * u);
        let winv: Vec<DMatrix<f64>> = self
            .innovations
            .iter()
            .map(|w| {
                w.clone()
                    .cholesky()
                    .map(|c| c.inverse())
                    .ok_or_else(|| Error::NotPositiveDefinite("innovation covariance".into()))
            })
            .collect::<Result<_>>()?;
        for i in 0..u {
            let mut diag = winv[i].clone();
            if i + 1 < u {
                let g = &self.transitions[i + 1];
                diag += g.transpose() * &winv[i + 1] * g;
                let off = -(g.transpose() * &winv[i + 1]);
                lam.view_mut((k * i, k * (i + 1)), (k, k)).copy_from(&off);
                lam.view_mut((k * (i + 1), k * i), (k, k)).copy_from(&off.transpose());
            }
            lam.view_mut((k * i, k * i), (k, k)).copy_from(&diag);
        }
        Ok(lam)
    }
}

/// Builds G_i and W_i from sorted inputs.
pub fn build_state_space(x: &[f64], gamma: f64, sigma2: f64, family: KernelFamily) -> Result<StateSpaceModel> {
    let lambda = rate(family, gamma)?;
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::Domain(format!("range must be positive, got {gamma}")));
    }
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::Domain(format!("variance must be positive, got {sigma2}")));
    }
    if x.is_empty() {
        return Err(Error::Precondition("no inputs".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("inputs contain non-finite values".into()));
    }
    if let Some(w) = x.windows(2).position(|w| w[1] < w[0]) {
        return Err(Error::Precondition(format!(
            "inputs must be sorted; x[{}] = {} > x[{}] = {}",
            w,
            x[w],
            w + 1,
            x[w + 1]
        )));
    }

    let mut locations = Vec::new();
    let mut obs_ranges = Vec::new();
    let mut start = 0;
    for i in 1..=x.len() {
        if i == x.len() || x[i] != x[start] {
            locations.push(x[start]);
            obs_ranges.push(start..i);
            start = i;
        }
    }

    let k = state_dim(family)?;
    let mut transitions = Vec::with_capacity(locations.len());
    let mut innovations = Vec::with_capacity(locations.len());
    transitions.push(DMatrix::identity(k, k));
    innovations.push(stationary(family, lambda, sigma2));
    for w in locations.windows(2) {
        let d = w[1] - w[0];
        transitions.push(transition(family, lambda, d));
        innovations.push(innovation(family, lambda, sigma2, d));
    }

    Ok(StateSpaceModel {
        family,
        gamma,
        sigma2,
        lambda,
        locations,
        obs_ranges,
        transitions,
        innovations,
    })
}
