//! Dense reference Gaussian process: Cholesky-based prediction and likelihood.
//!
//! Costs O(N³) and serves both as a user-facing emulator and as the oracle the
//! state-space and sparse estimators are checked against.

mod kernel;

pub use kernel::{build_correlation, cross_correlation, kernel_eval, KernelFamily, KernelSpec};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regression basis h(x) for the mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeanBasis {
    /// No mean term; β is not estimated (q = 0).
    Zero,
    /// h(x) = 1.
    Constant,
    /// h(x) = (1, x_1, ..., x_p).
    Linear,
}

impl MeanBasis {
    pub fn dim(self, p: usize) -> usize {
        match self {
            MeanBasis::Zero => 0,
            MeanBasis::Constant => 1,
            MeanBasis::Linear => p + 1,
        }
    }

    pub fn eval(self, x: &[f64]) -> DVector<f64> {
        match self {
            MeanBasis::Zero => DVector::zeros(0),
            MeanBasis::Constant => DVector::from_element(1, 1.0),
            MeanBasis::Linear => {
                DVector::from_iterator(x.len() + 1, std::iter::once(1.0).chain(x.iter().copied()))
            }
        }
    }
}

/// Pointwise predictive moments.
///
/// With `dof = Some(k)` the prediction is Student-t with `k` degrees of freedom and
/// `variance` holds its squared scale `σ̂² K**`; otherwise it is Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub dof: Option<usize>,
}

pub(crate) fn cholesky(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

pub(crate) fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// True if two rows of `x` coincide exactly.
pub(crate) fn has_duplicate_rows(x: &DMatrix<f64>) -> bool {
    let mut idx: Vec<usize> = (0..x.nrows()).collect();
    let key = |i: usize| x.row(i).iter().copied().collect::<Vec<f64>>();
    idx.sort_by(|&a, &b| {
        key(a)
            .partial_cmp(&key(b))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    idx.windows(2).any(|w| x.row(w[0]) == x.row(w[1]))
}

fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let max = eig.iter().fold(f64::MIN, |a, v| a.max(v.abs()));
    let min = eig.iter().fold(f64::MAX, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// A trained dense GP. Immutable after [`GpModel::fit`].
#[derive(Debug, Clone)]
pub struct GpModel {
    kernel: KernelSpec,
    inputs: DMatrix<f64>,
    outputs: DVector<f64>,
    mean: MeanBasis,
    basis: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    /// Cholesky of HᵀR̃⁻¹H; `None` when q = 0.
    gls: Option<Cholesky<f64, Dyn>>,
    beta: DVector<f64>,
    /// R̃⁻¹(y − Hβ̂)
    alpha: DVector<f64>,
    sigma2_hat: f64,
}

impl GpModel {
    /// Factorizes `R̃ = R + ηI` and computes the GLS mean estimate and σ̂².
    pub fn fit(kernel: KernelSpec, inputs: DMatrix<f64>, outputs: DVector<f64>, mean: MeanBasis) -> Result<Self> {
        kernel.validate()?;
        let n = inputs.nrows();
        if outputs.len() != n {
            return Err(Error::Dimension(format!(
                "{} input rows but {} outputs",
                n,
                outputs.len()
            )));
        }
        if outputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("outputs contain non-finite values".into()));
        }
        let q = mean.dim(inputs.ncols());
        if n == 0 || n <= q {
            return Err(Error::Precondition(format!(
                "need more observations than mean parameters (N = {n}, q = {q})"
            )));
        }
        if kernel.nugget == 0.0 && has_duplicate_rows(&inputs) {
            return Err(Error::Precondition(
                "duplicate training inputs require a positive nugget".into(),
            ));
        }

        let mut r = build_correlation(&kernel, &inputs)?;
        for i in 0..n {
            r[(i, i)] += kernel.nugget;
        }
        let chol = cholesky(r, "correlation matrix R + ηI")?;

        let basis = DMatrix::from_fn(n, q, |i, j| mean.eval(&kernel::row(&inputs, i))[j]);
        let (gls, beta) = if q == 0 {
            (None, DVector::zeros(0))
        } else {
            let ri_h = chol.solve(&basis);
            let hrh = basis.transpose() * &ri_h;
            let cond = condition_estimate(&hrh);
            let gls = match Cholesky::new(hrh.clone()) {
                Some(c) if cond < 1e14 => c,
                _ => {
                    return Err(Error::IllConditioned {
                        what: "HᵀR̃⁻¹H is singular".into(),
                        condition: cond,
                    })
                }
            };
            let beta = gls.solve(&(ri_h.transpose() * &outputs));
            (Some(gls), beta)
        };
        let resid = &outputs - &basis * &beta;
        let alpha = chol.solve(&resid);
        let sigma2_hat = resid.dot(&alpha) / (n - q) as f64;

        Ok(GpModel {
            kernel,
            inputs,
            outputs,
            mean,
            basis,
            chol,
            gls,
            beta,
            alpha,
            sigma2_hat,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn outputs(&self) -> &DVector<f64> {
        &self.outputs
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn sigma2_hat(&self) -> f64 {
        self.sigma2_hat
    }

    pub fn num_mean_params(&self) -> usize {
        self.basis.ncols()
    }

    /// Predictive means only; O(N) per test row.
    pub fn predict_mean(&self, x_star: &DMatrix<f64>) -> Result<Vec<f64>> {
        (0..x_star.nrows())
            .map(|k| {
                let x = kernel::row(x_star, k);
                let r = cross_correlation(&self.kernel, &self.inputs, &x)?;
                Ok(self.mean.eval(&x).dot(&self.beta) + r.dot(&self.alpha))
            })
            .collect()
    }

    /// Returns means and `K**` (unscaled) for each test row.
    fn moments(&self, x_star: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        let m = x_star.nrows();
        let n = self.inputs.nrows();
        let mut cross = DMatrix::<f64>::zeros(n, m);
        for k in 0..m {
            let r = cross_correlation(&self.kernel, &self.inputs, &kernel::row(x_star, k))?;
            cross.set_column(k, &r);
        }
        let ri_r = self.chol.solve(&cross);
        let mut means = Vec::with_capacity(m);
        let mut kss = Vec::with_capacity(m);
        for k in 0..m {
            let x = kernel::row(x_star, k);
            let h = self.mean.eval(&x);
            let r = cross.column(k);
            let rir = ri_r.column(k);
            means.push(h.dot(&self.beta) + r.dot(&self.alpha));
            let mut v = 1.0 - r.dot(&rir);
            if let Some(gls) = &self.gls {
                let h_star = &h - self.basis.transpose() * rir;
                v += h_star.dot(&gls.solve(&h_star));
            }
            kss.push(v.max(0.0));
        }
        Ok((means, kss))
    }

    /// Student-t predictive of the latent function with σ and β marginalized:
    /// `T(ẑ, σ̂²K**, N − q)`.
    pub fn predict(&self, x_star: &DMatrix<f64>) -> Result<PredictiveDistribution> {
        let (mean, kss) = self.moments(x_star)?;
        Ok(PredictiveDistribution {
            mean,
            variance: kss.into_iter().map(|k| k * self.sigma2_hat).collect(),
            dof: Some(self.inputs.nrows() - self.num_mean_params()),
        })
    }

    /// Gaussian predictive of the latent function with σ² fixed at the kernel's variance.
    pub fn predict_fixed(&self, x_star: &DMatrix<f64>) -> Result<PredictiveDistribution> {
        let (mean, kss) = self.moments(x_star)?;
        Ok(PredictiveDistribution {
            mean,
            variance: kss.into_iter().map(|k| k * self.kernel.variance).collect(),
            dof: None,
        })
    }

    /// Zero-mean Gaussian log-likelihood of the training outputs at the model's parameters.
    pub fn log_likelihood(&self, variance: VarianceMode) -> f64 {
        let n = self.inputs.nrows() as f64;
        let quad = self.outputs.dot(&self.chol.solve(&self.outputs));
        gaussian_ll(n, quad, log_det(&self.chol), variance, self.kernel.variance)
    }
}

/// How σ² enters the Gaussian log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceMode {
    /// Use the kernel's `variance` field.
    Fixed,
    /// Replace σ² by its maximizer `yᵀR̃⁻¹y / N`.
    Profiled,
}

fn gaussian_ll(n: f64, quad: f64, logdet: f64, mode: VarianceMode, sigma2: f64) -> f64 {
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    match mode {
        VarianceMode::Fixed => -0.5 * (n * ln2pi + n * sigma2.ln() + logdet + quad / sigma2),
        VarianceMode::Profiled => {
            let s2 = quad / n;
            -0.5 * (n * ln2pi + n * s2.ln() + logdet + n)
        }
    }
}

/// `log N(y; 0, σ²(R + ηI))` with σ², γ and η taken from `kernel`.
pub fn gp_log_likelihood(kernel: &KernelSpec, inputs: &DMatrix<f64>, y: &DVector<f64>, mode: VarianceMode) -> Result<f64> {
    let n = inputs.nrows();
    if y.len() != n {
        return Err(Error::Dimension(format!("{} input rows but {} outputs", n, y.len())));
    }
    if kernel.nugget == 0.0 && has_duplicate_rows(inputs) {
        return Err(Error::NotPositiveDefinite(
            "duplicate inputs with zero nugget give a singular correlation matrix".into(),
        ));
    }
    let mut r = build_correlation(kernel, inputs)?;
    for i in 0..n {
        r[(i, i)] += kernel.nugget;
    }
    let chol = cholesky(r, "correlation matrix R + ηI")?;
    let quad = y.dot(&chol.solve(y));
    Ok(gaussian_ll(n as f64, quad, log_det(&chol), mode, kernel.variance))
}
