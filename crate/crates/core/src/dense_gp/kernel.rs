//! Correlation kernels with closed forms at half-integer roughness.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT5: f64 = 2.236_067_977_499_79;

/// Member of the Matérn family used for a coordinate's correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelFamily {
    /// Matérn with ν = 1/2: `exp(-d/γ)`.
    Exponential,
    /// Matérn with ν = 5/2.
    Matern52,
    /// The ν → ∞ limit of the Matérn family under the `√(2ν) d/γ` scaling: `exp(-d²/(2γ²))`.
    SquaredExponential,
}

impl KernelFamily {
    /// Roughness ν, or `None` for the squared-exponential limit.
    pub fn roughness(self) -> Option<f64> {
        match self {
            KernelFamily::Exponential => Some(0.5),
            KernelFamily::Matern52 => Some(2.5),
            KernelFamily::SquaredExponential => None,
        }
    }

    /// Parses the `--nu` style spelling used on the command line (`0.5`, `2.5`, `inf`).
    pub fn from_nu(nu: &str) -> Result<Self> {
        match nu.trim() {
            "0.5" | "1/2" => Ok(KernelFamily::Exponential),
            "2.5" | "5/2" => Ok(KernelFamily::Matern52),
            "inf" | "gauss" | "squared-exponential" => Ok(KernelFamily::SquaredExponential),
            other => Err(Error::Domain(format!(
                "roughness must be one of 0.5, 2.5 or inf, got {other}"
            ))),
        }
    }

    /// Correlation at distance `d >= 0` with range `gamma > 0`. No validation.
    #[inline]
    pub fn correlation(self, gamma: f64, d: f64) -> f64 {
        let t = d / gamma;
        match self {
            KernelFamily::Exponential => (-t).exp(),
            KernelFamily::Matern52 => {
                let s = SQRT5 * t;
                (1.0 + s + s * s / 3.0) * (-s).exp()
            }
            KernelFamily::SquaredExponential => (-0.5 * t * t).exp(),
        }
    }
}

/// Product-form kernel: family, one range per input coordinate, variance σ² and nugget η.
///
/// The kernel itself is a correlation (`K(0) = 1`); `variance` scales it into a covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub ranges: Vec<f64>,
    pub variance: f64,
    pub nugget: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, ranges: Vec<f64>, variance: f64, nugget: f64) -> Result<Self> {
        let spec = KernelSpec {
            family,
            ranges,
            variance,
            nugget,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// One-dimensional kernel with a single range.
    pub fn one_dim(family: KernelFamily, gamma: f64, variance: f64, nugget: f64) -> Result<Self> {
        Self::new(family, vec![gamma], variance, nugget)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ranges.is_empty() {
            return Err(Error::Domain("kernel needs at least one range parameter".into()));
        }
        if let Some(g) = self.ranges.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
            return Err(Error::Domain(format!("range parameters must be positive, got {g}")));
        }
        if !(self.variance.is_finite() && self.variance > 0.0) {
            return Err(Error::Domain(format!(
                "variance must be positive, got {}",
                self.variance
            )));
        }
        if !(self.nugget.is_finite() && self.nugget >= 0.0) {
            return Err(Error::Domain(format!(
                "nugget must be non-negative, got {}",
                self.nugget
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.ranges.len()
    }

    /// Correlation of coordinate `l` at distance `d`.
    pub fn eval_coord(&self, l: usize, d: f64) -> Result<f64> {
        if !(d >= 0.0) {
            return Err(Error::Domain(format!("distance must be non-negative, got {d}")));
        }
        let gamma = *self
            .ranges
            .get(l)
            .ok_or_else(|| Error::Dimension(format!("no range for coordinate {l}")))?;
        Ok(self.family.correlation(gamma, d))
    }

    /// Product correlation between two input points.
    pub fn correlate(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), self.ranges.len());
        a.iter()
            .zip(b)
            .zip(&self.ranges)
            .map(|((x, y), g)| self.family.correlation(*g, (x - y).abs()))
            .product()
    }
}

/// Evaluates the one-dimensional kernel (first range parameter) at distance `d`.
pub fn kernel_eval(spec: &KernelSpec, d: f64) -> Result<f64> {
    spec.validate()?;
    spec.eval_coord(0, d)
}

fn check_inputs(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != spec.input_dim() {
        return Err(Error::Dimension(format!(
            "inputs have {} columns but the kernel has {} range parameters",
            x.ncols(),
            spec.input_dim()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("inputs contain non-finite values".into()));
    }
    Ok(())
}

pub(crate) fn row(x: &DMatrix<f64>, i: usize) -> Vec<f64> {
    x.row(i).iter().copied().collect()
}

/// N×N correlation matrix `R[i,j] = Π_l K_l(|x_il - x_jl|)` (nugget not added).
pub fn build_correlation(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spec.validate()?;
    check_inputs(spec, x)?;
    let n = x.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| row(x, i)).collect();
    let mut r = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in 0..i {
            let c = spec.correlate(&rows[i], &rows[j]);
            r[(i, j)] = c;
            r[(j, i)] = c;
        }
    }
    Ok(r)
}

/// Correlations between each training row of `x` and the point `x_star`.
pub fn cross_correlation(spec: &KernelSpec, x: &DMatrix<f64>, x_star: &[f64]) -> Result<DVector<f64>> {
    check_inputs(spec, x)?;
    if x_star.len() != spec.input_dim() {
        return Err(Error::Dimension(format!(
            "test point has {} coordinates, expected {}",
            x_star.len(),
            spec.input_dim()
        )));
    }
    if x_star.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("test point contains non-finite values".into()));
    }
    Ok(DVector::from_iterator(
        x.nrows(),
        (0..x.nrows()).map(|i| spec.correlate(&row(x, i), x_star)),
    ))
}
