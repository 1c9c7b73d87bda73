use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-coordinate distribution of initial particle positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignFamily {
    /// `U[a, b]`
    Uniform,
    /// `N(a, b)` with `b` the variance.
    Normal,
    /// `exp(U[log a, log b])`, `a > 0`.
    LogUniform,
}

impl DesignFamily {
    pub const ALL: [DesignFamily; 3] = [DesignFamily::Uniform, DesignFamily::Normal, DesignFamily::LogUniform];

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(DesignFamily::Uniform),
            "normal" => Ok(DesignFamily::Normal),
            "log-uniform" | "loguniform" | "log_uniform" => Ok(DesignFamily::LogUniform),
            other => Err(Error::Config(format!(
                "unknown design {other:?}; expected uniform, normal or log-uniform"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DesignFamily::Uniform => "uniform",
            DesignFamily::Normal => "normal",
            DesignFamily::LogUniform => "log-uniform",
        }
    }

    /// Default `(a, b)`: `U[0,5]`, `N(0,5)`, `LU[1e-3, 5]`.
    pub fn default_params(self) -> (f64, f64) {
        match self {
            DesignFamily::Uniform => (0.0, 5.0),
            DesignFamily::Normal => (0.0, 5.0),
            DesignFamily::LogUniform => (1e-3, 5.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialDesign {
    pub family: DesignFamily,
    pub a: f64,
    pub b: f64,
    pub n: usize,
    pub dim: usize,
    pub seed: u64,
}

impl InitialDesign {
    pub fn new(family: DesignFamily, n: usize, dim: usize, seed: u64) -> Self {
        let (a, b) = family.default_params();
        InitialDesign {
            family,
            a,
            b,
            n,
            dim,
            seed,
        }
    }
}

/// Draws an `n × D` matrix of i.i.d. coordinates.
pub fn sample_initial(design: &InitialDesign) -> Result<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    sample_with(design, &mut rng)
}

pub(crate) fn sample_with<R: Rng>(design: &InitialDesign, rng: &mut R) -> Result<DMatrix<f64>> {
    let (a, b) = (design.a, design.b);
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Domain("design parameters must be finite".into()));
    }
    let (n, dim) = (design.n, design.dim);
    let draws: Vec<f64> = match design.family {
        DesignFamily::Uniform => {
            let u = Uniform::new_inclusive(a, b).map_err(|e| Error::Domain(format!("uniform design: {e}")))?;
            (0..n * dim).map(|_| u.sample(rng)).collect()
        }
        DesignFamily::Normal => {
            if !(b > 0.0) {
                return Err(Error::Domain(format!("normal design needs a positive variance, got {b}")));
            }
            let g = Normal::new(a, b.sqrt()).map_err(|e| Error::Domain(format!("normal design: {e}")))?;
            (0..n * dim).map(|_| g.sample(rng)).collect()
        }
        DesignFamily::LogUniform => {
            if !(a > 0.0) {
                return Err(Error::Domain(format!("log-uniform design needs a > 0, got {a}")));
            }
            let u = Uniform::new_inclusive(a.ln(), b.ln())
                .map_err(|e| Error::Domain(format!("log-uniform design: {e}")))?;
            (0..n * dim).map(|_| u.sample(rng).exp()).collect()
        }
    };
    Ok(DMatrix::from_row_slice(n, dim, &draws))
}
