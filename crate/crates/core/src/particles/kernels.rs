//! Benchmark interaction kernels φ(d).

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// A scalar interaction weight as a function of pairwise distance.
pub trait InteractionKernel: Send + Sync {
    fn phi(&self, d: f64) -> f64;
}

impl<F> InteractionKernel for F
where
    F: Fn(f64) -> f64 + Send + Sync,
{
    fn phi(&self, d: f64) -> f64 {
        self(d)
    }
}

/// φ ≡ 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoInteraction;

impl InteractionKernel for NoInteraction {
    fn phi(&self, _d: f64) -> f64 {
        0.0
    }
}

const LJ_CUT: f64 = 0.95;

/// Lennard-Jones style kernel `(8/3)(d⁻⁴ − d⁻¹⁰)` with its singular core replaced
/// below `d = 0.95` by `c₂ exp(−c₁ d¹²)`, matched in value and slope at the cut.
#[derive(Debug, Clone, Copy)]
pub struct TruncatedLj {
    c1: f64,
    c2: f64,
}

impl TruncatedLj {
    pub fn new() -> Self {
        let c3 = 8.0 / 3.0 * (LJ_CUT.powi(-4) - LJ_CUT.powi(-10));
        let c4 = 8.0 / 3.0 * (10.0 * LJ_CUT.powi(-11) - 4.0 * LJ_CUT.powi(-5));
        let c1 = -c4 / (12.0 * c3 * LJ_CUT.powi(11));
        let c2 = c3 * (c1 * LJ_CUT.powi(12)).exp();
        TruncatedLj { c1, c2 }
    }

    pub fn constants(&self) -> (f64, f64) {
        (self.c1, self.c2)
    }
}

impl Default for TruncatedLj {
    fn default() -> Self {
        Self::new()
    }
}

impl InteractionKernel for TruncatedLj {
    fn phi(&self, d: f64) -> f64 {
        phi_truncated_lj_with(self, d)
    }
}

fn phi_truncated_lj_with(k: &TruncatedLj, d: f64) -> f64 {
    if d <= LJ_CUT {
        k.c2 * (-k.c1 * d.powi(12)).exp()
    } else {
        8.0 / 3.0 * (d.powi(-4) - d.powi(-10))
    }
}

pub fn phi_truncated_lj(d: f64) -> f64 {
    phi_truncated_lj_with(&TruncatedLj::new(), d)
}

/// Lower and upper ends of the raised bump in the opinion-dynamics kernel.
pub const OD_C5: f64 = FRAC_1_SQRT_2 - 0.05;
pub const OD_C6: f64 = FRAC_1_SQRT_2 + 0.05;

/// Heterophilious opinion-dynamics kernel, piecewise on `[0, c₅, c₆, 0.95, 1.05, ∞)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct OpinionDynamics;

impl InteractionKernel for OpinionDynamics {
    fn phi(&self, d: f64) -> f64 {
        phi_od(d)
    }
}

pub fn phi_od(d: f64) -> f64 {
    if d < OD_C5 {
        0.4
    } else if d < OD_C6 {
        -0.3 * (10.0 * PI * (d - OD_C5)).cos() + 0.7
    } else if d < 0.95 {
        1.0
    } else if d < 1.05 {
        0.5 * (10.0 * PI * (d - 0.95)).cos() + 0.5
    } else {
        0.0
    }
}

/// The two benchmark kernels by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchmarkKernel {
    Lj,
    Od,
}

impl BenchmarkKernel {
    pub fn parse(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lj" | "truncated-lj" => Ok(BenchmarkKernel::Lj),
            "od" | "opinion" => Ok(BenchmarkKernel::Od),
            other => Err(crate::Error::Config(format!("unknown kernel {other:?}; expected lj or od"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BenchmarkKernel::Lj => "lj",
            BenchmarkKernel::Od => "od",
        }
    }

    pub fn kernel(self) -> Box<dyn InteractionKernel> {
        match self {
            BenchmarkKernel::Lj => Box::new(TruncatedLj::new()),
            BenchmarkKernel::Od => Box::new(OpinionDynamics),
        }
    }

    /// Upper end of the test grid `[0, d_max]` used for accuracy tables.
    pub fn grid_max(self) -> f64 {
        match self {
            BenchmarkKernel::Lj => 5.0,
            BenchmarkKernel::Od => 1.5,
        }
    }
}
