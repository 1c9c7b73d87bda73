//! Exact, scalable marginalization of latent Gaussian-process variables.
//!
//! - [`dense_gp`]: cubic-cost reference GP (emulator and oracle).
//! - [`state_space`]: O(N) Kalman filter / RTS smoother for Matérn GPs on 1-D inputs.
//! - [`particles`]: first-order interacting particle simulator.
//! - [`sparse_cg`]: matrix-free conjugate-gradient estimator of interaction kernels.
//! - [`gppca`]: shared-covariance generalized probabilistic PCA.
//! - [`experiments`]: harness reproducing the timing and accuracy studies.

pub mod dense_gp;
pub mod error;
pub mod experiments;
pub mod gppca;
pub mod io;
pub mod particles;
pub mod sparse_cg;
pub mod state_space;

pub use error::{Error, Result};
