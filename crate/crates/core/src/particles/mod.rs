//! First-order interacting particle systems `ẋᵢ = Σ_{i'≠i} φ(‖xᵢ' − xᵢ‖)(xᵢ' − xᵢ)`.

mod design;
mod kernels;

pub use design::{sample_initial, DesignFamily, InitialDesign};
pub use kernels::{phi_od, phi_truncated_lj, BenchmarkKernel, InteractionKernel, NoInteraction, OpinionDynamics, TruncatedLj, OD_C5, OD_C6};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Pairwise-sum velocity field for an `n × D` position matrix.
pub fn velocity_field(positions: &DMatrix<f64>, phi: &dyn InteractionKernel) -> DMatrix<f64> {
    let (n, dim) = positions.shape();
    let mut v = DMatrix::zeros(n, dim);
    let mut diff = vec![0.0; dim];
    for i in 0..n {
        for ip in 0..n {
            if ip == i {
                continue;
            }
            let mut d2 = 0.0;
            for (j, slot) in diff.iter_mut().enumerate() {
                *slot = positions[(ip, j)] - positions[(i, j)];
                d2 += *slot * *slot;
            }
            let w = phi.phi(d2.sqrt());
            for (j, dj) in diff.iter().enumerate() {
                v[(i, j)] += w * dj;
            }
        }
    }
    v
}

/// Positions and recorded velocities for `M` simulations of `L` frames each.
///
/// Frame `l = 0` is the initial configuration; positions are noise-free while
/// velocities carry additive Gaussian noise of variance `noise_var`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEnsemble {
    pub n: usize,
    pub dim: usize,
    pub num_sims: usize,
    pub num_frames: usize,
    pub dt: f64,
    pub noise_var: f64,
    /// `frames[m * L + l]` holds an `n × D` matrix.
    pub positions: Vec<DMatrix<f64>>,
    pub velocities: Vec<DMatrix<f64>>,
}

impl TrajectoryEnsemble {
    pub fn frame_index(&self, m: usize, l: usize) -> usize {
        m * self.num_frames + l
    }

    pub fn position(&self, m: usize, l: usize) -> &DMatrix<f64> {
        &self.positions[self.frame_index(m, l)]
    }

    pub fn velocity(&self, m: usize, l: usize) -> &DMatrix<f64> {
        &self.velocities[self.frame_index(m, l)]
    }

    pub fn num_frames_total(&self) -> usize {
        self.positions.len()
    }

    /// Number of velocity observations `N = M L n D`.
    pub fn num_observations(&self) -> usize {
        self.positions.len() * self.n * self.dim
    }

    /// Velocities stacked in the order `k = (mL + l)·nD + j·n + i`.
    pub fn velocity_vector(&self) -> DVector<f64> {
        let nd = self.n * self.dim;
        let mut out = DVector::zeros(self.num_observations());
        for (f, v) in self.velocities.iter().enumerate() {
            out.rows_mut(f * nd, nd).copy_from(&DVector::from_column_slice(v.as_slice()));
        }
        out
    }

    /// Joins ensembles that share `n`, `D`, `L`, `Δt` and noise level.
    pub fn concat(parts: Vec<TrajectoryEnsemble>) -> Result<TrajectoryEnsemble> {
        let mut iter = parts.into_iter();
        let mut acc = iter
            .next()
            .ok_or_else(|| Error::Precondition("no trajectories to join".into()))?;
        for p in iter {
            if (p.n, p.dim, p.num_frames) != (acc.n, acc.dim, acc.num_frames) || p.dt != acc.dt || p.noise_var != acc.noise_var {
                return Err(Error::Dimension("trajectory ensembles have mismatched shapes".into()));
            }
            acc.num_sims += p.num_sims;
            acc.positions.extend(p.positions);
            acc.velocities.extend(p.velocities);
        }
        Ok(acc)
    }
}

/// Settings for [`simulate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationConfig {
    pub num_frames: usize,
    pub dt: f64,
    pub noise_var: f64,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            num_frames: 1,
            dt: 0.01,
            noise_var: 0.0,
            seed: 0,
        }
    }
}

fn check_config(cfg: &SimulationConfig) -> Result<()> {
    if cfg.num_frames == 0 {
        return Err(Error::Precondition("need at least one frame".into()));
    }
    if !(cfg.dt > 0.0 && cfg.dt.is_finite()) {
        return Err(Error::Domain(format!("time step must be positive, got {}", cfg.dt)));
    }
    if !(cfg.noise_var >= 0.0 && cfg.noise_var.is_finite()) {
        return Err(Error::Domain(format!("noise variance must be non-negative, got {}", cfg.noise_var)));
    }
    Ok(())
}

/// Euler rollout `x_{l+1} = x_l + Δt v(x_l)`, returning every state `x_0 … x_steps`.
fn rollout(init: &DMatrix<f64>, phi: &dyn InteractionKernel, frames: usize, dt: f64) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    let mut xs = Vec::with_capacity(frames);
    let mut vs = Vec::with_capacity(frames);
    let mut x = init.clone();
    for step in 0..frames {
        let v = velocity_field(&x, phi);
        if !v.iter().all(|e| e.is_finite()) {
            return Err(Error::Numerical(format!("velocity blew up at step {step}")));
        }
        let next = &x + &v * dt;
        if !next.iter().all(|e| e.is_finite()) {
            return Err(Error::Numerical(format!("positions blew up at step {}", step + 1)));
        }
        xs.push(x);
        vs.push(v);
        x = next;
    }
    Ok((xs, vs))
}

/// Simulates one trajectory from `init`, recording `num_frames` noisy velocity snapshots.
pub fn simulate(init: &DMatrix<f64>, phi: &dyn InteractionKernel, cfg: &SimulationConfig) -> Result<TrajectoryEnsemble> {
    check_config(cfg)?;
    if init.nrows() < 2 || init.ncols() == 0 {
        return Err(Error::Precondition("need at least two particles in at least one dimension".into()));
    }
    if !init.iter().all(|e| e.is_finite()) {
        return Err(Error::Domain("initial positions must be finite".into()));
    }
    let (positions, mut velocities) = rollout(init, phi, cfg.num_frames, cfg.dt)?;
    if cfg.noise_var > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let noise = Normal::new(0.0, cfg.noise_var.sqrt()).map_err(|e| Error::Domain(e.to_string()))?;
        for v in velocities.iter_mut() {
            v.iter_mut().for_each(|e| *e += noise.sample(&mut rng));
        }
    }
    Ok(TrajectoryEnsemble {
        n: init.nrows(),
        dim: init.ncols(),
        num_sims: 1,
        num_frames: cfg.num_frames,
        dt: cfg.dt,
        noise_var: cfg.noise_var,
        positions,
        velocities,
    })
}

/// Runs `num_sims` independent simulations, each with its own initial draw and noise stream.
pub fn simulate_ensemble(
    design: &InitialDesign,
    num_sims: usize,
    phi: &dyn InteractionKernel,
    cfg: &SimulationConfig,
) -> Result<TrajectoryEnsemble> {
    if num_sims == 0 {
        return Err(Error::Precondition("need at least one simulation".into()));
    }
    let parts = (0..num_sims)
        .into_par_iter()
        .map(|m| {
            let seed = design.seed.wrapping_add(m as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let init = sample_initial(&InitialDesign { seed, ..design.clone() })?;
            simulate(&init, phi, &SimulationConfig { seed: seed ^ 0xA5A5_A5A5, ..*cfg })
        })
        .collect::<Result<Vec<_>>>()?;
    TrajectoryEnsemble::concat(parts)
}

/// Noise-free rollout of `steps` Euler steps; returns `steps + 1` position frames.
pub fn forecast(init: &DMatrix<f64>, phi: &dyn InteractionKernel, steps: usize, dt: f64) -> Result<Vec<DMatrix<f64>>> {
    check_config(&SimulationConfig {
        num_frames: steps + 1,
        dt,
        noise_var: 0.0,
        seed: 0,
    })?;
    Ok(rollout(init, phi, steps + 1, dt)?.0)
}

/// Mean distance of particles from their centroid.
pub fn spread(positions: &DMatrix<f64>) -> f64 {
    let n = positions.nrows();
    let centroid = positions.row_mean();
    (0..n).map(|i| (positions.row(i) - &centroid).norm()).sum::<f64>() / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn small_config() -> DMatrix<f64> {
        DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.2, 0.3, 1.4, 2.0, 2.1])
    }

    #[test]
    fn zero_kernel_is_stationary() {
        let x = small_config();
        let t = simulate(&x, &NoInteraction, &SimulationConfig { num_frames: 5, ..Default::default() }).unwrap();
        for l in 0..5 {
            assert_eq!(t.position(0, l), &x);
            assert!(t.velocity(0, l).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn two_particles_by_hand() {
        // Constant φ = 1: each particle moves toward the other at rate equal to the gap.
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let t = simulate(&x, &|_d: f64| 1.0, &SimulationConfig { num_frames: 3, dt: 0.1, ..Default::default() }).unwrap();
        assert_relative_eq!(t.velocity(0, 0)[(0, 0)], 1.0);
        assert_relative_eq!(t.position(0, 1)[(0, 0)], 0.1);
        assert_relative_eq!(t.position(0, 1)[(1, 0)], 0.9);
        assert_relative_eq!(t.position(0, 2)[(0, 0)], 0.1 + 0.1 * 0.8, epsilon = 1e-15);
    }

    #[test]
    fn velocity_vector_layout() {
        let x = small_config();
        let cfg = SimulationConfig { num_frames: 2, noise_var: 0.01, seed: 4, ..Default::default() };
        let t = simulate(&x, &TruncatedLj::new(), &cfg).unwrap();
        let v = t.velocity_vector();
        let (n, d) = (4, 2);
        for l in 0..2 {
            for j in 0..d {
                for i in 0..n {
                    assert_eq!(v[l * n * d + j * n + i], t.velocity(0, l)[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn blow_up_reports_step() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let err = simulate(&x, &|_d: f64| 1e300, &SimulationConfig { num_frames: 50, dt: 0.9, ..Default::default() })
            .unwrap_err();
        assert!(matches!(err, Error::Numerical(msg) if msg.contains("step")));
    }

    #[test]
    fn forecast_with_truth_matches_noise_free_simulation() {
        let x = small_config();
        let f = forecast(&x, &OpinionDynamics, 9, 0.01).unwrap();
        let s = simulate(&x, &OpinionDynamics, &SimulationConfig { num_frames: 10, ..Default::default() }).unwrap();
        assert_eq!(f, s.positions);
    }

    #[test]
    fn ensembles_are_reproducible() {
        let d = InitialDesign::new(DesignFamily::Uniform, 10, 2, 3);
        let cfg = SimulationConfig { num_frames: 3, noise_var: 1e-4, seed: 0, ..Default::default() };
        let a = simulate_ensemble(&d, 3, &TruncatedLj::new(), &cfg).unwrap();
        let b = simulate_ensemble(&d, 3, &TruncatedLj::new(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_observations(), 3 * 3 * 10 * 2);
        assert_ne!(a.position(0, 0), a.position(1, 0));
    }

    fn positions(n: usize, d: usize) -> impl Strategy<Value = DMatrix<f64>> {
        prop::collection::vec(-3.0..3.0f64, n * d).prop_map(move |v| DMatrix::from_row_slice(n, d, &v))
    }

    proptest! {
        #[test]
        fn field_is_translation_and_rotation_equivariant(x in positions(6, 2), shift in -5.0..5.0f64, angle in 0.0..6.28f64) {
            let k = OpinionDynamics;
            let v = velocity_field(&x, &k);
            let shifted = x.map(|e| e + shift);
            prop_assert!((velocity_field(&shifted, &k) - &v).norm() < 1e-9);
            let rot = DMatrix::from_row_slice(2, 2, &[angle.cos(), -angle.sin(), angle.sin(), angle.cos()]);
            let vr = velocity_field(&(&x * rot.transpose()), &k);
            prop_assert!((vr - &v * rot.transpose()).norm() < 1e-9);
        }

        #[test]
        fn total_momentum_vanishes(x in positions(7, 3)) {
            let v = velocity_field(&x, &TruncatedLj::new());
            let scale = v.norm().max(1.0);
            for j in 0..3 {
                prop_assert!(v.column(j).sum().abs() < 1e-10 * scale);
            }
        }
    }
}
