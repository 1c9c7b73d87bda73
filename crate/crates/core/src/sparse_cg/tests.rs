use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::particles::{velocity_field, OpinionDynamics};

/// Dense model built pair-by-pair with no tie merging: one column of `U` per pair.
struct DenseOracle {
    u: DMatrix<f64>,
    d: Vec<f64>,
    gamma: f64,
}

impl DenseOracle {
    fn new(frames: &[DMatrix<f64>], gamma: f64) -> Self {
        let (n, dim) = frames[0].shape();
        let nobs = frames.len() * n * dim;
        let mut cols = Vec::new();
        let mut d = Vec::new();
        for (f, x) in frames.iter().enumerate() {
            for a in 0..n {
                for b in a + 1..n {
                    let dist = (x.row(a) - x.row(b)).norm();
                    if dist == 0.0 {
                        continue;
                    }
                    let mut col = DVector::zeros(nobs);
                    for j in 0..dim {
                        col[f * n * dim + j * n + a] = x[(b, j)] - x[(a, j)];
                        col[f * n * dim + j * n + b] = x[(a, j)] - x[(b, j)];
                    }
                    cols.push(col);
                    d.push(dist);
                }
            }
        }
        DenseOracle { u: DMatrix::from_columns(&cols), d, gamma }
    }

    fn r(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.d.len(), self.d.len(), |a, b| (-(self.d[a] - self.d[b]).abs() / self.gamma).exp())
    }

    fn rv(&self, eta: f64) -> DMatrix<f64> {
        let n = self.u.nrows();
        &self.u * self.r() * self.u.transpose() + DMatrix::identity(n, n) * eta
    }

    fn r_star(&self, x: f64) -> DVector<f64> {
        DVector::from_iterator(self.d.len(), self.d.iter().map(|d| (-(d - x).abs() / self.gamma).exp()))
    }

    /// `(mean, 1 − rᵀUᵀR̃⁻¹Ur)` per test point.
    fn predict(&self, eta: f64, v: &[f64], d_star: &[f64]) -> Vec<(f64, f64)> {
        let chol = self.rv(eta).cholesky().unwrap();
        let z = chol.solve(&DVector::from_column_slice(v));
        d_star
            .iter()
            .map(|&x| {
                let ur = &self.u * self.r_star(x);
                ((ur.transpose() * &z)[0], 1.0 - ur.dot(&chol.solve(&ur)))
            })
            .collect()
    }
}

fn random_frames(rng: &mut ChaCha8Rng, n: usize, frames: usize, dim: usize) -> Vec<DMatrix<f64>> {
    (0..frames)
        .map(|_| DMatrix::from_fn(n, dim, |_, _| rng.random::<f64>() * 3.0))
        .collect()
}

fn random_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

fn tight(gamma: f64, eta: f64) -> EstimatorConfig {
    EstimatorConfig {
        gamma,
        eta,
        sigma2: Some(1.0),
        tol: 1e-13,
        max_iter: 5000,
    }
}

#[test]
fn u_times_kernel_values_is_the_velocity_field() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let frames = random_frames(&mut rng, 7, 2, 2);
    let idx = DistanceIndex::from_frames(&frames, 1.0).unwrap();
    let phi: Vec<f64> = idx.d_s.iter().map(|&d| phi_od(d)).collect();
    let v = idx.apply_u(&phi).unwrap();
    for (f, x) in frames.iter().enumerate() {
        let want = velocity_field(x, &OpinionDynamics);
        for j in 0..2 {
            for i in 0..7 {
                assert!((v[f * 14 + j * 7 + i] - want[(i, j)]).abs() < 1e-12);
            }
        }
    }
}

use crate::particles::phi_od;

#[test]
fn single_pair_transpose_by_hand() {
    let x = DMatrix::from_row_slice(2, 1, &[1.0, 3.5]);
    let idx = DistanceIndex::from_frames(&[x], 5.0).unwrap();
    // (x₂ − x₁)(z₁ − z₂)
    assert_eq!(idx.apply_ut(&[0.3, -0.2]).unwrap(), vec![2.5 * 0.5]);
}

#[test]
fn sparse_operators_match_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (n, f, dim) in [(4, 1, 2), (6, 3, 3), (3, 2, 1)] {
        let frames = random_frames(&mut rng, n, f, dim);
        let idx = DistanceIndex::from_frames(&frames, 1.7).unwrap();
        let oracle = DenseOracle::new(&frames, 1.7);
        let z = random_vec(&mut rng, idx.num_observations());
        let dense_ut = oracle.u.transpose() * DVector::from_column_slice(&z);
        let g1 = idx.apply_ut(&z).unwrap();
        // Without ties each pair owns its own rank, in distance order.
        let mut order: Vec<usize> = (0..oracle.d.len()).collect();
        order.sort_by(|&a, &b| oracle.d[a].total_cmp(&oracle.d[b]));
        for (r, &c) in order.iter().enumerate() {
            assert!((g1[r] - dense_ut[c]).abs() < 1e-12);
        }
        let round = idx.apply_u(&g1).unwrap();
        let dense_round = &oracle.u * &dense_ut;
        for k in 0..z.len() {
            assert!((round[k] - dense_round[k]).abs() < 1e-10);
        }
    }
}

#[test]
fn cg_recovers_a_known_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let frames = random_frames(&mut rng, 5, 2, 2);
    let cfg = tight(2.0, 1e-3);
    let idx = DistanceIndex::from_frames(&frames, 2.0).unwrap();
    let mut e1 = vec![0.0; idx.num_observations()];
    e1[0] = 1.0;
    let rhs = apply_rv(&idx, cfg.eta, &e1).unwrap();
    let sol = cg_solve(&idx, &cfg, &rhs).unwrap();
    for (a, b) in sol.x.iter().zip(&e1) {
        assert!((a - b).abs() < 1e-8);
    }
    let dense = DenseOracle::new(&frames, 2.0).rv(cfg.eta).cholesky().unwrap().solve(&DVector::from_column_slice(&rhs));
    for (a, b) in sol.x.iter().zip(dense.iter()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn mismatched_range_is_rejected() {
    let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let idx = DistanceIndex::from_frames(&[x], 1.0).unwrap();
    assert!(matches!(cg_solve(&idx, &tight(2.0, 0.1), &[1.0, 0.0]), Err(Error::Config(_))));
}

#[test]
fn zero_velocities_give_prior() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let frames = random_frames(&mut rng, 4, 1, 2);
    let idx = DistanceIndex::from_frames(&frames, 1.0).unwrap();
    let est = predict_phi(&idx, &tight(1.0, 0.01), &[0.0; 8], &[0.0, 0.5, 4.0], true).unwrap();
    assert!(est.mean.iter().all(|m| *m == 0.0));
    let var = est.variance.unwrap();
    assert!(var.iter().all(|v| *v >= 0.0 && *v <= 1.0));
}

#[test]
fn fast_mean_matches_direct_sum() {
    let d = vec![0.1, 0.4, 0.45, 1.2, 3.0];
    let w = vec![0.3, -1.0, 2.0, 0.7, -0.4];
    let gamma = 0.8;
    let s = ExpSum::new(&d, &correlation_steps(&d, gamma), &w, gamma);
    for x in [0.0, 0.1, 0.42, 1.2, 2.0, 3.0, 7.0] {
        let direct: f64 = d.iter().zip(&w).map(|(di, wi)| (-(di - x).abs() / gamma).exp() * wi).sum();
        assert!((s.eval(x) - direct).abs() < 1e-14);
    }
}

#[test]
fn tied_distances_match_unmerged_oracle() {
    // A square plus its centre: many equal distances.
    let x = DMatrix::from_row_slice(5, 2, &[0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.5, 0.5]);
    let idx = DistanceIndex::from_frames(std::slice::from_ref(&x), 1.5).unwrap();
    assert_eq!(idx.num_unique(), 3);
    let v = velocity_field(&x, &OpinionDynamics);
    let v = v.as_slice().to_vec();
    let cfg = tight(1.5, 1e-2);
    let d_star = [0.2, 0.7071, 1.0, 1.3];
    let est = predict_phi(&idx, &cfg, &v, &d_star, true).unwrap();
    let want = DenseOracle::new(&[x], 1.5).predict(cfg.eta, &v, &d_star);
    let var = est.variance.unwrap();
    for k in 0..d_star.len() {
        assert!((est.mean[k] - want[k].0).abs() < 1e-8);
        assert!((var[k] - want[k].1).abs() < 1e-8);
    }
}

#[test]
fn dense_reference_matches_unmerged_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let frames = random_frames(&mut rng, 5, 2, 2);
    let cfg = tight(1.7, 0.02);
    let idx = DistanceIndex::from_frames(&frames, cfg.gamma).unwrap();
    let v = random_vec(&mut rng, idx.num_observations());
    let d_star = [0.0, 0.5, 1.9, 4.0];
    let got = predict_phi_dense(&idx, &cfg, &v, &d_star).unwrap();
    let want = DenseOracle::new(&frames, cfg.gamma).predict(cfg.eta, &v, &d_star);
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w.0).abs() < 1e-9, "{g} vs {}", w.0);
    }
    assert!(predict_phi_dense(&idx, &cfg, &v[1..], &d_star).is_err());
}

#[test]
fn nrmse_definition() {
    let grid = linspace(0.0, 1.5, 100);
    let truth: Vec<f64> = grid.iter().map(|&d| phi_od(d)).collect();
    let exact = KernelEstimate {
        d_star: grid.clone(),
        mean: truth.clone(),
        variance: None,
        cg_iterations: 0,
        cg_residual: 0.0,
        max_variance_iterations: 0,
    };
    assert_eq!(nrmse(std::slice::from_ref(&exact), &OpinionDynamics).unwrap(), 0.0);
    let mean = truth.iter().sum::<f64>() / 100.0;
    let sd = (truth.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / 100.0).sqrt();
    let shifted = KernelEstimate {
        mean: truth.iter().map(|t| t + sd).collect(),
        ..exact
    };
    assert!((nrmse(&[shifted], &OpinionDynamics).unwrap() - 1.0).abs() < 1e-12);
    let flat = KernelEstimate {
        d_star: vec![2.0, 3.0],
        mean: vec![0.0, 0.0],
        variance: None,
        cg_iterations: 0,
        cg_residual: 0.0,
        max_variance_iterations: 0,
    };
    assert!(matches!(nrmse(&[flat], &OpinionDynamics), Err(Error::Domain(_))));
}

fn system() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (2usize..=10, 1usize..=9, 1usize..=3, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matrix_free_operator_matches_dense((n, f, dim, seed) in system(), gamma in 0.3..6.0f64, eta in 0.0..0.1f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = random_frames(&mut rng, n, f, dim);
        let idx = DistanceIndex::from_frames(&frames, gamma).unwrap();
        let dense = DenseOracle::new(&frames, gamma).rv(eta);
        let z = random_vec(&mut rng, idx.num_observations());
        let w = random_vec(&mut rng, idx.num_observations());
        let got = apply_rv(&idx, eta, &z).unwrap();
        let stepwise = apply_rv_stepwise(&idx, eta, &z).unwrap();
        let want = &dense * DVector::from_column_slice(&z);
        for k in 0..z.len() {
            prop_assert!((got[k] - want[k]).abs() < 1e-9, "entry {k}: {} vs {}", got[k], want[k]);
            prop_assert!((stepwise[k] - want[k]).abs() < 1e-9);
        }
        let zw: f64 = z.iter().zip(apply_rv(&idx, eta, &w).unwrap()).map(|(a, b)| a * b).sum();
        let wz: f64 = w.iter().zip(&got).map(|(a, b)| a * b).sum();
        prop_assert!((zw - wz).abs() < 1e-9 * (1.0 + zw.abs()));
        let zz: f64 = z.iter().zip(&got).map(|(a, b)| a * b).sum();
        prop_assert!(eta == 0.0 || zz > 0.0);
    }

    #[test]
    fn prediction_matches_dense((n, f, dim, seed) in (2usize..=6, 1usize..=3, 1usize..=3, any::<u64>())) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = random_frames(&mut rng, n, f, dim);
        let cfg = tight(1.3, 0.05);
        let idx = DistanceIndex::from_frames(&frames, cfg.gamma).unwrap();
        let v = random_vec(&mut rng, idx.num_observations());
        let d_star = [0.0, 0.3, 1.1, 2.5, 6.0];
        let est = predict_phi(&idx, &cfg, &v, &d_star, true).unwrap();
        let want = DenseOracle::new(&frames, cfg.gamma).predict(cfg.eta, &v, &d_star);
        let var = est.variance.unwrap();
        for k in 0..d_star.len() {
            prop_assert!((est.mean[k] - want[k].0).abs() < 1e-6);
            prop_assert!((var[k] - want[k].1).abs() < 1e-6);
        }
    }

    #[test]
    fn mean_is_linear_in_velocities(seed in any::<u64>(), a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = random_frames(&mut rng, 5, 2, 2);
        let cfg = tight(2.0, 0.01);
        let idx = DistanceIndex::from_frames(&frames, cfg.gamma).unwrap();
        let (v1, v2) = (random_vec(&mut rng, 20), random_vec(&mut rng, 20));
        let mix: Vec<f64> = v1.iter().zip(&v2).map(|(x, y)| a * x + b * y).collect();
        let d = [0.1, 0.9, 2.2];
        let m1 = predict_phi(&idx, &cfg, &v1, &d, false).unwrap().mean;
        let m2 = predict_phi(&idx, &cfg, &v2, &d, false).unwrap().mean;
        let mm = predict_phi(&idx, &cfg, &mix, &d, false).unwrap().mean;
        for k in 0..3 {
            prop_assert!((mm[k] - (a * m1[k] + b * m2[k])).abs() < 1e-8);
        }
    }
}
