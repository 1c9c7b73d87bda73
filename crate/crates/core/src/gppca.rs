//! Shared-covariance generalized probabilistic PCA.
//!
//! Model: `Y = A Z + E` with `Y` of size n₁ × n₂, orthonormal loadings `A` (n₁ × d),
//! independent factor rows `Z_l ~ N(0, Σ)` and white noise of variance σ₀².

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::dense_gp::{build_correlation, cholesky, log_det, KernelSpec};
use crate::error::{Error, Result};

/// `Σ = σ² R(x)` over 1-D factor inputs; the kernel's nugget is ignored.
pub fn shared_covariance(kernel: &KernelSpec, inputs: &[f64]) -> Result<DMatrix<f64>> {
    if kernel.input_dim() != 1 {
        return Err(Error::Dimension("factor covariance needs a one-dimensional kernel".into()));
    }
    let x = DMatrix::from_column_slice(inputs.len(), 1, inputs);
    Ok(build_correlation(kernel, &x)? * kernel.variance)
}

fn check_shapes(y: &DMatrix<f64>, sigma: &DMatrix<f64>, noise_var: f64) -> Result<()> {
    if sigma.shape() != (y.ncols(), y.ncols()) {
        return Err(Error::Dimension(format!(
            "covariance is {:?} but the data have {} columns",
            sigma.shape(),
            y.ncols()
        )));
    }
    if !(noise_var >= 0.0 && noise_var.is_finite()) {
        return Err(Error::Domain(format!("noise variance must be non-negative, got {noise_var}")));
    }
    Ok(())
}

fn check_orthonormal(a: &DMatrix<f64>) -> Result<()> {
    let gram = a.transpose() * a;
    let err = (gram - DMatrix::identity(a.ncols(), a.ncols())).amax();
    if err > 1e-8 {
        return Err(Error::Precondition(format!("loadings are not orthonormal (max |AᵀA − I| = {err:e})")));
    }
    Ok(())
}

/// `Σ (Σ + σ₀² I)⁻¹`, which equals `(σ₀² Σ⁻¹ + I)⁻¹` without inverting `Σ`.
fn shrinkage(sigma: &DMatrix<f64>, noise_var: f64) -> Result<DMatrix<f64>> {
    let n = sigma.nrows();
    let chol = cholesky(sigma + DMatrix::identity(n, n) * noise_var, "factor covariance plus noise")?;
    let m = chol.solve(sigma).transpose();
    Ok((&m + m.transpose()) * 0.5)
}

/// Maximum-marginal-likelihood loadings: the leading `d` eigenvectors of
/// `G = Y Σ (Σ + σ₀² I)⁻¹ Yᵀ`.
///
/// Columns are ordered by eigenvalue and signed so their largest entry is positive.
pub fn gppca_shared(y: &DMatrix<f64>, sigma: &DMatrix<f64>, noise_var: f64, d: usize) -> Result<DMatrix<f64>> {
    check_shapes(y, sigma, noise_var)?;
    let (n1, n2) = y.shape();
    if d == 0 || d > n1.min(n2) {
        return Err(Error::Precondition(format!("need 1 ≤ d ≤ min(n₁, n₂) = {}, got {d}", n1.min(n2))));
    }
    cholesky(sigma.clone(), "factor covariance")?;
    let g = y * shrinkage(sigma, noise_var)? * y.transpose();
    let g = (&g + g.transpose()) * 0.5;
    let eig = g.symmetric_eigen();
    if !eig.eigenvalues.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("eigen-decomposition produced non-finite values".into()));
    }
    let mut order: Vec<usize> = (0..n1).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut a = DMatrix::zeros(n1, d);
    for (c, &k) in order.iter().take(d).enumerate() {
        let mut col = eig.eigenvectors.column(k).into_owned();
        let pivot = col.iamax();
        if col[pivot] < 0.0 {
            col = -col;
        }
        a.set_column(c, &col);
    }
    Ok(a)
}

/// Posterior mean and covariance of the factor row `Z_l` given `Y` and its loading `a_l`.
pub fn factor_posterior(
    y: &DMatrix<f64>,
    a_l: &DVector<f64>,
    sigma: &DMatrix<f64>,
    noise_var: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_shapes(y, sigma, noise_var)?;
    if a_l.len() != y.nrows() {
        return Err(Error::Dimension(format!("loading has {} entries for {} rows", a_l.len(), y.nrows())));
    }
    let n2 = y.ncols();
    let chol = cholesky(sigma + DMatrix::identity(n2, n2) * noise_var, "factor covariance plus noise")?;
    let y_proj = y.transpose() * a_l;
    let mean = sigma * chol.solve(&y_proj);
    let cov = sigma - sigma * chol.solve(sigma);
    Ok((mean, (&cov + cov.transpose()) * 0.5))
}

/// Log marginal likelihood at orthonormal loadings `A`.
///
/// The complement projections only enter through `‖Y‖²_F − ‖YᵀA‖²_F`, so no basis for the
/// orthogonal complement is needed.
pub fn marginal_likelihood_shared(y: &DMatrix<f64>, a: &DMatrix<f64>, sigma: &DMatrix<f64>, noise_var: f64) -> Result<f64> {
    check_shapes(y, sigma, noise_var)?;
    if a.nrows() != y.nrows() {
        return Err(Error::Dimension(format!("loadings have {} rows for {} data rows", a.nrows(), y.nrows())));
    }
    check_orthonormal(a)?;
    let (n1, n2) = y.shape();
    let d = a.ncols();
    if noise_var == 0.0 && n1 > d {
        return Err(Error::Domain("zero noise makes the complement density degenerate".into()));
    }
    let chol = cholesky(sigma + DMatrix::identity(n2, n2) * noise_var, "factor covariance plus noise")?;
    let projected = y.transpose() * a;
    let ld = log_det(&chol);
    let mut ll = 0.0;
    for l in 0..d {
        let yl = projected.column(l).into_owned();
        ll -= 0.5 * (n2 as f64 * (2.0 * PI).ln() + ld + yl.dot(&chol.solve(&yl)));
    }
    let m = (n1 - d) as f64;
    if m > 0.0 {
        let resid = (y.norm_squared() - projected.norm_squared()).max(0.0);
        ll -= 0.5 * (m * n2 as f64 * (2.0 * PI * noise_var).ln() + resid / noise_var);
    }
    Ok(ll)
}

/// Principal angles (radians, ascending) between the column spans of two matrices with
/// orthonormal columns.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::Dimension(format!("bases live in R^{} and R^{}", a.nrows(), b.nrows())));
    }
    check_orthonormal(a)?;
    check_orthonormal(b)?;
    let sv = (a.transpose() * b).singular_values();
    let mut angles: Vec<f64> = sv.iter().map(|s| s.clamp(-1.0, 1.0).acos()).collect();
    angles.sort_by(f64::total_cmp);
    Ok(angles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense_gp::KernelFamily;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    fn orthonormal(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        gaussian(rng, r, c).qr().q()
    }

    fn toy_sigma(n2: usize) -> DMatrix<f64> {
        let k = KernelSpec::one_dim(KernelFamily::Matern52, 0.3, 1.5, 0.0).unwrap();
        let x: Vec<f64> = (0..n2).map(|t| t as f64 / n2 as f64).collect();
        shared_covariance(&k, &x).unwrap()
    }

    /// Covariance of `vec(Y)` (column-major) under loadings `a`.
    fn vec_cov(a: &DMatrix<f64>, sigma: &DMatrix<f64>, s02: f64) -> DMatrix<f64> {
        let (n1, n2) = (a.nrows(), sigma.nrows());
        let aat = a * a.transpose();
        DMatrix::from_fn(n1 * n2, n1 * n2, |p, q| {
            let (t, i, s, j) = (p / n1, p % n1, q / n1, q % n1);
            aat[(i, j)] * sigma[(t, s)] + if p == q { s02 } else { 0.0 }
        })
    }

    #[test]
    fn white_factors_reduce_to_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = gaussian(&mut rng, 5, 8);
        let a = gppca_shared(&y, &DMatrix::identity(8, 8), 1e-12, 2).unwrap();
        let svd = y.clone().svd(true, false);
        let mut idx: Vec<usize> = (0..5).collect();
        idx.sort_by(|&p, &q| svd.singular_values[q].total_cmp(&svd.singular_values[p]));
        let u = svd.u.unwrap();
        let u2 = DMatrix::from_columns(&[u.column(idx[0]).into_owned(), u.column(idx[1]).into_owned()]);
        let overlap = (a.transpose() * u2).svd(false, false).singular_values;
        assert!(overlap.iter().all(|s| (s - 1.0).abs() < 1e-8));
    }

    #[test]
    fn full_rank_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sigma = toy_sigma(6);
        let a = gppca_shared(&gaussian(&mut rng, 4, 6), &sigma, 0.1, 4).unwrap();
        assert!((a.transpose() * &a - DMatrix::identity(4, 4)).amax() < 1e-10);
        assert!((&a * a.transpose() - DMatrix::identity(4, 4)).amax() < 1e-10);
        assert!(gppca_shared(&gaussian(&mut rng, 4, 6), &sigma, 0.1, 5).is_err());
    }

    #[test]
    fn posterior_matches_joint_conditioning() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n1, n2, d, s02) = (4, 6, 2, 0.2);
        let sigma = toy_sigma(n2);
        let a = orthonormal(&mut rng, n1, d);
        let y = gaussian(&mut rng, n1, n2);
        // Stacked latent vector: index l·n₂ + t.
        let cross = DMatrix::from_fn(d * n2, n1 * n2, |p, q| {
            let (l, t, s, i) = (p / n2, p % n2, q / n1, q % n1);
            a[(i, l)] * sigma[(t, s)]
        });
        let chol = vec_cov(&a, &sigma, s02).cholesky().unwrap();
        let yv = DVector::from_column_slice(y.as_slice());
        let mean = &cross * chol.solve(&yv);
        let prior = DMatrix::from_fn(d * n2, d * n2, |p, q| if p / n2 == q / n2 { sigma[(p % n2, q % n2)] } else { 0.0 });
        let cov = prior - &cross * chol.solve(&cross.transpose());
        for l in 0..d {
            let (m, c) = factor_posterior(&y, &a.column(l).into_owned(), &sigma, s02).unwrap();
            assert!((mean.rows(l * n2, n2) - m).amax() < 1e-10);
            assert!((cov.view((l * n2, l * n2), (n2, n2)) - c).amax() < 1e-10);
        }
        assert!(cov.view((0, n2), (n2, n2)).amax() < 1e-9);
    }

    #[test]
    fn posterior_limits() {
        let sigma = toy_sigma(5);
        let a = DVector::from_column_slice(&[1.0, 0.0, 0.0]);
        let (m, _) = factor_posterior(&DMatrix::zeros(3, 5), &a, &sigma, 0.1).unwrap();
        assert_eq!(m, DVector::zeros(5));
        let y = DMatrix::from_fn(3, 5, |i, t| (i + t) as f64);
        let (m, c) = factor_posterior(&y, &a, &sigma, 1e12).unwrap();
        assert!(m.amax() < 1e-9);
        assert!((c - &sigma).amax() < 1e-9);
    }

    #[test]
    fn likelihood_matches_vectorised_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n1, n2) = (3, 4);
        let sigma = toy_sigma(n2);
        let y = gaussian(&mut rng, n1, n2);
        for d in [1, 2, 3] {
            let a = orthonormal(&mut rng, n1, d);
            let s02 = 0.3;
            let cov = vec_cov(&a, &sigma, s02);
            let chol = cov.cholesky().unwrap();
            let yv = DVector::from_column_slice(y.as_slice());
            let dense = -0.5 * ((n1 * n2) as f64 * (2.0 * PI).ln() + log_det(&chol) + yv.dot(&chol.solve(&yv)));
            let got = marginal_likelihood_shared(&y, &a, &sigma, s02).unwrap();
            assert!((got - dense).abs() < 1e-10, "d = {d}: {got} vs {dense}");
        }
        let a = orthonormal(&mut rng, n1, 1);
        assert!(matches!(marginal_likelihood_shared(&y, &a, &sigma, 0.0), Err(Error::Domain(_))));
        assert!(marginal_likelihood_shared(&y, &(a * 2.0), &sigma, 0.1).is_err());
    }

    #[test]
    fn likelihood_ignores_rotations_of_the_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n1, n2, d) = (5, 7, 2);
        let sigma = toy_sigma(n2);
        let basis = orthonormal(&mut rng, n1, n1);
        let a = basis.columns(0, d).into_owned();
        let c = basis.columns(d, n1 - d).into_owned();
        let rot = orthonormal(&mut rng, n1 - d, n1 - d);
        // Q = AAᵀ + C R Cᵀ fixes span(A) and rotates its complement.
        let q = &a * a.transpose() + &c * rot * c.transpose();
        let y = gaussian(&mut rng, n1, n2);
        let base = marginal_likelihood_shared(&y, &a, &sigma, 0.4).unwrap();
        let moved = marginal_likelihood_shared(&(q * &y), &a, &sigma, 0.4).unwrap();
        assert!((base - moved).abs() < 1e-9);
    }

    #[test]
    fn principal_angles_of_known_planes() {
        let a = DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 0.0]);
        let t = 0.3f64;
        let b = DMatrix::from_row_slice(3, 1, &[t.cos(), t.sin(), 0.0]);
        let ang = principal_angles(&a, &b).unwrap();
        assert!((ang[0] - t).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = orthonormal(&mut rng, 6, 3);
        let rot = orthonormal(&mut rng, 3, 3);
        assert!(principal_angles(&q, &(&q * rot)).unwrap().iter().all(|v| v.abs() < 1e-7));
        assert!(principal_angles(&a, &(b * 2.0)).is_err());
    }
}
