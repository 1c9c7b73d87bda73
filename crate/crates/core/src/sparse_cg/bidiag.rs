//! Products with the Cholesky factor of the exponential correlation on sorted inputs.
//!
//! For sorted distances the correlation `R_s` is that of a stationary AR(1) chain, so
//! `R_s = L Lᵀ` where `L⁻¹` is lower bi-diagonal with rows
//! `(−ρ_{k−1}/s_k, 1/s_k)` and `s_k = √(1 − ρ²_{k−1})`, `s_1 = 1`.

use crate::error::{Error, Result};

/// `ρ_k = exp(−(d_{k+1} − d_k)/γ)` for sorted `d`.
pub fn correlation_steps(d_sorted: &[f64], gamma: f64) -> Vec<f64> {
    d_sorted.windows(2).map(|w| (-(w[1] - w[0]) / gamma).exp()).collect()
}

fn check(rho: &[f64]) -> Result<()> {
    if let Some((k, r)) = rho.iter().enumerate().find(|(_, r)| !(**r >= 0.0 && **r < 1.0)) {
        return Err(Error::Precondition(format!(
            "correlation step {k} equals {r}; merge tied distances before factorising"
        )));
    }
    Ok(())
}

#[inline]
fn scale(rho: &[f64], k: usize) -> f64 {
    if k == 0 {
        1.0
    } else {
        (1.0 - rho[k - 1] * rho[k - 1]).sqrt()
    }
}

/// `g₂ = Lᵀ g₁` by a backward sweep.
///
/// Written as `h_k = g₁[k] + ρ_k h_{k+1}`, `g₂[k] = s_k h_k`, which avoids dividing by
/// `√(1 − ρ²)` and stays accurate when neighbouring distances nearly coincide.
pub fn solve_upper_bidiagonal(rho: &[f64], g1: &[f64]) -> Result<Vec<f64>> {
    if g1.is_empty() {
        return Ok(Vec::new());
    }
    if rho.len() + 1 != g1.len() {
        return Err(Error::Dimension(format!("{} steps for {} entries", rho.len(), g1.len())));
    }
    check(rho)?;
    Ok(upper_sweep(rho, &innovation_scales(rho), g1))
}

/// `s_k = √(1 − ρ²_{k−1})` with `s_1 = 1`.
pub(crate) fn innovation_scales(rho: &[f64]) -> Vec<f64> {
    std::iter::once(1.0).chain(rho.iter().map(|r| (1.0 - r * r).sqrt())).collect()
}

pub(crate) fn upper_sweep(rho: &[f64], s: &[f64], g1: &[f64]) -> Vec<f64> {
    let n = g1.len();
    let mut out = vec![0.0; n];
    let mut h = g1[n - 1];
    out[n - 1] = s[n - 1] * h;
    for k in (0..n - 1).rev() {
        h = g1[k] + rho[k] * h;
        out[k] = s[k] * h;
    }
    out
}

pub(crate) fn lower_sweep(rho: &[f64], s: &[f64], g2: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g2.len()];
    out[0] = g2[0];
    for k in 1..g2.len() {
        out[k] = rho[k - 1] * out[k - 1] + s[k] * g2[k];
    }
    out
}

/// `g₃ = L g₂` by a forward sweep.
pub fn solve_lower_bidiagonal(rho: &[f64], g2: &[f64]) -> Result<Vec<f64>> {
    if g2.is_empty() {
        return Ok(Vec::new());
    }
    if rho.len() + 1 != g2.len() {
        return Err(Error::Dimension(format!("{} steps for {} entries", rho.len(), g2.len())));
    }
    check(rho)?;
    Ok(lower_sweep(rho, &innovation_scales(rho), g2))
}

/// `(Lᵀ)⁻¹ g`, the upper bi-diagonal system solved by [`solve_upper_bidiagonal`].
pub fn apply_inverse_upper(rho: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    check(rho)?;
    let n = g.len();
    Ok((0..n)
        .map(|i| {
            let next = if i + 1 < n { rho[i] * g[i + 1] / scale(rho, i + 1) } else { 0.0 };
            g[i] / scale(rho, i) - next
        })
        .collect())
}

/// `L⁻¹ g`, the lower bi-diagonal system solved by [`solve_lower_bidiagonal`].
pub fn apply_inverse_lower(rho: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    check(rho)?;
    Ok((0..g.len())
        .map(|k| {
            let prev = if k > 0 { rho[k - 1] * g[k - 1] } else { 0.0 };
            (g[k] - prev) / scale(rho, k)
        })
        .collect())
}

/// Lower bi-diagonal `L̃` with `L̃ L̃ᵀ = R_s⁻¹`, returned as `(diagonal, sub-diagonal)`.
///
/// Column `k < Ñ` carries `1/√(1−ρ_k²)` and `−ρ_k/√(1−ρ_k²)`; the last diagonal is 1.
pub fn precision_factor(rho: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check(rho)?;
    let mut diag: Vec<f64> = rho.iter().map(|r| 1.0 / (1.0 - r * r).sqrt()).collect();
    diag.push(1.0);
    let sub = rho.iter().map(|r| -r / (1.0 - r * r).sqrt()).collect();
    Ok((diag, sub))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn dense_r(d: &[f64], gamma: f64) -> DMatrix<f64> {
        DMatrix::from_fn(d.len(), d.len(), |a, b| (-(d[a] - d[b]).abs() / gamma).exp())
    }

    fn sorted(v: Vec<f64>) -> Vec<f64> {
        let mut v = v;
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    #[test]
    fn single_entry_is_identity() {
        assert_eq!(solve_upper_bidiagonal(&[], &[2.5]).unwrap(), vec![2.5]);
        assert_eq!(solve_lower_bidiagonal(&[], &[2.5]).unwrap(), vec![2.5]);
    }

    #[test]
    fn three_by_three_matches_cholesky() {
        let rho = [0.5, 0.5];
        let r = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.25, 0.5, 1.0, 0.5, 0.25, 0.5, 1.0]);
        let l = r.clone().cholesky().unwrap().unpack();
        let g = DVector::from_column_slice(&[0.3, -1.2, 2.0]);
        let got = solve_upper_bidiagonal(&rho, g.as_slice()).unwrap();
        let want = l.transpose() * &g;
        for k in 0..3 {
            assert!((got[k] - want[k]).abs() < 1e-14);
        }
        let got3 = solve_lower_bidiagonal(&rho, &got).unwrap();
        let want3 = &r * &g;
        for k in 0..3 {
            assert!((got3[k] - want3[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_unit_correlation() {
        let err = solve_upper_bidiagonal(&[0.2, 1.0], &[1.0, 2.0, 3.0]).unwrap_err();
        assert!(matches!(err, Error::Precondition(m) if m.contains("merge")));
        assert!(solve_lower_bidiagonal(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_in_zero_out() {
        let rho = correlation_steps(&[0.1, 0.4, 0.5, 2.0], 1.3);
        assert!(solve_upper_bidiagonal(&rho, &[0.0; 4]).unwrap().iter().all(|v| *v == 0.0));
    }

    proptest! {
        #[test]
        fn composition_is_correlation_product(raw in prop::collection::vec(0.0..10.0f64, 2..50), gamma in 0.3..8.0f64, seed in 0u64..1000) {
            let d = sorted(raw);
            let n = d.len();
            let rho = correlation_steps(&d, gamma);
            let g: Vec<f64> = (0..n).map(|k| ((k as u64 * 7919 + seed) % 97) as f64 / 48.5 - 1.0).collect();
            let g2 = solve_upper_bidiagonal(&rho, &g).unwrap();
            let g3 = solve_lower_bidiagonal(&rho, &g2).unwrap();
            let want = dense_r(&d, gamma) * DVector::from_column_slice(&g);
            for k in 0..n {
                prop_assert!((g3[k] - want[k]).abs() < 1e-10);
            }
            let back = apply_inverse_upper(&rho, &g2).unwrap();
            let fwd = apply_inverse_lower(&rho, &g3).unwrap();
            for k in 0..n {
                prop_assert!((back[k] - g[k]).abs() < 1e-10 * (1.0 + g[k].abs()));
                prop_assert!((fwd[k] - g2[k]).abs() < 1e-10 * (1.0 + g2[k].abs()));
            }
        }

        #[test]
        fn precision_factor_inverts_correlation(raw in prop::collection::vec(0.0..6.0f64, 2..20), gamma in 0.5..5.0f64) {
            let d = sorted(raw);
            let n = d.len();
            prop_assume!(d.windows(2).all(|w| w[1] - w[0] > 1e-3));
            let rho = correlation_steps(&d, gamma);
            let (diag, sub) = precision_factor(&rho).unwrap();
            let lt = DMatrix::from_fn(n, n, |a, b| if a == b { diag[a] } else if a == b + 1 { sub[b] } else { 0.0 });
            let prec = &lt * lt.transpose();
            let inv = dense_r(&d, gamma).try_inverse().unwrap();
            let scale = inv.amax();
            for a in 0..n {
                for b in 0..n {
                    if a.abs_diff(b) > 1 {
                        prop_assert!(prec[(a, b)] == 0.0);
                    }
                    prop_assert!((prec[(a, b)] - inv[(a, b)]).abs() < 1e-8 * scale.max(1.0));
                }
            }
        }
    }
}
