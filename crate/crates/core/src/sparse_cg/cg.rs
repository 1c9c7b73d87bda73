use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Relative residual `‖b − A x‖ / ‖b‖` tracked by the recursion.
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unpreconditioned conjugate gradients from `x = 0` for a symmetric positive-definite operator.
pub fn conjugate_gradient<F>(apply: F, rhs: &[f64], tol: f64, max_iter: usize) -> Result<CgSolution>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::Config(format!("CG needs tol > 0 and max_iter ≥ 1, got {tol} and {max_iter}")));
    }
    let n = rhs.len();
    let b_norm = dot(rhs, rhs).sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(CgSolution { x, iterations: 0, residual: 0.0 });
    }
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut rel = 1.0;
    for it in 1..=max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Numerical(format!("operator is not positive definite (pᵀAp = {pap}) at CG iteration {it}")));
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = dot(&r, &r).sqrt() / b_norm;
        if rel <= tol {
            return Ok(CgSolution { x, iterations: it, residual: rel });
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: rel,
    })
}
