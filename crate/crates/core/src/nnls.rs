//! Nonnegative least squares and projections onto the constrained basis.

use crate::bspline::{lx_design_matrix, LxBasis};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Lawson–Hanson active-set solution of min ‖Ax − b‖ subject to x ≥ 0.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(Error::Domain(format!("right-hand side has {} rows, matrix has {m}", b.len())));
    }
    let tol = 10.0 * f64::EPSILON * a.norm() * (m.max(n) as f64);
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let max_outer = 3 * n + 10;
    for _ in 0..max_outer {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n).filter(|&j| !passive[j] && w[j] > tol).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else {
            return Ok(x);
        };
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let sub = a.select_columns(&idx);
            let z_sub = sub
                .clone()
                .svd(true, true)
                .solve(b, 1e-12)
                .map_err(|e| Error::Matrix(e.to_string()))?;
            if z_sub.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (k, &i) in idx.iter().enumerate() {
                    x[i] = z_sub[k];
                }
                break;
            }
            // step back toward the feasible region
            let mut step = f64::INFINITY;
            for (k, &i) in idx.iter().enumerate() {
                if z_sub[k] <= 0.0 {
                    step = step.min(x[i] / (x[i] - z_sub[k]));
                }
            }
            for (k, &i) in idx.iter().enumerate() {
                x[i] += step * (z_sub[k] - x[i]);
                if x[i] <= tol {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    Err(Error::Matrix("nonnegative least squares did not converge".into()))
}

/// Least-squares fit of `ys` at working-unit points `ws` by an
/// unconstrained intercept plus nonnegative combination of the basis.
/// Returns the coefficients with the intercept first.
pub fn project(basis: &LxBasis, ws: &[f64], ys: &[f64]) -> Result<Vec<f64>> {
    if ws.len() != ys.len() {
        return Err(Error::Domain("points and values differ in length".into()));
    }
    let x = lx_design_matrix(basis, ws)?;
    let (m, p) = x.shape();
    // intercept as a difference of two nonnegative columns
    let mut a = DMatrix::zeros(m, p + 1);
    a.column_mut(0).copy_from(&x.column(0));
    a.column_mut(1).copy_from(&(-x.column(0)));
    for c in 1..p {
        a.column_mut(c + 1).copy_from(&x.column(c));
    }
    let sol = nnls(&a, &DVector::from_column_slice(ys))?;
    let mut out = Vec::with_capacity(p);
    out.push(sol[0] - sol[1]);
    out.extend(sol.iter().skip(2));
    Ok(out)
}
