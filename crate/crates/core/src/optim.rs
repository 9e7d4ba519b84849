//! Quasi-Newton minimization with analytic gradients.
//!
//! BFGS on the inverse Hessian with Armijo backtracking. The objective
//! returns `None` for points where it is not finite; the line search treats
//! those as rejected steps, which is how likelihood overflow regions are
//! dodged without special-casing callers.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone)]
pub struct OptimSettings {
    /// Convergence: infinity norm of the gradient.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Line search shrink factor and maximum trials.
    pub backtrack: f64,
    pub max_line_search: usize,
}

impl Default for OptimSettings {
    fn default() -> Self {
        Self {
            grad_tol: 1e-5,
            max_iter: 500,
            backtrack: 0.5,
            max_line_search: 60,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("objective is not finite at the start point")]
    BadStart,
    #[error("line search failed to find a finite improving step")]
    LineSearchFailed,
}

const ARMIJO_C1: f64 = 1e-4;

/// Minimizes `f` from `x0`. `f` returns the value and gradient, or `None`
/// where the objective is undefined.
#[allow(clippy::type_complexity)]
pub fn minimize<F>(mut f: F, x0: &[f64], settings: &OptimSettings) -> Result<Solution, OptimError>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let (mut fx, g0) = f(x.as_slice()).ok_or(OptimError::BadStart)?;
    let mut g = DVector::from_vec(g0);
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut converged = g.amax() <= settings.grad_tol;
    let mut iterations = 0;

    while !converged && iterations < settings.max_iter {
        iterations += 1;
        let mut direction = -(&h_inv * &g);
        let mut slope = direction.dot(&g);
        if slope.is_nan() || slope >= 0.0 {
            // Not a descent direction; restart from steepest descent.
            h_inv = DMatrix::identity(n, n);
            direction = -g.clone();
            slope = direction.dot(&g);
            if slope.is_nan() || slope >= 0.0 {
                break;
            }
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..settings.max_line_search {
            let candidate = &x + alpha * &direction;
            if let Some((f_new, g_new)) = f(candidate.as_slice()) {
                if f_new.is_finite()
                    && g_new.iter().all(|v| v.is_finite())
                    && f_new <= fx + ARMIJO_C1 * alpha * slope
                {
                    accepted = Some((candidate, f_new, DVector::from_vec(g_new)));
                    break;
                }
            }
            alpha *= settings.backtrack;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            // No finite improving step left in this direction.
            break;
        };

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            // BFGS inverse update; skipped when curvature is unusable.
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            let ss = &s * s.transpose();
            let hys = &hy * s.transpose();
            h_inv = &h_inv + (sy + yhy) * rho * rho * &ss - rho * (&hys + hys.transpose());
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        converged = g.amax() <= settings.grad_tol;
    }

    Ok(Solution {
        x,
        value: fx,
        gradient: g,
        iterations,
        converged,
    })
}

/// Central-difference Hessian of `f` built from its analytic gradient.
pub fn numeric_hessian<F>(mut grad: F, x: &[f64]) -> Option<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Option<Vec<f64>>,
{
    let n = x.len();
    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut point = x.to_vec();
    for i in 0..n {
        let step = 6e-6 * x[i].abs().max(1.0);
        point[i] = x[i] + step;
        let g_plus = grad(&point)?;
        point[i] = x[i] - step;
        let g_minus = grad(&point)?;
        point[i] = x[i];
        for j in 0..n {
            h[(i, j)] = (g_plus[j] - g_minus[j]) / (2.0 * step);
        }
    }
    // Symmetrize: the two off-diagonal estimates differ by rounding only.
    let ht = h.transpose();
    Some((h + ht) * 0.5)
}

/// Inverts a symmetric positive-definite matrix, escalating a diagonal ridge
/// when the factorization fails.
pub fn invert_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if let Some(chol) = m.clone().cholesky() {
        return Some(chol.inverse());
    }
    let scale = m.diagonal().amax().max(1.0);
    let mut ridge = 1e-10 * scale;
    while ridge <= 1e-2 * scale {
        let jittered = m + DMatrix::identity(m.nrows(), m.ncols()) * ridge;
        if let Some(chol) = jittered.cholesky() {
            return Some(chol.inverse());
        }
        ridge *= 10.0;
    }
    m.clone().try_inverse()
}
