//! Levenberg–Marquardt damped least squares on internally scaled
//! parameters.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // unused when std is linked and inherent methods win
use num_traits::Float;

use crate::error::{Error, Result};

/// Residual vector and Jacobian of a least-squares problem.
pub trait LeastSquaresProblem {
    fn n_residuals(&self) -> usize;
    fn n_params(&self) -> usize;
    /// Writes `model − data` for parameters `p`.
    fn residuals(&self, p: &[f64], out: &mut [f64]) -> Result<()>;
    /// Writes `∂r_i/∂p_j` into `jac` (rows = residuals).
    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub max_iter: usize,
    /// Relative cost decrease below which an accepted step ends the search.
    pub ftol: f64,
    /// Largest cosine between the residual and a Jacobian column at a
    /// stationary point.
    pub gtol: f64,
    /// Relative step size below which the search ends.
    pub xtol: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            max_iter: 200,
            ftol: 1e-12,
            gtol: 1e-12,
            xtol: 1e-14,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    pub residuals: Vec<f64>,
    /// Jacobian at the solution in unscaled parameters.
    pub jacobian: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// Minimizes `Σ r²` from `x0`. `scale` gives a typical magnitude per
/// parameter; the solver works on `p / scale`.
pub fn minimize<P: LeastSquaresProblem>(problem: &P, x0: &[f64], scale: &[f64], cfg: &LmConfig) -> Result<LmOutcome> {
    let n = problem.n_params();
    let m = problem.n_residuals();
    assert_eq!(x0.len(), n);
    assert_eq!(scale.len(), n);
    let mut p = x0.to_vec();
    let mut r = vec![0.0; m];
    problem.residuals(&p, &mut r)?;
    let mut cost = sum_sq(&r);
    if !cost.is_finite() {
        return Err(Error::FitDiverged { iterations: 0 });
    }
    let mut jac = DMatrix::zeros(m, n);
    problem.jacobian(&p, &mut jac)?;
    let mut js = scaled(&jac, scale);

    let mut jtj = js.transpose() * &js;
    let tr = jtj.trace();
    if !(tr.is_finite() && tr > 0.0) {
        return Err(Error::IllConditioned { condition: f64::INFINITY });
    }
    let mut lambda = 1e-3 * tr / n as f64;
    let mut trial = vec![0.0; m];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        if cost == 0.0 {
            converged = true;
            break;
        }
        let rv = DVector::from_column_slice(&r);
        let g = js.transpose() * &rv;
        // cosine-type stationarity test, insensitive to the residual level
        let rnorm = cost.sqrt();
        let gmax = (0..n)
            .map(|j| {
                let cn = js.column(j).norm();
                if cn > 0.0 {
                    (g[j] / (cn * rnorm)).abs()
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max);
        if gmax <= cfg.gtol {
            converged = true;
            break;
        }

        let mut accepted = false;
        while !accepted {
            let mut a = jtj.clone();
            for j in 0..n {
                a[(j, j)] += lambda;
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    lambda *= 10.0;
                    if lambda > 1e30 {
                        break;
                    }
                    continue;
                }
            };
            let p_new: Vec<f64> = (0..n).map(|j| p[j] + step[j] * scale[j]).collect();
            let ok = problem.residuals(&p_new, &mut trial).is_ok();
            let new_cost = if ok { sum_sq(&trial) } else { f64::INFINITY };
            if new_cost.is_finite() && new_cost < cost {
                let rel = (cost - new_cost) / cost;
                let xs: f64 = (0..n).map(|j| (p[j] / scale[j]).powi(2)).sum::<f64>().sqrt();
                let small_step = step.norm() <= cfg.xtol * (xs + cfg.xtol);
                p = p_new;
                core::mem::swap(&mut r, &mut trial);
                cost = new_cost;
                problem.jacobian(&p, &mut jac)?;
                js = scaled(&jac, scale);
                jtj = js.transpose() * &js;
                lambda = (lambda / 10.0).max(1e-300);
                accepted = true;
                if rel <= cfg.ftol || small_step {
                    converged = true;
                }
            } else {
                lambda *= 10.0;
                if lambda > 1e30 {
                    break;
                }
            }
        }
        if converged {
            break;
        }
        if !accepted {
            // no descent direction left at working precision
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::FitDiverged { iterations });
    }
    Ok(LmOutcome {
        params: p,
        cost,
        residuals: r,
        jacobian: jac,
        iterations,
        converged,
    })
}

fn scaled(jac: &DMatrix<f64>, scale: &[f64]) -> DMatrix<f64> {
    let mut js = jac.clone();
    for (j, s) in scale.iter().enumerate() {
        js.column_mut(j).scale_mut(*s);
    }
    js
}

/// `(JᵀJ)⁻¹` in unscaled parameters and the condition number of the
/// scaled normal matrix.
pub fn covariance(jac: &DMatrix<f64>, scale: &[f64]) -> (DMatrix<f64>, f64) {
    covariance_against(jac, scale, 0.0)
}

/// As [`covariance`], but the condition number is taken against
/// `max(λ_max, reference)`, so a Jacobian that vanishes as a whole counts
/// as ill-conditioned rather than uniformly small.
pub fn covariance_against(jac: &DMatrix<f64>, scale: &[f64], reference: f64) -> (DMatrix<f64>, f64) {
    let js = scaled(jac, scale);
    let jtj = js.transpose() * &js;
    let eig = jtj.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(reference, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    let n = scale.len();
    let inv = jtj.try_inverse().unwrap_or_else(|| DMatrix::from_element(n, n, f64::INFINITY));
    let mut c = inv;
    for i in 0..n {
        for j in 0..n {
            c[(i, j)] *= scale[i] * scale[j];
        }
    }
    (c, condition)
}
