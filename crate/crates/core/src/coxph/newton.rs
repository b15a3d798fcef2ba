use nalgebra::{DMatrix, DVector};

use crate::coxph::risk::{Derivatives, Order};
use crate::error::FitError;

#[derive(Debug, Clone, Copy)]
pub(crate) struct NewtonSettings {
    pub max_iter: usize,
    /// Converged when the gradient max-norm falls below this.
    pub grad_tol: f64,
    /// Also converged when the Newton step is below `step_tol * (1 + |coef|)`;
    /// zero disables the check.
    pub step_tol: f64,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        NewtonSettings {
            max_iter: 100,
            grad_tol: 1e-8,
            step_tol: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct NewtonResult {
    pub coef: Vec<f64>,
    pub loglik: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum NewtonFailure {
    NotConverged(usize),
    Eval(FitError),
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Solves `(-H) step = g`, falling back to a pseudo-inverse when `-H` is
/// singular (e.g. a covariate constant within the risk sets).
fn newton_step(d: &Derivatives) -> Vec<f64> {
    let p = d.grad.len();
    let neg_h = DMatrix::from_fn(p, p, |i, j| -d.hess[i * p + j]);
    let g = DVector::from_column_slice(&d.grad);
    if let Some(chol) = neg_h.clone().cholesky() {
        return chol.solve(&g).iter().copied().collect();
    }
    let svd = neg_h.svd(true, true);
    let tol = 1e-12 * svd.singular_values.max().max(1e-300);
    match svd.solve(&g, tol) {
        Ok(s) => s.iter().copied().collect(),
        Err(_) => d.grad.clone(),
    }
}

/// Damped Newton ascent with step halving on a concave objective.
pub(crate) fn maximize<F>(
    mut eval: F,
    start: Vec<f64>,
    settings: &NewtonSettings,
) -> Result<NewtonResult, NewtonFailure>
where
    F: FnMut(&[f64], Order) -> Result<Derivatives, FitError>,
{
    let mut coef = start;
    let mut current = eval(&coef, Order::Hessian).map_err(NewtonFailure::Eval)?;
    for iter in 0..=settings.max_iter {
        let grad_norm = max_abs(&current.grad);
        if grad_norm < settings.grad_tol {
            return Ok(NewtonResult {
                coef,
                loglik: current.loglik,
                grad_norm,
                iterations: iter,
            });
        }
        if iter == settings.max_iter {
            break;
        }
        let step = newton_step(&current);
        if settings.step_tol > 0.0
            && max_abs(&step) < settings.step_tol * (1.0 + max_abs(&coef))
        {
            return Ok(NewtonResult {
                coef,
                loglik: current.loglik,
                grad_norm,
                iterations: iter,
            });
        }
        let slack = 1e-12 * (1.0 + current.loglik.abs());
        // The full step is usually accepted, so try it with derivatives and
        // only fall back to value-only evaluations while halving.
        let full: Vec<f64> = coef.iter().zip(&step).map(|(c, s)| c + s).collect();
        match eval(&full, Order::Hessian) {
            Ok(v) if v.loglik.is_finite() && v.loglik >= current.loglik - slack => {
                coef = full;
                current = v;
                continue;
            }
            _ => {}
        }
        let mut t = 0.5;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = coef.iter().zip(&step).map(|(c, s)| c + t * s).collect();
            match eval(&trial, Order::Value) {
                Ok(v) if v.loglik.is_finite() && v.loglik >= current.loglik - slack => {
                    accepted = Some(trial);
                    break;
                }
                _ => t *= 0.5,
            }
        }
        match accepted {
            Some(trial) => {
                coef = trial;
                current = eval(&coef, Order::Hessian).map_err(NewtonFailure::Eval)?;
            }
            None => break,
        }
    }
    Err(NewtonFailure::NotConverged(settings.max_iter))
}
