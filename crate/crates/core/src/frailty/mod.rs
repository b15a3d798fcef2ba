//! Gamma-frailty EM for a fixed set of change points.
//!
//! Each cluster `m` has an unobserved frailty `v_km ~ Gamma(1/θ_k, 1/θ_k)`
//! in interval `k`, multiplying the hazard. Given the data, `v_km` is again
//! gamma with shape `A_km = 1/θ_k + D_km` and rate `B_km = 1/θ_k + (hazard
//! exposure of cluster m in interval k)`; its posterior mean `A/B` enters the
//! Cox fit as an offset.

mod em;
mod estep;
mod loglik;
pub mod special;
mod theta;

use serde::{Deserialize, Serialize};

pub use em::{em_fit, fit_no_frailty};
pub use estep::e_step;
pub use loglik::{full_loglik, LoglikParts};
pub use theta::{conditional_theta_loglik, m_step_theta};

use crate::coxph::TieMethod;

/// Lower clamp for the frailty variance.
pub const THETA_FLOOR: f64 = 1e-8;
/// Upper search bound for the frailty variance.
pub const THETA_MAX: f64 = 100.0;

/// How the frailty variance is re-estimated.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaUpdate {
    /// Maximise the gamma marginal likelihood of each interval, profiling
    /// out the coefficients, frailties and baseline hazard.
    #[default]
    Marginal,
    /// Alternate E-step, coefficient fit and maximisation of the
    /// conditional likelihood with `v` replaced by `A/B`.
    Conditional,
    /// Hold every `θ_k` at the given value.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub ties: TieMethod,
    pub theta_update: ThetaUpdate,
    /// Stop when `max |Δ| / (|value| + 1e-4)` over all parameters drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Record the full log-likelihood after every EM iteration.
    pub trace: bool,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            ties: TieMethod::default(),
            theta_update: ThetaUpdate::default(),
            tol: 1e-6,
            max_iter: 500,
            trace: false,
        }
    }
}

/// Posterior frailty quantities, indexed `[interval][cluster]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrailtyState {
    pub theta: Vec<f64>,
    /// Shape `A_km = 1/θ_k + D_km`.
    pub a: Vec<Vec<f64>>,
    /// Rate `B_km`.
    pub b: Vec<Vec<f64>>,
    /// Posterior mean `A_km / B_km`.
    pub v_hat: Vec<Vec<f64>>,
    /// Event counts `D_km`.
    pub d: Vec<Vec<usize>>,
}

/// A fitted model for one partition, with or without frailty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub taus: Vec<f64>,
    /// Coefficients per interval.
    pub beta: Vec<Vec<f64>>,
    /// Frailty variance per interval; `None` for the model without frailty.
    pub theta: Option<Vec<f64>>,
    /// Posterior frailty means `[interval][cluster]`.
    pub v_hat: Option<Vec<Vec<f64>>>,
    /// Partial log-likelihood summed over intervals, with `log v̂` offsets.
    pub partial_loglik: f64,
    pub loglik_l1: f64,
    pub loglik_l2: f64,
    pub loglik_total: f64,
    /// Profiled gamma marginal log-likelihood (marginal update only).
    pub marginal_loglik: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Full log-likelihood after each EM iteration, when requested.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[cfg(test)]
mod tests;
