//! Interval-wise Cox partial likelihood with change points.
//!
//! Each interval between change points carries its own coefficient vector.
//! A subject contributes an episode to every interval it is at risk in, and
//! the intervals' partial likelihoods are independent sums, so each interval
//! is maximised on its own.

mod episodes;
mod hazard;
pub(crate) mod newton;
pub(crate) mod risk;

use serde::{Deserialize, Serialize};

pub use episodes::{split_episodes, BoundaryRule, EpisodeRow, EpisodeSet, IntervalPartition};
pub use hazard::CumulativeHazard;

use crate::error::FitError;
use newton::{NewtonFailure, NewtonResult, NewtonSettings};
use risk::{CoxDesign, Order};

/// Handling of tied event times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieMethod {
    /// All tied events share the full risk-set denominator.
    Breslow,
    /// Tied events progressively down-weight the failing subjects.
    #[default]
    Efron,
}

/// `|β_j| · range(x_j)` above this is treated as a diverging coefficient.
const MAX_LINEAR_SPAN: f64 = 15.0;

pub(crate) fn interval_designs(episodes: &EpisodeSet, cluster_columns: bool) -> Vec<CoxDesign> {
    let k = episodes.n_intervals();
    let mut per: Vec<Vec<&EpisodeRow>> = vec![Vec::new(); k];
    for r in &episodes.rows {
        per[r.interval].push(r);
    }
    per.iter()
        .map(|rows| {
            CoxDesign::new(
                rows,
                episodes.n_covariates,
                cluster_columns.then_some(episodes.n_clusters),
            )
        })
        .collect()
}

fn check_shape(episodes: &EpisodeSet, beta: &[Vec<f64>]) -> Result<(), FitError> {
    if beta.len() != episodes.n_intervals() {
        return Err(FitError::Shape(format!(
            "expected {} interval coefficient vectors, got {}",
            episodes.n_intervals(),
            beta.len()
        )));
    }
    if let Some(b) = beta.iter().find(|b| b.len() != episodes.n_covariates) {
        return Err(FitError::Shape(format!(
            "expected {} coefficients per interval, got {}",
            episodes.n_covariates,
            b.len()
        )));
    }
    Ok(())
}

/// Sum over intervals of the Cox partial log-likelihood, using each row's
/// offset. Every interval must contain at least one event.
pub fn partial_loglik(
    episodes: &EpisodeSet,
    beta: &[Vec<f64>],
    ties: TieMethod,
) -> Result<f64, FitError> {
    check_shape(episodes, beta)?;
    let mut total = 0.0;
    for (k, design) in interval_designs(episodes, false).iter().enumerate() {
        if design.n_events == 0 {
            return Err(FitError::EmptyInterval { interval: k });
        }
        total += design.evaluate(&beta[k], ties, Order::Value)?.loglik;
    }
    Ok(total)
}

/// Analytic score of [`partial_loglik`], one vector per interval.
pub fn partial_score(
    episodes: &EpisodeSet,
    beta: &[Vec<f64>],
    ties: TieMethod,
) -> Result<Vec<Vec<f64>>, FitError> {
    check_shape(episodes, beta)?;
    interval_designs(episodes, false)
        .iter()
        .enumerate()
        .map(|(k, design)| {
            if design.n_events == 0 {
                return Err(FitError::EmptyInterval { interval: k });
            }
            Ok(design.evaluate(&beta[k], ties, Order::Gradient)?.grad)
        })
        .collect()
}

/// Maximised per-interval coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub beta: Vec<Vec<f64>>,
    /// Maximised partial log-likelihood per interval.
    pub loglik: Vec<f64>,
    /// Largest score component at the solution, over all intervals.
    pub gradient_norm: f64,
    pub iterations: Vec<usize>,
}

impl CoxFit {
    pub fn total_loglik(&self) -> f64 {
        self.loglik.iter().sum()
    }
}

/// Newton fit of one interval's covariate coefficients.
pub(crate) fn fit_design(
    design: &CoxDesign,
    start: Vec<f64>,
    ties: TieMethod,
    interval: usize,
) -> Result<NewtonResult, FitError> {
    if design.n_events == 0 {
        return Err(FitError::EmptyInterval { interval });
    }
    let outcome = newton::maximize(
        |coef, order| design.evaluate(coef, ties, order),
        start,
        &NewtonSettings::default(),
    );
    match outcome {
        Ok(res) => {
            if diverging(design, &res.coef) {
                Err(FitError::MonotoneLikelihood { interval })
            } else {
                Ok(res)
            }
        }
        Err(NewtonFailure::Eval(e)) => Err(e),
        Err(NewtonFailure::NotConverged(iterations)) => {
            Err(FitError::NotConverged { interval, iterations })
        }
    }
}

/// A covariate coefficient whose linear span across the design exceeds
/// [`MAX_LINEAR_SPAN`] indicates separation (monotone likelihood).
pub(crate) fn diverging(design: &CoxDesign, coef: &[f64]) -> bool {
    (0..design.q).any(|j| {
        let (lo, hi) = (0..design.len())
            .map(|i| design.row(i)[j])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        coef[j].abs() * (hi - lo) > MAX_LINEAR_SPAN
    })
}

/// Maximises each interval's partial likelihood independently, honouring
/// the rows' offsets.
pub fn fit_interval_coefficients(
    episodes: &EpisodeSet,
    ties: TieMethod,
) -> Result<CoxFit, FitError> {
    fit_interval_coefficients_from(episodes, ties, None)
}

pub(crate) fn fit_interval_coefficients_from(
    episodes: &EpisodeSet,
    ties: TieMethod,
    start: Option<&[Vec<f64>]>,
) -> Result<CoxFit, FitError> {
    let q = episodes.n_covariates;
    let mut fit = CoxFit {
        beta: Vec::new(),
        loglik: Vec::new(),
        gradient_norm: 0.0,
        iterations: Vec::new(),
    };
    let designs = interval_designs(episodes, false);
    if let Some(k) = designs.iter().position(|d| d.n_events == 0) {
        return Err(FitError::EmptyInterval { interval: k });
    }
    for (k, design) in designs.iter().enumerate() {
        let init = start.map(|s| s[k].clone()).unwrap_or_else(|| vec![0.0; q]);
        let res = fit_design(design, init, ties, k)?;
        fit.gradient_norm = fit.gradient_norm.max(res.grad_norm);
        fit.beta.push(res.coef);
        fit.loglik.push(res.loglik);
        fit.iterations.push(res.iterations);
    }
    Ok(fit)
}

/// Baseline cumulative hazard pooled over intervals and clusters, with
/// each row's offset in the risk-set denominators.
pub fn breslow_hazard(
    episodes: &EpisodeSet,
    beta: &[Vec<f64>],
    ties: TieMethod,
) -> Result<CumulativeHazard, FitError> {
    check_shape(episodes, beta)?;
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for (k, design) in interval_designs(episodes, false).iter().enumerate() {
        let sweep = design.hazard(&beta[k], ties)?;
        pairs.extend(sweep.times.into_iter().zip(sweep.jumps));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (times, jumps) = pairs.into_iter().unzip();
    Ok(CumulativeHazard::new(times, jumps))
}
