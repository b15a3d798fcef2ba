use serde::{Deserialize, Serialize};

use crate::coxph::risk::CoxDesign;
use crate::coxph::{interval_designs, split_episodes, IntervalPartition, TieMethod};
use crate::data::Dataset;
use crate::error::FitError;
use crate::frailty::theta::conditional_theta_loglik;
use crate::frailty::FitResult;

/// `l = l1 + l2`: the hazard part and the frailty part of the log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoglikParts {
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
}

/// `l1` for one interval: `Σ_events [log ΔΛ̂_0(t) + β'x] − Σ_rows v̂ e^{β'x} Λ̂_0(exit)`,
/// with `Λ̂_0` the interval's own baseline hazard and `log v̂` read from the
/// design offsets.
pub(crate) fn interval_l1(
    design: &CoxDesign,
    beta: &[f64],
    ties: TieMethod,
) -> Result<f64, FitError> {
    let sweep = design.hazard(beta, ties)?;
    let mut cum = Vec::with_capacity(sweep.jumps.len());
    let mut acc = 0.0;
    for j in &sweep.jumps {
        acc += j;
        cum.push(acc);
    }
    let mut l1 = 0.0;
    for i in 0..design.len() {
        let exit = design.exit[i];
        let lp: f64 = design.row(i)[..design.q]
            .iter()
            .zip(beta)
            .map(|(z, b)| z * b)
            .sum();
        let n = sweep.times.partition_point(|&t| t <= exit);
        let lam = if n == 0 { 0.0 } else { cum[n - 1] };
        l1 -= (design.offset[i] + lp).exp() * lam;
        if design.status[i] {
            if n == 0 || sweep.times[n - 1] != exit {
                return Err(FitError::MissingJump { time: exit });
            }
            l1 += sweep.jumps[n - 1].ln() + lp;
        }
    }
    Ok(l1)
}

pub(crate) fn loglik_from_designs(
    designs: &[CoxDesign],
    beta: &[Vec<f64>],
    frailty: Option<(&[f64], &[Vec<f64>], &[Vec<usize>])>,
    ties: TieMethod,
) -> Result<LoglikParts, FitError> {
    let mut l1 = 0.0;
    for (design, b) in designs.iter().zip(beta) {
        l1 += interval_l1(design, b, ties)?;
    }
    let l2 = match frailty {
        Some((theta, v_hat, d)) => theta
            .iter()
            .enumerate()
            .map(|(k, &t)| conditional_theta_loglik(t, &v_hat[k], &d[k]))
            .sum(),
        None => 0.0,
    };
    Ok(LoglikParts {
        l1,
        l2,
        total: l1 + l2,
    })
}

/// Full log-likelihood of a fit, with every frailty replaced by its
/// posterior mean and the baseline hazard by its Breslow-type estimate
/// (discrete jumps at the event times). Without frailty `l2 = 0`.
pub fn full_loglik(
    dataset: &Dataset,
    partition: &IntervalPartition,
    fit: &FitResult,
    ties: TieMethod,
) -> Result<LoglikParts, FitError> {
    let mut episodes = split_episodes(dataset, partition)?;
    if let Some(v) = &fit.v_hat {
        episodes.set_frailty_offsets(v);
    }
    let designs = interval_designs(&episodes, false);
    let d = episodes.event_counts();
    let frailty = match (&fit.theta, &fit.v_hat) {
        (Some(t), Some(v)) => Some((t.as_slice(), v.as_slice(), d.as_slice())),
        _ => None,
    };
    loglik_from_designs(&designs, &fit.beta, frailty, ties)
}
