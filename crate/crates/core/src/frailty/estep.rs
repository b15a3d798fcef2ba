use crate::coxph::risk::CoxDesign;
use crate::coxph::{BoundaryRule, CumulativeHazard, EpisodeSet, IntervalPartition, TieMethod};
use crate::error::FitError;
use crate::frailty::FrailtyState;

/// Hazard accrued inside interval `k` up to `exit`: the jumps of `hazard`
/// that belong to interval `k` and occur no later than `exit`.
pub(crate) fn interval_increment(
    hazard: &CumulativeHazard,
    partition: &IntervalPartition,
    k: usize,
    exit: f64,
) -> f64 {
    let lower = partition.lower(k);
    let upper = partition.upper(k);
    let times = hazard.times();
    let jumps = hazard.jumps();
    let first = match partition.rule() {
        BoundaryRule::LeftClosed => times.partition_point(|&t| t < lower),
        BoundaryRule::RightClosed => times.partition_point(|&t| t <= lower),
    };
    let last_excl = match partition.rule() {
        BoundaryRule::LeftClosed if exit >= upper && k + 1 < partition.n_intervals() => {
            times.partition_point(|&t| t < upper)
        }
        _ => times.partition_point(|&t| t <= exit),
    };
    if last_excl <= first {
        return 0.0;
    }
    jumps[first..last_excl].iter().sum()
}

fn posterior(theta: &[f64], d: Vec<Vec<usize>>, exposure: &[Vec<f64>]) -> FrailtyState {
    let mut a = Vec::with_capacity(theta.len());
    let mut b = Vec::with_capacity(theta.len());
    let mut v_hat = Vec::with_capacity(theta.len());
    for (k, &th) in theta.iter().enumerate() {
        let nu = 1.0 / th;
        let ak: Vec<f64> = d[k].iter().map(|&dk| nu + dk as f64).collect();
        let bk: Vec<f64> = exposure[k].iter().map(|&h| nu + h).collect();
        v_hat.push(ak.iter().zip(&bk).map(|(x, y)| x / y).collect());
        a.push(ak);
        b.push(bk);
    }
    FrailtyState {
        theta: theta.to_vec(),
        a,
        b,
        v_hat,
        d,
    }
}

/// Posterior gamma parameters of every cluster-interval frailty.
///
/// `B_km = 1/θ_k + Σ_i exp(β_k'x_i) (Λ̂_0(exit_i) − Λ̂_0(entry_i))` over the
/// episodes of cluster `m` in interval `k`, where the increment only counts
/// the jumps belonging to interval `k`.
pub fn e_step(
    episodes: &EpisodeSet,
    beta: &[Vec<f64>],
    theta: &[f64],
    hazard: &CumulativeHazard,
) -> Result<FrailtyState, FitError> {
    let kk = episodes.n_intervals();
    if beta.len() != kk || theta.len() != kk {
        return Err(FitError::Shape(format!(
            "expected {kk} coefficient vectors and variances, got {} and {}",
            beta.len(),
            theta.len()
        )));
    }
    let mut exposure = vec![vec![0.0; episodes.n_clusters]; kk];
    for r in &episodes.rows {
        let lp: f64 = beta[r.interval]
            .iter()
            .zip(&r.covariates)
            .map(|(b, x)| b * x)
            .sum();
        let inc = interval_increment(hazard, &episodes.partition, r.interval, r.exit);
        exposure[r.interval][r.cluster] += lp.exp() * inc;
    }
    Ok(posterior(theta, episodes.event_counts(), &exposure))
}

/// Cluster exposures `Σ exp(β'x) Λ̂_0` for one interval's design at `coef`
/// (covariate coefficients only; offsets come from the design). Under
/// Efron ties a failing row accrues only its share of the tied jump, which
/// makes `A/B` the exact stationary point of the penalised fit.
pub(crate) fn design_exposure(
    design: &CoxDesign,
    coef: &[f64],
    ties: TieMethod,
    n_clusters: usize,
) -> Result<Vec<f64>, FitError> {
    let sweep = design.hazard(coef, ties)?;
    let mut h = vec![0.0; n_clusters];
    for i in 0..design.len() {
        let lp: f64 = design.row(i)[..design.q]
            .iter()
            .zip(&coef[..design.q])
            .map(|(z, b)| z * b)
            .sum();
        h[design.cluster[i]] += lp.exp() * sweep.row_cumhaz[i];
    }
    Ok(h)
}

/// E-step from per-interval designs carrying the current `log v̂` offsets.
pub(crate) fn e_step_designs(
    designs: &[CoxDesign],
    beta: &[Vec<f64>],
    theta: &[f64],
    ties: TieMethod,
    d: Vec<Vec<usize>>,
    n_clusters: usize,
) -> Result<FrailtyState, FitError> {
    let exposure = designs
        .iter()
        .zip(beta)
        .map(|(design, b)| design_exposure(design, b, ties, n_clusters))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(posterior(theta, d, &exposure))
}
