use crate::coxph::newton::{self, NewtonFailure, NewtonSettings};
use crate::coxph::risk::{CoxDesign, Derivatives, Order};
use crate::coxph::{
    diverging, fit_design, fit_interval_coefficients, interval_designs, split_episodes,
    IntervalPartition, TieMethod,
};
use crate::data::Dataset;
use crate::error::FitError;
use crate::frailty::estep::{design_exposure, e_step_designs};
use crate::frailty::loglik::loglik_from_designs;
use crate::frailty::special::{digamma_shift, exp_excess, marginal_cluster_term};
use crate::frailty::theta::m_step_theta;
use crate::frailty::{EmOptions, FitResult, ThetaUpdate, THETA_FLOOR, THETA_MAX};
use crate::optim::brent_maximize;

/// Scan nodes over `log θ` for the marginal update.
const LOG_THETA_SCAN: usize = 6;
const LOG_THETA_TOL: f64 = 1e-7;

/// Cox model with change points and no frailty.
pub fn fit_no_frailty(
    dataset: &Dataset,
    partition: &IntervalPartition,
    ties: TieMethod,
) -> Result<FitResult, FitError> {
    let episodes = split_episodes(dataset, partition)?;
    let fit = fit_interval_coefficients(&episodes, ties)?;
    let designs = interval_designs(&episodes, false);
    let parts = loglik_from_designs(&designs, &fit.beta, None, ties)?;
    Ok(FitResult {
        taus: partition.taus().to_vec(),
        partial_loglik: fit.total_loglik(),
        beta: fit.beta,
        theta: None,
        v_hat: None,
        loglik_l1: parts.l1,
        loglik_l2: parts.l2,
        loglik_total: parts.total,
        marginal_loglik: None,
        iterations: fit.iterations.iter().sum(),
        converged: true,
        trace: Vec::new(),
        warnings: Vec::new(),
    })
}

/// Gamma-frailty fit for a fixed partition.
///
/// Starts from the no-frailty coefficients. With [`ThetaUpdate::Marginal`]
/// each interval's `θ_k` maximises the profiled marginal likelihood; the
/// other updates run the EM iteration (E-step, coefficient refit with
/// `log v̂` offsets, θ update) from `θ = 1`.
pub fn em_fit(
    dataset: &Dataset,
    partition: &IntervalPartition,
    options: &EmOptions,
) -> Result<FitResult, FitError> {
    let m = dataset.n_clusters();
    if m < 2 {
        return Err(FitError::TooFewClusters(m));
    }
    if let ThetaUpdate::Fixed(t) = options.theta_update {
        if !(t.is_finite() && t >= THETA_FLOOR) {
            return Err(FitError::InvalidConfig(format!(
                "fixed frailty variance {t} must be at least {THETA_FLOOR}"
            )));
        }
    }
    if options.max_iter == 0 || !(options.tol > 0.0) {
        return Err(FitError::InvalidConfig(
            "EM needs max_iter ≥ 1 and a positive tolerance".into(),
        ));
    }
    match options.theta_update {
        ThetaUpdate::Marginal => marginal_fit(dataset, partition, options.ties),
        _ => em_iterate(dataset, partition, options),
    }
}

fn rel_change(old: f64, new: f64) -> f64 {
    (new - old).abs() / (old.abs() + 1e-4)
}

fn em_iterate(
    dataset: &Dataset,
    partition: &IntervalPartition,
    options: &EmOptions,
) -> Result<FitResult, FitError> {
    let ties = options.ties;
    let episodes = split_episodes(dataset, partition)?;
    let n_clusters = episodes.n_clusters;
    let kk = episodes.n_intervals();
    let d = episodes.event_counts();
    let base = fit_interval_coefficients(&episodes, ties)?;
    let mut designs = interval_designs(&episodes, false);

    let mut beta = base.beta;
    let mut theta = vec![
        match options.theta_update {
            ThetaUpdate::Fixed(t) => t,
            _ => 1.0,
        };
        kk
    ];
    let mut v_hat = vec![vec![1.0; n_clusters]; kk];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iter {
        iterations += 1;
        let state = e_step_designs(&designs, &beta, &theta, ties, d.clone(), n_clusters)?;
        for (k, design) in designs.iter_mut().enumerate() {
            for i in 0..design.len() {
                design.offset[i] = state.v_hat[k][design.cluster[i]].ln();
            }
        }
        let mut new_beta = Vec::with_capacity(kk);
        for (k, design) in designs.iter().enumerate() {
            new_beta.push(fit_design(design, beta[k].clone(), ties, k)?.coef);
        }
        let new_theta: Vec<f64> = match options.theta_update {
            ThetaUpdate::Fixed(t) => vec![t; kk],
            _ => (0..kk).map(|k| m_step_theta(&state, k)).collect(),
        };

        let mut change = 0.0_f64;
        for (old, new) in beta.iter().flatten().zip(new_beta.iter().flatten()) {
            change = change.max(rel_change(*old, *new));
        }
        for (old, new) in theta.iter().zip(&new_theta) {
            change = change.max(rel_change(*old, *new));
        }
        for (old, new) in v_hat.iter().flatten().zip(state.v_hat.iter().flatten()) {
            change = change.max(rel_change(*old, *new));
        }
        beta = new_beta;
        theta = new_theta;
        v_hat = state.v_hat;
        if options.trace {
            let parts =
                loglik_from_designs(&designs, &beta, Some((&theta, &v_hat, &d)), ties)?;
            trace.push(parts.total);
        }
        if change < options.tol {
            converged = true;
            break;
        }
    }

    let mut partial = 0.0;
    for (design, b) in designs.iter().zip(&beta) {
        partial += design.evaluate(b, ties, Order::Value)?.loglik;
    }
    let parts = loglik_from_designs(&designs, &beta, Some((&theta, &v_hat, &d)), ties)?;
    let mut warnings = Vec::new();
    if !converged {
        warnings.push(format!("EM stopped after {iterations} iterations"));
    }
    warnings.extend(bound_warnings(&theta));
    Ok(FitResult {
        taus: partition.taus().to_vec(),
        beta,
        theta: Some(theta),
        v_hat: Some(v_hat),
        partial_loglik: partial,
        loglik_l1: parts.l1,
        loglik_l2: parts.l2,
        loglik_total: parts.total,
        marginal_loglik: None,
        iterations,
        converged,
        trace,
        warnings,
    })
}

fn bound_warnings(theta: &[f64]) -> Vec<String> {
    theta
        .iter()
        .enumerate()
        .filter(|(_, &t)| t >= THETA_MAX * (1.0 - 1e-9))
        .map(|(k, _)| format!("frailty variance of interval {} reached the upper bound {THETA_MAX}", k + 1))
        .collect()
}

/// Penalised partial likelihood `PL(β, ω) − ν Σ_m (e^ω_m − 1 − ω_m)` on a
/// design whose trailing columns are cluster indicators with coefficients `ω`.
fn penalized_eval(
    design: &CoxDesign,
    coef: &[f64],
    nu: f64,
    ties: TieMethod,
    order: Order,
) -> Result<Derivatives, FitError> {
    let mut out = design.evaluate(coef, ties, order)?;
    let (p, q) = (design.p, design.q);
    for j in q..p {
        let w = coef[j];
        out.loglik -= nu * exp_excess(w);
        if order != Order::Value {
            out.grad[j] -= nu * w.exp_m1();
        }
        if order == Order::Hessian {
            out.hess[j * p + j] -= nu * w.exp();
        }
    }
    Ok(out)
}

struct PenalizedFit {
    coef: Vec<f64>,
    penalized: f64,
    iterations: usize,
}

fn penalized_fit(
    design: &CoxDesign,
    start: Vec<f64>,
    nu: f64,
    ties: TieMethod,
    interval: usize,
) -> Result<PenalizedFit, FitError> {
    let settings = NewtonSettings {
        max_iter: 100,
        grad_tol: 1e-8,
        step_tol: 1e-10,
    };
    match newton::maximize(|c, o| penalized_eval(design, c, nu, ties, o), start, &settings) {
        Ok(res) => {
            if diverging(design, &res.coef) {
                return Err(FitError::MonotoneLikelihood { interval });
            }
            Ok(PenalizedFit {
                coef: res.coef,
                penalized: res.loglik,
                iterations: res.iterations,
            })
        }
        Err(NewtonFailure::Eval(e)) => Err(e),
        Err(NewtonFailure::NotConverged(iterations)) => {
            Err(FitError::NotConverged { interval, iterations })
        }
    }
}

struct IntervalProfile {
    theta: f64,
    coef: Vec<f64>,
    marginal: f64,
    iterations: usize,
}

/// Profile value and slope at one `log θ`.
struct ProfilePoint {
    x: f64,
    value: f64,
    /// `dL/d log θ`.
    slope: f64,
    coef: Vec<f64>,
}

/// Maximises the profiled gamma marginal log-likelihood of one interval,
///
/// `L(θ) = max_{β,ω} [PL(β, ω) − ν Σ_m φ(ω_m)] + Σ_m c(ν, D_m)`,
///
/// over `log θ`, where `ν = 1/θ`, `φ(ω) = e^ω − 1 − ω` and
/// `c(ν, d) = ν log ν − (ν + d) log(ν + d) + log Γ(ν + d) − log Γ(ν)`.
///
/// By the envelope theorem `dL/dν = Σ_m [−φ(ω_m) − log(1 + D_m/ν) + ψ(ν + D_m) − ψ(ν)]`,
/// so a coarse scan locates the peak and a bracketed root search on the
/// slope refines it.
fn profile_interval(
    design: &CoxDesign,
    d: &[usize],
    start: &[f64],
    ties: TieMethod,
    interval: usize,
) -> Result<IntervalProfile, FitError> {
    let mut warm: Vec<f64> = start.to_vec();
    warm.resize(design.p, 0.0);
    let mut iterations = 0;
    let mut solved: Vec<ProfilePoint> = Vec::new();
    let mut failure: Option<FitError> = None;

    let mut solve = |x: f64, solved: &mut Vec<ProfilePoint>| -> Option<usize> {
        let start = solved
            .iter()
            .min_by(|a, b| (a.x - x).abs().total_cmp(&(b.x - x).abs()))
            .map_or_else(|| warm.clone(), |p| p.coef.clone());
        let nu = (-x).exp();
        match penalized_fit(design, start, nu, ties, interval) {
            Ok(fit) => {
                iterations += fit.iterations;
                let mut value = fit.penalized;
                let mut dnu = 0.0;
                for (m, &dm) in d.iter().enumerate() {
                    value += marginal_cluster_term(nu, dm);
                    dnu += -exp_excess(fit.coef[design.q + m]) - (dm as f64 / nu).ln_1p()
                        + digamma_shift(nu, dm);
                }
                solved.push(ProfilePoint {
                    x,
                    value,
                    slope: -nu * dnu,
                    coef: fit.coef,
                });
                Some(solved.len() - 1)
            }
            Err(e) => {
                failure.get_or_insert(e);
                None
            }
        }
    };

    let (llo, lhi) = (THETA_FLOOR.ln(), THETA_MAX.ln());
    let step = (lhi - llo) / (LOG_THETA_SCAN - 1) as f64;
    let nodes: Vec<Option<usize>> = (0..LOG_THETA_SCAN)
        .map(|i| {
            let x = if i == LOG_THETA_SCAN - 1 { lhi } else { llo + step * i as f64 };
            solve(x, &mut solved)
        })
        .collect();
    let Some(b) = (0..LOG_THETA_SCAN)
        .filter(|&i| nodes[i].is_some())
        .fold(None, |best: Option<usize>, i| match best {
            Some(j) if solved[nodes[j].unwrap()].value >= solved[nodes[i].unwrap()].value => Some(j),
            _ => Some(i),
        })
    else {
        return Err(failure.unwrap_or(FitError::NotConverged { interval, iterations: 0 }));
    };
    let at = |i: usize| nodes.get(i).copied().flatten();
    let best = nodes[b].unwrap();
    let slope_b = solved[best].slope;
    let bracket = if slope_b > 0.0 && b + 1 < LOG_THETA_SCAN {
        at(b + 1).map(|c| (best, c))
    } else if slope_b < 0.0 && b > 0 {
        at(b - 1).map(|a| (a, best))
    } else {
        None
    };

    if let Some((mut a, mut c)) = bracket {
        if solved[a].slope > 0.0 && solved[c].slope < 0.0 {
            // Illinois variant of regula falsi on the slope.
            let (mut fa, mut fc) = (solved[a].slope, solved[c].slope);
            let mut side = 0i8;
            for _ in 0..60 {
                let (xa, xc) = (solved[a].x, solved[c].x);
                if xc - xa < LOG_THETA_TOL {
                    break;
                }
                let mut x = xc - fc * (xc - xa) / (fc - fa);
                if !(x > xa && x < xc) {
                    x = 0.5 * (xa + xc);
                }
                let Some(i) = solve(x, &mut solved) else { break };
                let fx = solved[i].slope;
                if fx == 0.0 {
                    break;
                } else if fx > 0.0 {
                    a = i;
                    fa = fx;
                    if side == 1 {
                        fc *= 0.5;
                    }
                    side = 1;
                } else {
                    c = i;
                    fc = fx;
                    if side == -1 {
                        fa *= 0.5;
                    }
                    side = -1;
                }
            }
        } else {
            let lo = solved[a].x.min(solved[c].x);
            let hi = solved[a].x.max(solved[c].x);
            brent_maximize(
                |x| solve(x, &mut solved).map_or(f64::NEG_INFINITY, |i| solved[i].value),
                lo,
                hi,
                LOG_THETA_TOL,
                200,
            );
        }
    }

    let winner = solved
        .iter()
        .enumerate()
        .fold(0, |j, (i, p)| if p.value > solved[j].value { i } else { j });
    let p = solved.swap_remove(winner);
    Ok(IntervalProfile {
        theta: p.x.exp().clamp(THETA_FLOOR, THETA_MAX),
        coef: p.coef,
        marginal: p.value,
        iterations,
    })
}

fn marginal_fit(
    dataset: &Dataset,
    partition: &IntervalPartition,
    ties: TieMethod,
) -> Result<FitResult, FitError> {
    let mut episodes = split_episodes(dataset, partition)?;
    let n_clusters = episodes.n_clusters;
    let q = episodes.n_covariates;
    let d = episodes.event_counts();
    let base = fit_interval_coefficients(&episodes, ties)?;
    let augmented = interval_designs(&episodes, true);

    let mut beta = Vec::new();
    let mut theta = Vec::new();
    let mut v_hat = Vec::new();
    let mut marginal = 0.0;
    let mut iterations = 0;
    for (k, design) in augmented.iter().enumerate() {
        let prof = profile_interval(design, &d[k], &base.beta[k], ties, k)?;
        let nu = 1.0 / prof.theta;
        let exposure = design_exposure(design, &prof.coef, ties, n_clusters)?;
        v_hat.push(
            d[k].iter()
                .zip(&exposure)
                .map(|(&dm, &h)| (nu + dm as f64) / (nu + h))
                .collect::<Vec<f64>>(),
        );
        beta.push(prof.coef[..q].to_vec());
        theta.push(prof.theta);
        marginal += prof.marginal;
        iterations += prof.iterations;
    }

    episodes.set_frailty_offsets(&v_hat);
    let designs = interval_designs(&episodes, false);
    let mut partial = 0.0;
    for (design, b) in designs.iter().zip(&beta) {
        partial += design.evaluate(b, ties, Order::Value)?.loglik;
    }
    let parts = loglik_from_designs(&designs, &beta, Some((&theta, &v_hat, &d)), ties)?;
    Ok(FitResult {
        taus: partition.taus().to_vec(),
        beta,
        warnings: bound_warnings(&theta),
        theta: Some(theta),
        v_hat: Some(v_hat),
        partial_loglik: partial,
        loglik_l1: parts.l1,
        loglik_l2: parts.l2,
        loglik_total: parts.total,
        marginal_loglik: Some(marginal),
        iterations,
        converged: true,
        trace: Vec::new(),
    })
}
