use crate::frailty::special::{exp_excess, gamma_shape_term};
use crate::frailty::{FrailtyState, THETA_FLOOR, THETA_MAX};
use crate::optim::brent_maximize;

/// Nodes of the log-spaced scan that brackets the θ maximum.
const SCAN_POINTS: usize = 60;

/// Gamma log-likelihood of one interval's frailties at `θ`, with each `v`
/// replaced by its posterior mean `v̂_m = A_m / B_m`:
///
/// `−M(θ⁻¹ log θ + log Γ(θ⁻¹)) + Σ_m [(θ⁻¹ + D_m − 1) log v̂_m − v̂_m / θ]`.
///
/// Evaluated as `−M h(ν) + Σ_m [(D_m − 1) ω_m − ν (e^ω_m − 1 − ω_m)]` with
/// `ν = 1/θ`, `ω = log v̂` and `h(ν) = log Γ(ν) − ν log ν + ν`, which avoids
/// cancelling terms of size `ν log ν` near the floor.
pub fn conditional_theta_loglik(theta: f64, v_hat: &[f64], d: &[usize]) -> f64 {
    let nu = 1.0 / theta;
    let m = v_hat.len() as f64;
    let sum: f64 = v_hat
        .iter()
        .zip(d)
        .map(|(&v, &dm)| {
            let w = v.ln();
            (dm as f64 - 1.0) * w - nu * exp_excess(w)
        })
        .sum();
    -m * gamma_shape_term(nu) + sum
}

/// Maximises [`conditional_theta_loglik`] for interval `k` over
/// `[THETA_FLOOR, THETA_MAX]`.
pub fn m_step_theta(state: &FrailtyState, k: usize) -> f64 {
    let v = &state.v_hat[k];
    let d = &state.d[k];
    let f = |t: f64| conditional_theta_loglik(t, v, d);

    let (llo, lhi) = (THETA_FLOOR.ln(), THETA_MAX.ln());
    let step = (lhi - llo) / (SCAN_POINTS - 1) as f64;
    let node = |i: usize| {
        if i == 0 {
            THETA_FLOOR
        } else if i == SCAN_POINTS - 1 {
            THETA_MAX
        } else {
            (llo + step * i as f64).exp()
        }
    };
    let mut best_i = 0;
    let mut best = f64::NEG_INFINITY;
    for i in 0..SCAN_POINTS {
        let val = f(node(i));
        if val > best {
            best = val;
            best_i = i;
        }
    }
    let lo = node(best_i.saturating_sub(1));
    let hi = node((best_i + 1).min(SCAN_POINTS - 1));
    let (x, fx) = brent_maximize(f, lo, hi, 1e-9, 500);
    let (mut theta, mut val) = (node(best_i), best);
    if fx > val {
        theta = x;
        val = fx;
    }
    // The bounds are never probed by Brent.
    for bound in [lo, hi] {
        let fb = f(bound);
        if fb > val {
            theta = bound;
            val = fb;
        }
    }
    theta.clamp(THETA_FLOOR, THETA_MAX)
}
