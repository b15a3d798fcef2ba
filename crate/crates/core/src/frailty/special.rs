//! Cancellation-free forms of the gamma-frailty likelihood terms.
//!
//! Near `θ → 0` the frailty precision `ν = 1/θ` reaches `1e8`, and the
//! textbook expressions subtract quantities of order `ν log ν`. The helpers
//! below regroup those terms so they stay accurate across `[1e-8, 100]`.

use statrs::function::gamma::ln_gamma;

/// `e^ω − 1 − ω`.
pub fn exp_excess(omega: f64) -> f64 {
    if omega.abs() < 1e-3 {
        let w2 = omega * omega;
        w2 * (0.5 + omega / 6.0 + w2 / 24.0 + w2 * omega / 120.0)
    } else {
        omega.exp_m1() - omega
    }
}

/// `log Γ(ν) − ν log ν + ν`, which behaves like `½ log(2π/ν)` for large `ν`.
pub fn gamma_shape_term(nu: f64) -> f64 {
    if nu > 20.0 {
        let inv = 1.0 / nu;
        let inv2 = inv * inv;
        0.5 * (2.0 * std::f64::consts::PI * inv).ln()
            + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)))
    } else {
        ln_gamma(nu) - nu * nu.ln() + nu
    }
}

/// Per-cluster term of the profiled gamma marginal likelihood,
/// `ν log ν − (ν + d) log(ν + d) + log Γ(ν + d) − log Γ(ν)` for integer `d`.
pub fn marginal_cluster_term(nu: f64, d: usize) -> f64 {
    if d == 0 {
        return 0.0;
    }
    let df = d as f64;
    // log Γ(ν+d) − log Γ(ν) = Σ_{j<d} log(ν+j), folded against d·log(ν+d).
    let ratio_sum: f64 = (0..d)
        .map(|j| ((j as f64 - df) / (nu + df)).ln_1p())
        .sum();
    ratio_sum - nu * (df / nu).ln_1p()
}

/// `ψ(ν + d) − ψ(ν)` for integer `d`.
pub fn digamma_shift(nu: f64, d: usize) -> f64 {
    (0..d).map(|j| 1.0 / (nu + j as f64)).sum()
}
