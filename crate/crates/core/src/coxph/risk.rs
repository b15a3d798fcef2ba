//! Risk-set sweeps over one interval's episodes.
//!
//! Rows are sorted by exit time; a backward pass accumulates the weighted
//! risk-set sums `S0`, `S1`, `S2` so that every quantity is `O(n p²)`.
//! The risk set at an event time `s` is every row with `exit >= s`.

use crate::coxph::episodes::EpisodeRow;
use crate::coxph::TieMethod;
use crate::error::FitError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Order {
    Value,
    Gradient,
    Hessian,
}

#[derive(Debug, Clone)]
pub(crate) struct Derivatives {
    pub loglik: f64,
    pub grad: Vec<f64>,
    /// Row-major `p × p`.
    pub hess: Vec<f64>,
}

/// One interval's rows in exit-time order, with a dense design matrix.
#[derive(Debug, Clone)]
pub(crate) struct CoxDesign {
    pub exit: Vec<f64>,
    pub status: Vec<bool>,
    pub cluster: Vec<usize>,
    /// Row-major `n × p`; the first `q` columns are covariates, any further
    /// columns are cluster indicators.
    pub z: Vec<f64>,
    pub offset: Vec<f64>,
    pub p: usize,
    pub q: usize,
    /// Start of each run of equal exit times, plus a trailing sentinel.
    blocks: Vec<usize>,
    pub n_events: usize,
}

/// Per-time hazard quantities from a sweep.
#[derive(Debug, Clone)]
pub(crate) struct HazardSweep {
    /// Distinct event times, ascending.
    pub times: Vec<f64>,
    /// Baseline hazard jump at each event time.
    pub jumps: Vec<f64>,
    /// Cumulative baseline hazard accrued by each (sorted) row up to its exit,
    /// tie-adjusted for rows that fail at a tied time under Efron.
    pub row_cumhaz: Vec<f64>,
}

impl CoxDesign {
    /// Builds a design from episode rows. With `cluster_columns = Some(m)`
    /// the design gains `m` cluster-indicator columns after the covariates.
    pub fn new(rows: &[&EpisodeRow], q: usize, cluster_columns: Option<usize>) -> CoxDesign {
        let extra = cluster_columns.unwrap_or(0);
        let p = q + extra;
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by(|&a, &b| rows[a].exit.total_cmp(&rows[b].exit));
        let n = rows.len();
        let mut design = CoxDesign {
            exit: Vec::with_capacity(n),
            status: Vec::with_capacity(n),
            cluster: Vec::with_capacity(n),
            z: vec![0.0; n * p],
            offset: Vec::with_capacity(n),
            p,
            q,
            blocks: Vec::new(),
            n_events: 0,
        };
        for (i, &src) in order.iter().enumerate() {
            let r = rows[src];
            design.exit.push(r.exit);
            design.status.push(r.status);
            design.cluster.push(r.cluster);
            design.offset.push(r.offset);
            design.z[i * p..i * p + q].copy_from_slice(&r.covariates[..q]);
            if extra > 0 {
                design.z[i * p + q + r.cluster] = 1.0;
            }
            if r.status {
                design.n_events += 1;
            }
        }
        for i in 0..n {
            if i == 0 || design.exit[i] != design.exit[i - 1] {
                design.blocks.push(i);
            }
        }
        design.blocks.push(n);
        design
    }

    pub fn len(&self) -> usize {
        self.exit.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.p..(i + 1) * self.p]
    }

    pub fn linear_predictor(&self, coef: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                self.offset[i]
                    + self
                        .row(i)
                        .iter()
                        .zip(coef)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect()
    }

    /// Partial log-likelihood and, optionally, its derivatives in `coef`.
    pub fn evaluate(
        &self,
        coef: &[f64],
        ties: TieMethod,
        order: Order,
    ) -> Result<Derivatives, FitError> {
        let p = self.p;
        let lp = self.linear_predictor(coef);
        let shift = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = lp.iter().map(|v| (v - shift).exp()).collect();
        let need_grad = order != Order::Value;
        let need_hess = order == Order::Hessian;

        let mut loglik = 0.0;
        let mut grad = vec![0.0; if need_grad { p } else { 0 }];
        let mut hess = vec![0.0; if need_hess { p * p } else { 0 }];
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        let mut s2 = vec![0.0; p * p];
        let mut e1 = vec![0.0; p];
        let mut e2 = vec![0.0; p * p];
        let mut a1 = vec![0.0; p];

        for b in (0..self.blocks.len() - 1).rev() {
            let (start, end) = (self.blocks[b], self.blocks[b + 1]);
            let d = self.status[start..end].iter().filter(|&&s| s).count();
            // Tied-event sums are only needed for Efron's correction.
            let efron = ties == TieMethod::Efron && d > 1;
            let mut e0 = 0.0;
            if efron {
                e1.iter_mut().for_each(|v| *v = 0.0);
                if need_hess {
                    e2.iter_mut().for_each(|v| *v = 0.0);
                }
            }
            for i in start..end {
                let wi = w[i];
                s0 += wi;
                let zi = self.row(i);
                if need_grad {
                    axpy(&mut s1, zi, wi);
                }
                if need_hess {
                    outer_add(&mut s2, zi, wi);
                }
                if self.status[i] {
                    loglik += lp[i] - shift;
                    if need_grad {
                        for (g, z) in grad.iter_mut().zip(zi) {
                            *g += z;
                        }
                    }
                    if efron {
                        e0 += wi;
                        if need_grad {
                            axpy(&mut e1, zi, wi);
                        }
                        if need_hess {
                            outer_add(&mut e2, zi, wi);
                        }
                    }
                }
            }
            if d == 0 {
                continue;
            }
            for l in 0..d {
                let f = if efron { l as f64 / d as f64 } else { 0.0 };
                let a0 = s0 - f * e0;
                if a0 <= 0.0 || !a0.is_finite() {
                    return Err(FitError::EmptyRiskSet {
                        time: self.exit[start],
                    });
                }
                loglik -= a0.ln();
                if need_grad {
                    for j in 0..p {
                        a1[j] = (s1[j] - f * e1[j]) / a0;
                        grad[j] -= a1[j];
                    }
                }
                if need_hess {
                    for j in 0..p {
                        let a1j = a1[j];
                        let range = j * p + j..(j + 1) * p;
                        let h = &mut hess[range.clone()];
                        let s = &s2[range.clone()];
                        if f == 0.0 {
                            for ((h, s), a1k) in h.iter_mut().zip(s).zip(&a1[j..]) {
                                *h -= s / a0 - a1j * a1k;
                            }
                        } else {
                            let e = &e2[range];
                            for (((h, s), e), a1k) in h.iter_mut().zip(s).zip(e).zip(&a1[j..]) {
                                *h -= (s - f * e) / a0 - a1j * a1k;
                            }
                        }
                    }
                }
            }
        }
        if need_hess {
            for j in 0..p {
                for k in 0..j {
                    hess[j * p + k] = hess[k * p + j];
                }
            }
        }
        Ok(Derivatives {
            loglik,
            grad,
            hess,
        })
    }

    /// Baseline hazard jumps and per-row cumulative hazard at `coef`.
    ///
    /// Breslow: jump `d / S0`. Efron: jump `Σ_l 1 / (S0 - (l/d) E0)`, and a
    /// row failing at a tied time accrues `Σ_l (1 - l/d) / (S0 - (l/d) E0)`
    /// at that time.
    pub fn hazard(&self, coef: &[f64], ties: TieMethod) -> Result<HazardSweep, FitError> {
        let lp = self.linear_predictor(coef);
        let shift = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scale = (-shift).exp();
        let nb = self.blocks.len() - 1;
        // (full jump, jump accrued by a failing row) per block; zero when no events.
        let mut block_jump = vec![(0.0, 0.0); nb];
        let mut s0 = 0.0;
        for b in (0..nb).rev() {
            let (start, end) = (self.blocks[b], self.blocks[b + 1]);
            let mut d = 0usize;
            let mut e0 = 0.0;
            for i in start..end {
                let wi = (lp[i] - shift).exp();
                s0 += wi;
                if self.status[i] {
                    d += 1;
                    e0 += wi;
                }
            }
            if d == 0 {
                continue;
            }
            let (mut full, mut own) = (0.0, 0.0);
            if ties == TieMethod::Efron && d > 1 {
                for l in 0..d {
                    let f = l as f64 / d as f64;
                    let a0 = s0 - f * e0;
                    full += 1.0 / a0;
                    own += (1.0 - f) / a0;
                }
            } else {
                full = d as f64 / s0;
                own = full;
            }
            if !(full.is_finite() && s0 > 0.0) {
                return Err(FitError::EmptyRiskSet {
                    time: self.exit[start],
                });
            }
            block_jump[b] = (full * scale, own * scale);
        }

        let mut times = Vec::new();
        let mut jumps = Vec::new();
        let mut row_cumhaz = vec![0.0; self.len()];
        let mut cum = 0.0;
        for b in 0..nb {
            let (start, end) = (self.blocks[b], self.blocks[b + 1]);
            let (full, own) = block_jump[b];
            let has_events = full > 0.0;
            for i in start..end {
                row_cumhaz[i] = cum + if self.status[i] { own } else { full };
            }
            if has_events {
                times.push(self.exit[start]);
                jumps.push(full);
                cum += full;
            }
        }
        Ok(HazardSweep {
            times,
            jumps,
            row_cumhaz,
        })
    }
}

fn axpy(acc: &mut [f64], z: &[f64], w: f64) {
    for (a, zj) in acc.iter_mut().zip(z) {
        *a += w * zj;
    }
}

/// Adds `w z z'` to the upper triangle of the row-major `acc`.
fn outer_add(acc: &mut [f64], z: &[f64], w: f64) {
    let p = z.len();
    for j in 0..p {
        let wz = w * z[j];
        if wz == 0.0 {
            continue;
        }
        for (a, zk) in acc[j * p + j..(j + 1) * p].iter_mut().zip(&z[j..]) {
            *a += wz * zk;
        }
    }
}
