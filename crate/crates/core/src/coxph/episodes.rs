use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::FitError;

/// Which interval owns an event that falls exactly on a change point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryRule {
    /// Intervals are `[τ_{k-1}, τ_k)`: an event at `τ_k` opens interval
    /// `k + 1`, and in interval `k` the subject is censored at `τ_k`.
    #[default]
    LeftClosed,
    /// Intervals are `(τ_{k-1}, τ_k]`: an event at `τ_k` closes interval `k`.
    RightClosed,
}

/// Ordered change points splitting `(0, T]` into `K + 1` intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalPartition {
    taus: Vec<f64>,
    followup: f64,
    rule: BoundaryRule,
}

impl IntervalPartition {
    /// Requires `0 < τ_1 < … < τ_K < T`. An empty `taus` is the
    /// single-interval (no change point) model.
    pub fn new(taus: Vec<f64>, followup: f64, rule: BoundaryRule) -> Result<Self, FitError> {
        if !(followup.is_finite() && followup > 0.0) {
            return Err(FitError::InvalidPartition(format!(
                "follow-up {followup} must be positive and finite"
            )));
        }
        let mut prev = 0.0;
        for &tau in &taus {
            if !tau.is_finite() || tau <= prev {
                return Err(FitError::InvalidPartition(format!(
                    "change points must be strictly increasing and positive: {taus:?}"
                )));
            }
            prev = tau;
        }
        if prev >= followup && !taus.is_empty() {
            return Err(FitError::InvalidPartition(format!(
                "last change point {prev} must precede follow-up {followup}"
            )));
        }
        Ok(IntervalPartition {
            taus,
            followup,
            rule,
        })
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn followup(&self) -> f64 {
        self.followup
    }

    pub fn rule(&self) -> BoundaryRule {
        self.rule
    }

    /// `K + 1`.
    pub fn n_intervals(&self) -> usize {
        self.taus.len() + 1
    }

    /// Lower bound `τ_{k-1}` of interval `k` (0-based), with `τ_0 = 0`.
    pub fn lower(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.taus[k - 1]
        }
    }

    /// Upper bound `τ_k`; the last interval extends to the follow-up.
    pub fn upper(&self, k: usize) -> f64 {
        self.taus.get(k).copied().unwrap_or(self.followup)
    }

    /// 0-based index of the interval containing time `t`.
    pub fn interval_of(&self, t: f64) -> usize {
        match self.rule {
            BoundaryRule::RightClosed => self.taus.partition_point(|&tau| tau < t),
            BoundaryRule::LeftClosed => self.taus.partition_point(|&tau| tau <= t),
        }
    }
}

/// A subject's at-risk segment within one interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    /// Index of the subject in the dataset.
    pub subject: usize,
    /// 0-based interval index.
    pub interval: usize,
    pub entry: f64,
    pub exit: f64,
    /// Event observed at `exit` within this interval.
    pub status: bool,
    /// The subject carries over into the next interval (`exit` is the
    /// change point, not the subject's own time).
    pub continues: bool,
    pub cluster: usize,
    pub covariates: Vec<f64>,
    /// Log frailty `log v̂_km`; zero without frailty.
    pub offset: f64,
}

/// Episode rows for one dataset and partition.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSet {
    pub rows: Vec<EpisodeRow>,
    pub partition: IntervalPartition,
    pub n_clusters: usize,
    pub n_covariates: usize,
}

impl EpisodeSet {
    pub fn n_intervals(&self) -> usize {
        self.partition.n_intervals()
    }

    pub fn interval_rows(&self, k: usize) -> impl Iterator<Item = &EpisodeRow> {
        self.rows.iter().filter(move |r| r.interval == k)
    }

    /// Event counts `D[k][m]` per interval and cluster.
    pub fn event_counts(&self) -> Vec<Vec<usize>> {
        let mut d = vec![vec![0; self.n_clusters]; self.n_intervals()];
        for r in self.rows.iter().filter(|r| r.status) {
            d[r.interval][r.cluster] += 1;
        }
        d
    }

    /// Total events per interval.
    pub fn events_per_interval(&self) -> Vec<usize> {
        self.event_counts()
            .iter()
            .map(|row| row.iter().sum())
            .collect()
    }

    /// Sets each row's offset to `log v̂[k][m]`.
    pub fn set_frailty_offsets(&mut self, v_hat: &[Vec<f64>]) {
        for r in &mut self.rows {
            r.offset = v_hat[r.interval][r.cluster].ln();
        }
    }

    pub fn clear_offsets(&mut self) {
        for r in &mut self.rows {
            r.offset = 0.0;
        }
    }
}

/// Splits every subject into one row per interval it is at risk in.
///
/// A subject with time `t` in interval `k*` contributes rows for intervals
/// `1..=k*`; all but the last are censored at the interval's upper change
/// point, and only the last may carry the event.
pub fn split_episodes(
    dataset: &Dataset,
    partition: &IntervalPartition,
) -> Result<EpisodeSet, FitError> {
    let tol = 1e-12 * dataset.followup.abs().max(1.0);
    if (partition.followup() - dataset.followup).abs() > tol {
        return Err(FitError::InvalidPartition(format!(
            "partition follow-up {} does not match dataset follow-up {}",
            partition.followup(),
            dataset.followup
        )));
    }
    let mut rows = Vec::with_capacity(dataset.len() * partition.n_intervals());
    for (index, s) in dataset.subjects.iter().enumerate() {
        let last = partition.interval_of(s.time);
        for k in 0..=last {
            let continues = k < last;
            rows.push(EpisodeRow {
                subject: index,
                interval: k,
                entry: partition.lower(k),
                exit: if continues { partition.upper(k) } else { s.time },
                status: !continues && s.event,
                continues,
                cluster: s.cluster,
                covariates: s.covariates.clone(),
                offset: 0.0,
            });
        }
    }
    Ok(EpisodeSet {
        rows,
        partition: partition.clone(),
        n_clusters: dataset.n_clusters(),
        n_covariates: dataset.n_covariates(),
    })
}
