use serde::{Deserialize, Serialize};

/// Right-continuous step function `Λ̂_0(t) = Σ_{s ≤ t} ΔΛ̂_0(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeHazard {
    times: Vec<f64>,
    jumps: Vec<f64>,
    cumulative: Vec<f64>,
}

impl CumulativeHazard {
    /// `times` must be strictly increasing and `jumps` non-negative.
    pub fn new(times: Vec<f64>, jumps: Vec<f64>) -> CumulativeHazard {
        debug_assert_eq!(times.len(), jumps.len());
        debug_assert!(times.windows(2).all(|w| w[0] < w[1]));
        let mut cumulative = Vec::with_capacity(jumps.len());
        let mut acc = 0.0;
        for j in &jumps {
            acc += j;
            cumulative.push(acc);
        }
        CumulativeHazard {
            times,
            jumps,
            cumulative,
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn jumps(&self) -> &[f64] {
        &self.jumps
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `Λ̂_0(t)`.
    pub fn at(&self, t: f64) -> f64 {
        let n = self.times.partition_point(|&s| s <= t);
        if n == 0 {
            0.0
        } else {
            self.cumulative[n - 1]
        }
    }

    /// `Λ̂_0(t-)`, excluding any jump at `t`.
    pub fn before(&self, t: f64) -> f64 {
        let n = self.times.partition_point(|&s| s < t);
        if n == 0 {
            0.0
        } else {
            self.cumulative[n - 1]
        }
    }

    /// Size of the jump at exactly `t`, if any.
    pub fn jump_at(&self, t: f64) -> Option<f64> {
        self.times
            .binary_search_by(|s| s.total_cmp(&t))
            .ok()
            .map(|i| self.jumps[i])
    }
}
