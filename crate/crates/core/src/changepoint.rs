//! Exhaustive change-point search over observed event times.
//!
//! Every strictly increasing `K`-combination of distinct event times that
//! leaves enough events in each interval is fitted, and the combination with
//! the largest criterion wins. Candidate fits are independent, so they run
//! on the rayon pool and are reduced in candidate order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coxph::{BoundaryRule, IntervalPartition};
use crate::data::Dataset;
use crate::error::FitError;
use crate::frailty::{em_fit, fit_no_frailty, EmOptions, FitResult};

/// Quantity maximised across candidate partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    /// Partial log-likelihood, with `log v̂` offsets under frailty.
    #[default]
    PartialLikelihood,
    /// `l1 + l2` with posterior-mean frailties and discrete hazard jumps.
    FullLikelihood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Number of change points.
    pub k: usize,
    /// Minimum total events required in every interval.
    pub min_events_per_interval: usize,
    pub frailty: bool,
    pub boundary: BoundaryRule,
    pub criterion: Criterion,
    /// Tie handling and frailty settings; `em.ties` also applies without frailty.
    pub em: EmOptions,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            k: 1,
            min_events_per_interval: 1,
            frailty: false,
            boundary: BoundaryRule::default(),
            criterion: Criterion::default(),
            em: EmOptions::default(),
        }
    }
}

impl SearchOptions {
    pub fn validate(&self) -> Result<(), FitError> {
        if self.k == 0 {
            return Err(FitError::InvalidConfig("K must be at least 1".into()));
        }
        if self.min_events_per_interval == 0 {
            return Err(FitError::InvalidConfig(
                "min_events_per_interval must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of one candidate partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTrace {
    pub taus: Vec<f64>,
    /// `None` when the fit failed.
    pub criterion: Option<f64>,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: FitResult,
    pub criterion: f64,
    pub trace: Vec<CandidateTrace>,
}

/// Number of event times (with multiplicity) in each interval of `taus`.
fn interval_event_counts(events: &[f64], taus: &[f64], rule: BoundaryRule) -> Vec<usize> {
    let cut = |tau: f64| match rule {
        BoundaryRule::LeftClosed => events.partition_point(|&t| t < tau),
        BoundaryRule::RightClosed => events.partition_point(|&t| t <= tau),
    };
    let mut counts = Vec::with_capacity(taus.len() + 1);
    let mut prev = 0;
    for &tau in taus {
        let c = cut(tau);
        counts.push(c - prev);
        prev = c;
    }
    counts.push(events.len() - prev);
    counts
}

/// Feasible change-point combinations in ascending lexicographic order.
///
/// Candidates are the distinct event times strictly before the follow-up;
/// a combination is kept when every interval holds at least
/// `min_events_per_interval` events.
pub fn candidate_grid(dataset: &Dataset, options: &SearchOptions) -> Result<Vec<Vec<f64>>, FitError> {
    options.validate()?;
    let mut events: Vec<f64> = dataset
        .subjects
        .iter()
        .filter(|s| s.event)
        .map(|s| s.time)
        .collect();
    if events.is_empty() {
        return Err(FitError::NoEventTimes);
    }
    events.sort_by(f64::total_cmp);
    let times: Vec<f64> = dataset
        .event_times()
        .into_iter()
        .filter(|&t| t < dataset.followup)
        .collect();

    let mut out = Vec::new();
    let mut current = Vec::with_capacity(options.k);
    extend(&times, 0, &events, options, &mut current, &mut out);
    if out.is_empty() {
        return Err(FitError::NoCandidates(format!(
            "no combination of {} change point(s) among {} event time(s) leaves {} event(s) per interval",
            options.k,
            times.len(),
            options.min_events_per_interval
        )));
    }
    Ok(out)
}

fn extend(
    times: &[f64],
    from: usize,
    events: &[f64],
    options: &SearchOptions,
    current: &mut Vec<f64>,
    out: &mut Vec<Vec<f64>>,
) {
    let min = options.min_events_per_interval;
    if current.len() == options.k {
        if interval_event_counts(events, current, options.boundary)
            .iter()
            .all(|&c| c >= min)
        {
            out.push(current.clone());
        }
        return;
    }
    for i in from..times.len() {
        current.push(times[i]);
        // Every interval closed so far must already be feasible.
        let counts = interval_event_counts(events, current, options.boundary);
        if counts[..current.len()].iter().all(|&c| c >= min) {
            extend(times, i + 1, events, options, current, out);
        }
        current.pop();
    }
}

fn evaluate(dataset: &Dataset, taus: &[f64], options: &SearchOptions) -> Result<FitResult, FitError> {
    let partition = IntervalPartition::new(taus.to_vec(), dataset.followup, options.boundary)?;
    if options.frailty {
        em_fit(dataset, &partition, &options.em)
    } else {
        fit_no_frailty(dataset, &partition, options.em.ties)
    }
}

fn criterion_of(fit: &FitResult, criterion: Criterion) -> f64 {
    match criterion {
        Criterion::PartialLikelihood => fit.partial_loglik,
        Criterion::FullLikelihood => fit.loglik_total,
    }
}

/// Fits every candidate partition and returns the best converged one.
///
/// Criterion values within a relative `1e-10` of the maximum count as tied,
/// and ties go to the earliest candidate (smallest `τ`).
pub fn search(dataset: &Dataset, options: &SearchOptions) -> Result<SearchResult, FitError> {
    let grid = candidate_grid(dataset, options)?;
    let fits: Vec<Result<FitResult, FitError>> = grid
        .par_iter()
        .map(|taus| evaluate(dataset, taus, options))
        .collect();

    let mut trace = Vec::with_capacity(grid.len());
    for (taus, fit) in grid.iter().zip(&fits) {
        trace.push(match fit {
            Ok(f) => CandidateTrace {
                taus: taus.clone(),
                criterion: Some(criterion_of(f, options.criterion)),
                converged: f.converged,
                error: None,
            },
            Err(e) => CandidateTrace {
                taus: taus.clone(),
                criterion: None,
                converged: false,
                error: Some(e.to_string()),
            },
        });
    }
    let usable = |t: &CandidateTrace| t.converged && t.criterion.is_some_and(f64::is_finite);
    let max = trace
        .iter()
        .filter(|t| usable(t))
        .filter_map(|t| t.criterion)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(FitError::AllCandidatesFailed(grid.len()));
    }
    let slack = 1e-10 * (1.0 + max.abs());
    let index = trace
        .iter()
        .position(|t| usable(t) && t.criterion.unwrap() >= max - slack)
        .expect("a usable candidate attains the maximum");
    let best = fits.into_iter().nth(index).unwrap().expect("usable candidate fitted");
    Ok(SearchResult {
        criterion: criterion_of(&best, options.criterion),
        best,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coxph::TieMethod;
    use crate::data::SubjectRecord;
    use crate::testutil::table1;

    fn toy(times: &[(f64, bool)]) -> Dataset {
        let records = times
            .iter()
            .enumerate()
            .map(|(i, &(time, event))| SubjectRecord {
                id: (i + 1).to_string(),
                time,
                event,
                cluster: if i % 2 == 0 { "a" } else { "b" }.into(),
                covariates: vec![(i % 3) as f64],
            })
            .collect();
        Dataset::from_records(records, vec!["x".into()], Some(100.0))
    }

    #[test]
    fn table1_grid_has_eleven_feasible_points() {
        let ds = table1();
        assert_eq!(
            ds.event_times(),
            vec![25.0, 30.0, 40.0, 45.0, 50.0, 60.0, 65.0, 70.0, 75.0, 80.0, 85.0, 95.0]
        );
        let grid = candidate_grid(&ds, &SearchOptions::default()).unwrap();
        let flat: Vec<f64> = grid.iter().map(|c| c[0]).collect();
        // 25 would leave [0, 25) without events.
        assert_eq!(flat, vec![30.0, 40.0, 45.0, 50.0, 60.0, 65.0, 70.0, 75.0, 80.0, 85.0, 95.0]);
        let right = SearchOptions {
            boundary: BoundaryRule::RightClosed,
            ..Default::default()
        };
        let flat: Vec<f64> = candidate_grid(&ds, &right).unwrap().iter().map(|c| c[0]).collect();
        // 95 would leave (95, 100] without events.
        assert_eq!(flat, vec![25.0, 30.0, 40.0, 45.0, 50.0, 60.0, 65.0, 70.0, 75.0, 80.0, 85.0]);
    }

    #[test]
    fn all_censored_has_no_event_times() {
        let ds = toy(&[(1.0, false), (2.0, false)]);
        let err = candidate_grid(&ds, &SearchOptions::default()).unwrap_err();
        assert_eq!(err, FitError::NoEventTimes);
        assert_eq!(err.to_string(), "no event times");
    }

    #[test]
    fn two_change_points_enumerate_feasible_pairs() {
        let ds = toy(&[(1.0, true), (2.0, true), (3.0, true), (4.0, true)]);
        let opts = SearchOptions {
            k: 2,
            boundary: BoundaryRule::RightClosed,
            ..Default::default()
        };
        let grid = candidate_grid(&ds, &opts).unwrap();
        // Brute force: all pairs a<b with events in (0,a], (a,b], (b,100].
        let times = [1.0, 2.0, 3.0, 4.0];
        let mut expect = Vec::new();
        for i in 0..4 {
            for j in i + 1..4 {
                let (a, b) = (times[i], times[j]);
                let c0 = times.iter().filter(|&&t| t <= a).count();
                let c1 = times.iter().filter(|&&t| t > a && t <= b).count();
                let c2 = times.iter().filter(|&&t| t > b).count();
                if c0 >= 1 && c1 >= 1 && c2 >= 1 {
                    expect.push(vec![a, b]);
                }
            }
        }
        assert_eq!(grid, expect);
        assert_eq!(grid, vec![vec![1.0, 2.0], vec![1.0, 3.0], vec![2.0, 3.0]]);
    }

    #[test]
    fn min_events_filters_candidates() {
        let ds = table1();
        let opts = SearchOptions {
            min_events_per_interval: 6,
            ..Default::default()
        };
        let grid = candidate_grid(&ds, &opts).unwrap();
        let events: Vec<f64> = {
            let mut e: Vec<f64> = ds.subjects.iter().filter(|s| s.event).map(|s| s.time).collect();
            e.sort_by(f64::total_cmp);
            e
        };
        for c in &grid {
            let before = events.iter().filter(|&&t| t < c[0]).count();
            assert!(before >= 6 && events.len() - before >= 6);
        }
        assert!(grid.len() < 11);
        let none = SearchOptions {
            min_events_per_interval: 100,
            ..Default::default()
        };
        assert!(matches!(candidate_grid(&ds, &none), Err(FitError::NoCandidates(_))));
    }

    #[test]
    fn table1_no_frailty_search() {
        let r = search(&table1(), &SearchOptions::default()).unwrap();
        assert_eq!(r.best.taus, vec![50.0]);
        assert!((r.best.beta[0][0] - 0.0682).abs() < 5e-4);
        assert!((r.best.beta[1][0] + 0.7586).abs() < 5e-4);
        assert_eq!(r.trace.len(), 11);
        for t in &r.trace {
            if t.converged {
                assert!(r.criterion >= t.criterion.unwrap());
            }
        }
    }

    #[test]
    fn table1_frailty_search() {
        let opts = SearchOptions {
            frailty: true,
            ..Default::default()
        };
        let r = search(&table1(), &opts).unwrap();
        assert_eq!(r.best.taus, vec![80.0]);
        let theta = r.best.theta.as_ref().unwrap();
        assert!(theta[0] <= 0.005 && (theta[1] - 1.77).abs() < 0.01);
    }

    #[test]
    fn breslow_ties_move_the_estimate() {
        let opts = SearchOptions {
            em: EmOptions {
                ties: TieMethod::Breslow,
                ..Default::default()
            },
            ..Default::default()
        };
        let r = search(&table1(), &opts).unwrap();
        assert!((r.best.beta[1][0] + 0.745).abs() < 5e-3);
    }

    #[test]
    fn identical_arms_tie_break_to_smallest_tau() {
        let ds = table1();
        let mut records = Vec::new();
        for s in ds.subjects.iter().filter(|s| s.covariates[0] == 0.0) {
            for arm in [0.0, 1.0] {
                records.push(SubjectRecord {
                    id: format!("{}-{arm}", s.id),
                    time: s.time,
                    event: s.event,
                    cluster: ds.cluster_labels[s.cluster].clone(),
                    covariates: vec![arm],
                });
            }
        }
        let twin = Dataset::from_records(records, vec!["arm".into()], Some(100.0));
        let r = search(&twin, &SearchOptions::default()).unwrap();
        let grid = candidate_grid(&twin, &SearchOptions::default()).unwrap();
        assert_eq!(r.best.taus, grid[0]);
        for b in r.best.beta.iter().flatten() {
            assert!(b.abs() < 1e-8);
        }
    }

    #[test]
    fn scaling_time_scales_tau() {
        let ds = table1();
        let scaled = ds.scale_times(0.37);
        for frailty in [false, true] {
            let opts = SearchOptions {
                frailty,
                ..Default::default()
            };
            let a = search(&ds, &opts).unwrap();
            let b = search(&scaled, &opts).unwrap();
            assert!((b.best.taus[0] - 0.37 * a.best.taus[0]).abs() < 1e-9);
            for (x, y) in a.best.beta.iter().flatten().zip(b.best.beta.iter().flatten()) {
                assert!((x - y).abs() < 1e-6);
            }
            if let (Some(ta), Some(tb)) = (&a.best.theta, &b.best.theta) {
                for (x, y) in ta.iter().zip(tb) {
                    assert!((x - y).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn search_is_schedule_independent() {
        let ds = table1();
        let opts = SearchOptions {
            frailty: true,
            ..Default::default()
        };
        let serial = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| search(&ds, &opts).unwrap());
        let parallel = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| search(&ds, &opts).unwrap());
        assert_eq!(
            serde_json::to_string(&serial).unwrap(),
            serde_json::to_string(&parallel).unwrap()
        );
    }
}
