//! Monte Carlo studies of the change-point estimators.
//!
//! Each replication draws a clustered dataset from a piecewise-exponential
//! proportional-hazards model with interval-specific gamma frailties, fits
//! the model with and without frailty, and records the errors against the
//! truth. Replication `r` uses its own pair of ChaCha streams derived from
//! the seed, so results do not depend on how replications are scheduled.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::changepoint::{search, SearchOptions};
use crate::data::{Dataset, SubjectRecord};
use crate::error::FitError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    /// Subjects per replication.
    pub n: usize,
    /// Cluster membership probabilities; their count is the number of clusters.
    pub cluster_probs: Vec<f64>,
    /// `P(x = 1)` for the binary covariate.
    pub covariate_prob: f64,
    /// True change points.
    pub tau_true: Vec<f64>,
    pub followup: f64,
    /// Covariate coefficient in each interval.
    pub beta_true: Vec<f64>,
    /// Constant baseline hazard.
    pub baseline_rate: f64,
    /// Frailty variance in each interval; zero means no frailty.
    pub theta_true: Vec<f64>,
    /// Probability that a subject is censored at `U · t`.
    pub censor_prob: f64,
    pub replications: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    /// The three published designs: no frailty, `θ = 0.1` and `θ = 0.2`.
    pub fn scenario(id: u8) -> Result<ScenarioConfig, FitError> {
        let theta = match id {
            1 => 0.0,
            2 => 0.1,
            3 => 0.2,
            _ => {
                return Err(FitError::InvalidConfig(format!(
                    "unknown scenario {id}; expected 1, 2 or 3"
                )))
            }
        };
        Ok(ScenarioConfig {
            name: format!("scenario-{id}"),
            n: 500,
            cluster_probs: vec![0.25; 4],
            covariate_prob: 0.5,
            tau_true: vec![250.0],
            followup: 600.0,
            beta_true: vec![0.0, 0.5],
            baseline_rate: 1.0 / 300.0,
            theta_true: vec![theta; 2],
            censor_prob: 0.1,
            replications: 10_000,
            seed: 1,
        })
    }

    pub fn validate(&self) -> Result<(), FitError> {
        let bad = |msg: String| Err(FitError::InvalidConfig(msg));
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.n == 0 {
            return bad("sample size must be positive".into());
        }
        if self.cluster_probs.is_empty() || !self.cluster_probs.iter().all(|&p| prob(p)) {
            return bad("cluster probabilities must lie in [0, 1]".into());
        }
        let total: f64 = self.cluster_probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("cluster probabilities sum to {total}, not 1"));
        }
        if !prob(self.covariate_prob) || !prob(self.censor_prob) {
            return bad("probabilities must lie in [0, 1]".into());
        }
        if !(self.baseline_rate.is_finite() && self.baseline_rate > 0.0) {
            return bad("baseline rate must be positive".into());
        }
        if !(self.followup > 0.0) {
            return bad("follow-up must be positive".into());
        }
        let mut prev = 0.0;
        for &t in &self.tau_true {
            if !(t > prev) {
                return bad("change points must be positive and increasing".into());
            }
            prev = t;
        }
        if prev >= self.followup {
            return bad(format!(
                "change point {prev} must precede the follow-up {}",
                self.followup
            ));
        }
        let intervals = self.tau_true.len() + 1;
        if self.beta_true.len() != intervals || self.theta_true.len() != intervals {
            return bad(format!(
                "{} change point(s) need {intervals} coefficients and frailty variances",
                self.tau_true.len()
            ));
        }
        if !self.beta_true.iter().all(|b| b.is_finite()) {
            return bad("coefficients must be finite".into());
        }
        if !self.theta_true.iter().all(|&t| t.is_finite() && t >= 0.0) {
            return bad("frailty variances must be non-negative".into());
        }
        if self.replications == 0 {
            return bad("at least one replication is required".into());
        }
        Ok(())
    }
}

/// Independent generators for subject draws and frailty draws of one replication.
fn streams(seed: u64, replication: usize) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut subjects = ChaCha8Rng::seed_from_u64(seed);
    subjects.set_stream(2 * replication as u64);
    let mut frailties = ChaCha8Rng::seed_from_u64(seed);
    frailties.set_stream(2 * replication as u64 + 1);
    (subjects, frailties)
}

/// Inverse of the piecewise-linear cumulative hazard `Λ(t)` with slope
/// `rates[k]` between `taus[k-1]` and `taus[k]`.
fn piecewise_inverse(e: f64, taus: &[f64], rates: &[f64]) -> f64 {
    let mut start = 0.0;
    let mut remaining = e;
    for (k, &rate) in rates.iter().enumerate() {
        match taus.get(k) {
            Some(&end) if remaining > rate * (end - start) => {
                remaining -= rate * (end - start);
                start = end;
            }
            _ => return start + remaining / rate,
        }
    }
    unreachable!("the last interval is unbounded")
}

/// Draws replication `replication` of the scenario.
pub fn draw_dataset(config: &ScenarioConfig, replication: usize) -> Dataset {
    let (mut rng, mut frng) = streams(config.seed, replication);
    let m = config.cluster_probs.len();
    let frailty: Vec<Vec<f64>> = config
        .theta_true
        .iter()
        .map(|&theta| {
            if theta > 0.0 {
                let g = Gamma::new(1.0 / theta, theta).expect("validated variance");
                (0..m).map(|_| g.sample(&mut frng)).collect()
            } else {
                vec![1.0; m]
            }
        })
        .collect();

    let mut records = Vec::with_capacity(config.n);
    let mut rates = vec![0.0; config.beta_true.len()];
    for i in 0..config.n {
        let u: f64 = rng.gen();
        let mut cluster = m - 1;
        let mut acc = 0.0;
        for (c, &p) in config.cluster_probs.iter().enumerate() {
            acc += p;
            if u < acc {
                cluster = c;
                break;
            }
        }
        let x = if rng.gen_bool(config.covariate_prob) { 1.0 } else { 0.0 };
        for (k, rate) in rates.iter_mut().enumerate() {
            *rate = config.baseline_rate * frailty[k][cluster] * (config.beta_true[k] * x).exp();
        }
        let e: f64 = Exp1.sample(&mut rng);
        let mut time = piecewise_inverse(e, &config.tau_true, &rates);
        let mut event = true;
        if rng.gen_bool(config.censor_prob) {
            let scale = 1.0 - rng.gen::<f64>();
            time *= scale;
            event = false;
        }
        if time >= config.followup {
            event = event && time == config.followup;
            time = config.followup;
        }
        records.push(SubjectRecord {
            id: (i + 1).to_string(),
            time: time.max(f64::MIN_POSITIVE),
            event,
            cluster: (cluster + 1).to_string(),
            covariates: vec![x],
        });
    }
    let mut ds = Dataset::from_records(records, vec!["x".into()], Some(config.followup));
    // Label clusters 1..M regardless of which appeared first.
    let order: Vec<usize> = {
        let mut o: Vec<usize> = (0..ds.n_clusters()).collect();
        o.sort_by_key(|&c| ds.cluster_labels[c].parse::<usize>().unwrap_or(usize::MAX));
        o
    };
    let mut rank = vec![0; order.len()];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }
    for s in &mut ds.subjects {
        s.cluster = rank[s.cluster];
    }
    ds.cluster_labels = order.iter().map(|&c| ds.cluster_labels[c].clone()).collect();
    ds
}

/// Point estimates from one model on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    pub beta: Vec<f64>,
    pub tau: Vec<f64>,
    pub theta: Option<Vec<f64>>,
}

/// Both models' estimates for one replication; `None` marks a failed fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub no_frailty: Option<Estimates>,
    pub frailty: Option<Estimates>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    NoFrailty,
    Frailty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasMseRow {
    pub parameter: String,
    pub model: Model,
    pub bias: f64,
    pub mse: f64,
    /// Replications contributing to this cell.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasMseTable {
    pub replications: usize,
    pub failures_no_frailty: usize,
    pub failures_frailty: usize,
    pub rows: Vec<BiasMseRow>,
}

impl BiasMseTable {
    pub fn get(&self, parameter: &str, model: Model) -> Option<&BiasMseRow> {
        self.rows
            .iter()
            .find(|r| r.parameter == parameter && r.model == model)
    }

    /// CSV with columns `parameter,model,bias,mse,n`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["parameter", "model", "bias", "mse", "n"])
            .expect("in-memory write");
        for r in &self.rows {
            let model = match r.model {
                Model::NoFrailty => "no-frailty",
                Model::Frailty => "frailty",
            };
            w.write_record([
                r.parameter.clone(),
                model.to_string(),
                format!("{}", r.bias),
                format!("{}", r.mse),
                r.n.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

/// Errors of the estimates against the truth, in table order
/// `beta_k…, tau_k…, theta_k…`.
fn errors(config: &ScenarioConfig, est: &Estimates) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (k, (&b, &truth)) in est.beta.iter().zip(&config.beta_true).enumerate() {
        out.push((format!("beta_{}", k + 1), b - truth));
    }
    for (k, (&t, &truth)) in est.tau.iter().zip(&config.tau_true).enumerate() {
        out.push((format!("tau_{}", k + 1), t - truth));
    }
    if let Some(theta) = &est.theta {
        for (k, (&t, &truth)) in theta.iter().zip(&config.theta_true).enumerate() {
            out.push((format!("theta_{}", k + 1), t - truth));
        }
    }
    out
}

fn accumulate(
    config: &ScenarioConfig,
    estimates: impl Iterator<Item = Option<Estimates>>,
    model: Model,
) -> (Vec<BiasMseRow>, usize) {
    let mut failures = 0;
    let mut sums: Vec<(String, f64, f64, usize)> = Vec::new();
    for est in estimates {
        let Some(est) = est else {
            failures += 1;
            continue;
        };
        for (name, e) in errors(config, &est) {
            match sums.iter_mut().find(|s| s.0 == name) {
                Some(s) => {
                    s.1 += e;
                    s.2 += e * e;
                    s.3 += 1;
                }
                None => sums.push((name, e, e * e, 1)),
            }
        }
    }
    let rows = sums
        .into_iter()
        .map(|(parameter, se, sse, n)| BiasMseRow {
            parameter,
            model,
            bias: se / n as f64,
            mse: sse / n as f64,
            n,
        })
        .collect();
    (rows, failures)
}

fn summarise(search_result: Result<crate::changepoint::SearchResult, FitError>) -> Option<Estimates> {
    let r = search_result.ok()?;
    Some(Estimates {
        beta: r.best.beta.iter().map(|b| b[0]).collect(),
        tau: r.best.taus.clone(),
        theta: r.best.theta.clone(),
    })
}

/// Fits both models by change-point search with the given options
/// (the `frailty` flag is overridden per model).
pub fn fit_both(dataset: &Dataset, options: &SearchOptions) -> ReplicationOutcome {
    let plain = SearchOptions {
        frailty: false,
        ..options.clone()
    };
    let frail = SearchOptions {
        frailty: true,
        ..options.clone()
    };
    ReplicationOutcome {
        no_frailty: summarise(search(dataset, &plain)),
        frailty: summarise(search(dataset, &frail)),
    }
}

/// Runs the study with an arbitrary per-replication estimator.
pub fn run_study_with<F>(config: &ScenarioConfig, estimator: F) -> Result<BiasMseTable, FitError>
where
    F: Fn(&Dataset, usize) -> ReplicationOutcome + Sync,
{
    config.validate()?;
    let outcomes: Vec<ReplicationOutcome> = (0..config.replications)
        .into_par_iter()
        .map(|r| estimator(&draw_dataset(config, r), r))
        .collect();
    let (mut rows, failures_no_frailty) =
        accumulate(config, outcomes.iter().map(|o| o.no_frailty.clone()), Model::NoFrailty);
    let (frailty_rows, failures_frailty) =
        accumulate(config, outcomes.iter().map(|o| o.frailty.clone()), Model::Frailty);
    if failures_no_frailty == config.replications && failures_frailty == config.replications {
        return Err(FitError::AllCandidatesFailed(config.replications));
    }
    rows.extend(frailty_rows);
    Ok(BiasMseTable {
        replications: config.replications,
        failures_no_frailty,
        failures_frailty,
        rows,
    })
}

/// Runs the study, estimating `K = tau_true.len()` change points under
/// both models.
pub fn run_study(config: &ScenarioConfig, options: &SearchOptions) -> Result<BiasMseTable, FitError> {
    let options = SearchOptions {
        k: config.tau_true.len(),
        ..options.clone()
    };
    run_study_with(config, |ds, _| fit_both(ds, &options))
}
