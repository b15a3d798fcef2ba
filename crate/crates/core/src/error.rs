use thiserror::Error;

/// Errors raised while reading survival data.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV at row {row}: {message}")]
    Csv { row: usize, message: String },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("empty file: no data rows")]
    Empty,
    #[error("row {row}: time must be positive and finite, got `{value}`")]
    InvalidTime { row: usize, value: String },
    #[error("row {row}: unrecognised event value `{value}`")]
    InvalidEvent { row: usize, value: String },
    #[error("row {row}: covariate `{column}` is not numeric: `{value}`")]
    InvalidCovariate {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: time {time} exceeds follow-up {followup}")]
    BeyondFollowup { row: usize, time: f64, followup: f64 },
    #[error("row {row}: expected {expected} covariates, found {found}")]
    CovariateLength {
        row: usize,
        expected: usize,
        found: usize,
    },
}

/// Errors raised by model fitting and change-point search.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("interval {interval} has no events; its coefficients are inestimable")]
    EmptyInterval { interval: usize },
    #[error("empty risk set at event time {time}")]
    EmptyRiskSet { time: f64 },
    #[error("Newton iterations did not converge in interval {interval} after {iterations} steps")]
    NotConverged { interval: usize, iterations: usize },
    #[error("monotone likelihood in interval {interval}: coefficient diverges")]
    MonotoneLikelihood { interval: usize },
    #[error("coefficient vector has wrong shape: {0}")]
    Shape(String),
    #[error("frailty model requires at least 2 clusters, found {0}")]
    TooFewClusters(usize),
    #[error("no event times")]
    NoEventTimes,
    #[error("no feasible change-point candidates: {0}")]
    NoCandidates(String),
    #[error("no candidate partition converged ({0} tried)")]
    AllCandidatesFailed(usize),
    #[error("event at {time} has no hazard jump")]
    MissingJump { time: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
