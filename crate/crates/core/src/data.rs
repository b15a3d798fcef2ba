//! Survival records, dataset validation and CSV ingestion.
//!
//! Internally every subject carries an "event occurred" flag. Files that
//! record a censoring indicator instead (for example a `Censor` column with
//! `Yes`/`No` values) are inverted at load time.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::DataError;

/// One observation: follow-up time, event flag, cluster and covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    /// Observed time `min(Y, C)`.
    pub time: f64,
    /// `true` iff the event was observed (not censored).
    pub event: bool,
    /// Dense cluster index in `0..n_clusters`.
    pub cluster: usize,
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub subjects: Vec<Subject>,
    /// Original cluster labels, indexed by `Subject::cluster`.
    pub cluster_labels: Vec<String>,
    pub covariate_names: Vec<String>,
    /// Maximum follow-up time `T`.
    pub followup: f64,
}

/// A subject before cluster labels are mapped to dense indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    pub time: f64,
    pub event: bool,
    pub cluster: String,
    pub covariates: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset, assigning cluster indices in first-appearance order.
    /// `followup` defaults to the largest observed time.
    pub fn from_records(
        records: Vec<SubjectRecord>,
        covariate_names: Vec<String>,
        followup: Option<f64>,
    ) -> Dataset {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut cluster_labels = Vec::new();
        let mut subjects = Vec::with_capacity(records.len());
        for r in records {
            let next = cluster_labels.len();
            let cluster = *index.entry(r.cluster.clone()).or_insert_with(|| {
                cluster_labels.push(r.cluster.clone());
                next
            });
            subjects.push(Subject {
                id: r.id,
                time: r.time,
                event: r.event,
                cluster,
                covariates: r.covariates,
            });
        }
        let followup = followup.unwrap_or_else(|| {
            subjects
                .iter()
                .map(|s| s.time)
                .fold(0.0_f64, f64::max)
        });
        Dataset {
            subjects,
            cluster_labels,
            covariate_names,
            followup,
        }
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_labels.len()
    }

    /// Covariate dimension `q`.
    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn n_events(&self) -> usize {
        self.subjects.iter().filter(|s| s.event).count()
    }

    /// Number of subjects in each cluster.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters()];
        for s in &self.subjects {
            if let Some(c) = sizes.get_mut(s.cluster) {
                *c += 1;
            }
        }
        sizes
    }

    /// Distinct times of observed events, ascending.
    pub fn event_times(&self) -> Vec<f64> {
        let mut times: Vec<f64> = self
            .subjects
            .iter()
            .filter(|s| s.event)
            .map(|s| s.time)
            .collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        times
    }

    /// Copy of the dataset with every time (and the follow-up) multiplied by `c`.
    pub fn scale_times(&self, c: f64) -> Dataset {
        let mut out = self.clone();
        for s in &mut out.subjects {
            s.time *= c;
        }
        out.followup *= c;
        out
    }
}

/// A violated dataset invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Finding {
    NoSubjects,
    NoEvents,
    NoClusters,
    TooFewClustersForFrailty { found: usize },
    InvalidFollowup { followup: f64 },
    NonPositiveTime { index: usize, time: f64 },
    TimeBeyondFollowup { index: usize, time: f64 },
    CovariateLength { index: usize, expected: usize, found: usize },
    UnknownCluster { index: usize, cluster: usize },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::NoSubjects => write!(f, "no subjects"),
            Finding::NoEvents => write!(f, "no events"),
            Finding::NoClusters => write!(f, "no clusters"),
            Finding::TooFewClustersForFrailty { found } => {
                write!(f, "frailty requires ≥2 clusters (found {found})")
            }
            Finding::InvalidFollowup { followup } => {
                write!(f, "follow-up must be positive and finite, got {followup}")
            }
            Finding::NonPositiveTime { index, time } => {
                write!(f, "subject {index}: time {time} is not positive and finite")
            }
            Finding::TimeBeyondFollowup { index, time } => {
                write!(f, "subject {index}: time {time} exceeds follow-up")
            }
            Finding::CovariateLength {
                index,
                expected,
                found,
            } => write!(
                f,
                "subject {index}: expected {expected} covariates, found {found}"
            ),
            Finding::UnknownCluster { index, cluster } => {
                write!(f, "subject {index}: cluster index {cluster} has no label")
            }
        }
    }
}

/// Checks every dataset invariant; returns one finding per violation.
/// `frailty` additionally requires at least two clusters.
pub fn validate(dataset: &Dataset, frailty: bool) -> Vec<Finding> {
    let mut findings = Vec::new();
    let q = dataset.n_covariates();
    if dataset.subjects.is_empty() {
        findings.push(Finding::NoSubjects);
    }
    if !(dataset.followup.is_finite() && dataset.followup > 0.0) {
        findings.push(Finding::InvalidFollowup {
            followup: dataset.followup,
        });
    }
    for (index, s) in dataset.subjects.iter().enumerate() {
        if !(s.time.is_finite() && s.time > 0.0) {
            findings.push(Finding::NonPositiveTime {
                index,
                time: s.time,
            });
        } else if s.time > dataset.followup {
            findings.push(Finding::TimeBeyondFollowup {
                index,
                time: s.time,
            });
        }
        if s.covariates.len() != q {
            findings.push(Finding::CovariateLength {
                index,
                expected: q,
                found: s.covariates.len(),
            });
        }
        if s.cluster >= dataset.n_clusters() {
            findings.push(Finding::UnknownCluster {
                index,
                cluster: s.cluster,
            });
        }
    }
    if !dataset.subjects.is_empty() && dataset.n_events() == 0 {
        findings.push(Finding::NoEvents);
    }
    if dataset.n_clusters() == 0 {
        findings.push(Finding::NoClusters);
    } else if frailty && dataset.n_clusters() < 2 {
        findings.push(Finding::TooFewClustersForFrailty {
            found: dataset.n_clusters(),
        });
    }
    findings
}

/// Which column carries the event indicator, and its polarity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventColumn {
    /// `1`/`yes`/`true` means the event occurred.
    Event(String),
    /// `1`/`yes`/`true` means the subject was censored.
    Censor(String),
}

impl EventColumn {
    fn name(&self) -> &str {
        match self {
            EventColumn::Event(n) | EventColumn::Censor(n) => n,
        }
    }
}

/// Column-name mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    /// Identifier column; when `None` an `id` column is used if present,
    /// otherwise the 1-based row number.
    pub id: Option<String>,
    pub time: String,
    pub event: EventColumn,
    pub cluster: String,
    pub covariates: Vec<String>,
    /// Explicit follow-up `T`; defaults to the largest time.
    pub followup: Option<f64>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        ColumnSchema {
            id: None,
            time: "time".into(),
            event: EventColumn::Event("event".into()),
            cluster: "cluster".into(),
            covariates: Vec::new(),
            followup: None,
        }
    }
}

fn parse_flag(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "1" | "yes" | "y" | "true" | "t" => Some(true),
        "0" | "no" | "n" | "false" | "f" => Some(false),
        _ => None,
    }
}

/// Loads a dataset from a CSV file.
pub fn load_csv(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, schema)
}

/// Parses a dataset from any CSV reader. Row numbers in errors are file
/// line numbers (the header is line 1).
pub fn read_csv<R: Read>(reader: R, schema: &ColumnSchema) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| DataError::Csv {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    if headers.is_empty() {
        return Err(DataError::Empty);
    }
    let col = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let id_col = match &schema.id {
        Some(name) => Some(col(name)?),
        None => headers.iter().position(|h| h == "id"),
    };
    let time_col = col(&schema.time)?;
    let event_col = col(schema.event.name())?;
    let cluster_col = col(&schema.cluster)?;
    let cov_cols = schema
        .covariates
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>, _>>()?;

    let mut records = Vec::new();
    for (i, result) in rdr.records().enumerate() {
        let record = result.map_err(|e| DataError::Csv {
            row: e.position().map(|p| p.line() as usize).unwrap_or(i + 2),
            message: e.to_string(),
        })?;
        let row = record.position().map(|p| p.line() as usize).unwrap_or(i + 2);
        let field = |c: usize| record.get(c).unwrap_or("");

        let raw_time = field(time_col);
        let time: f64 = raw_time
            .parse()
            .ok()
            .filter(|t: &f64| t.is_finite() && *t > 0.0)
            .ok_or_else(|| DataError::InvalidTime {
                row,
                value: raw_time.to_string(),
            })?;
        if let Some(followup) = schema.followup {
            if time > followup {
                return Err(DataError::BeyondFollowup {
                    row,
                    time,
                    followup,
                });
            }
        }

        let raw_event = field(event_col);
        let flag = parse_flag(raw_event).ok_or_else(|| DataError::InvalidEvent {
            row,
            value: raw_event.to_string(),
        })?;
        let event = match schema.event {
            EventColumn::Event(_) => flag,
            EventColumn::Censor(_) => !flag,
        };

        let mut covariates = Vec::with_capacity(cov_cols.len());
        for (name, &c) in schema.covariates.iter().zip(&cov_cols) {
            let raw = field(c);
            let value: f64 = raw
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| DataError::InvalidCovariate {
                    row,
                    column: name.clone(),
                    value: raw.to_string(),
                })?;
            covariates.push(value);
        }

        let id = match id_col {
            Some(c) => field(c).to_string(),
            None => (i + 1).to_string(),
        };
        records.push(SubjectRecord {
            id,
            time,
            event,
            cluster: field(cluster_col).to_string(),
            covariates,
        });
    }
    if records.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(Dataset::from_records(
        records,
        schema.covariates.clone(),
        schema.followup,
    ))
}

/// Writes the dataset in canonical form: `id,time,event,cluster,<covariates>`
/// with `event` as `1`/`0`. Reading it back with [`canonical_schema`] yields
/// the same dataset.
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "time".into(), "event".into(), "cluster".into()];
    header.extend(dataset.covariate_names.iter().cloned());
    w.write_record(&header)?;
    for s in &dataset.subjects {
        let mut row = vec![
            s.id.clone(),
            s.time.to_string(),
            if s.event { "1" } else { "0" }.to_string(),
            dataset.cluster_labels[s.cluster].clone(),
        ];
        row.extend(s.covariates.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Schema matching the output of [`write_csv`] for this dataset.
pub fn canonical_schema(dataset: &Dataset) -> ColumnSchema {
    ColumnSchema {
        id: Some("id".into()),
        covariates: dataset.covariate_names.clone(),
        followup: Some(dataset.followup),
        ..ColumnSchema::default()
    }
}
