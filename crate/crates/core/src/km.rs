//! Kaplan-Meier product-limit curves per group, annotated with change
//! points, and their CSV/JSON export.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::FitError;

/// How subjects are split into curves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GroupBy {
    /// One curve per distinct value of the named covariate.
    Covariate(String),
    /// One curve per cluster label.
    Cluster,
    /// A single pooled curve.
    All,
}

/// A point of the step function: `S(time)`, right-continuous.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepPoint {
    pub time: f64,
    pub survival: f64,
}

/// A change-point time to be marked on a plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub time: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub group: String,
    /// One point per distinct observed time in the group, ascending.
    pub steps: Vec<StepPoint>,
    /// Times of censored observations (repeated for ties).
    pub censor_marks: Vec<f64>,
    #[serde(default)]
    pub annotations: Vec<Annotation>,
}

impl SurvivalCurve {
    /// `S(t)`; equal to 1 before the first observed time.
    pub fn survival_at(&self, t: f64) -> f64 {
        let idx = self.steps.partition_point(|s| s.time <= t);
        if idx == 0 {
            1.0
        } else {
            self.steps[idx - 1].survival
        }
    }
}

/// Product-limit estimate from `(time, event)` pairs. Events at a time are
/// counted before censorings at the same time leave the risk set.
pub fn product_limit(group: &str, obs: &[(f64, bool)]) -> Result<SurvivalCurve, FitError> {
    if obs.is_empty() {
        return Err(FitError::InvalidConfig(format!("group `{group}` is empty")));
    }
    let mut sorted = obs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut at_risk = sorted.len();
    let mut s = 1.0;
    let mut steps = Vec::new();
    let mut censor_marks = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        let mut j = i;
        let mut events = 0;
        while j < sorted.len() && sorted[j].0 == t {
            if sorted[j].1 {
                events += 1;
            } else {
                censor_marks.push(t);
            }
            j += 1;
        }
        if events > 0 {
            s *= 1.0 - events as f64 / at_risk as f64;
        }
        steps.push(StepPoint { time: t, survival: s });
        at_risk -= j - i;
        i = j;
    }
    Ok(SurvivalCurve {
        group: group.to_string(),
        steps,
        censor_marks,
        annotations: Vec::new(),
    })
}

fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// One curve per group, ordered by covariate value, cluster order, or a
/// single `all` curve.
pub fn kaplan_meier(dataset: &Dataset, group_by: &GroupBy) -> Result<Vec<SurvivalCurve>, FitError> {
    match group_by {
        GroupBy::All => {
            let obs: Vec<(f64, bool)> = dataset.subjects.iter().map(|s| (s.time, s.event)).collect();
            Ok(vec![product_limit("all", &obs)?])
        }
        GroupBy::Cluster => {
            let mut groups: Vec<Vec<(f64, bool)>> = vec![Vec::new(); dataset.n_clusters()];
            for s in &dataset.subjects {
                groups[s.cluster].push((s.time, s.event));
            }
            groups
                .iter()
                .zip(&dataset.cluster_labels)
                .map(|(obs, label)| product_limit(&format!("cluster={label}"), obs))
                .collect()
        }
        GroupBy::Covariate(name) => {
            let j = dataset
                .covariate_names
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| FitError::InvalidConfig(format!("unknown covariate `{name}`")))?;
            // Keyed by the bit pattern of a total order so grouping is exact.
            let mut groups: BTreeMap<OrderedKey, Vec<(f64, bool)>> = BTreeMap::new();
            for s in &dataset.subjects {
                groups
                    .entry(OrderedKey(s.covariates[j]))
                    .or_default()
                    .push((s.time, s.event));
            }
            groups
                .iter()
                .map(|(k, obs)| product_limit(&format!("{name}={}", format_value(k.0)), obs))
                .collect()
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct OrderedKey(f64);

impl PartialEq for OrderedKey {
    fn eq(&self, other: &Self) -> bool {
        self.0.total_cmp(&other.0).is_eq()
    }
}
impl Eq for OrderedKey {}
impl PartialOrd for OrderedKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrderedKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Attaches the same change-point annotations to every curve.
pub fn annotate(curves: &mut [SurvivalCurve], annotations: &[Annotation]) {
    for c in curves {
        c.annotations.extend_from_slice(annotations);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveFormat {
    Csv,
    Json,
}

impl std::str::FromStr for CurveFormat {
    type Err = FitError;
    fn from_str(s: &str) -> Result<Self, FitError> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(CurveFormat::Csv),
            "json" => Ok(CurveFormat::Json),
            other => Err(FitError::InvalidConfig(format!("unknown format `{other}`"))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CurveRow {
    group: String,
    time: f64,
    survival: f64,
    is_censor_mark: bool,
}

const CSV_HEADER: &str = "group,time,survival,is_censor_mark\n";

/// Serializes curves. CSV has one row per step point followed by one row
/// per censor mark (at the survival level where the mark is drawn);
/// annotations are only carried by JSON.
pub fn export_curves(curves: &[SurvivalCurve], format: CurveFormat) -> String {
    match format {
        CurveFormat::Json => {
            let mut out = serde_json::to_string_pretty(curves).expect("curves serialize");
            out.push('\n');
            out
        }
        CurveFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            for c in curves {
                let rows = c
                    .steps
                    .iter()
                    .map(|s| (s.time, s.survival, false))
                    .chain(c.censor_marks.iter().map(|&t| (t, c.survival_at(t), true)));
                for (time, survival, is_censor_mark) in rows {
                    w.serialize(CurveRow {
                        group: c.group.clone(),
                        time,
                        survival,
                        is_censor_mark,
                    })
                    .expect("in-memory write");
                }
            }
            let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8");
            format!("{CSV_HEADER}{body}")
        }
    }
}

/// Parses [`export_curves`] output. Lines starting with `#` are skipped in
/// CSV input.
pub fn parse_curves<R: Read>(reader: R, format: CurveFormat) -> Result<Vec<SurvivalCurve>, FitError> {
    let bad = |e: String| FitError::InvalidConfig(format!("cannot parse curves: {e}"));
    match format {
        CurveFormat::Json => serde_json::from_reader(reader).map_err(|e| bad(e.to_string())),
        CurveFormat::Csv => {
            let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
            let mut curves: Vec<SurvivalCurve> = Vec::new();
            for row in r.deserialize::<CurveRow>() {
                let row = row.map_err(|e| bad(e.to_string()))?;
                if curves.last().map(|c| c.group != row.group).unwrap_or(true) {
                    curves.push(SurvivalCurve {
                        group: row.group.clone(),
                        steps: Vec::new(),
                        censor_marks: Vec::new(),
                        annotations: Vec::new(),
                    });
                }
                let c = curves.last_mut().expect("pushed above");
                if row.is_censor_mark {
                    c.censor_marks.push(row.time);
                } else {
                    c.steps.push(StepPoint {
                        time: row.time,
                        survival: row.survival,
                    });
                }
            }
            Ok(curves)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::table1;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }

    #[test]
    fn single_event() {
        let c = product_limit("g", &[(5.0, true)]).unwrap();
        assert_eq!(c.survival_at(4.999), 1.0);
        assert_eq!(c.survival_at(5.0), 0.0);
    }

    #[test]
    fn empty_group_rejected() {
        assert!(product_limit("g", &[]).is_err());
    }

    #[test]
    fn table1_placebo_hand_values() {
        let curves = kaplan_meier(&table1(), &GroupBy::Covariate("treatment".into())).unwrap();
        assert_eq!(curves.len(), 2);
        assert_eq!(curves[0].group, "treatment=0");
        let c = &curves[0];
        // 15 at risk, one censored at 10, events at 25 and 30 with 14 and 13 at risk.
        close(c.survival_at(10.0), 1.0);
        close(c.survival_at(25.0), 13.0 / 14.0);
        close(c.survival_at(30.0), 13.0 / 14.0 * 12.0 / 13.0);
        close(c.survival_at(50.0), 12.0 / 14.0 * 11.0 / 12.0 * 10.0 / 11.0);
        assert_eq!(c.censor_marks, vec![10.0, 55.0, 70.0, 90.0, 100.0]);
    }

    #[test]
    fn table1_step_counts_are_distinct_times() {
        let ds = table1();
        let curves = kaplan_meier(&ds, &GroupBy::Covariate("treatment".into())).unwrap();
        for (arm, c) in curves.iter().enumerate() {
            let mut times: Vec<f64> = ds
                .subjects
                .iter()
                .filter(|s| s.covariates[0] == arm as f64)
                .map(|s| s.time)
                .collect();
            times.sort_by(f64::total_cmp);
            times.dedup();
            assert_eq!(c.steps.len(), times.len());
        }
    }

    #[test]
    fn empty_export_is_header_only() {
        assert_eq!(export_curves(&[], CurveFormat::Csv), CSV_HEADER);
        assert!(parse_curves(CSV_HEADER.as_bytes(), CurveFormat::Csv).unwrap().is_empty());
    }

    #[test]
    fn unknown_format() {
        assert!("xml".parse::<CurveFormat>().is_err());
    }

    #[test]
    fn cluster_grouping_follows_label_order() {
        let curves = kaplan_meier(&table1(), &GroupBy::Cluster).unwrap();
        let groups: Vec<&str> = curves.iter().map(|c| c.group.as_str()).collect();
        assert_eq!(groups, ["cluster=1", "cluster=2", "cluster=3"]);
    }

    fn obs_strategy() -> impl Strategy<Value = Vec<(f64, bool)>> {
        prop::collection::vec(((1u32..40).prop_map(|t| t as f64 * 0.5), any::<bool>()), 1..40)
    }

    proptest! {
        #[test]
        fn step_function_shape(obs in obs_strategy()) {
            let c = product_limit("g", &obs).unwrap();
            prop_assert_eq!(c.survival_at(0.0), 1.0);
            let mut prev = 1.0;
            for s in &c.steps {
                prop_assert!(s.survival <= prev && (0.0..=1.0).contains(&s.survival));
                prev = s.survival;
            }
        }

        #[test]
        fn uncensored_is_empirical(times in prop::collection::vec(1u32..30, 1..30)) {
            let obs: Vec<(f64, bool)> = times.iter().map(|&t| (t as f64, true)).collect();
            let c = product_limit("g", &obs).unwrap();
            for s in &c.steps {
                let above = times.iter().filter(|&&t| t as f64 > s.time).count();
                prop_assert!((s.survival - above as f64 / times.len() as f64).abs() < 1e-12);
            }
        }

        #[test]
        fn order_invariant(obs in obs_strategy()) {
            let mut rev = obs.clone();
            rev.reverse();
            prop_assert_eq!(product_limit("g", &obs).unwrap(), product_limit("g", &rev).unwrap());
        }

        #[test]
        fn csv_round_trip(obs in obs_strategy()) {
            let curves = vec![product_limit("a", &obs).unwrap(), product_limit("b", &obs).unwrap()];
            let text = export_curves(&curves, CurveFormat::Csv);
            let back = parse_curves(text.as_bytes(), CurveFormat::Csv).unwrap();
            prop_assert_eq!(back, curves);
        }
    }
}
