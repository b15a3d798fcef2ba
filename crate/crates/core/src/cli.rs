//! Command-line interface: `fit`, `simulate` and `km`.
//!
//! Exit codes: 0 success, 1 output could not be written, 2 usage, ingestion
//! or configuration error, 3 no feasible change-point candidates, 4 no
//! candidate fit converged. Every output embeds the effective
//! configuration; the thread count is an execution detail and is left out
//! so serial and parallel runs produce identical bytes.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;

use crate::changepoint::{search, Criterion, SearchOptions};
use crate::coxph::{BoundaryRule, TieMethod};
use crate::data::{load_csv, validate, ColumnSchema, Dataset, EventColumn, Finding};
use crate::error::{DataError, FitError};
use crate::frailty::{EmOptions, ThetaUpdate};
use crate::km::{annotate, export_curves, kaplan_meier, Annotation, CurveFormat, GroupBy};
use crate::simulate::{run_study, ScenarioConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OUTPUT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NO_CANDIDATES: i32 = 3;
pub const EXIT_NO_CONVERGENCE: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "frailcp", version, about = "Cox regression with change points and gamma frailty")]
struct Cli {
    /// More log output on stderr (repeatable).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    /// Worker threads (default: all cores). Does not change results.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate change points, coefficients and frailty variances.
    Fit(FitArgs),
    /// Monte Carlo bias/MSE study of both models.
    Simulate(SimulateArgs),
    /// Kaplan-Meier curves per group.
    Km(KmArgs),
}

#[derive(Args, Debug)]
struct ColumnArgs {
    #[arg(long, default_value = "time")]
    time: String,
    /// Column whose 1/yes/true marks an observed event.
    #[arg(long, default_value = "event", conflicts_with = "censor_column")]
    event_column: String,
    /// Column whose 1/yes/true marks a censored observation.
    #[arg(long)]
    censor_column: Option<String>,
    #[arg(long, default_value = "cluster")]
    cluster: String,
    /// Covariate columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    /// Identifier column (default: `id` if present).
    #[arg(long)]
    id: Option<String>,
    /// Maximum follow-up time (default: the largest observed time).
    #[arg(long)]
    followup: Option<f64>,
}

impl ColumnArgs {
    fn schema(&self) -> ColumnSchema {
        ColumnSchema {
            id: self.id.clone(),
            time: self.time.clone(),
            event: match &self.censor_column {
                Some(c) => EventColumn::Censor(c.clone()),
                None => EventColumn::Event(self.event_column.clone()),
            },
            cluster: self.cluster.clone(),
            covariates: self.covariates.clone(),
            followup: self.followup,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TiesArg {
    Breslow,
    Efron,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BoundaryArg {
    LeftClosed,
    RightClosed,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ThetaUpdateArg {
    Marginal,
    Conditional,
    Fixed,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CriterionArg {
    Partial,
    Full,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Number of change points.
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Minimum events in every interval.
    #[arg(long, default_value_t = 1)]
    min_events: usize,
    #[arg(long, value_enum, default_value = "efron")]
    ties: TiesArg,
    #[arg(long, value_enum, default_value = "left-closed")]
    boundary: BoundaryArg,
    #[arg(long, value_enum, default_value = "partial")]
    criterion: CriterionArg,
    #[arg(long, value_enum, default_value = "marginal")]
    theta_update: ThetaUpdateArg,
    /// Frailty variance for `--theta-update fixed`.
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long, default_value_t = 1e-6)]
    em_tol: f64,
    #[arg(long, default_value_t = 500)]
    em_max_iter: usize,
}

impl ModelArgs {
    fn options(&self, frailty: bool) -> Result<SearchOptions, FitError> {
        let theta_update = match (self.theta_update, self.theta) {
            (ThetaUpdateArg::Fixed, Some(t)) => ThetaUpdate::Fixed(t),
            (ThetaUpdateArg::Fixed, None) => {
                return Err(FitError::InvalidConfig(
                    "--theta-update fixed requires --theta".into(),
                ))
            }
            (_, Some(_)) => {
                return Err(FitError::InvalidConfig(
                    "--theta only applies with --theta-update fixed".into(),
                ))
            }
            (ThetaUpdateArg::Marginal, None) => ThetaUpdate::Marginal,
            (ThetaUpdateArg::Conditional, None) => ThetaUpdate::Conditional,
        };
        let options = SearchOptions {
            k: self.k,
            min_events_per_interval: self.min_events,
            frailty,
            boundary: match self.boundary {
                BoundaryArg::LeftClosed => BoundaryRule::LeftClosed,
                BoundaryArg::RightClosed => BoundaryRule::RightClosed,
            },
            criterion: match self.criterion {
                CriterionArg::Partial => Criterion::PartialLikelihood,
                CriterionArg::Full => Criterion::FullLikelihood,
            },
            em: EmOptions {
                ties: match self.ties {
                    TiesArg::Breslow => TieMethod::Breslow,
                    TiesArg::Efron => TieMethod::Efron,
                },
                theta_update,
                tol: self.em_tol,
                max_iter: self.em_max_iter,
                trace: false,
            },
        };
        options.validate()?;
        if !(options.em.tol > 0.0) || options.em.max_iter == 0 {
            return Err(FitError::InvalidConfig(
                "--em-tol must be positive and --em-max-iter at least 1".into(),
            ));
        }
        Ok(options)
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Input CSV.
    input: PathBuf,
    #[command(flatten)]
    columns: ColumnArgs,
    /// Fit the gamma frailty model.
    #[arg(long)]
    frailty: bool,
    #[command(flatten)]
    model: ModelArgs,
    /// Report file (default: stdout). The report is JSON.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// 1, 2, 3 or `custom`.
    #[arg(long)]
    scenario: String,
    /// JSON scenario file used as the base for `custom`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Subjects per replication.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    tau_true: Option<Vec<f64>>,
    #[arg(long)]
    followup: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    beta_true: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    theta_true: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    cluster_probs: Option<Vec<f64>>,
    #[arg(long)]
    covariate_prob: Option<f64>,
    #[arg(long)]
    baseline_rate: Option<f64>,
    #[arg(long)]
    censor_prob: Option<f64>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct KmArgs {
    /// Input CSV.
    input: PathBuf,
    #[command(flatten)]
    columns: ColumnArgs,
    /// `cluster`, `all`, or a covariate name (default: first covariate, else `all`).
    #[arg(long)]
    group_by: Option<String>,
    /// Fit report whose change points are added as annotations (repeatable).
    #[arg(long)]
    annotate: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

/// A failure mapped to its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: e.to_string(),
        }
    }
}

impl From<FitError> for Failure {
    fn from(e: FitError) -> Self {
        let code = match e {
            FitError::NoEventTimes | FitError::NoCandidates(_) => EXIT_NO_CANDIDATES,
            FitError::InvalidConfig(_)
            | FitError::TooFewClusters(_)
            | FitError::InvalidPartition(_)
            | FitError::Shape(_) => EXIT_CONFIG,
            _ => EXIT_NO_CONVERGENCE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: message.into(),
    }
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose, cli.quiet);
    let run = || match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Km(a) => cmd_km(a),
    };
    let outcome = match cli.threads {
        Some(0) => Err(config_error("--threads must be at least 1")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(e) => Err(config_error(format!("cannot start thread pool: {e}"))),
        },
        None => run(),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
    log::set_max_level(level);
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure {
            code: EXIT_OUTPUT,
            message: format!("cannot write {}: {e}", p.display()),
        }),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Failure {
                    code: EXIT_OUTPUT,
                    message: format!("cannot write to stdout: {e}"),
                })
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// Comment lines carrying the configuration ahead of CSV output.
fn csv_header<T: Serialize>(config: &T) -> String {
    format!(
        "# config: {}\n",
        serde_json::to_string(config).expect("config serializes")
    )
}

fn load(input: &Path, columns: &ColumnArgs, frailty: bool) -> Result<(Dataset, Vec<String>), Failure> {
    let dataset = load_csv(input, &columns.schema())?;
    let findings = validate(&dataset, frailty);
    // A dataset without events is left to the candidate grid, which reports it.
    if let Some(fatal) = findings.iter().find(|f| !matches!(f, Finding::NoEvents)) {
        return Err(config_error(format!("invalid dataset: {fatal}")));
    }
    Ok((dataset, findings.iter().map(|f| f.to_string()).collect()))
}

#[derive(Serialize)]
struct FitConfig<'a> {
    command: &'static str,
    input: String,
    columns: ColumnSchema,
    search: &'a SearchOptions,
}

#[derive(Serialize)]
struct FitReport<'a> {
    config: FitConfig<'a>,
    subjects: usize,
    events: usize,
    clusters: Vec<String>,
    covariates: Vec<String>,
    followup: f64,
    candidates: usize,
    result: crate::changepoint::SearchResult,
}

fn cmd_fit(a: &FitArgs) -> Result<(), Failure> {
    let options = a.model.options(a.frailty)?;
    if a.columns.covariates.is_empty() {
        return Err(config_error("fit requires at least one --covariates column"));
    }
    let (dataset, findings) = load(&a.input, &a.columns, a.frailty)?;
    for f in &findings {
        warn!("{f}");
    }
    info!(
        "{} subjects, {} events, {} clusters",
        dataset.len(),
        dataset.n_events(),
        dataset.n_clusters()
    );
    let result = search(&dataset, &options)?;
    info!("best change points {:?}, criterion {}", result.best.taus, result.criterion);
    let report = FitReport {
        config: FitConfig {
            command: "fit",
            input: a.input.display().to_string(),
            columns: a.columns.schema(),
            search: &options,
        },
        subjects: dataset.len(),
        events: dataset.n_events(),
        clusters: dataset.cluster_labels.clone(),
        covariates: dataset.covariate_names.clone(),
        followup: dataset.followup,
        candidates: result.trace.len(),
        result,
    };
    write_output(a.output.as_deref(), &to_json(&report))?;
    if report.result.best.converged {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_NO_CONVERGENCE,
            message: "the selected fit did not converge".into(),
        })
    }
}

fn scenario_config(a: &SimulateArgs) -> Result<ScenarioConfig, Failure> {
    let mut config = match a.scenario.as_str() {
        "custom" => match &a.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| config_error(format!("invalid scenario file: {e}")))?
            }
            None => ScenarioConfig {
                name: "custom".into(),
                ..ScenarioConfig::scenario(1)?
            },
        },
        id => {
            if a.config.is_some() {
                return Err(config_error("--config only applies to --scenario custom"));
            }
            let id: u8 = id
                .parse()
                .map_err(|_| config_error(format!("unknown scenario `{id}`")))?;
            ScenarioConfig::scenario(id)?
        }
    };
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = &a.$field {
                config.$field = v.clone();
            }
        )*};
    }
    set!(replications, seed, n, tau_true, followup, beta_true, theta_true);
    set!(cluster_probs, covariate_prob, baseline_rate, censor_prob);
    config.validate()?;
    Ok(config)
}

#[derive(Serialize)]
struct SimulateConfig<'a> {
    command: &'static str,
    scenario: &'a ScenarioConfig,
    search: &'a SearchOptions,
}

#[derive(Serialize)]
struct SimulateReport<'a> {
    config: SimulateConfig<'a>,
    table: crate::simulate::BiasMseTable,
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), Failure> {
    let scenario = scenario_config(a)?;
    let mut options = a.model.options(false)?;
    options.k = scenario.tau_true.len();
    info!(
        "{}: {} replications, seed {}",
        scenario.name, scenario.replications, scenario.seed
    );
    let table = run_study(&scenario, &options)?;
    let config = SimulateConfig {
        command: "simulate",
        scenario: &scenario,
        search: &options,
    };
    let text = match a.format {
        FormatArg::Json => to_json(&SimulateReport { config, table }),
        FormatArg::Csv => {
            let mut s = csv_header(&config);
            let _ = writeln!(
                s,
                "# failures: no-frailty {}, frailty {}",
                table.failures_no_frailty, table.failures_frailty
            );
            s + &table.to_csv()
        }
    };
    write_output(a.output.as_deref(), &text)
}

/// Change points of a `fit` report, labelled by model.
fn read_annotations(path: &Path) -> Result<Vec<Annotation>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
    let bad = || config_error(format!("{} is not a fit report", path.display()));
    let report: serde_json::Value = serde_json::from_str(&text).map_err(|_| bad())?;
    let frailty = report["config"]["search"]["frailty"].as_bool().ok_or_else(bad)?;
    let taus = report["result"]["best"]["taus"].as_array().ok_or_else(bad)?;
    let label = if frailty { "frailty" } else { "no-frailty" };
    taus.iter()
        .map(|t| {
            Ok(Annotation {
                time: t.as_f64().ok_or_else(bad)?,
                label: label.to_string(),
            })
        })
        .collect()
}

#[derive(Serialize)]
struct KmConfig {
    command: &'static str,
    input: String,
    columns: ColumnSchema,
    group_by: String,
    annotate: Vec<String>,
}

#[derive(Serialize)]
struct KmReport {
    config: KmConfig,
    curves: Vec<crate::km::SurvivalCurve>,
}

fn cmd_km(a: &KmArgs) -> Result<(), Failure> {
    let (dataset, _) = load(&a.input, &a.columns, false)?;
    let group_label = a
        .group_by
        .clone()
        .or_else(|| a.columns.covariates.first().cloned())
        .unwrap_or_else(|| "all".into());
    let group_by = match group_label.as_str() {
        "all" => GroupBy::All,
        "cluster" => GroupBy::Cluster,
        name => GroupBy::Covariate(name.to_string()),
    };
    let mut curves = kaplan_meier(&dataset, &group_by).map_err(|e| config_error(e.to_string()))?;
    let mut annotations = Vec::new();
    for path in &a.annotate {
        annotations.extend(read_annotations(path)?);
    }
    annotate(&mut curves, &annotations);
    let config = KmConfig {
        command: "km",
        input: a.input.display().to_string(),
        columns: a.columns.schema(),
        group_by: group_label,
        annotate: a.annotate.iter().map(|p| p.display().to_string()).collect(),
    };
    let text = match a.format {
        FormatArg::Json => to_json(&KmReport { config, curves }),
        FormatArg::Csv => {
            let mut s = csv_header(&config);
            for an in &annotations {
                let _ = writeln!(s, "# annotation: {} {}", an.label, an.time);
            }
            s + &export_curves(&curves, CurveFormat::Csv)
        }
    };
    write_output(a.output.as_deref(), &text)
}
