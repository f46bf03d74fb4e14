//! Command-line front end: configuration, command dispatch and CSV output.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::analysis::{self, AnalysisError, Options};
use crate::net::{build_network, check_feasibility, NetError, Network};
use crate::rng::GENERATOR_ID;
use crate::sim::{self, SimConfig, SimError, SimResult};
use crate::threshold::{precision, ThresholdError};
use crate::Scheme;

pub mod config;
pub mod validate;

pub use config::{parse_config, parse_config_str, Point, RunConfig, Topology};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid config field `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("infeasible network: {0}")]
    Infeasible(String),
    #[error("command `{0}` needs {1}")]
    Missing(&'static str, &'static str),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

impl CliError {
    pub fn invalid(field: &str, message: impl Into<String>) -> Self {
        CliError::Invalid {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "kage",
    version,
    about = "k-keys version age on gossip networks"
)]
pub struct Args {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file; defaults to the config's `output`, then stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Omit the timestamp from output metadata.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Write one line per simulated event to this file.
    #[arg(long, global = true)]
    pub emit_event_log: Option<PathBuf>,
    /// Overrides the config's warmup fraction.
    #[arg(long, global = true)]
    pub warmup: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Closed-form ages for the configured point.
    Analyze,
    /// Simulate the configured point and compare with the closed forms.
    Simulate,
    /// Closed forms (and optionally simulations) over the sweep grid.
    Sweep,
    /// Memory-critical gossip rate over the sweep grid.
    CriticalRate,
    /// Required keys and precision over the sweep grid.
    Precision,
    /// Run the oracle and property suites.
    Validate {
        /// Smaller budget for smoke runs.
        #[arg(long)]
        quick: bool,
    },
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Analyze => "analyze",
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
            Command::CriticalRate => "critical-rate",
            Command::Precision => "precision",
            Command::Validate { .. } => "validate",
        }
    }
}

/// One CSV row; the column order is fixed for every age-reporting command.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Row {
    pub scheme: Option<Scheme>,
    pub n: usize,
    pub k: Option<usize>,
    pub lambda_s: f64,
    pub lambda_e_or_edge_profile_id: String,
    pub beta: Option<f64>,
    pub alpha: Option<f64>,
    pub analytic_age: Option<f64>,
    pub empirical_age: Option<f64>,
    pub ci_half_width: Option<f64>,
    pub horizon: Option<f64>,
    pub seed: Option<u64>,
    pub node_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalRow {
    pub k: usize,
    pub n: usize,
    pub lambda_s: f64,
    pub epsilon: f64,
    pub critical_lambda_e: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrecisionRow {
    pub node_id: String,
    pub n: usize,
    pub beta: f64,
    pub alpha: f64,
    pub k: usize,
    pub precision: f64,
    pub feasible: bool,
}

/// What a command produced.
#[derive(Debug)]
pub enum Output {
    Ages(Vec<Row>),
    Critical(Vec<CriticalRow>),
    Precision(Vec<PrecisionRow>),
    Validation(validate::Report),
}

fn profile_label(topology: &Topology) -> String {
    match topology {
        Topology::Shn { lambda_e, .. } => lambda_e.to_string(),
        Topology::Explicit { profile_id, .. } => profile_id.clone(),
    }
}

fn common<T: Copy + PartialEq>(values: Option<&Vec<T>>) -> Option<T> {
    let v = values?;
    let first = *v.first()?;
    v.iter().all(|&x| x == first).then_some(first)
}

struct PointContext {
    network: Network,
    keys: config::ResolvedKeys,
    label: String,
}

fn prepare(point: &Point, cfg: &RunConfig) -> Result<PointContext, CliError> {
    let keys = point.resolve_keys()?;
    if !keys.unreachable.is_empty() {
        return Err(CliError::Infeasible(format!(
            "precision target needs more than n - 1 keys at node(s) {:?}",
            keys.unreachable
        )));
    }
    let network = build_network(&point.network_spec())?;
    let report = check_feasibility(&network, &keys.k, cfg.feasibility)?;
    if !report.feasible {
        let nodes: Vec<_> = report.unsatisfied().map(|r| r.node).collect();
        return Err(CliError::Infeasible(format!(
            "node(s) {nodes:?} need more keys than their in-degree"
        )));
    }
    Ok(PointContext {
        network,
        label: profile_label(&point.topology),
        keys,
    })
}

impl PointContext {
    fn base_row(&self, point: &Point, scheme: Option<Scheme>) -> Row {
        Row {
            scheme,
            n: point.n(),
            k: self.keys.uniform(),
            lambda_s: point.lambda_s,
            lambda_e_or_edge_profile_id: self.label.clone(),
            beta: common(self.keys.beta.as_ref()),
            alpha: common(self.keys.alpha.as_ref()),
            node_id: "all".to_string(),
            ..Row::default()
        }
    }

    fn node_row(&self, point: &Point, scheme: Scheme, node: usize) -> Row {
        Row {
            k: Some(self.keys.k[node - 1]),
            beta: self.keys.beta.as_ref().map(|b| b[node - 1]),
            alpha: self.keys.alpha.as_ref().map(|a| a[node - 1]),
            node_id: node.to_string(),
            ..self.base_row(point, Some(scheme))
        }
    }

    fn symmetric_k(&self) -> Option<usize> {
        if self.network.is_shn() {
            self.keys.uniform()
        } else {
            None
        }
    }

    /// Closed form for one node, `None` when the node cannot decode.
    fn analytic(
        &self,
        scheme: Scheme,
        node: usize,
        opts: &Options,
    ) -> Result<Option<f64>, CliError> {
        match analysis::age(scheme, &self.network, node, self.keys.k[node - 1], opts) {
            Ok(a) => Ok(Some(a.value)),
            Err(AnalysisError::InfeasibleNode { .. }) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn shn_analytic(&self, scheme: Scheme, k: usize, point: &Point) -> Result<f64, CliError> {
        let (n, lambda_e) = match point.topology {
            Topology::Shn { n, lambda_e } => (n, lambda_e),
            Topology::Explicit { .. } => unreachable!("symmetric only for SHN"),
        };
        Ok(match scheme {
            Scheme::Memory => analysis::shn_age_memory(n, k, lambda_e, point.lambda_s)?,
            Scheme::Memoryless => analysis::shn_age_memoryless(n, k, lambda_e, point.lambda_s)?,
        })
    }
}

fn options(cfg: &RunConfig) -> Options {
    Options {
        exact_threshold: cfg.exact_threshold,
        ..Options::default()
    }
}

/// Closed-form rows for one point: a single `all` row per scheme on
/// symmetric SHNs, one row per receiver otherwise.
pub fn analytic_rows(point: &Point, cfg: &RunConfig) -> Result<Vec<Row>, CliError> {
    let ctx = prepare(point, cfg)?;
    let opts = options(cfg);
    let mut rows = Vec::new();
    for &scheme in &cfg.schemes {
        if let Some(k) = ctx.symmetric_k() {
            rows.push(Row {
                analytic_age: Some(ctx.shn_analytic(scheme, k, point)?),
                ..ctx.base_row(point, Some(scheme))
            });
        } else {
            for j in ctx.network.receivers() {
                rows.push(Row {
                    analytic_age: ctx.analytic(scheme, j, &opts)?,
                    ..ctx.node_row(point, scheme, j)
                });
            }
        }
    }
    Ok(rows)
}

fn sim_config(
    cfg: &RunConfig,
    command: &'static str,
    seed: Option<u64>,
) -> Result<SimConfig, CliError> {
    let horizon = cfg.horizon.ok_or(CliError::Missing(command, "`horizon`"))?;
    let seed = seed
        .or(cfg.seed)
        .ok_or(CliError::Missing(command, "a seed (`seed` or --seed)"))?;
    let mut sc = SimConfig::new(horizon, seed);
    sc.warmup = cfg.warmup;
    sc.batches = cfg.batches;
    Ok(sc)
}

const CONFIDENCE: f64 = 0.95;

/// Simulated rows for one point. With `per_node`, every receiver gets a
/// row; symmetric SHNs also get the cross-node `all` row.
fn simulated_rows(
    point: &Point,
    cfg: &RunConfig,
    sc: &SimConfig,
    per_node: bool,
    mut log: Option<&mut Vec<(Scheme, SimResult)>>,
) -> Result<Vec<Row>, CliError> {
    let ctx = prepare(point, cfg)?;
    let opts = options(cfg);
    let mut rows = Vec::new();
    for &scheme in &cfg.schemes {
        let mut run_cfg = sc.clone();
        run_cfg.record_events = log.is_some();
        let result = sim::run(&ctx.network, &ctx.keys.k, scheme, &run_cfg)?;
        let stamp = |row: Row| Row {
            horizon: Some(sc.horizon),
            seed: Some(sc.seed),
            ..row
        };
        if let Some(k) = ctx.symmetric_k() {
            let est = result.network_average(CONFIDENCE);
            rows.push(stamp(Row {
                analytic_age: Some(ctx.shn_analytic(scheme, k, point)?),
                empirical_age: Some(est.point),
                ci_half_width: Some(est.half_width),
                ..ctx.base_row(point, Some(scheme))
            }));
        }
        if per_node || ctx.symmetric_k().is_none() {
            for outcome in &result.nodes {
                rows.push(stamp(Row {
                    analytic_age: ctx.analytic(scheme, outcome.node, &opts)?,
                    empirical_age: Some(outcome.estimate.point),
                    ci_half_width: Some(outcome.estimate.half_width),
                    ..ctx.node_row(point, scheme, outcome.node)
                }));
            }
        }
        if let Some(log) = log.as_deref_mut() {
            log.push((scheme, result));
        }
    }
    Ok(rows)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Pool(e.to_string()))
}

/// Runs `command` against `cfg` and returns its rows.
pub fn run_command(
    command: Command,
    cfg: &RunConfig,
    seed: Option<u64>,
    jobs: usize,
    event_log: Option<&Path>,
) -> Result<Output, CliError> {
    match command {
        Command::Analyze => Ok(Output::Ages(analytic_rows(&cfg.base_point(), cfg)?)),
        Command::Simulate => {
            let sc = sim_config(cfg, "simulate", seed)?;
            let mut results = Vec::new();
            let rows = simulated_rows(
                &cfg.base_point(),
                cfg,
                &sc,
                true,
                event_log.map(|_| &mut results),
            )?;
            if let Some(path) = event_log {
                write_event_log(path, &results)?;
            }
            Ok(Output::Ages(rows))
        }
        Command::Sweep => {
            let sc = if cfg.simulate {
                Some(sim_config(cfg, "sweep", seed)?)
            } else {
                None
            };
            let grid = cfg.grid();
            let chunks: Vec<Result<Vec<Row>, CliError>> = pool(jobs)?.install(|| {
                grid.par_iter()
                    .map(|p| sweep_point(p, cfg, sc.as_ref()))
                    .collect()
            });
            let mut rows = Vec::new();
            for chunk in chunks {
                rows.extend(chunk?);
            }
            Ok(Output::Ages(rows))
        }
        Command::CriticalRate => critical_rows(cfg).map(Output::Critical),
        Command::Precision => precision_rows(cfg).map(Output::Precision),
        Command::Validate { quick } => {
            let budget = if quick {
                validate::Budget::quick()
            } else {
                validate::Budget::default()
            };
            Ok(Output::Validation(validate::run_suites(
                &budget,
                seed.or(cfg.seed).unwrap_or(1),
            )))
        }
    }
}

fn sweep_point(
    point: &Point,
    cfg: &RunConfig,
    sc: Option<&SimConfig>,
) -> Result<Vec<Row>, CliError> {
    match analytic_rows(point, cfg) {
        Ok(mut rows) => {
            if let Some(sc) = sc {
                rows.extend(simulated_rows(point, cfg, sc, false, None)?);
            }
            Ok(rows)
        }
        // infeasible grid points still get a row so the grid stays rectangular
        Err(CliError::Infeasible(_)) => {
            let keys = point.resolve_keys()?;
            Ok(cfg
                .schemes
                .iter()
                .map(|&scheme| Row {
                    scheme: Some(scheme),
                    n: point.n(),
                    k: keys.uniform(),
                    lambda_s: point.lambda_s,
                    lambda_e_or_edge_profile_id: profile_label(&point.topology),
                    beta: common(keys.beta.as_ref()),
                    alpha: common(keys.alpha.as_ref()),
                    node_id: "all".to_string(),
                    ..Row::default()
                })
                .collect())
        }
        Err(e) => Err(e),
    }
}

fn critical_rows(cfg: &RunConfig) -> Result<Vec<CriticalRow>, CliError> {
    if cfg.epsilons.is_empty() {
        return Err(CliError::Missing("critical-rate", "`epsilon`"));
    }
    let mut rows = Vec::new();
    for point in cfg.grid() {
        let n = match point.topology {
            Topology::Shn { n, .. } => n,
            Topology::Explicit { .. } => {
                return Err(CliError::invalid("network", "critical-rate needs an SHN"))
            }
        };
        let k = point
            .resolve_keys()?
            .uniform()
            .ok_or_else(|| CliError::invalid("k", "critical-rate needs one k for all nodes"))?;
        for &epsilon in &cfg.epsilons {
            let rate =
                analysis::critical_gossip_rate(k, n, point.lambda_s, epsilon, cfg.search_interval)?;
            rows.push(CriticalRow {
                k,
                n,
                lambda_s: point.lambda_s,
                epsilon,
                critical_lambda_e: rate,
                gap: analysis::shn_age_gap(n, k, rate, point.lambda_s)?,
            });
        }
    }
    Ok(rows)
}

fn precision_rows(cfg: &RunConfig) -> Result<Vec<PrecisionRow>, CliError> {
    let mut rows = Vec::new();
    for point in cfg.grid() {
        let keys = point.resolve_keys()?;
        let (beta, alpha) = match (&keys.beta, &keys.alpha) {
            (Some(b), Some(a)) => (b, a),
            _ => {
                return Err(CliError::invalid(
                    "beta",
                    "precision needs a beta/alpha threshold",
                ))
            }
        };
        let n = point.n();
        let symmetric = common(Some(beta)).is_some() && common(Some(alpha)).is_some();
        let nodes: Vec<usize> = if symmetric {
            vec![1]
        } else {
            (1..=n).collect()
        };
        for j in nodes {
            let k = keys.k[j - 1];
            rows.push(PrecisionRow {
                node_id: if symmetric {
                    "all".to_string()
                } else {
                    j.to_string()
                },
                n,
                beta: beta[j - 1],
                alpha: alpha[j - 1],
                k,
                precision: precision(k.min(n), n, beta[j - 1])?,
                feasible: !keys.unreachable.contains(&j),
            });
        }
    }
    Ok(rows)
}

fn write_event_log(path: &Path, results: &[(Scheme, SimResult)]) -> Result<(), CliError> {
    let io = |e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(out, "scheme,time,kind,link,keys,ages").map_err(io)?;
    for (scheme, result) in results {
        for rec in result.event_log.iter().flatten() {
            writeln!(out, "{scheme},{rec}").map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

/// Metadata lines written as `# key: value` before the CSV header.
pub fn metadata(
    command: Command,
    cfg: Option<&RunConfig>,
    seed: Option<u64>,
    deterministic: bool,
) -> Vec<(String, String)> {
    let mut meta = vec![
        ("kage".to_string(), VERSION.to_string()),
        ("command".to_string(), command.name().to_string()),
        ("generator".to_string(), GENERATOR_ID.to_string()),
    ];
    if let Some(seed) = seed.or(cfg.and_then(|c| c.seed)) {
        meta.push(("seed".to_string(), seed.to_string()));
    }
    if let Some(cfg) = cfg {
        meta.push(("config".to_string(), cfg.echo.clone()));
        if cfg.warmup > 0.0 {
            meta.push(("warmup".to_string(), cfg.warmup.to_string()));
        }
        if let Ok(keys) = cfg.base_point().resolve_keys() {
            let list: Vec<String> = keys.k.iter().map(usize::to_string).collect();
            meta.push(("resolved_k".to_string(), list.join(" ")));
        }
    }
    if !deterministic {
        let now = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        meta.push(("timestamp".to_string(), now.to_string()));
    }
    meta
}

fn write_rows<R: Serialize>(
    out: &mut dyn Write,
    meta: &[(String, String)],
    rows: &[R],
    header: &[&str],
) -> Result<(), CliError> {
    let io = |e| CliError::Io {
        path: PathBuf::from("<output>"),
        source: e,
    };
    for (key, value) in meta {
        writeln!(out, "# {key}: {value}").map_err(io)?;
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(io)
}

pub const AGE_COLUMNS: [&str; 13] = [
    "scheme",
    "n",
    "k",
    "lambda_s",
    "lambda_e_or_edge_profile_id",
    "beta",
    "alpha",
    "analytic_age",
    "empirical_age",
    "ci_half_width",
    "horizon",
    "seed",
    "node_id",
];

/// Writes a command's output as metadata plus CSV.
pub fn write_output(
    out: &mut dyn Write,
    meta: &[(String, String)],
    output: &Output,
) -> Result<(), CliError> {
    match output {
        Output::Ages(rows) => write_rows(out, meta, rows, &AGE_COLUMNS),
        Output::Critical(rows) => write_rows(
            out,
            meta,
            rows,
            &["k", "n", "lambda_s", "epsilon", "critical_lambda_e", "gap"],
        ),
        Output::Precision(rows) => write_rows(
            out,
            meta,
            rows,
            &[
                "node_id",
                "n",
                "beta",
                "alpha",
                "k",
                "precision",
                "feasible",
            ],
        ),
        Output::Validation(report) => {
            let io = |e| CliError::Io {
                path: PathBuf::from("<output>"),
                source: e,
            };
            for line in report.lines() {
                writeln!(out, "{line}").map_err(io)?;
            }
            writeln!(out, "{}", report.summary_json()).map_err(io)
        }
    }
}

/// Entry point behind `main`; returns the process exit code.
pub fn execute(args: &Args) -> Result<i32, CliError> {
    let cfg = match (&args.config, args.command) {
        (Some(path), _) => {
            let mut cfg = parse_config(path)?;
            if let Some(w) = args.warmup {
                if !(0.0..1.0).contains(&w) {
                    return Err(CliError::invalid("warmup", "must lie in [0, 1)"));
                }
                cfg.warmup = w;
            }
            Some(cfg)
        }
        (None, Command::Validate { .. }) => None,
        (None, _) => return Err(CliError::Missing(args.command.name(), "--config")),
    };
    let output = match &cfg {
        Some(cfg) => run_command(
            args.command,
            cfg,
            args.seed,
            args.jobs,
            args.emit_event_log.as_deref(),
        )?,
        None => {
            let quick = matches!(args.command, Command::Validate { quick: true });
            let budget = if quick {
                validate::Budget::quick()
            } else {
                validate::Budget::default()
            };
            Output::Validation(validate::run_suites(&budget, args.seed.unwrap_or(1)))
        }
    };
    let meta = metadata(args.command, cfg.as_ref(), args.seed, args.deterministic);
    let target = args
        .out
        .clone()
        .or_else(|| cfg.as_ref().and_then(|c| c.output.clone()));
    match target {
        Some(path) => {
            let file = std::fs::File::create(&path).map_err(|e| CliError::Io {
                path: path.clone(),
                source: e,
            })?;
            let mut w = std::io::BufWriter::new(file);
            write_output(&mut w, &meta, &output)?;
            if let Output::Validation(report) = &output {
                for line in report.lines() {
                    println!("{line}");
                }
            }
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write_output(&mut lock, &meta, &output)?;
        }
    }
    Ok(match &output {
        Output::Validation(report) if !report.all_passed() => 1,
        _ => 0,
    })
}
