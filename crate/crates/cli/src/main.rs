//! `adamec` command-line driver: predictor training, pre-partition, scenario
//! simulation and report tables.
//!
//! Exit codes: 0 success, 2 invalid input, 3 insufficient data, 4 I/O failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adamec::graph::{DnnGraph, OperatorKind};
use adamec::manifest::{load_scheme, serialize_atoms};
use adamec::predictor::{train_predictor, ExactEstimator, LatencyEstimator, Predictor, TrainingConfig};
use adamec::prepartition::evaluate_cuts;
use adamec::sim::metrics::{MetricRow, EVENT_PREFIX, RESIDENT, RESPONSE};
use adamec::sim::{run_scenario_with, scenario_scheme, MetricsLog, Scenario, Strategy, Summary};
use adamec::{Error, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "adamec", version, about = "Adaptive DNN offloading pipeline on a synthetic device oracle")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train per-device latency predictors and write their accuracy tables.
    TrainPredictor(TrainArgs),
    /// Pre-partition a model into atoms and write the manifests.
    Prepartition(PrepartitionArgs),
    /// Replay a scenario under one or more strategies.
    Simulate(SimulateArgs),
    /// Merge metric logs into plot-ready tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Scenario whose device roster is profiled.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Multiplier on every kind's sample budget.
    #[arg(long, default_value_t = 1.0)]
    budget_scale: f64,
}

/// Inputs and overrides shared by the scenario-driven commands.
#[derive(Args)]
struct ScenarioArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Graph JSON replacing the scenario's builder model.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Trained predictor; the noiseless oracle is used when absent.
    #[arg(long)]
    models: Option<PathBuf>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    mu_d: Option<f64>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PrepartitionArgs {
    #[command(flatten)]
    input: ScenarioArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    input: ScenarioArgs,
    /// Strategies to run; all four when omitted.
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<String>,
    /// Manifest directory written by `prepartition`; pre-partitions afresh when absent.
    #[arg(long)]
    atoms: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding the logs written by `simulate`.
    #[arg(long)]
    logs: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ADAMEC_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::TrainPredictor(a) => train(&a),
        Command::Prepartition(a) => prepartition(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Report(a) => report(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InsufficientData(_) => 3,
        Error::Io { .. } => 4,
        _ => 2,
    }
}

fn read_input(path: &Path) -> Result<String> {
    if !path.is_file() {
        return Err(Error::InvalidArgument(format!("input {} does not exist", path.display())));
    }
    fs::read_to_string(path).map_err(|source| io_error(path, source))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    write(path, w.into_inner().expect("in-memory flush"))
}

// ---- train-predictor ----

#[derive(Serialize)]
struct KindRow<'a> {
    device: &'a str,
    kind: OperatorKind,
    n_train: usize,
    n_test: usize,
    train_score: f64,
    r2: f64,
    mae_ms: f64,
    rmse_ms: f64,
    acc5: f64,
    acc10: f64,
}

#[derive(Serialize)]
struct BiasRow<'a> {
    device: &'a str,
    degenerate: bool,
    sub_threshold: usize,
    rmse_forest_ms: f64,
    rmse_corrected_ms: f64,
    reduction: f64,
}

fn train(a: &TrainArgs) -> Result<()> {
    let scenario = Scenario::from_json(&read_input(&a.scenario)?)?;
    if scenario.devices.is_empty() {
        return Err(Error::InvalidArgument("scenario lists no device profiles".into()));
    }
    if !(a.budget_scale > 0.0) {
        return Err(Error::InvalidArgument("--budget-scale must be positive".into()));
    }
    // Every kind is trained so the models cover whole graphs; the accuracy
    // table lists the profiled kinds and report.json holds the rest.
    let cfg = TrainingConfig {
        kinds: OperatorKind::ALL.to_vec(),
        budget_scale: a.budget_scale,
        seed: a.seed,
        ..TrainingConfig::default()
    };
    let (predictor, reports) = train_predictor(&scenario.devices, &cfg)?;
    create_dir(&a.out)?;
    predictor.save(&a.out.join("models.json"))?;
    let mut kinds = Vec::new();
    let mut bias = Vec::new();
    for r in &reports {
        for k in r.kinds.iter().filter(|k| OperatorKind::PROFILED.contains(&k.kind)) {
            log::info!("{} {}: R² {:.3}, ±10% {:.3}", r.device, k.kind, k.test.r2, k.test.acc10);
            kinds.push(KindRow {
                device: &r.device,
                kind: k.kind,
                n_train: k.n_train,
                n_test: k.n_test,
                train_score: k.train_score,
                r2: k.test.r2,
                mae_ms: k.test.mae,
                rmse_ms: k.test.rmse,
                acc5: k.test.acc5,
                acc10: k.test.acc10,
            });
        }
        bias.push(BiasRow {
            device: &r.device,
            degenerate: r.bias.degenerate,
            sub_threshold: r.bias.sub_threshold,
            rmse_forest_ms: r.bias.rmse_forest,
            rmse_corrected_ms: r.bias.rmse_corrected,
            reduction: r.bias.reduction(),
        });
    }
    write_csv(&a.out.join("metrics.csv"), &kinds)?;
    write_csv(&a.out.join("bias.csv"), &bias)?;
    write(&a.out.join("report.json"), serde_json::to_string_pretty(&reports).expect("reports serialize"))
}

// ---- shared scenario loading ----

struct Loaded {
    scenario: Scenario,
    graph: DnnGraph,
    estimator: Box<dyn LatencyEstimator>,
}

fn load(a: &ScenarioArgs) -> Result<Loaded> {
    let mut scenario = Scenario::from_json(&read_input(&a.scenario)?)?;
    let w = &mut scenario.weights;
    w.lambda1 = a.lambda1.unwrap_or(w.lambda1);
    w.lambda2 = a.lambda2.unwrap_or(w.lambda2);
    let p = &mut scenario.priorities;
    p.alpha = a.alpha.unwrap_or(p.alpha);
    p.beta = a.beta.unwrap_or(p.beta);
    p.gamma = a.gamma.unwrap_or(p.gamma);
    scenario.search.k = a.k.unwrap_or(scenario.search.k);
    scenario.search.mu_d = a.mu_d.unwrap_or(scenario.search.mu_d);
    scenario.seed = a.seed.unwrap_or(scenario.seed);
    scenario.validate()?;
    let graph = match &a.graph {
        Some(path) => DnnGraph::from_json(&read_input(path)?)?,
        None => scenario.graph()?,
    };
    let estimator: Box<dyn LatencyEstimator> = match &a.models {
        Some(path) => {
            let p = Predictor::from_json(&read_input(path)?)?;
            if let Some(d) = scenario.devices.iter().find(|d| !p.devices.contains_key(&d.id)) {
                return Err(Error::InvalidArgument(format!("models carry no predictor for device '{}'", d.id)));
            }
            Box::new(p)
        }
        None => Box::new(ExactEstimator),
    };
    Ok(Loaded { scenario, graph, estimator })
}

// ---- prepartition ----

#[derive(Serialize)]
struct BenefitRow {
    cut_index: usize,
    producer: String,
    crossing_bytes: u64,
    t_dev_ms: f64,
    t_exe_ms: f64,
    t_tran_ms: f64,
    device: String,
    benefit: f64,
    retained: bool,
}

fn prepartition(a: &PrepartitionArgs) -> Result<()> {
    let Loaded { scenario, graph, estimator } = load(&a.input)?;
    let scheme = scenario_scheme(&scenario, &graph, estimator.as_ref())?;
    // Benefits under the reference the scheme was cut for.
    let rows: Vec<BenefitRow> = evaluate_cuts(&graph, &scenario.devices, &scheme.ref_ctx, estimator.as_ref(), &scenario.weights)?
        .into_iter()
        .map(|e| BenefitRow {
            cut_index: e.cut.index,
            producer: graph.node(e.cut.crossing_edge.from).label.clone(),
            crossing_bytes: e.cut.crossing_bytes,
            t_dev_ms: e.t_dev,
            t_exe_ms: e.t_exe,
            t_tran_ms: e.t_tran,
            device: e.device.map_or_else(String::new, |d| scenario.devices[d].id.clone()),
            benefit: e.benefit,
            retained: scheme.retained.contains(&e.cut.index),
        })
        .collect();
    create_dir(&a.out)?;
    let written = serialize_atoms(&scheme, &a.out)?;
    write_csv(&a.out.join("benefits.csv"), &rows)?;
    log::info!("{} atoms, {} files", scheme.atoms.len(), written.len());
    println!("{} atoms from {} cut points", scheme.atoms.len(), rows.len());
    Ok(())
}

// ---- simulate ----

#[derive(Serialize)]
struct SummaryRow {
    strategy: String,
    requests: usize,
    mean_response_ms: f64,
    p50_response_ms: f64,
    p95_response_ms: f64,
    max_response_ms: f64,
    offload_bytes: f64,
    searches: usize,
    evictions: usize,
    /// `device=MB` pairs joined by `;`.
    peak_resident_mb: String,
}

impl From<&Summary> for SummaryRow {
    fn from(s: &Summary) -> Self {
        SummaryRow {
            strategy: s.strategy.clone(),
            requests: s.requests,
            mean_response_ms: s.mean_response_ms,
            p50_response_ms: s.p50_response_ms,
            p95_response_ms: s.p95_response_ms,
            max_response_ms: s.max_response_ms,
            offload_bytes: s.offload_bytes,
            searches: s.searches,
            evictions: s.evictions,
            peak_resident_mb: s.peak_resident_mb.iter().map(|(d, v)| format!("{d}={v}")).collect::<Vec<_>>().join(";"),
        }
    }
}

/// Metric name of wall-clock decision timings; they live in their own files
/// because they differ between runs.
const DECISION_WALL: &str = "decision_wall_ms";
const TIMING_SUFFIX: &str = ".timing.csv";

fn simulate(a: &SimulateArgs) -> Result<()> {
    let Loaded { scenario, graph, estimator } = load(&a.input)?;
    let strategies = if a.strategy.is_empty() {
        Strategy::ALL.to_vec()
    } else {
        a.strategy.iter().map(|s| Strategy::parse(s)).collect::<Result<Vec<_>>>()?
    };
    let scheme = if !strategies.contains(&Strategy::Adamec) {
        None
    } else if let Some(dir) = &a.atoms {
        if !dir.is_dir() {
            return Err(Error::InvalidArgument(format!("atom directory {} does not exist", dir.display())));
        }
        Some(load_scheme(dir)?)
    } else {
        Some(scenario_scheme(&scenario, &graph, estimator.as_ref())?)
    };

    let estimator = estimator.as_ref();
    let outputs = std::thread::scope(|s| {
        let handles: Vec<_> = strategies
            .iter()
            .map(|&strategy| {
                let run = Scenario { strategy, ..scenario.clone() };
                let (graph, scheme) = (&graph, scheme.as_ref());
                s.spawn(move || run_scenario_with(&run, graph, scheme, estimator))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect::<Result<Vec<_>>>()
    })?;

    create_dir(&a.out)?;
    let mut summary = Vec::new();
    for out in &outputs {
        let name = out.strategy.name();
        write(&a.out.join(format!("{name}.csv")), out.log.to_csv())?;
        write(&a.out.join(format!("{name}.json")), out.to_json())?;
        let mut timing = MetricsLog::new(name);
        for (d, ms) in out.decisions.iter().zip(&out.decision_wall_ms) {
            timing.push(d.t_s, DECISION_WALL, "", *ms);
        }
        write(&a.out.join(format!("{name}{TIMING_SUFFIX}")), timing.to_csv())?;
        let s = out.log.summary();
        println!("{name}: {} requests, mean {:.3} ms, {} searches", s.requests, s.mean_response_ms, s.searches);
        summary.push(SummaryRow::from(&s));
    }
    write_csv(&a.out.join("summary.csv"), &summary)
}

// ---- report ----

#[derive(Serialize)]
struct MergedRow<'a> {
    strategy: &'a str,
    t_s: f64,
    metric: &'a str,
    device: &'a str,
    value: f64,
}

#[derive(Serialize)]
struct HistogramRow<'a> {
    strategy: &'a str,
    lower_ms: f64,
    upper_ms: f64,
    count: usize,
}

const HISTOGRAM_BIN_MS: f64 = 0.25;

/// Reads every metric log in `dir`, keyed by strategy name. Timing rows are
/// folded into the log of their strategy.
fn read_logs(dir: &Path) -> Result<BTreeMap<String, Vec<MetricRow>>> {
    if !dir.is_dir() {
        return Err(Error::InvalidArgument(format!("log directory {} does not exist", dir.display())));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_error(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| io_error(dir, e)))
        .collect::<Result<_>>()?;
    paths.sort();
    let mut logs: BTreeMap<String, Vec<MetricRow>> = BTreeMap::new();
    for path in paths {
        let Some(file) = path.file_name().and_then(|f| f.to_str()) else { continue };
        let Some(stem) = file.strip_suffix(TIMING_SUFFIX).or_else(|| file.strip_suffix(".csv")) else { continue };
        if Strategy::parse(stem).is_err() {
            continue;
        }
        let text = read_input(&path)?;
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let rows = r
            .deserialize::<MetricRow>()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        logs.entry(stem.to_string()).or_default().extend(rows);
    }
    if logs.is_empty() {
        return Err(Error::InvalidArgument(format!("no strategy logs in {}", dir.display())));
    }
    Ok(logs)
}

fn report(a: &ReportArgs) -> Result<()> {
    let logs = read_logs(&a.logs)?;
    let mut merged = Vec::new();
    let mut latency = Vec::new();
    let mut memory = Vec::new();
    let mut histogram = Vec::new();
    let mut summary = Vec::new();
    for (strategy, rows) in &logs {
        for r in rows {
            let row = MergedRow { strategy, t_s: r.t_s, metric: &r.metric, device: &r.device, value: r.value };
            if r.metric == RESPONSE || r.metric.starts_with(EVENT_PREFIX) {
                latency.push(MergedRow { ..row });
            } else if r.metric == RESIDENT {
                memory.push(MergedRow { ..row });
            }
            merged.push(row);
        }
        let mut bins: BTreeMap<u64, usize> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.metric == DECISION_WALL) {
            *bins.entry((r.value / HISTOGRAM_BIN_MS).floor() as u64).or_default() += 1;
        }
        for (bin, count) in bins {
            let lower_ms = bin as f64 * HISTOGRAM_BIN_MS;
            histogram.push(HistogramRow { strategy, lower_ms, upper_ms: lower_ms + HISTOGRAM_BIN_MS, count });
        }
        summary.push(SummaryRow::from(&Summary::from_rows(strategy, rows)));
    }
    create_dir(&a.out)?;
    write_csv(&a.out.join("merged.csv"), &merged)?;
    write_csv(&a.out.join("latency.csv"), &latency)?;
    write_csv(&a.out.join("memory.csv"), &memory)?;
    write_csv(&a.out.join("decision_hist.csv"), &histogram)?;
    write_csv(&a.out.join("summary.csv"), &summary)
}
