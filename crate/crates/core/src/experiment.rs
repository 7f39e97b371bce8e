//! Experiment orchestration: scenario sweeps, grid search over fixed
//! configurations, aggregation with confidence intervals, and plot-ready
//! analysis tables.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path as FsPath, PathBuf};
use std::str::FromStr;
use std::sync::{mpsc, Arc};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::bandit::{neighborhood_size, NormalGamma, Policy, DEFAULT_UCB_EXPLORATION};
use crate::benchmark::{build_instance, check_optimal_lengths, parse_map, parse_scen, BenchmarkError, CsvRecord, ScenarioEntry};
use crate::destroy::HeuristicKind;
use crate::engine::{run_with_cache, Budget, Controller, EngineConfig, RecordMeta, DEFAULT_PP_RESTARTS};
use crate::model::GridMap;
use crate::planner::DistanceCache;

/// Environment variable overriding the number of parallel run workers.
pub const WORKERS_ENV: &str = "BALANCE_WORKERS";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: BenchmarkError },
    #[error(transparent)]
    Benchmark(#[from] BenchmarkError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Invalid(String),
}

/// A named solver variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Thompson,
    Ucb1,
    Roulette,
    /// Uniformly random heuristic and size.
    Random,
    JointThompson,
    Fixed { heuristic: HeuristicKind, size: usize },
}

impl Algorithm {
    /// The adaptive variants (every non-fixed algorithm).
    pub const ADAPTIVE: [Algorithm; 5] =
        [Algorithm::Thompson, Algorithm::Ucb1, Algorithm::Roulette, Algorithm::Random, Algorithm::JointThompson];

    pub fn controller(&self, params: &AlgorithmParams) -> Controller {
        match *self {
            Algorithm::Thompson => Controller::BiLevel(Policy::Thompson(params.prior)),
            Algorithm::Ucb1 => Controller::BiLevel(Policy::Ucb1 { exploration: params.exploration }),
            Algorithm::Roulette => Controller::BiLevel(Policy::Roulette),
            Algorithm::Random => Controller::uniform_random(),
            Algorithm::JointThompson => Controller::Joint(Policy::Thompson(params.prior)),
            Algorithm::Fixed { heuristic, size } => Controller::Fixed { heuristic, size },
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::Thompson => f.write_str("thompson"),
            Algorithm::Ucb1 => f.write_str("ucb1"),
            Algorithm::Roulette => f.write_str("roulette"),
            Algorithm::Random => f.write_str("random"),
            Algorithm::JointThompson => f.write_str("joint-thompson"),
            Algorithm::Fixed { heuristic, size } => write!(f, "fixed-{heuristic}-{size}"),
        }
    }
}

impl FromStr for Algorithm {
    type Err = String;

    /// Accepts the names produced by `Display`, so `fixed-agent-8` round-trips.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "thompson" => Ok(Algorithm::Thompson),
            "ucb1" => Ok(Algorithm::Ucb1),
            "roulette" => Ok(Algorithm::Roulette),
            "random" => Ok(Algorithm::Random),
            "joint-thompson" => Ok(Algorithm::JointThompson),
            _ => {
                let rest = s.strip_prefix("fixed-").ok_or_else(|| format!("unknown algorithm {s:?}"))?;
                let (h, n) = rest.rsplit_once('-').ok_or_else(|| format!("expected fixed-<heuristic>-<size>, got {s:?}"))?;
                let size: usize = n.parse().map_err(|_| format!("bad neighborhood size in {s:?}"))?;
                if size == 0 {
                    return Err(format!("neighborhood size must be positive in {s:?}"));
                }
                Ok(Algorithm::Fixed { heuristic: h.parse()?, size })
            }
        }
    }
}

/// Bandit parameters shared by all algorithms of an experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlgorithmParams {
    pub exponents: u32,
    pub exploration: f64,
    pub prior: NormalGamma,
    pub pp_restarts: usize,
}

impl Default for AlgorithmParams {
    fn default() -> Self {
        Self { exponents: 5, exploration: DEFAULT_UCB_EXPLORATION, prior: NormalGamma::default(), pp_restarts: DEFAULT_PP_RESTARTS }
    }
}

/// A map with its scenarios and a distance cache shared by all runs.
pub struct Suite {
    pub map_name: String,
    pub map: Arc<GridMap>,
    pub distances: DistanceCache,
    pub scenarios: Vec<(String, Vec<ScenarioEntry>)>,
}

fn file_stem(path: &FsPath) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

impl Suite {
    pub fn new(map_name: impl Into<String>, map: GridMap, scenarios: Vec<(String, Vec<ScenarioEntry>)>) -> Self {
        let map = Arc::new(map);
        Self { map_name: map_name.into(), distances: DistanceCache::new(map.clone()), map, scenarios }
    }

    /// Reads a map file and scenario files; names are the file stems.
    pub fn load(map_path: &FsPath, scen_paths: &[PathBuf]) -> Result<Self, ExperimentError> {
        let read = |path: &FsPath| {
            fs::read_to_string(path).map_err(|e| ExperimentError::File { path: path.to_path_buf(), source: e.into() })
        };
        let map = parse_map(&read(map_path)?)
            .map_err(|source| ExperimentError::File { path: map_path.to_path_buf(), source })?;
        let mut scenarios = Vec::with_capacity(scen_paths.len());
        for path in scen_paths {
            let entries =
                parse_scen(&read(path)?).map_err(|source| ExperimentError::File { path: path.clone(), source })?;
            scenarios.push((file_stem(path), entries));
        }
        Ok(Self::new(file_stem(map_path), map, scenarios))
    }
}

/// The cross product `agent_counts x algorithms x budgets x scenarios x seeds`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub agent_counts: Vec<usize>,
    pub algorithms: Vec<Algorithm>,
    pub budgets: Vec<Budget>,
    pub seeds: Vec<u64>,
    pub params: AlgorithmParams,
    /// Keep every trace row, not only the summary.
    pub keep_traces: bool,
}

/// One run of a sweep. `scenario` indexes the suite's scenario list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSpec {
    pub index: usize,
    pub m: usize,
    pub algorithm: Algorithm,
    pub budget: Budget,
    pub scenario: usize,
    pub seed: u64,
}

impl ExperimentSpec {
    /// Runs in enumeration order: agents, algorithm, budget, scenario, seed
    /// (outermost first).
    pub fn runs(&self, scenarios: usize) -> Vec<RunSpec> {
        let mut out = Vec::new();
        for &m in &self.agent_counts {
            for &algorithm in &self.algorithms {
                for &budget in &self.budgets {
                    for scenario in 0..scenarios {
                        for &seed in &self.seeds {
                            out.push(RunSpec { index: out.len(), m, algorithm, budget, scenario, seed });
                        }
                    }
                }
            }
        }
        out
    }
}

pub fn budget_seconds(budget: Budget) -> Option<f64> {
    match budget {
        Budget::WallClock(d) => Some(d.as_secs_f64()),
        Budget::Iterations(_) => None,
    }
}

fn budget_iterations(budget: Budget) -> Option<u64> {
    match budget {
        Budget::Iterations(n) => Some(n),
        Budget::WallClock(_) => None,
    }
}

/// Per-run result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub map: String,
    pub scenario: String,
    pub algorithm: String,
    pub m: usize,
    pub seed: u64,
    pub budget_seconds: Option<f64>,
    pub budget_iterations: Option<u64>,
    pub status: String,
    pub initial_cost: Option<u64>,
    pub final_cost: Option<u64>,
    pub iterations: Option<u64>,
    pub init_ms: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run: RunSpec,
    pub row: RunRow,
    /// Trace rows, only when the experiment keeps traces.
    pub records: Vec<CsvRecord>,
    pub selection_counts: BTreeMap<(HeuristicKind, usize), u64>,
}

impl RunOutcome {
    pub fn final_cost(&self) -> Option<u64> {
        self.row.final_cost
    }
}

/// Executes one run of `spec` against `suite`.
pub fn execute(suite: &Suite, spec: &ExperimentSpec, run: RunSpec) -> RunOutcome {
    let (scenario, entries) = &suite.scenarios[run.scenario];
    let algorithm = run.algorithm.to_string();
    let mut row = RunRow {
        map: suite.map_name.clone(),
        scenario: scenario.clone(),
        algorithm: algorithm.clone(),
        m: run.m,
        seed: run.seed,
        budget_seconds: budget_seconds(run.budget),
        budget_iterations: budget_iterations(run.budget),
        status: "ok".into(),
        initial_cost: None,
        final_cost: None,
        iterations: None,
        init_ms: None,
        error: None,
    };
    let meta = RecordMeta {
        map: row.map.clone(),
        scenario: row.scenario.clone(),
        algorithm,
        seed: run.seed,
        budget_seconds: row.budget_seconds,
    };
    let failed = |mut row: RunRow, message: String| {
        log::warn!("{} {} m={} seed={}: {message}", row.scenario, row.algorithm, row.m, row.seed);
        let record = CsvRecord {
            map: meta.map.clone(),
            scenario: meta.scenario.clone(),
            algorithm: meta.algorithm.clone(),
            m: run.m,
            seed: run.seed,
            budget_seconds: meta.budget_seconds,
            iteration: 0,
            elapsed_ms: 0.0,
            heuristic: "failed".into(),
            neighborhood_size: None,
            reward: None,
            cost: None,
        };
        row.status = "failed".into();
        row.error = Some(message);
        RunOutcome { run, row, records: vec![record], selection_counts: BTreeMap::new() }
    };

    let instance = match build_instance(suite.map.clone(), entries, run.m) {
        Ok(i) => i,
        Err(e) => return failed(row, e.to_string()),
    };
    if run.index == 0 {
        check_optimal_lengths(&instance, entries);
    }
    let mut config = EngineConfig::new(run.algorithm.controller(&spec.params), run.budget, run.seed);
    config.exponents = spec.params.exponents;
    config.pp_restarts = spec.params.pp_restarts;
    match run_with_cache(&instance, &suite.distances, &config) {
        Ok(result) => {
            row.initial_cost = Some(result.initial_cost);
            row.final_cost = Some(result.final_cost);
            row.iterations = Some(result.iterations());
            // wall-clock figures would break reproducibility of iteration runs
            row.init_ms = budget_seconds(run.budget).map(|_| result.init_time.as_secs_f64() * 1e3);
            let records = if spec.keep_traces {
                result.to_records(&meta)
            } else {
                result.to_records(&meta).split_off(result.trace.len())
            };
            RunOutcome { run, row, records, selection_counts: result.selection_counts }
        }
        Err(e) => failed(row, e.to_string()),
    }
}

/// Worker count from the environment override, else the available cores.
pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs the whole cross product on `workers` threads. `sink` sees every
/// outcome in enumeration order regardless of completion order; the returned
/// outcomes have their trace rows dropped.
pub fn run_sweep<F>(suite: &Suite, spec: &ExperimentSpec, workers: usize, mut sink: F) -> Result<Vec<RunOutcome>, ExperimentError>
where
    F: FnMut(&RunOutcome) -> Result<(), ExperimentError>,
{
    if suite.scenarios.is_empty() {
        return Err(ExperimentError::Invalid("no scenarios given".into()));
    }
    let runs = spec.runs(suite.scenarios.len());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ExperimentError::Invalid(e.to_string()))?;
    let (tx, rx) = mpsc::channel::<RunOutcome>();
    std::thread::scope(|scope| {
        scope.spawn(|| {
            pool.install(|| runs.par_iter().for_each_with(tx, |tx, &run| drop(tx.send(execute(suite, spec, run)))))
        });
        let mut pending = BTreeMap::new();
        let mut done = Vec::with_capacity(runs.len());
        for outcome in rx {
            pending.insert(outcome.run.index, outcome);
            while let Some(mut next) = pending.remove(&done.len()) {
                sink(&next)?;
                next.records = Vec::new();
                done.push(next);
            }
        }
        Ok(done)
    })
}

/// Sample mean and the half-width of its two-sided 95% Student-t interval.
/// A single sample has half-width 0.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive degrees of freedom").inverse_cdf(0.975);
    (mean, t * (var / n as f64).sqrt())
}

/// Mean final cost per (map, algorithm, m, budget) over scenarios and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub map: String,
    pub algorithm: String,
    pub m: usize,
    pub budget_seconds: Option<f64>,
    pub budget_iterations: Option<u64>,
    pub runs: usize,
    pub failures: usize,
    pub mean_cost: Option<f64>,
    pub ci95_half_width: Option<f64>,
}

/// Groups in order of first appearance. Failed runs are counted but excluded
/// from the mean.
pub fn aggregate(rows: &[RunRow]) -> Vec<Aggregate> {
    type Key = (String, String, usize, Option<u64>, Option<u64>);
    let mut order: Vec<Key> = Vec::new();
    let mut groups: HashMap<Key, Vec<&RunRow>> = HashMap::new();
    for r in rows {
        let key = (r.map.clone(), r.algorithm.clone(), r.m, r.budget_seconds.map(f64::to_bits), r.budget_iterations);
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let members = &groups[&key];
            let costs: Vec<f64> = members.iter().filter_map(|r| r.final_cost).map(|c| c as f64).collect();
            let (mean, half) = if costs.is_empty() { (None, None) } else {
                let (m, h) = mean_ci95(&costs);
                (Some(m), Some(h))
            };
            Aggregate {
                map: key.0,
                algorithm: key.1,
                m: key.2,
                budget_seconds: key.3.map(f64::from_bits),
                budget_iterations: key.4,
                runs: members.len(),
                failures: members.len() - costs.len(),
                mean_cost: mean,
                ci95_half_width: half,
            }
        })
        .collect()
}

/// The `|H| * E` fixed configurations, heuristic-major.
pub fn grid_configurations(exponents: u32) -> Vec<Algorithm> {
    HeuristicKind::ALL
        .iter()
        .flat_map(|&heuristic| (1..=exponents).map(move |e| Algorithm::Fixed { heuristic, size: neighborhood_size(e) }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridBest {
    pub map: String,
    pub m: usize,
    pub budget_seconds: Option<f64>,
    pub budget_iterations: Option<u64>,
    pub heuristic: String,
    pub neighborhood_size: usize,
    pub mean_cost: f64,
    pub ci95_half_width: f64,
}

/// Lowest mean cost per (map, m, budget) among fixed configurations; ties go
/// to the smaller neighborhood, then the earlier heuristic.
pub fn best_configurations(table: &[Aggregate]) -> Vec<GridBest> {
    let mut best: Vec<(GridBest, (HeuristicKind, usize))> = Vec::new();
    for agg in table {
        let Ok(Algorithm::Fixed { heuristic, size }) = agg.algorithm.parse::<Algorithm>() else { continue };
        let (Some(mean), Some(half)) = (agg.mean_cost, agg.ci95_half_width) else { continue };
        let candidate = GridBest {
            map: agg.map.clone(),
            m: agg.m,
            budget_seconds: agg.budget_seconds,
            budget_iterations: agg.budget_iterations,
            heuristic: heuristic.name().into(),
            neighborhood_size: size,
            mean_cost: mean,
            ci95_half_width: half,
        };
        let same_group = |b: &GridBest| {
            b.map == candidate.map
                && b.m == candidate.m
                && b.budget_seconds == candidate.budget_seconds
                && b.budget_iterations == candidate.budget_iterations
        };
        match best.iter_mut().find(|(b, _)| same_group(b)) {
            None => best.push((candidate, (heuristic, size))),
            Some((b, tie)) => {
                let better = mean < b.mean_cost || mean == b.mean_cost && (size, heuristic) < (tie.1, tie.0);
                if better {
                    *b = candidate;
                    *tie = (heuristic, size);
                }
            }
        }
    }
    best.into_iter().map(|(b, _)| b).collect()
}

/// One cell of a selection-frequency matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub map: String,
    pub algorithm: String,
    pub m: usize,
    pub budget_seconds: Option<f64>,
    pub heuristic: String,
    pub neighborhood_size: usize,
    pub count: u64,
    pub frequency: f64,
}

/// Selection frequencies within one time bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineRow {
    pub map: String,
    pub algorithm: String,
    pub m: usize,
    pub budget_seconds: Option<f64>,
    pub bin_start_ms: f64,
    pub heuristic: String,
    pub neighborhood_size: usize,
    pub count: u64,
    pub frequency: f64,
}

/// Selection-frequency matrices per (map, algorithm, m, budget) group and
/// choices over fixed-width time bins. Every group lists all heuristics
/// against every size seen in it, so absent cells appear with frequency 0.
pub fn emit_analysis(records: &[CsvRecord], bin_ms: f64) -> (Vec<HeatmapRow>, Vec<TimelineRow>) {
    assert!(bin_ms > 0.0, "bin width must be positive");
    type Group = (String, String, usize, Option<u64>);
    type Counts = BTreeMap<(HeuristicKind, usize), u64>;
    let mut order: Vec<Group> = Vec::new();
    let mut cells: HashMap<Group, Counts> = HashMap::new();
    let mut bins: HashMap<Group, BTreeMap<u64, Counts>> = HashMap::new();
    for r in records {
        let (Ok(h), Some(n)) = (r.heuristic.parse::<HeuristicKind>(), r.neighborhood_size) else { continue };
        let key = (r.map.clone(), r.algorithm.clone(), r.m, r.budget_seconds.map(f64::to_bits));
        if !cells.contains_key(&key) {
            order.push(key.clone());
        }
        *cells.entry(key.clone()).or_default().entry((h, n)).or_insert(0) += 1;
        let bin = (r.elapsed_ms.max(0.0) / bin_ms).floor() as u64;
        *bins.entry(key).or_default().entry(bin).or_default().entry((h, n)).or_insert(0) += 1;
    }

    let mut heatmap = Vec::new();
    let mut timeline = Vec::new();
    for key in order {
        let counts = &cells[&key];
        let sizes: BTreeSet<usize> = counts.keys().map(|&(_, n)| n).collect();
        let grid: Vec<(HeuristicKind, usize)> =
            HeuristicKind::ALL.iter().flat_map(|&h| sizes.iter().map(move |&n| (h, n))).collect();
        let fill = |counts: &BTreeMap<(HeuristicKind, usize), u64>| {
            let total: u64 = counts.values().sum();
            grid.iter()
                .map(|&(h, n)| {
                    let c = counts.get(&(h, n)).copied().unwrap_or(0);
                    (h, n, c, c as f64 / total as f64)
                })
                .collect::<Vec<_>>()
        };
        let (map, algorithm, m, budget) = &key;
        let budget_seconds = budget.map(f64::from_bits);
        for (h, n, count, frequency) in fill(counts) {
            heatmap.push(HeatmapRow {
                map: map.clone(),
                algorithm: algorithm.clone(),
                m: *m,
                budget_seconds,
                heuristic: h.name().into(),
                neighborhood_size: n,
                count,
                frequency,
            });
        }
        for (&bin, counts) in &bins[&key] {
            for (h, n, count, frequency) in fill(counts) {
                timeline.push(TimelineRow {
                    map: map.clone(),
                    algorithm: algorithm.clone(),
                    m: *m,
                    budget_seconds,
                    bin_start_ms: bin as f64 * bin_ms,
                    heuristic: h.name().into(),
                    neighborhood_size: n,
                    count,
                    frequency,
                });
            }
        }
    }
    (heatmap, timeline)
}

/// Writes serializable rows as CSV; the header is present even without rows.
pub fn write_rows<T: Serialize, W: Write>(rows: &[T], header: &[&str], sink: W) -> Result<(), ExperimentError> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(sink);
    writer.write_record(header)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub const RUN_HEADER: [&str; 13] = [
    "map", "scenario", "algorithm", "m", "seed", "budget_seconds", "budget_iterations", "status", "initial_cost",
    "final_cost", "iterations", "init_ms", "error",
];
pub const AGGREGATE_HEADER: [&str; 9] =
    ["map", "algorithm", "m", "budget_seconds", "budget_iterations", "runs", "failures", "mean_cost", "ci95_half_width"];
pub const GRID_HEADER: [&str; 8] = [
    "map", "m", "budget_seconds", "budget_iterations", "heuristic", "neighborhood_size", "mean_cost", "ci95_half_width",
];
pub const HEATMAP_HEADER: [&str; 8] =
    ["map", "algorithm", "m", "budget_seconds", "heuristic", "neighborhood_size", "count", "frequency"];
pub const TIMELINE_HEADER: [&str; 9] =
    ["map", "algorithm", "m", "budget_seconds", "bin_start_ms", "heuristic", "neighborhood_size", "count", "frequency"];
