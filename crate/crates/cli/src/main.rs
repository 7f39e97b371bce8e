use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use balance_core::benchmark::{build_instance, check_optimal_lengths, read_records, render_map, render_scen, RecordWriter};
use balance_core::engine::{run_with_cache, Budget, EngineConfig, EngineError, RecordMeta, DEFAULT_PP_RESTARTS};
use balance_core::experiment::{
    aggregate, best_configurations, default_workers, emit_analysis, grid_configurations, run_sweep, write_rows,
    Algorithm, AlgorithmParams, ExperimentError, ExperimentSpec, RunRow, Suite, AGGREGATE_HEADER, GRID_HEADER,
    HEATMAP_HEADER, RUN_HEADER, TIMELINE_HEADER,
};
use balance_core::synth::{random_suite, RandomMapSpec};
use balance_core::{HeuristicKind, NormalGamma};

const EXIT_USAGE: u8 = 2;
const EXIT_FILE: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;

#[derive(Parser)]
#[command(name = "balance", version, about = "Bandit-adaptive large neighborhood search for anytime MAPF")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance and write its trace as CSV.
    Run(RunArgs),
    /// Run every combination of agents, algorithms, budgets, scenarios and seeds.
    Sweep(SweepArgs),
    /// Run all fixed (heuristic, size) configurations and report the best.
    GridSearch(GridArgs),
    /// Selection-frequency tables from trace CSVs.
    Analyze(AnalyzeArgs),
    /// Write a seeded random-obstacle map with scenario files.
    GenBench(GenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Thompson,
    Ucb1,
    Roulette,
    Random,
    JointThompson,
    Fixed,
}

#[derive(Args)]
struct BanditArgs {
    /// Largest size exponent; sizes are 2^1..=2^E.
    #[arg(long = "E", default_value_t = 5)]
    exponents: u32,
    /// UCB1 exploration constant.
    #[arg(long, default_value_t = 1000.0)]
    xi: f64,
    /// Normal-Gamma prior as mu,lambda,alpha,beta.
    #[arg(long, default_value = "0,0.01,1,100", value_parser = parse_prior)]
    prior: NormalGamma,
    /// Random priority orders tried for the initial solution.
    #[arg(long, default_value_t = DEFAULT_PP_RESTARTS)]
    pp_restarts: usize,
}

impl BanditArgs {
    fn params(&self) -> AlgorithmParams {
        AlgorithmParams { exponents: self.exponents, exploration: self.xi, prior: self.prior, pp_restarts: self.pp_restarts }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    scen: PathBuf,
    /// Number of agents, taken from the start of the scenario.
    #[arg(long)]
    agents: usize,
    /// Wall-clock budget in seconds, initial solution included.
    #[arg(long, default_value_t = 60.0, conflicts_with = "iterations")]
    budget_s: f64,
    /// Stop after this many iterations instead (reproducible traces).
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum)]
    algo: AlgoArg,
    #[command(flatten)]
    bandit: BanditArgs,
    /// Destroy heuristic for --algo fixed: random, agent or map.
    #[arg(long, required_if_eq("algo", "fixed"))]
    fixed_h: Option<HeuristicKind>,
    /// Neighborhood size for --algo fixed.
    #[arg(long, required_if_eq("algo", "fixed"))]
    fixed_n: Option<usize>,
    /// Output CSV; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepCommon {
    #[arg(long)]
    map: PathBuf,
    /// Scenario files.
    #[arg(long, num_args = 1.., required = true)]
    scen: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', required = true)]
    agents: Vec<usize>,
    /// Budgets in seconds.
    #[arg(long, value_delimiter = ',', default_value = "60", conflicts_with = "iterations")]
    budget_s: Vec<f64>,
    /// Iteration budget instead of wall-clock budgets.
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[command(flatten)]
    bandit: BanditArgs,
    /// Parallel runs; defaults to BALANCE_WORKERS or the number of cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Also write every iteration to trace.csv.
    #[arg(long)]
    traces: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

impl SweepCommon {
    fn budgets(&self) -> Result<Vec<Budget>> {
        match self.iterations {
            Some(n) => Ok(vec![Budget::Iterations(n)]),
            None => self.budget_s.iter().map(|&s| seconds(s)).collect(),
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    /// Algorithms, e.g. thompson,random,fixed-agent-8.
    #[arg(long, value_delimiter = ',', required = true)]
    algo: Vec<Algorithm>,
    #[command(flatten)]
    common: SweepCommon,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    common: SweepCommon,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Trace CSV files.
    #[arg(long, num_args = 1.., required = true)]
    input: Vec<PathBuf>,
    /// Width of the time bins in milliseconds.
    #[arg(long, default_value_t = 1000.0)]
    bin_ms: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 32)]
    width: u32,
    #[arg(long, default_value_t = 32)]
    height: u32,
    /// Obstacle share in percent.
    #[arg(long, default_value_t = 10)]
    obstacles: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 25)]
    scenarios: usize,
    /// Entries per scenario file.
    #[arg(long, default_value_t = 500)]
    entries: usize,
    #[arg(long)]
    out: PathBuf,
}

fn parse_prior(s: &str) -> Result<NormalGamma, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("not a number: {x:?}")))
        .collect::<Result<_, _>>()?;
    let [mu, lambda, alpha, beta] = v[..] else {
        return Err(format!("expected four values mu,lambda,alpha,beta, got {}", v.len()));
    };
    let prior = NormalGamma::new(mu, lambda, alpha, beta);
    if !prior.is_valid() {
        return Err("prior needs lambda > 0, alpha >= 1 and beta >= 0".into());
    }
    Ok(prior)
}

#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn seconds(s: f64) -> Result<Budget> {
    if !(s.is_finite() && s >= 0.0) {
        return Err(Usage(format!("budget must be a non-negative number of seconds, got {s}")).into());
    }
    Ok(Budget::WallClock(Duration::from_secs_f64(s)))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("cannot create directory {}", path.display()))
}

fn run_single(args: RunArgs) -> Result<()> {
    let algorithm = match args.algo {
        AlgoArg::Thompson => Algorithm::Thompson,
        AlgoArg::Ucb1 => Algorithm::Ucb1,
        AlgoArg::Roulette => Algorithm::Roulette,
        AlgoArg::Random => Algorithm::Random,
        AlgoArg::JointThompson => Algorithm::JointThompson,
        AlgoArg::Fixed => {
            let (Some(heuristic), Some(size)) = (args.fixed_h, args.fixed_n) else {
                return Err(Usage("--algo fixed needs --fixed-h and --fixed-n".into()).into());
            };
            if size == 0 {
                return Err(Usage("--fixed-n must be positive".into()).into());
            }
            Algorithm::Fixed { heuristic, size }
        }
    };
    if !matches!(args.algo, AlgoArg::Fixed) && (args.fixed_h.is_some() || args.fixed_n.is_some()) {
        return Err(Usage("--fixed-h and --fixed-n only apply to --algo fixed".into()).into());
    }
    let budget = match args.iterations {
        Some(n) => Budget::Iterations(n),
        None => seconds(args.budget_s)?,
    };
    let suite = Suite::load(&args.map, std::slice::from_ref(&args.scen))?;
    let (scenario, entries) = &suite.scenarios[0];
    let instance = build_instance(Arc::clone(&suite.map), entries, args.agents)
        .map_err(|e| ExperimentError::File { path: args.scen.clone(), source: e })?;
    check_optimal_lengths(&instance, entries);

    let params = args.bandit.params();
    let mut config = EngineConfig::new(algorithm.controller(&params), budget, args.seed);
    config.exponents = params.exponents;
    config.pp_restarts = params.pp_restarts;
    config.validate().map_err(|e| Usage(e.to_string()))?;
    let result = run_with_cache(&instance, &suite.distances, &config)?;
    log::info!(
        "cost {} -> {} in {} iterations ({:.1} s)",
        result.initial_cost,
        result.final_cost,
        result.iterations(),
        result.total_time.as_secs_f64()
    );

    let meta = RecordMeta {
        map: suite.map_name.clone(),
        scenario: scenario.clone(),
        algorithm: algorithm.to_string(),
        seed: args.seed,
        budget_seconds: balance_core::experiment::budget_seconds(budget),
    };
    let sink: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(create(path)?),
        None => Box::new(io::stdout().lock()),
    };
    let mut writer = RecordWriter::new(sink)?;
    for record in result.to_records(&meta) {
        writer.write(&record)?;
    }
    writer.finish()?.flush()?;
    Ok(())
}

fn sweep(common: &SweepCommon, algorithms: Vec<Algorithm>) -> Result<Vec<RunRow>> {
    let suite = Suite::load(&common.map, &common.scen)?;
    let spec = ExperimentSpec {
        agent_counts: common.agents.clone(),
        algorithms,
        budgets: common.budgets()?,
        seeds: common.seeds.clone(),
        params: common.bandit.params(),
        keep_traces: common.traces,
    };
    let workers = common.workers.unwrap_or_else(default_workers);
    let total = spec.runs(suite.scenarios.len()).len();
    log::info!("{total} runs on {workers} workers");
    create_dir(&common.out)?;
    let mut traces = if common.traces { Some(RecordWriter::new(create(&common.out.join("trace.csv"))?)?) } else { None };
    let outcomes = run_sweep(&suite, &spec, workers, |outcome| {
        log::info!(
            "[{}/{total}] {} {} m={} seed={}: {}",
            outcome.run.index + 1,
            outcome.row.scenario,
            outcome.row.algorithm,
            outcome.row.m,
            outcome.row.seed,
            outcome.row.final_cost.map_or_else(|| "failed".to_string(), |c| format!("cost {c}"))
        );
        if let Some(w) = traces.as_mut() {
            for r in &outcome.records {
                w.write(r)?;
            }
        }
        Ok(())
    })?;
    if let Some(w) = traces {
        w.finish()?.flush()?;
    }
    let rows: Vec<RunRow> = outcomes.into_iter().map(|o| o.row).collect();
    write_rows(&rows, &RUN_HEADER, create(&common.out.join("runs.csv"))?)?;
    let aggregates = aggregate(&rows);
    write_rows(&aggregates, &AGGREGATE_HEADER, create(&common.out.join("aggregates.csv"))?)?;
    for a in &aggregates {
        match (a.mean_cost, a.ci95_half_width) {
            (Some(mean), Some(half)) => println!("{} m={} {}: {mean:.2} ± {half:.2} ({} runs)", a.map, a.m, a.algorithm, a.runs),
            _ => println!("{} m={} {}: all {} runs failed", a.map, a.m, a.algorithm, a.runs),
        }
    }
    Ok(rows)
}

fn grid_search(args: GridArgs) -> Result<()> {
    let configs = grid_configurations(args.common.bandit.exponents);
    let rows = sweep(&args.common, configs)?;
    let best = best_configurations(&aggregate(&rows));
    write_rows(&best, &GRID_HEADER, create(&args.common.out.join("grid_best.csv"))?)?;
    for b in &best {
        println!("best for {} m={}: {} N={} ({:.2})", b.map, b.m, b.heuristic, b.neighborhood_size, b.mean_cost);
    }
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    if !(args.bin_ms.is_finite() && args.bin_ms > 0.0) {
        return Err(Usage("--bin-ms must be positive".into()).into());
    }
    let mut records = Vec::new();
    for path in &args.input {
        let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
        records.extend(
            read_records(io::BufReader::new(file))
                .map_err(|source| ExperimentError::File { path: path.clone(), source })?,
        );
    }
    let (heatmap, timeline) = emit_analysis(&records, args.bin_ms);
    create_dir(&args.out)?;
    write_rows(&heatmap, &HEATMAP_HEADER, create(&args.out.join("heatmap.csv"))?)?;
    write_rows(&timeline, &TIMELINE_HEADER, create(&args.out.join("timeline.csv"))?)?;
    Ok(())
}

fn gen_bench(args: GenArgs) -> Result<()> {
    if args.obstacles > 100 || args.width == 0 || args.height == 0 {
        return Err(Usage("need width, height > 0 and obstacles <= 100".into()).into());
    }
    let spec = RandomMapSpec { width: args.width, height: args.height, obstacle_percent: args.obstacles, seed: args.seed };
    let suite = random_suite(&spec, args.scenarios, args.entries).map_err(|e| Usage(e.to_string()))?;
    create_dir(&args.out)?;
    let write = |name: &str, text: &str| {
        let path = args.out.join(name);
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
    };
    write(&format!("{}.map", suite.name), &render_map(&suite.map))?;
    for (name, entries) in &suite.scenarios {
        write(name, &render_scen(entries))?;
    }
    println!("{}: {} free cells, {} scenarios", suite.name, suite.map.passable_count(), suite.scenarios.len());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<EngineError>() {
            return match e {
                EngineError::InitialSolution { .. } | EngineError::Unreachable { .. } => EXIT_INFEASIBLE,
                EngineError::InvalidConfig(_) => EXIT_USAGE,
                EngineError::Conflicts(_) => 1,
            };
        }
        if let Some(e) = cause.downcast_ref::<ExperimentError>() {
            return match e {
                ExperimentError::Invalid(_) => EXIT_USAGE,
                _ => EXIT_FILE,
            };
        }
        if cause.is::<io::Error>() || cause.is::<balance_core::BenchmarkError>() {
            return EXIT_FILE;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run_single(args),
        Command::Sweep(args) => sweep(&args.common, args.algo).map(drop),
        Command::GridSearch(args) => grid_search(args),
        Command::Analyze(args) => analyze(args),
        Command::GenBench(args) => gen_bench(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
