//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Criteria 1 to 4 run by default. Criteria 5 to 7 need hours of single-core
//! wall clock and only run when asked for:
//!
//! ```text
//! cargo test -p balance-core --test acceptance -- --include-ignored
//! cargo test -p balance-core --test acceptance -- --include-ignored c6
//! ```
//!
//! Set `BALANCE_ACCEPTANCE_OUT` to a directory to keep the per-run CSVs.

mod common;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use balance_core::bandit::{posterior, select_roulette, ucb1_score, ArmBank, ArmStats, NormalGamma, Policy};
use balance_core::benchmark::build_instance;
use balance_core::engine::{run_with_cache, Budget, EngineConfig};
use balance_core::experiment::{
    aggregate, best_configurations, default_workers, grid_configurations, mean_ci95, run_sweep, write_rows,
    Aggregate, Algorithm, AlgorithmParams, ExperimentSpec, RunRow, Suite, AGGREGATE_HEADER, RUN_HEADER,
};
use balance_core::model::validate;
use balance_core::planner::{plan_path, DistanceCache};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{data_dir, exhaustive_shortest, tiny_case};

const POSTERIOR_TOL: f64 = 1e-9;
/// The worked example's values are printed with five decimals.
const PRINTED_TOL: f64 = 5e-6;
const ROULETTE_TOL: f64 = 0.01;
const ROULETTE_DRAWS: usize = 100_000;
const BETTER_ARM_SHARE: f64 = 0.95;
const ROULETTE_LATE_PROBABILITY: f64 = 0.9;
const PLANNER_CASES: usize = 20;
const PLANNER_HORIZON: usize = 8;
const SCENARIOS: usize = 25;
const C1_AGENTS: usize = 50;
const C1_BUDGET: Duration = Duration::from_secs(10);
const TREND_AGENTS: usize = 200;
const TREND_SEEDS: u64 = 10;
const C5_BUDGET: Duration = Duration::from_secs(10);
const C5_SLACK: f64 = 1.05;
const C6_BUDGET: Duration = Duration::from_secs(30);
const C7_BUDGET: Duration = Duration::from_secs(10);
const C7_SLACK: f64 = 1.10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

/// Closed-form Normal-Gamma posterior from the raw rewards, two-pass.
fn posterior_oracle(rewards: &[f64], prior: &NormalGamma) -> (f64, f64, f64, f64) {
    let n = rewards.len() as f64;
    if rewards.is_empty() {
        return (prior.mu, prior.lambda, prior.alpha, prior.beta);
    }
    let mean = rewards.iter().sum::<f64>() / n;
    let ss: f64 = rewards.iter().map(|x| (x - mean) * (x - mean)).sum();
    let lambda = prior.lambda + n;
    (
        (prior.lambda * prior.mu + n * mean) / lambda,
        lambda,
        prior.alpha + n / 2.0,
        prior.beta + 0.5 * (ss + prior.lambda * n * (mean - prior.mu).powi(2) / lambda),
    )
}

fn c2_bandit_math() -> Outcome {
    let prior = NormalGamma::default();
    let mut arm = ArmStats::default();
    arm.update(4.0);
    arm.update(6.0);
    let post = posterior(&arm, &prior);
    let (mu, lambda, alpha, beta) = posterior_oracle(&[4.0, 6.0], &prior);
    let mut ok = close(post.mu, mu, POSTERIOR_TOL)
        && close(post.lambda, lambda, POSTERIOR_TOL)
        && close(post.alpha, alpha, POSTERIOR_TOL)
        && close(post.beta, beta, POSTERIOR_TOL);
    // the printed worked example
    ok &= (post.mu - 4.97512).abs() < PRINTED_TOL
        && post.lambda == 2.01
        && post.alpha == 2.0
        && (post.beta - 101.12438).abs() < PRINTED_TOL;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut exact = true;
    for _ in 0..1000 {
        let len = rng.random_range(0..200);
        let rewards: Vec<f64> = (0..len).map(|_| f64::from(rng.random_range(0u32..=500))).collect();
        let mut stats = ArmStats::default();
        for &x in &rewards {
            stats.update(x);
        }
        let batch = ArmStats {
            w: rewards.iter().sum(),
            t: rewards.len() as u64,
            q: rewards.iter().map(|x| x * x).sum(),
        };
        exact &= stats == batch;
        let random_prior = NormalGamma::new(rng.random_range(-5.0..5.0), rng.random_range(0.001..10.0), 1.0 + rng.random::<f64>(), rng.random_range(0.0..200.0));
        let p = posterior(&stats, &random_prior);
        let o = posterior_oracle(&rewards, &random_prior);
        for (got, want) in [(p.mu, o.0), (p.lambda, o.1), (p.alpha, o.2), (p.beta, o.3)] {
            worst = worst.max((got - want).abs() / want.abs().max(1.0));
        }
    }
    ok &= exact && worst <= POSTERIOR_TOL;
    outcome(
        ok,
        format!(
            "worked example mu1={:.5} lambda1={} alpha1={} beta1={:.5}; 1000 sequences: incremental==batch {exact}, worst posterior rel. error {worst:.1e} (tol {POSTERIOR_TOL:e})",
            post.mu, post.lambda, post.alpha, post.beta
        ),
    )
}

fn pulls(policy: Policy, seed: u64) -> (f64, f64) {
    // arm 1 pays 10, arm 0 pays 1
    let mut bank = ArmBank::new(policy, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut late_better = 0;
    for round in 1..=1000 {
        let arm = bank.select(&mut rng);
        if round > 900 && arm == 1 {
            late_better += 1;
        }
        bank.update(arm, if arm == 1 { 10.0 } else { 1.0 });
    }
    let w = bank.arms();
    (late_better as f64 / 100.0, w[1].w / (w[0].w + w[1].w))
}

fn c3_policy_behavior() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let weights = [ArmStats { w: 3.0, t: 3, q: 3.0 }, ArmStats { w: 1.0, t: 1, q: 1.0 }];
    let zeros = (0..ROULETTE_DRAWS).filter(|_| select_roulette(&weights, &mut rng) == 0).count();
    let freq = zeros as f64 / ROULETTE_DRAWS as f64;
    let roulette_ok = (freq - 0.75).abs() <= ROULETTE_TOL;

    let worked = [ArmStats { w: 10.0, t: 1, q: 100.0 }, ArmStats { w: 5.0, t: 1, q: 25.0 }];
    let scores = [ucb1_score(&worked[0], 2, 1000.0), ucb1_score(&worked[1], 2, 1000.0)];
    let bonus = 1000.0 * 2f64.ln().sqrt();
    let ucb_scores_ok = close(scores[0], 10.0 + bonus, 1e-12) && close(scores[1], 5.0 + bonus, 1e-12);
    let ucb_picks = (0..100).all(|s| {
        let mut bank = ArmBank::new(Policy::ucb1(), 2);
        bank.update(0, 10.0);
        bank.update(1, 5.0);
        bank.select(&mut ChaCha8Rng::seed_from_u64(s)) == 0
    });

    let seeds = 20;
    let share = |policy: Policy| (0..seeds).map(|s| pulls(policy, s).0).sum::<f64>() / seeds as f64;
    let thompson = share(Policy::thompson());
    let ucb = share(Policy::Ucb1 { exploration: 1.0 });
    let roulette_p = (0..seeds).map(|s| pulls(Policy::Roulette, s).1).sum::<f64>() / seeds as f64;
    let pass = roulette_ok
        && ucb_scores_ok
        && ucb_picks
        && thompson > BETTER_ARM_SHARE
        && ucb > BETTER_ARM_SHARE
        && roulette_p > ROULETTE_LATE_PROBABILITY;
    outcome(
        pass,
        format!(
            "roulette freq {freq:.4} vs 0.75 (tol {ROULETTE_TOL}); UCB1 scores ({:.2}, {:.2}) -> arm 0: {ucb_picks}; better-arm share rounds 901-1000 over {seeds} seeds: thompson {thompson:.3}, ucb1(xi=1) {ucb:.3} (need > {BETTER_ARM_SHARE}); roulette P(better) after 1000 rounds {roulette_p:.3}",
            scores[0], scores[1]
        ),
    )
}

fn c4_planner_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut agree = 0;
    let mut solvable = 0;
    let mut mismatches = Vec::new();
    for case_no in 0..PLANNER_CASES {
        let case = tiny_case(&mut rng, 6, 6);
        let table = case.table();
        let cache = DistanceCache::new(case.map.clone());
        let got = plan_path(&case.map, &case.agent, &table, cache.get(case.agent.goal), PLANNER_HORIZON)
            .ok()
            .map(|p| p.length());
        let want = exhaustive_shortest(&case, PLANNER_HORIZON);
        solvable += usize::from(want.is_some());
        if got == want {
            agree += 1;
        } else {
            mismatches.push(format!("case {case_no}: planner {got:?} vs exhaustive {want:?}"));
        }
    }
    outcome(
        agree == PLANNER_CASES,
        format!(
            "{agree}/{PLANNER_CASES} instances agree ({solvable} solvable, <= 6 cells, horizon {PLANNER_HORIZON}) {}",
            mismatches.join("; ")
        ),
    )
}

fn load_suite() -> Suite {
    let dir = data_dir();
    let scens: Vec<PathBuf> =
        (1..=SCENARIOS).map(|k| dir.join(format!("random-32-32-10-random-{k}.scen"))).collect();
    Suite::load(&dir.join("random-32-32-10.map"), &scens).expect("benchmark data under data/random-32-32-10")
}

fn c1_feasibility() -> Outcome {
    let suite = load_suite();
    let params = AlgorithmParams::default();
    let started = Instant::now();
    let (mut runs, mut good, mut failures) = (0, 0, Vec::new());
    for (name, entries) in &suite.scenarios {
        let instance = build_instance(Arc::clone(&suite.map), entries, C1_AGENTS).expect("50 agents");
        for algorithm in Algorithm::ADAPTIVE {
            runs += 1;
            let mut config = EngineConfig::new(algorithm.controller(&params), Budget::WallClock(C1_BUDGET), 0);
            config.validate_each_iteration = true;
            match run_with_cache(&instance, &suite.distances, &config) {
                Ok(r) => {
                    let monotone = r.trace.windows(2).all(|w| w[1].cost <= w[0].cost);
                    let conflicts = validate(&r.final_plan).len();
                    let feasible = r.final_plan.check(&instance).is_ok();
                    if monotone && conflicts == 0 && feasible && r.final_cost == r.trace.last().unwrap().cost {
                        good += 1;
                    } else {
                        failures.push(format!("{name} {algorithm}: monotone {monotone}, conflicts {conflicts}"));
                    }
                }
                Err(e) => failures.push(format!("{name} {algorithm}: {e}")),
            }
        }
    }
    outcome(
        good == runs,
        format!(
            "{good}/{runs} runs (25 scenarios x {} variants, m={C1_AGENTS}, {}s) feasible with non-increasing traces in {:.0}s {}",
            Algorithm::ADAPTIVE.len(),
            C1_BUDGET.as_secs(),
            started.elapsed().as_secs_f64(),
            failures.join("; ")
        ),
    )
}

fn sweep(suite: &Suite, tag: &str, algorithms: Vec<Algorithm>, params: AlgorithmParams, budget: Duration, seeds: u64) -> Vec<RunRow> {
    let spec = ExperimentSpec {
        agent_counts: vec![TREND_AGENTS],
        algorithms,
        budgets: vec![Budget::WallClock(budget)],
        seeds: (0..seeds).collect(),
        params,
        keep_traces: false,
    };
    let total = spec.runs(suite.scenarios.len()).len();
    let started = Instant::now();
    let outcomes = run_sweep(suite, &spec, default_workers(), |o| {
        if (o.run.index + 1) % 25 == 0 {
            eprintln!("  {tag}: {}/{total} runs, {:.0}s", o.run.index + 1, started.elapsed().as_secs_f64());
        }
        Ok(())
    })
    .expect("sweep");
    let rows: Vec<RunRow> = outcomes.into_iter().map(|o| o.row).collect();
    if let Some(dir) = std::env::var_os("BALANCE_ACCEPTANCE_OUT").map(PathBuf::from) {
        std::fs::create_dir_all(&dir).expect("output directory");
        let file = |name: &str| std::fs::File::create(dir.join(format!("{tag}-{name}.csv"))).expect("csv file");
        write_rows(&rows, &RUN_HEADER, file("runs")).expect("runs csv");
        write_rows(&aggregate(&rows), &AGGREGATE_HEADER, file("aggregates")).expect("aggregates csv");
    }
    rows
}

fn costs(rows: &[RunRow], algorithm: &str) -> Vec<f64> {
    rows.iter().filter(|r| r.algorithm == algorithm).filter_map(|r| r.final_cost).map(|c| c as f64).collect()
}

fn describe(agg: &Aggregate) -> String {
    format!(
        "{} {:.2} ± {:.2} (n={}, failed {})",
        agg.algorithm,
        agg.mean_cost.unwrap_or(f64::NAN),
        agg.ci95_half_width.unwrap_or(f64::NAN),
        agg.runs - agg.failures,
        agg.failures
    )
}

fn c5_thompson_vs_random() -> Outcome {
    let suite = load_suite();
    let rows = sweep(&suite, "c5", vec![Algorithm::Thompson, Algorithm::Random], AlgorithmParams::default(), C5_BUDGET, TREND_SEEDS);
    let aggs = aggregate(&rows);
    let (t, r) = (mean_ci95(&costs(&rows, "thompson")).0, mean_ci95(&costs(&rows, "random")).0);
    outcome(
        t <= C5_SLACK * r,
        format!(
            "m={TREND_AGENTS}, {}s, {TREND_SEEDS} seeds x 25 scenarios: {}; {}; ratio {:.4} (need <= {C5_SLACK})",
            C5_BUDGET.as_secs(),
            describe(&aggs[0]),
            describe(&aggs[1]),
            t / r
        ),
    )
}

fn c6_more_size_options() -> Outcome {
    let suite = load_suite();
    let mut means = Vec::new();
    let mut details = Vec::new();
    for e in [1, 3] {
        let params = AlgorithmParams { exponents: e, ..AlgorithmParams::default() };
        let rows = sweep(&suite, &format!("c6-e{e}"), vec![Algorithm::Thompson], params, C6_BUDGET, TREND_SEEDS);
        let agg = &aggregate(&rows)[0];
        means.push(agg.mean_cost.unwrap_or(f64::NAN));
        details.push(format!("E={e}: {}", describe(agg)));
    }
    outcome(
        means[1] <= means[0],
        format!("thompson, m={TREND_AGENTS}, {}s, {TREND_SEEDS} seeds x 25 scenarios: {}", C6_BUDGET.as_secs(), details.join("; ")),
    )
}

fn c7_grid_search() -> Outcome {
    let suite = load_suite();
    let configs = grid_configurations(5);
    let enumerates = configs.len() == 15;
    let grid = sweep(&suite, "c7-grid", configs, AlgorithmParams::default(), C7_BUDGET, 1);
    let best = best_configurations(&aggregate(&grid));
    let best = &best[0];
    let adaptive = sweep(&suite, "c7-adaptive", Algorithm::ADAPTIVE.to_vec(), AlgorithmParams::default(), C7_BUDGET, 1);
    let aggs = aggregate(&adaptive);
    let within = aggs.iter().all(|a| a.mean_cost.is_some_and(|m| best.mean_cost <= C7_SLACK * m));
    outcome(
        enumerates && within,
        format!(
            "{} configurations; best fixed {}-{} {:.2} ± {:.2}; adaptive: {} (need best <= {C7_SLACK} x each)",
            15,
            best.heuristic,
            best.neighborhood_size,
            best.mean_cost,
            best.ci95_half_width,
            aggs.iter().map(describe).collect::<Vec<_>>().join("; ")
        ),
    )
}

struct Criterion {
    id: &'static str,
    title: &'static str,
    heavy: bool,
    check: Option<fn() -> Outcome>,
}

const CRITERIA: [Criterion; 8] = [
    Criterion { id: "c1", title: "feasibility and anytime monotonicity", heavy: false, check: Some(c1_feasibility) },
    Criterion { id: "c2", title: "bandit math oracles", heavy: false, check: Some(c2_bandit_math) },
    Criterion { id: "c3", title: "policy behavior oracles", heavy: false, check: Some(c3_policy_behavior) },
    Criterion { id: "c4", title: "planner optimality oracle", heavy: false, check: Some(c4_planner_oracle) },
    Criterion { id: "c5", title: "thompson not worse than random", heavy: true, check: Some(c5_thompson_vs_random) },
    Criterion { id: "c6", title: "E=3 not worse than E=1", heavy: true, check: Some(c6_more_size_options) },
    Criterion { id: "c7", title: "grid search lower bound", heavy: true, check: Some(c7_grid_search) },
    Criterion { id: "c8", title: "large-scale comparison with published baselines", heavy: false, check: None },
];

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let heavy = args.iter().any(|a| a == "--include-ignored" || a == "--ignored");
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    if args.iter().any(|a| a == "--list") {
        for c in &CRITERIA {
            println!("{}: test", c.id);
        }
        return ExitCode::SUCCESS;
    }
    let mut failed = 0;
    for c in &CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|f| c.id.contains(f.as_str())) {
            continue;
        }
        let Some(check) = c.check else {
            println!("N/A  {} {}: out of scope at desk scale, not checked", c.id, c.title);
            continue;
        };
        if c.heavy && !heavy {
            println!("SKIP {} {}: hours of wall clock, run with --include-ignored", c.id, c.title);
            continue;
        }
        let started = Instant::now();
        let result = check();
        println!(
            "{} {} {}: {} [{:.1}s]",
            if result.pass { "PASS" } else { "FAIL" },
            c.id,
            c.title,
            result.detail,
            started.elapsed().as_secs_f64()
        );
        failed += usize::from(!result.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
