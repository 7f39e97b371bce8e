//! The destroy-and-repair loop: initial solution, adaptive neighborhood
//! selection, repair by prioritized planning, and the anytime trace.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bandit::{neighborhood_size, BiLevelBandit, Choice, JointBandit, Policy};
use crate::benchmark::CsvRecord;
use crate::destroy::{DestroyState, HeuristicKind, Incumbent};
use crate::model::{validate, Conflict, Instance, Path, Plan};
use crate::planner::{default_time_limit, plan_path, DistanceCache, PlanFailure, ReservationTable, UNREACHABLE};

/// Default number of random priority orders tried for the initial solution.
pub const DEFAULT_PP_RESTARTS: usize = 50;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("agent {agent} cannot reach its goal")]
    Unreachable { agent: usize },
    #[error("prioritized planning found no initial solution in {attempts} attempts")]
    InitialSolution { attempts: usize },
    #[error("plan has {} conflicts, first {:?}", .0.len(), .0.first())]
    Conflicts(Vec<Conflict>),
}

/// How the (heuristic, size) pair is chosen each iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Controller {
    /// Heuristic bandit plus one size bandit per heuristic.
    BiLevel(Policy),
    /// One bandit over all heuristic and size pairs.
    Joint(Policy),
    /// Always the same heuristic and neighborhood size.
    Fixed { heuristic: HeuristicKind, size: usize },
}

impl Controller {
    /// Uniform choice of heuristic and size, the non-adaptive baseline.
    pub fn uniform_random() -> Self {
        Controller::BiLevel(Policy::UniformRandom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    /// Wall-clock time, initial solution included.
    WallClock(Duration),
    /// A fixed number of destroy-repair iterations. Trace timestamps are then
    /// the iteration numbers, so runs are exactly reproducible.
    Iterations(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub controller: Controller,
    /// Largest size exponent `E`; sizes are `2^1 ..= 2^E`.
    pub exponents: u32,
    pub budget: Budget,
    pub seed: u64,
    pub pp_restarts: usize,
    /// Check the whole plan for conflicts after every accepted iteration.
    pub validate_each_iteration: bool,
}

impl EngineConfig {
    pub fn new(controller: Controller, budget: Budget, seed: u64) -> Self {
        Self {
            controller,
            exponents: 5,
            budget,
            seed,
            pp_restarts: DEFAULT_PP_RESTARTS,
            validate_each_iteration: cfg!(debug_assertions),
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |msg: String| Err(EngineError::InvalidConfig(msg));
        if self.exponents == 0 || self.exponents > 16 {
            return bad(format!("E must be in 1..=16, got {}", self.exponents));
        }
        if self.pp_restarts == 0 {
            return bad("pp_restarts must be at least 1".into());
        }
        match self.controller {
            Controller::BiLevel(p) | Controller::Joint(p) if !p.is_valid() => bad(format!("invalid policy {p:?}")),
            Controller::Fixed { size: 0, .. } => bad("fixed neighborhood size must be positive".into()),
            _ => Ok(()),
        }
    }
}

/// One trace row. Iteration 0 is the initial solution and has no heuristic.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iteration: u64,
    pub elapsed_ms: f64,
    pub choice: Option<(HeuristicKind, usize)>,
    pub reward: u64,
    /// Cost of the incumbent after this iteration.
    pub cost: u64,
    /// The repair produced no plan.
    pub repair_failed: bool,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub final_plan: Plan,
    pub final_cost: u64,
    pub initial_cost: u64,
    pub trace: Vec<TraceEntry>,
    /// Times each (heuristic, size) pair was chosen.
    pub selection_counts: BTreeMap<(HeuristicKind, usize), u64>,
    pub init_time: Duration,
    pub total_time: Duration,
}

impl RunResult {
    pub fn iterations(&self) -> u64 {
        self.trace.last().map_or(0, |e| e.iteration)
    }

    /// Trace rows in the CSV schema, with the final cost appended as a
    /// `final` row.
    pub fn to_records(&self, meta: &RecordMeta) -> Vec<CsvRecord> {
        let row = |iteration, elapsed_ms, heuristic: &str, size, reward, cost| CsvRecord {
            map: meta.map.clone(),
            scenario: meta.scenario.clone(),
            algorithm: meta.algorithm.clone(),
            m: self.final_plan.len(),
            seed: meta.seed,
            budget_seconds: meta.budget_seconds,
            iteration,
            elapsed_ms,
            heuristic: heuristic.to_string(),
            neighborhood_size: size,
            reward,
            cost,
        };
        let mut out: Vec<CsvRecord> = self
            .trace
            .iter()
            .map(|e| match e.choice {
                None => row(e.iteration, e.elapsed_ms, "init", None, None, Some(e.cost)),
                Some((h, n)) => row(e.iteration, e.elapsed_ms, h.name(), Some(n), Some(e.reward), Some(e.cost)),
            })
            .collect();
        let last = self.trace.last().map_or(0.0, |e| e.elapsed_ms);
        out.push(row(self.iterations(), last, "final", None, None, Some(self.final_cost)));
        out
    }
}

/// Identifying columns for CSV rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordMeta {
    pub map: String,
    pub scenario: String,
    pub algorithm: String,
    pub seed: u64,
    pub budget_seconds: Option<f64>,
}

/// Shortest start-goal distance of every agent.
pub fn shortest_lengths(instance: &Instance, distances: &DistanceCache) -> Result<Vec<u32>, EngineError> {
    instance
        .agents()
        .iter()
        .enumerate()
        .map(|(i, a)| match distances.get(a.goal).get(a.start) {
            Some(d) if d != UNREACHABLE => Ok(d),
            _ => Err(EngineError::Unreachable { agent: i }),
        })
        .collect()
}

/// Plans `agents` one by one in a fresh random order against `table`, adding
/// each new path to it. On failure the paths added so far are removed again,
/// leaving `table` as it was.
pub fn repair<R: Rng + ?Sized>(
    instance: &Instance,
    distances: &DistanceCache,
    table: &mut ReservationTable,
    agents: &[usize],
    rng: &mut R,
) -> Result<Vec<(usize, Path)>, PlanFailure> {
    let map = instance.map();
    let mut order = agents.to_vec();
    order.shuffle(rng);
    let mut planned: Vec<(usize, Path)> = Vec::with_capacity(order.len());
    for a in order {
        let agent = &instance.agents()[a];
        let limit = default_time_limit(map, table);
        match plan_path(map, agent, table, distances.get(agent.goal), limit) {
            Ok(path) => {
                table.add_path(map, a, &path);
                planned.push((a, path));
            }
            Err(e) => {
                for (b, p) in &planned {
                    table.remove_path(map, *b, p);
                }
                return Err(e);
            }
        }
    }
    Ok(planned)
}

/// Prioritized planning with random restarts. Returns the plan and the table
/// holding all of its paths.
pub fn initial_solution<R: Rng + ?Sized>(
    instance: &Instance,
    distances: &DistanceCache,
    rng: &mut R,
    restarts: usize,
) -> Result<(Plan, ReservationTable), EngineError> {
    shortest_lengths(instance, distances)?;
    let all: Vec<usize> = (0..instance.num_agents()).collect();
    for attempt in 0..restarts {
        let mut table = ReservationTable::new(instance.map());
        match repair(instance, distances, &mut table, &all, rng) {
            Ok(mut planned) => {
                planned.sort_unstable_by_key(|(a, _)| *a);
                let plan = Plan::new(planned.into_iter().map(|(_, p)| p).collect());
                return Ok((plan, table));
            }
            Err(e) => log::debug!("prioritized planning attempt {attempt} failed: {e}"),
        }
    }
    Err(EngineError::InitialSolution { attempts: restarts })
}

enum Selector {
    BiLevel(BiLevelBandit),
    Joint(JointBandit),
    Fixed(HeuristicKind, usize),
}

impl Selector {
    fn new(controller: Controller, exponents: u32) -> Self {
        match controller {
            Controller::BiLevel(p) => Selector::BiLevel(BiLevelBandit::new(p, exponents)),
            Controller::Joint(p) => Selector::Joint(JointBandit::new(p, exponents)),
            Controller::Fixed { heuristic, size } => Selector::Fixed(heuristic, size),
        }
    }

    fn select<R: Rng + ?Sized>(&self, rng: &mut R) -> (HeuristicKind, usize, Option<Choice>) {
        let from = |c: Choice| (c.heuristic, neighborhood_size(c.exponent), Some(c));
        match self {
            Selector::BiLevel(b) => from(b.select(rng)),
            Selector::Joint(b) => from(b.select(rng)),
            Selector::Fixed(h, n) => (*h, *n, None),
        }
    }

    fn update(&mut self, choice: Option<Choice>, reward: f64) {
        match (self, choice) {
            (Selector::BiLevel(b), Some(c)) => b.update(c, reward),
            (Selector::Joint(b), Some(c)) => b.update(c, reward),
            _ => {}
        }
    }
}

fn total_cost(plan: &Plan, shortest: &[u32]) -> u64 {
    plan.paths.iter().zip(shortest).map(|(p, &s)| p.length() as u64 - u64::from(s)).sum()
}

/// Runs the search on `instance` with a private distance cache.
pub fn run(instance: &Instance, config: &EngineConfig) -> Result<RunResult, EngineError> {
    let distances = DistanceCache::new(instance.shared_map().clone());
    run_with_cache(instance, &distances, config)
}

/// Runs the search; `distances` may be shared between concurrent runs on the
/// same map.
pub fn run_with_cache(
    instance: &Instance,
    distances: &DistanceCache,
    config: &EngineConfig,
) -> Result<RunResult, EngineError> {
    config.validate()?;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let map = instance.map();
    let shortest = shortest_lengths(instance, distances)?;

    let (mut plan, mut table) = initial_solution(instance, distances, &mut rng, config.pp_restarts)?;
    let init_time = started.elapsed();
    if config.validate_each_iteration {
        check_plan(&plan)?;
    }
    let mut cost = total_cost(&plan, &shortest);
    let initial_cost = cost;
    let logical = matches!(config.budget, Budget::Iterations(_));
    let stamp = |iteration: u64| if logical { iteration as f64 } else { started.elapsed().as_secs_f64() * 1e3 };
    let mut trace = vec![TraceEntry {
        iteration: 0,
        elapsed_ms: stamp(0),
        choice: None,
        reward: 0,
        cost,
        repair_failed: false,
    }];

    let mut selector = Selector::new(config.controller, config.exponents);
    let mut destroy = DestroyState::new(instance);
    let mut selection_counts = BTreeMap::new();
    let mut iteration = 0u64;
    loop {
        let done = match config.budget {
            Budget::WallClock(limit) => started.elapsed() >= limit,
            Budget::Iterations(n) => iteration >= n,
        };
        if done || cost == 0 && matches!(config.budget, Budget::WallClock(_)) {
            break;
        }
        iteration += 1;

        let (heuristic, size, choice) = selector.select(&mut rng);
        *selection_counts.entry((heuristic, size)).or_insert(0) += 1;
        let neighborhood = {
            let incumbent =
                Incumbent { instance, plan: &plan, table: &table, distances, shortest: &shortest };
            destroy.generate(heuristic, &incumbent, size, &mut rng)
        };
        let agents = neighborhood.agents;

        let old_part: u64 = agents.iter().map(|&a| plan.paths[a].length() as u64 - u64::from(shortest[a])).sum();
        for &a in &agents {
            table.remove_path(map, a, &plan.paths[a]);
        }
        let outcome = repair(instance, distances, &mut table, &agents, &mut rng);
        let repair_failed = outcome.is_err();
        let mut reward = 0;
        match outcome {
            Ok(new_paths) => {
                let new_part: u64 =
                    new_paths.iter().map(|(a, p)| p.length() as u64 - u64::from(shortest[*a])).sum();
                if new_part < old_part {
                    reward = old_part - new_part;
                    for (a, p) in new_paths {
                        plan.paths[a] = p;
                    }
                    cost -= reward;
                    if config.validate_each_iteration {
                        check_plan(&plan)?;
                    }
                } else {
                    for (a, p) in &new_paths {
                        table.remove_path(map, *a, p);
                    }
                    for &a in &agents {
                        table.add_path(map, a, &plan.paths[a]);
                    }
                }
            }
            Err(_) => {
                for &a in &agents {
                    table.add_path(map, a, &plan.paths[a]);
                }
            }
        }
        selector.update(choice, reward as f64);
        trace.push(TraceEntry {
            iteration,
            elapsed_ms: stamp(iteration),
            choice: Some((heuristic, size)),
            reward,
            cost,
            repair_failed,
        });
    }

    check_plan(&plan)?;
    debug_assert_eq!(cost, total_cost(&plan, &shortest));
    log::debug!(
        "{} of {iteration} repairs failed, cost {initial_cost} -> {cost}",
        trace.iter().filter(|e| e.repair_failed).count()
    );
    Ok(RunResult {
        final_plan: plan,
        final_cost: cost,
        initial_cost,
        trace,
        selection_counts,
        init_time,
        total_time: started.elapsed(),
    })
}

fn check_plan(plan: &Plan) -> Result<(), EngineError> {
    let conflicts = validate(plan);
    if conflicts.is_empty() {
        Ok(())
    } else {
        Err(EngineError::Conflicts(conflicts))
    }
}
