//! Destroy heuristics: pick which agents' paths are removed and replanned.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::model::{Instance, Plan};
use crate::planner::{DistanceCache, ReservationTable, UNREACHABLE};

/// Random walks started per agent-based neighborhood before falling back.
pub const MAX_WALKS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HeuristicKind {
    RandomUniform,
    AgentBased,
    MapBased,
}

impl HeuristicKind {
    pub const ALL: [HeuristicKind; 3] = [HeuristicKind::RandomUniform, HeuristicKind::AgentBased, HeuristicKind::MapBased];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            HeuristicKind::RandomUniform => "random",
            HeuristicKind::AgentBased => "agent",
            HeuristicKind::MapBased => "map",
        }
    }
}

impl fmt::Display for HeuristicKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeuristicKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "random" | "random-uniform" | "uniform" => Ok(HeuristicKind::RandomUniform),
            "agent" | "agent-based" => Ok(HeuristicKind::AgentBased),
            "map" | "map-based" | "intersection" => Ok(HeuristicKind::MapBased),
            other => Err(format!("unknown destroy heuristic {other:?} (expected random, agent or map)")),
        }
    }
}

/// Agents whose paths get destroyed, in selection order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    pub agents: Vec<usize>,
    pub generator: HeuristicKind,
}

/// `min(size, m)` distinct agents chosen uniformly without replacement.
pub fn random_neighborhood<R: Rng + ?Sized>(num_agents: usize, size: usize, rng: &mut R) -> Neighborhood {
    let k = size.clamp(1, num_agents.max(1)).min(num_agents);
    Neighborhood { agents: index::sample(rng, num_agents, k).into_vec(), generator: HeuristicKind::RandomUniform }
}

/// Tops `agents` up to `size` with uniformly drawn agents not yet included.
fn fill_randomly<R: Rng + ?Sized>(agents: &mut Vec<usize>, num_agents: usize, size: usize, rng: &mut R) {
    let target = size.min(num_agents);
    if agents.len() >= target {
        agents.truncate(target);
        return;
    }
    let taken: HashSet<usize> = agents.iter().copied().collect();
    let mut rest: Vec<usize> = (0..num_agents).filter(|a| !taken.contains(a)).collect();
    rest.shuffle(rng);
    agents.extend(rest.into_iter().take(target - agents.len()));
}

/// Per-run state of the destroy heuristics: the agent-based tabu list and the
/// map's intersections (cells of degree > 2).
#[derive(Debug, Clone)]
pub struct DestroyState {
    tabu: HashSet<usize>,
    intersections: Vec<usize>,
}

/// Read-only view of the incumbent solution handed to the heuristics.
pub struct Incumbent<'a> {
    pub instance: &'a Instance,
    pub plan: &'a Plan,
    /// Occupancy of `plan`, every agent included.
    pub table: &'a ReservationTable,
    pub distances: &'a DistanceCache,
    /// Shortest start-goal distance per agent.
    pub shortest: &'a [u32],
}

impl DestroyState {
    pub fn new(instance: &Instance) -> Self {
        let map = instance.map();
        let intersections = (0..map.num_cells())
            .filter(|&c| map.is_passable_cell(c) && map.neighbor_cells(c).len() > 2)
            .collect();
        Self { tabu: HashSet::new(), intersections }
    }

    pub fn intersections(&self) -> &[usize] {
        &self.intersections
    }

    pub fn tabu(&self) -> &HashSet<usize> {
        &self.tabu
    }

    pub fn generate<R: Rng + ?Sized>(
        &mut self,
        kind: HeuristicKind,
        incumbent: &Incumbent<'_>,
        size: usize,
        rng: &mut R,
    ) -> Neighborhood {
        let m = incumbent.instance.num_agents();
        match kind {
            HeuristicKind::RandomUniform => random_neighborhood(m, size, rng),
            HeuristicKind::AgentBased => self.agent_based(incumbent, size, rng),
            HeuristicKind::MapBased => self.map_based(incumbent, size, rng),
        }
    }

    /// Neighborhood around the most delayed non-tabu agent: the agents met by
    /// timed random walks that could still shorten the seed's path.
    pub fn agent_based<R: Rng + ?Sized>(&mut self, inc: &Incumbent<'_>, size: usize, rng: &mut R) -> Neighborhood {
        let m = inc.instance.num_agents();
        let delay = |a: usize| inc.plan.paths[a].length() as u64 - u64::from(inc.shortest[a]);
        let mut seed = self.pick_seed(m, &delay, rng);
        if seed.is_none_or(|a| delay(a) == 0) && !self.tabu.is_empty() && (0..m).any(|a| delay(a) > 0) {
            // every delayed agent is tabu: start a fresh round
            self.tabu.clear();
            seed = self.pick_seed(m, &delay, rng);
        }
        let Some(seed) = seed.filter(|&a| delay(a) > 0) else {
            let mut n = random_neighborhood(m, size, rng);
            n.generator = HeuristicKind::AgentBased;
            return n;
        };
        self.tabu.insert(seed);
        if self.tabu.len() >= m {
            self.tabu.clear();
        }

        let target = size.min(m);
        let mut agents = vec![seed];
        let mut members: HashSet<usize> = HashSet::from([seed]);
        let map = inc.instance.map();
        let seed_path = &inc.plan.paths[seed];
        let upper = seed_path.length();
        let dist = inc.distances.get(inc.instance.agents()[seed].goal);
        let mut options = Vec::with_capacity(5);
        for _ in 0..MAX_WALKS {
            if agents.len() >= target {
                break;
            }
            let mut t = rng.random_range(0..=upper);
            let mut cell = map.index(seed_path.at(t));
            while t < upper && agents.len() < target {
                options.clear();
                for &next in map.neighbor_cells(cell).iter().chain(std::iter::once(&(cell as u32))) {
                    let h = dist.cell(next as usize);
                    if h != UNREACHABLE && t + 1 + (h as usize) < upper {
                        options.push(next as usize);
                    }
                }
                let Some(&next) = options.get(rng.random_range(0..options.len().max(1))) else { break };
                t += 1;
                cell = next;
                if let Some(other) = inc.table.occupant(cell, t) {
                    if other != seed && members.insert(other) {
                        agents.push(other);
                    }
                }
            }
        }
        fill_randomly(&mut agents, m, target, rng);
        Neighborhood { agents, generator: HeuristicKind::AgentBased }
    }

    fn pick_seed<R: Rng + ?Sized>(&self, m: usize, delay: &dyn Fn(usize) -> u64, rng: &mut R) -> Option<usize> {
        let mut best = None;
        let mut ties = 0u32;
        for a in (0..m).filter(|a| !self.tabu.contains(a)) {
            let d = delay(a);
            match best {
                Some((_, bd)) if d < bd => {}
                Some((_, bd)) if d == bd => {
                    // reservoir sampling over equal delays
                    ties += 1;
                    if rng.random_range(0..ties) == 0 {
                        best = Some((a, d));
                    }
                }
                _ => {
                    best = Some((a, d));
                    ties = 1;
                }
            }
        }
        best.map(|(a, _)| a)
    }

    /// Neighborhood of agents whose paths pass a random intersection or cells
    /// close to it. Expansion stops at `size` agents or `2 * size` cells.
    pub fn map_based<R: Rng + ?Sized>(&mut self, inc: &Incumbent<'_>, size: usize, rng: &mut R) -> Neighborhood {
        let m = inc.instance.num_agents();
        let target = size.min(m);
        if self.intersections.is_empty() {
            let mut n = random_neighborhood(m, size, rng);
            n.generator = HeuristicKind::MapBased;
            return n;
        }
        let map = inc.instance.map();
        let center = self.intersections[rng.random_range(0..self.intersections.len())];

        let mut agents = Vec::with_capacity(target);
        let mut members = HashSet::new();
        let mut seen = HashSet::from([center]);
        let mut frontier = VecDeque::from([center]);
        let mut collected = 0usize;
        let mut order = Vec::with_capacity(4);
        while let Some(cell) = frontier.pop_front() {
            collected += 1;
            let mut here: Vec<usize> = inc.table.visitors(cell).filter(|a| !members.contains(a)).collect();
            here.sort_unstable();
            here.dedup();
            here.shuffle(rng);
            for a in here {
                if agents.len() >= target {
                    break;
                }
                members.insert(a);
                agents.push(a);
            }
            if agents.len() >= target || collected >= 2 * size {
                break;
            }
            order.clear();
            order.extend(map.neighbor_cells(cell).iter().map(|&c| c as usize).filter(|c| !seen.contains(c)));
            order.shuffle(rng);
            for &next in &order {
                seen.insert(next);
                frontier.push_back(next);
            }
        }
        fill_randomly(&mut agents, m, target, rng);
        Neighborhood { agents, generator: HeuristicKind::MapBased }
    }
}
