//! Seeded generator for random-obstacle benchmark maps and scenarios in the
//! standard file formats.

use std::collections::VecDeque;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::benchmark::ScenarioEntry;
use crate::model::{GridMap, ModelError};
use crate::planner::bfs_distances;

#[derive(Debug, Clone, PartialEq)]
pub struct RandomMapSpec {
    pub width: u32,
    pub height: u32,
    /// Share of cells turned into obstacles before pruning, in percent.
    pub obstacle_percent: u32,
    pub seed: u64,
}

impl RandomMapSpec {
    /// The usual name, e.g. `random-32-32-10`.
    pub fn name(&self) -> String {
        format!("random-{}-{}-{}", self.width, self.height, self.obstacle_percent)
    }
}

/// Places `round(cells * percent / 100)` obstacles uniformly at random, then
/// blocks every cell outside the largest connected free region so any start
/// can reach any goal.
pub fn random_map(spec: &RandomMapSpec) -> Result<GridMap, ModelError> {
    let cells = (spec.width * spec.height) as usize;
    let obstacles = (cells * spec.obstacle_percent as usize + 50) / 100;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut passable = vec![true; cells];
    for c in index::sample(&mut rng, cells, obstacles.min(cells)) {
        passable[c] = false;
    }
    let map = GridMap::new(spec.width, spec.height, passable.clone())?;

    let mut component = vec![usize::MAX; cells];
    let mut sizes = Vec::new();
    for root in 0..cells {
        if !passable[root] || component[root] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut size = 0;
        let mut queue = VecDeque::from([root]);
        component[root] = id;
        while let Some(c) = queue.pop_front() {
            size += 1;
            for &n in map.neighbor_cells(c) {
                let n = n as usize;
                if component[n] == usize::MAX {
                    component[n] = id;
                    queue.push_back(n);
                }
            }
        }
        sizes.push(size);
    }
    // first component wins ties, so the result only depends on the seed
    let Some(largest) = (0..sizes.len()).max_by_key(|&i| (sizes[i], std::cmp::Reverse(i))) else {
        return GridMap::new(spec.width, spec.height, passable);
    };
    for c in 0..cells {
        passable[c] = passable[c] && component[c] == largest;
    }
    GridMap::new(spec.width, spec.height, passable)
}

/// `count` entries with pairwise distinct starts and pairwise distinct goals,
/// drawn uniformly from the free cells. Optimal lengths are 4-connected
/// shortest distances and buckets group ten consecutive entries.
pub fn random_scenario(map: &GridMap, map_name: &str, count: usize, seed: u64) -> Vec<ScenarioEntry> {
    let free: Vec<_> = map.passable_locations().collect();
    let count = count.min(free.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = free.clone();
    starts.shuffle(&mut rng);
    let mut goals = free;
    goals.shuffle(&mut rng);
    (0..count)
        .map(|i| {
            let (start, goal) = (starts[i], goals[i]);
            let dist = bfs_distances(map, goal).get(start).expect("free cells are connected");
            ScenarioEntry {
                bucket: (i / 10) as u32,
                map_name: format!("{map_name}.map"),
                map_width: map.width(),
                map_height: map.height(),
                start,
                goal,
                optimal_length: f64::from(dist),
            }
        })
        .collect()
}

/// A map plus `scenarios` scenario files, named as in the benchmark suite.
#[derive(Debug, Clone)]
pub struct GeneratedSuite {
    pub name: String,
    pub map: GridMap,
    pub scenarios: Vec<(String, Vec<ScenarioEntry>)>,
}

pub fn random_suite(spec: &RandomMapSpec, scenarios: usize, entries: usize) -> Result<GeneratedSuite, ModelError> {
    let name = spec.name();
    let map = random_map(spec)?;
    let scenarios = (1..=scenarios)
        .map(|k| {
            let seed = spec.seed.wrapping_mul(1_000_003).wrapping_add(k as u64);
            (format!("{name}-random-{k}.scen"), random_scenario(&map, &name, entries, seed))
        })
        .collect();
    Ok(GeneratedSuite { name, map, scenarios })
}
