//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use balance_core::model::{validate, Agent, GridMap, Location, Path, Plan};
use balance_core::planner::ReservationTable;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/random-32-32-10")
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

/// A tiny planning problem: fixed paths of other agents plus one agent to plan.
#[derive(Debug, Clone)]
pub struct TinyCase {
    pub map: Arc<GridMap>,
    pub others: Vec<Path>,
    pub agent: Agent,
}

impl TinyCase {
    pub fn table(&self) -> ReservationTable {
        let mut table = ReservationTable::new(&self.map);
        for (i, p) in self.others.iter().enumerate() {
            table.add_path(&self.map, i, p);
        }
        table
    }
}

/// Random case on a grid with at most `max_cells` passable cells. Other paths
/// are random walks of at most `max_other_len` steps that do not conflict with
/// each other.
pub fn tiny_case<R: Rng>(rng: &mut R, max_cells: usize, max_other_len: usize) -> TinyCase {
    loop {
        let (w, h) = *[(1u32, 6u32), (6, 1), (2, 3), (3, 2), (2, 4), (4, 2), (3, 3)].choose(rng).unwrap();
        let total = (w * h) as usize;
        let mut passable = vec![true; total];
        let mut open = total;
        while open > max_cells || (open > 2 && rng.random_bool(0.2)) {
            let c = rng.random_range(0..total);
            if passable[c] {
                passable[c] = false;
                open -= 1;
            }
        }
        let map = Arc::new(GridMap::new(w, h, passable).unwrap());
        let cells: Vec<Location> = map.passable_locations().collect();
        if cells.len() < 2 {
            continue;
        }
        let n_others = rng.random_range(0..=2usize).min(cells.len() - 1);
        let mut starts = cells.clone();
        starts.shuffle(rng);
        let mut others = Vec::new();
        for &s in &starts[..n_others] {
            let mut steps = vec![s];
            for _ in 0..rng.random_range(0..=max_other_len) {
                let here = *steps.last().unwrap();
                let mut options: Vec<Location> = map.neighbors(here).collect();
                options.push(here);
                steps.push(*options.choose(rng).unwrap());
            }
            others.push(Path::new(steps).unwrap());
        }
        if !validate(&Plan::new(others.clone())).is_empty() {
            continue;
        }
        let start = starts[n_others];
        let goal = *cells.choose(rng).unwrap();
        return TinyCase { map, others, agent: Agent { id: n_others, start, goal } };
    }
}

/// Shortest path length for `case.agent` among all timed paths of at most
/// `horizon` steps, judged by the plan validator; `None` if none exists.
pub fn exhaustive_shortest(case: &TinyCase, horizon: usize) -> Option<usize> {
    let map = &case.map;
    for len in 0..=horizon {
        let mut steps = vec![case.agent.start];
        if search(map, case, &mut steps, len) {
            return Some(len);
        }
    }
    None
}

fn search(map: &GridMap, case: &TinyCase, steps: &mut Vec<Location>, len: usize) -> bool {
    let here = *steps.last().unwrap();
    if steps.len() == len + 1 {
        if here != case.agent.goal {
            return false;
        }
        // a shorter candidate with a trailing wait is covered at a smaller length
        if len > 0 && steps[len - 1] == here {
            return false;
        }
        let mut paths = case.others.clone();
        paths.push(Path::new(steps.clone()).unwrap());
        return validate(&Plan::new(paths)).is_empty();
    }
    let mut moves: Vec<Location> = map.neighbors(here).collect();
    moves.push(here);
    for next in moves {
        steps.push(next);
        let found = search(map, case, steps, len);
        steps.pop();
        if found {
            return true;
        }
    }
    false
}
