//! Single-agent planning: BFS distance fields and space-time A* against a
//! reservation table of already fixed paths.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet, VecDeque};
use std::sync::{Arc, OnceLock};

use thiserror::Error;

use crate::model::{Agent, GridMap, Location, Path};

pub const UNREACHABLE: u32 = u32::MAX;

/// Extra timesteps granted on top of the longest fixed path and the map size.
pub const HORIZON_SLACK: usize = 64;

/// Exact shortest distances from every cell to one goal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceField {
    goal: Location,
    width: u32,
    height: u32,
    dist: Vec<u32>,
}

impl DistanceField {
    pub fn goal(&self) -> Location {
        self.goal
    }

    /// Distance from `loc` to the goal; `None` when unreachable or off the map.
    pub fn get(&self, loc: Location) -> Option<u32> {
        if loc.row >= self.height || loc.col >= self.width {
            return None;
        }
        let d = self.dist[loc.row as usize * self.width as usize + loc.col as usize];
        (d != UNREACHABLE).then_some(d)
    }

    /// Raw distance by cell index, `UNREACHABLE` for sealed-off or blocked cells.
    #[inline]
    pub fn cell(&self, cell: usize) -> u32 {
        self.dist[cell]
    }
}

pub fn bfs_distances(map: &GridMap, goal: Location) -> DistanceField {
    let mut dist = vec![UNREACHABLE; map.num_cells()];
    if map.is_passable(goal) {
        let g = map.index(goal);
        dist[g] = 0;
        let mut queue = VecDeque::from([g]);
        while let Some(cell) = queue.pop_front() {
            let next_d = dist[cell] + 1;
            for &n in map.neighbor_cells(cell) {
                let n = n as usize;
                if dist[n] == UNREACHABLE {
                    dist[n] = next_d;
                    queue.push_back(n);
                }
            }
        }
    }
    DistanceField { goal, width: map.width(), height: map.height(), dist }
}

/// Distance fields computed on first use, one slot per goal cell. Reads are
/// lock-free once a slot is filled, so one cache can serve concurrent runs.
#[derive(Debug)]
pub struct DistanceCache {
    map: Arc<GridMap>,
    slots: Vec<OnceLock<DistanceField>>,
}

impl DistanceCache {
    pub fn new(map: Arc<GridMap>) -> Self {
        let slots = (0..map.num_cells()).map(|_| OnceLock::new()).collect();
        Self { map, slots }
    }

    pub fn get(&self, goal: Location) -> &DistanceField {
        self.slots[self.map.index(goal)].get_or_init(|| bfs_distances(&self.map, goal))
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }
}

const NO_AGENT: u32 = u32::MAX;

/// Space-time occupancy of a set of fixed paths.
///
/// Each cell keeps its visits sorted by time; the final cell of every path is
/// additionally marked as parked from the arrival time onward.
#[derive(Debug, Clone)]
pub struct ReservationTable {
    visits: Vec<Vec<(u32, u32)>>,
    parked: Vec<Option<(u32, u32)>>,
    /// Multiset of reserved path lengths, indexed by length.
    length_counts: Vec<u32>,
}

impl ReservationTable {
    pub fn new(map: &GridMap) -> Self {
        Self { visits: vec![Vec::new(); map.num_cells()], parked: vec![None; map.num_cells()], length_counts: Vec::new() }
    }

    pub fn add_path(&mut self, map: &GridMap, agent: usize, path: &Path) {
        let id = agent as u32;
        for (t, &loc) in path.steps().iter().enumerate() {
            let cell = &mut self.visits[map.index(loc)];
            let entry = (t as u32, id);
            let pos = cell.partition_point(|&v| v < entry);
            debug_assert!(
                cell.get(pos).is_none_or(|v| v.0 != entry.0) && (pos == 0 || cell[pos - 1].0 != entry.0),
                "two reservations at {loc} t={t}"
            );
            cell.insert(pos, entry);
        }
        let goal = map.index(path.end());
        debug_assert!(self.parked[goal].is_none(), "two agents parked at {}", path.end());
        self.parked[goal] = Some((path.length() as u32, id));
        let len = path.length();
        if self.length_counts.len() <= len {
            self.length_counts.resize(len + 1, 0);
        }
        self.length_counts[len] += 1;
    }

    /// Removes a path previously added for `agent`.
    pub fn remove_path(&mut self, map: &GridMap, agent: usize, path: &Path) {
        let id = agent as u32;
        for (t, &loc) in path.steps().iter().enumerate() {
            let cell = &mut self.visits[map.index(loc)];
            if let Ok(pos) = cell.binary_search(&(t as u32, id)) {
                cell.remove(pos);
            }
        }
        let goal = map.index(path.end());
        if matches!(self.parked[goal], Some((_, a)) if a == id) {
            self.parked[goal] = None;
        }
        let len = path.length();
        if let Some(count) = self.length_counts.get_mut(len) {
            *count = count.saturating_sub(1);
        }
        while self.length_counts.last() == Some(&0) {
            self.length_counts.pop();
        }
    }

    /// Longest reserved path length, 0 when empty.
    pub fn max_length(&self) -> usize {
        self.length_counts.len().saturating_sub(1)
    }

    /// Agent occupying `cell` at time `t`, including agents resting at their goal.
    #[inline]
    pub fn occupant(&self, cell: usize, t: usize) -> Option<usize> {
        if let Some((from, agent)) = self.parked[cell] {
            if t >= from as usize {
                return Some(agent as usize);
            }
        }
        let visits = &self.visits[cell];
        let t = t as u32;
        let pos = visits.partition_point(|&(vt, _)| vt < t);
        match visits.get(pos) {
            Some(&(vt, agent)) if vt == t => Some(agent as usize),
            _ => None,
        }
    }

    /// Agent resting at `cell` forever from some time on, with that time.
    pub fn parked_at(&self, cell: usize) -> Option<(usize, usize)> {
        self.parked[cell].map(|(t, a)| (t as usize, a as usize))
    }

    /// Agents whose paths pass through `cell`, in time order, possibly repeated.
    pub fn visitors(&self, cell: usize) -> impl Iterator<Item = usize> + '_ {
        self.visits[cell].iter().map(|&(_, a)| a as usize)
    }

    /// Last time any reserved path is at `cell`.
    pub fn last_visit(&self, cell: usize) -> Option<usize> {
        self.visits[cell].last().map(|&(t, _)| t as usize)
    }

    fn occupant_raw(&self, cell: usize, t: usize) -> u32 {
        self.occupant(cell, t).map_or(NO_AGENT, |a| a as u32)
    }

    /// Whether moving `from -> to` between `t - 1` and `t` collides with a
    /// reserved agent, by vertex or by swapping.
    #[inline]
    pub fn blocks_move(&self, from: usize, to: usize, t: usize) -> bool {
        if self.occupant(to, t).is_some() {
            return true;
        }
        if from == to || t == 0 {
            return false;
        }
        let other = self.occupant_raw(to, t - 1);
        other != NO_AGENT && self.occupant_raw(from, t) == other
    }

    pub fn is_empty(&self) -> bool {
        self.length_counts.is_empty()
    }
}

/// Horizon used for planning against `table` on `map`.
pub fn default_time_limit(map: &GridMap, table: &ReservationTable) -> usize {
    table.max_length() + map.width() as usize + map.height() as usize + HORIZON_SLACK
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PlanFailure {
    #[error("goal unreachable from start")]
    Unreachable,
    #[error("goal is permanently occupied by another agent")]
    GoalOccupied,
    #[error("start is occupied at time 0")]
    StartOccupied,
    #[error("no conflict-free path within the time limit")]
    TimeLimit,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    cell: u32,
    time: u32,
    parent: u32,
}

/// Closed set over (cell, time, waited-at-goal) keys.
enum Closed {
    Dense { bits: Vec<u64>, stride: usize },
    Sparse(HashSet<(u32, u32, bool)>),
}

impl Closed {
    const DENSE_LIMIT: usize = 1 << 24;

    fn new(cells: usize, times: usize) -> Self {
        let slots = cells * times * 2;
        if slots <= Self::DENSE_LIMIT {
            Closed::Dense { bits: vec![0; slots.div_ceil(64)], stride: times }
        } else {
            Closed::Sparse(HashSet::new())
        }
    }

    fn contains(&self, cell: u32, time: u32, waited: bool) -> bool {
        match self {
            Closed::Dense { bits, stride } => {
                let idx = (cell as usize * *stride + time as usize) * 2 + waited as usize;
                bits[idx / 64] & (1u64 << (idx % 64)) != 0
            }
            Closed::Sparse(set) => set.contains(&(cell, time, waited)),
        }
    }

    /// Marks the key, returning false if it was already closed.
    fn insert(&mut self, cell: u32, time: u32, waited: bool) -> bool {
        match self {
            Closed::Dense { bits, stride } => {
                let idx = (cell as usize * *stride + time as usize) * 2 + waited as usize;
                let (word, bit) = (idx / 64, 1u64 << (idx % 64));
                let fresh = bits[word] & bit == 0;
                bits[word] |= bit;
                fresh
            }
            Closed::Sparse(set) => set.insert((cell, time, waited)),
        }
    }
}

/// Shortest conflict-free path for `agent` against `table` (waits allowed).
///
/// The agent must be able to rest at its goal forever after arriving, so the
/// path cannot end before the last time any fixed path visits the goal. Search
/// nodes are (cell, timestep); once past the last reserved timestep the table is
/// static and times are merged, which keeps the search finite. Ties on
/// `f = g + h` prefer larger `g`, then insertion order.
pub fn plan_path(
    map: &GridMap,
    agent: &Agent,
    table: &ReservationTable,
    dist: &DistanceField,
    time_limit: usize,
) -> Result<Path, PlanFailure> {
    debug_assert_eq!(dist.goal(), agent.goal);
    let start = map.index(agent.start);
    let goal = map.index(agent.goal);
    if dist.cell(start) == UNREACHABLE {
        return Err(PlanFailure::Unreachable);
    }
    if table.parked_at(goal).is_some() {
        return Err(PlanFailure::GoalOccupied);
    }
    if table.occupant(start, 0).is_some() {
        return Err(PlanFailure::StartOccupied);
    }
    let goal_free_from = table.last_visit(goal).map_or(0, |t| t + 1);
    // Beyond `static_from` nothing in the table changes any more.
    let static_from = table.max_length().max(goal_free_from);
    let time_limit = time_limit.max(goal_free_from);
    let key_time = |t: usize| t.min(static_from) as u32;

    let mut nodes = vec![Node { cell: start as u32, time: 0, parent: u32::MAX }];
    let mut closed = Closed::new(map.num_cells(), static_from + 1);
    // (f, larger g first, FIFO, node index)
    let mut open = BinaryHeap::new();
    let mut seq = 0u64;
    // Arrival cannot happen before `goal_free_from`, which keeps the bound
    // admissible and consistent while avoiding flat f-layers of waiting states.
    let bound = |cell: usize, t: usize| (dist.cell(cell) as usize).max(goal_free_from.saturating_sub(t)) as u32;
    open.push(Reverse((bound(start, 0), Reverse(0u32), seq, 0u32)));

    while let Some(Reverse((_, _, _, idx))) = open.pop() {
        let node = nodes[idx as usize];
        let (cell, t) = (node.cell as usize, node.time as usize);
        let parent_cell = (node.parent != u32::MAX).then(|| nodes[node.parent as usize].cell as usize);
        let waited_at_goal = cell == goal && parent_cell == Some(goal);
        if !closed.insert(node.cell, key_time(t), waited_at_goal) {
            continue;
        }
        if cell == goal && !waited_at_goal && t >= goal_free_from {
            return Ok(reconstruct(map, &nodes, idx));
        }
        if t >= time_limit {
            continue;
        }
        let next_t = t + 1;
        let wait = [cell as u32];
        for &next in map.neighbor_cells(cell).iter().chain(wait.iter()) {
            let next = next as usize;
            if dist.cell(next) == UNREACHABLE || table.blocks_move(cell, next, next_t) {
                continue;
            }
            let waits_at_goal = next == goal && cell == goal;
            if closed.contains(next as u32, key_time(next_t), waits_at_goal) {
                continue;
            }
            nodes.push(Node { cell: next as u32, time: next_t as u32, parent: idx });
            seq += 1;
            let f = next_t as u32 + bound(next, next_t);
            open.push(Reverse((f, Reverse(next_t as u32), seq, (nodes.len() - 1) as u32)));
        }
    }
    Err(PlanFailure::TimeLimit)
}

fn reconstruct(map: &GridMap, nodes: &[Node], mut idx: u32) -> Path {
    let mut steps = Vec::with_capacity(nodes[idx as usize].time as usize + 1);
    while idx != u32::MAX {
        let node = nodes[idx as usize];
        steps.push(map.location(node.cell as usize));
        idx = node.parent;
    }
    steps.reverse();
    Path::new(steps).expect("non-empty path")
}
