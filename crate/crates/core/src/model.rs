//! Grid maps, agents, paths and plans, plus the cost and conflict checks that
//! every other module relies on.
//!
//! Time is indexed from zero: `path.at(0)` is the start location. An agent that
//! has reached the end of its (trimmed) path rests at its goal forever, and the
//! conflict checker treats it that way.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("map dimensions must be positive and match the cell count ({width}x{height}, {cells} cells)")]
    BadDimensions { width: u32, height: u32, cells: usize },
    #[error("location {0} lies outside the map")]
    OutOfBounds(Location),
    #[error("agent {agent}: location {location} is blocked")]
    Blocked { agent: usize, location: Location },
    #[error("agents {first} and {second} share start location {location}")]
    DuplicateStart { first: usize, second: usize, location: Location },
    #[error("agents {first} and {second} share goal location {location}")]
    DuplicateGoal { first: usize, second: usize, location: Location },
    #[error("a path needs at least one step")]
    EmptyPath,
    #[error("path of agent {agent} does not start at its start location")]
    WrongStart { agent: usize },
    #[error("path of agent {agent} does not end at its goal location")]
    WrongGoal { agent: usize },
    #[error("path of agent {agent} makes an illegal move at time {time}")]
    IllegalMove { agent: usize, time: usize },
    #[error("plan has {found} paths for {expected} agents")]
    PlanSize { expected: usize, found: usize },
    #[error("path length {length} is shorter than the shortest distance {shortest}")]
    NegativeDelay { length: usize, shortest: u32 },
}

/// A grid cell, addressed by row and column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Location {
    pub row: u32,
    pub col: u32,
}

impl Location {
    pub const fn new(row: u32, col: u32) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// Classifies a benchmark map character: `Some(true)` passable, `Some(false)`
/// blocked, `None` unknown.
pub(crate) fn classify_cell(c: char) -> Option<bool> {
    match c {
        '.' | 'G' | 'S' => Some(true),
        '@' | 'O' | 'T' | 'W' => Some(false),
        _ => None,
    }
}

/// A 4-connected grid. Cells are stored row-major; adjacency between passable
/// cells is precomputed because the planner walks it constantly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMap {
    width: u32,
    height: u32,
    passable: Vec<bool>,
    adjacency: Vec<Neighbors>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct Neighbors {
    cells: [u32; 4],
    len: u8,
}

impl GridMap {
    pub fn new(width: u32, height: u32, passable: Vec<bool>) -> Result<Self, ModelError> {
        let cells = passable.len();
        if width == 0 || height == 0 || cells != width as usize * height as usize {
            return Err(ModelError::BadDimensions { width, height, cells });
        }
        let mut map = Self { width, height, passable, adjacency: Vec::new() };
        map.adjacency = (0..cells).map(|cell| map.compute_neighbors(cell)).collect();
        Ok(map)
    }

    /// An obstacle-free `width` x `height` grid.
    pub fn open(width: u32, height: u32) -> Result<Self, ModelError> {
        Self::new(width, height, vec![true; width as usize * height as usize])
    }

    /// Builds a map from rows of benchmark characters (`.` free, `@` blocked).
    /// Handy for small hand-written fixtures.
    ///
    /// # Panics
    /// Panics on ragged rows or unknown characters.
    pub fn from_rows(rows: &[&str]) -> Self {
        let height = rows.len() as u32;
        let width = rows.first().map_or(0, |r| r.chars().count()) as u32;
        let mut passable = Vec::with_capacity((width * height) as usize);
        for row in rows {
            assert_eq!(row.chars().count() as u32, width, "ragged map row {row:?}");
            for c in row.chars() {
                passable.push(classify_cell(c).unwrap_or_else(|| panic!("unknown map cell {c:?}")));
            }
        }
        Self::new(width, height, passable).expect("valid map fixture")
    }

    fn compute_neighbors(&self, cell: usize) -> Neighbors {
        let mut out = Neighbors::default();
        if !self.passable[cell] {
            return out;
        }
        let loc = self.location(cell);
        let candidates = [
            (loc.row > 0).then(|| Location::new(loc.row - 1, loc.col)),
            (loc.col + 1 < self.width).then(|| Location::new(loc.row, loc.col + 1)),
            (loc.row + 1 < self.height).then(|| Location::new(loc.row + 1, loc.col)),
            (loc.col > 0).then(|| Location::new(loc.row, loc.col - 1)),
        ];
        for next in candidates.into_iter().flatten() {
            let idx = self.index(next);
            if self.passable[idx] {
                out.cells[out.len as usize] = idx as u32;
                out.len += 1;
            }
        }
        out
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn num_cells(&self) -> usize {
        self.passable.len()
    }

    pub fn passable_count(&self) -> usize {
        self.passable.iter().filter(|&&p| p).count()
    }

    pub fn contains(&self, loc: Location) -> bool {
        loc.row < self.height && loc.col < self.width
    }

    /// Row-major cell index. The location must lie inside the map.
    #[inline]
    pub fn index(&self, loc: Location) -> usize {
        debug_assert!(self.contains(loc), "{loc} outside {}x{}", self.height, self.width);
        loc.row as usize * self.width as usize + loc.col as usize
    }

    #[inline]
    pub fn location(&self, cell: usize) -> Location {
        let w = self.width as usize;
        Location::new((cell / w) as u32, (cell % w) as u32)
    }

    pub fn is_passable(&self, loc: Location) -> bool {
        self.contains(loc) && self.passable[self.index(loc)]
    }

    #[inline]
    pub fn is_passable_cell(&self, cell: usize) -> bool {
        self.passable[cell]
    }

    /// Passable 4-neighbors of a cell, as cell indices.
    #[inline]
    pub fn neighbor_cells(&self, cell: usize) -> &[u32] {
        let n = &self.adjacency[cell];
        &n.cells[..n.len as usize]
    }

    pub fn neighbors(&self, loc: Location) -> impl Iterator<Item = Location> + '_ {
        let cells: &[u32] = if self.contains(loc) { self.neighbor_cells(self.index(loc)) } else { &[] };
        cells.iter().map(move |&c| self.location(c as usize))
    }

    pub fn degree(&self, loc: Location) -> usize {
        if self.contains(loc) {
            self.neighbor_cells(self.index(loc)).len()
        } else {
            0
        }
    }

    /// Distinct passable cells that differ by one in exactly one coordinate.
    pub fn are_adjacent(&self, a: Location, b: Location) -> bool {
        self.is_passable(a)
            && self.is_passable(b)
            && a.row.abs_diff(b.row) + a.col.abs_diff(b.col) == 1
    }

    pub fn passable_locations(&self) -> impl Iterator<Item = Location> + '_ {
        (0..self.num_cells()).filter(|&c| self.passable[c]).map(|c| self.location(c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Agent {
    pub id: usize,
    pub start: Location,
    pub goal: Location,
}

/// A map together with its agents. Agent ids equal their position in `agents`.
#[derive(Debug, Clone)]
pub struct Instance {
    map: Arc<GridMap>,
    agents: Vec<Agent>,
}

impl Instance {
    /// Agents are given as `(start, goal)` pairs and numbered in order.
    pub fn new(map: Arc<GridMap>, endpoints: &[(Location, Location)]) -> Result<Self, ModelError> {
        let mut starts = HashMap::with_capacity(endpoints.len());
        let mut goals = HashMap::with_capacity(endpoints.len());
        let mut agents = Vec::with_capacity(endpoints.len());
        for (id, &(start, goal)) in endpoints.iter().enumerate() {
            for loc in [start, goal] {
                if !map.contains(loc) {
                    return Err(ModelError::OutOfBounds(loc));
                }
                if !map.is_passable(loc) {
                    return Err(ModelError::Blocked { agent: id, location: loc });
                }
            }
            if let Some(&first) = starts.get(&start) {
                return Err(ModelError::DuplicateStart { first, second: id, location: start });
            }
            if let Some(&first) = goals.get(&goal) {
                return Err(ModelError::DuplicateGoal { first, second: id, location: goal });
            }
            starts.insert(start, id);
            goals.insert(goal, id);
            agents.push(Agent { id, start, goal });
        }
        Ok(Self { map, agents })
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn shared_map(&self) -> &Arc<GridMap> {
        &self.map
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }
}

/// A timed sequence of locations. Stored trimmed: the last step is the first
/// timestep from which the agent never leaves its final location.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Path {
    steps: Vec<Location>,
}

impl Path {
    pub fn new(mut steps: Vec<Location>) -> Result<Self, ModelError> {
        let Some(&last) = steps.last() else {
            return Err(ModelError::EmptyPath);
        };
        while steps.len() > 1 && steps[steps.len() - 2] == last {
            steps.pop();
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[Location] {
        &self.steps
    }

    /// Number of timesteps until the agent settles at its goal.
    pub fn length(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn start(&self) -> Location {
        self.steps[0]
    }

    pub fn end(&self) -> Location {
        self.steps[self.steps.len() - 1]
    }

    /// Location at time `t`; past the end the agent rests at its goal.
    #[inline]
    pub fn at(&self, t: usize) -> Location {
        self.steps[t.min(self.steps.len() - 1)]
    }

    /// Checks endpoints and that every step waits or moves to an adjacent cell.
    pub fn check(&self, map: &GridMap, agent: &Agent) -> Result<(), ModelError> {
        if self.start() != agent.start {
            return Err(ModelError::WrongStart { agent: agent.id });
        }
        if self.end() != agent.goal {
            return Err(ModelError::WrongGoal { agent: agent.id });
        }
        for (t, w) in self.steps.windows(2).enumerate() {
            if !map.is_passable(w[1]) || (w[0] != w[1] && !map.are_adjacent(w[0], w[1])) {
                return Err(ModelError::IllegalMove { agent: agent.id, time: t + 1 });
            }
        }
        Ok(())
    }
}

/// One path per agent, indexed by agent id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    pub paths: Vec<Path>,
}

impl Plan {
    pub fn new(paths: Vec<Path>) -> Self {
        Self { paths }
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Largest trimmed path length in the plan.
    pub fn horizon(&self) -> usize {
        self.paths.iter().map(Path::length).max().unwrap_or(0)
    }

    /// Structural check of every path against the instance (not conflicts).
    pub fn check(&self, instance: &Instance) -> Result<(), ModelError> {
        if self.paths.len() != instance.num_agents() {
            return Err(ModelError::PlanSize { expected: instance.num_agents(), found: self.paths.len() });
        }
        for (path, agent) in self.paths.iter().zip(instance.agents()) {
            path.check(instance.map(), agent)?;
        }
        Ok(())
    }
}

pub fn path_length(path: &Path) -> usize {
    path.length()
}

/// Path length minus the shortest start-goal distance.
pub fn delay(path: &Path, shortest: u32) -> Result<u32, ModelError> {
    let length = path.length();
    length
        .checked_sub(shortest as usize)
        .map(|d| d as u32)
        .ok_or(ModelError::NegativeDelay { length, shortest })
}

/// Total delay of a plan, the objective minimized by the search.
pub fn sum_of_delays(plan: &Plan, shortest: &[u32]) -> Result<u64, ModelError> {
    if plan.len() != shortest.len() {
        return Err(ModelError::PlanSize { expected: shortest.len(), found: plan.len() });
    }
    plan.paths
        .iter()
        .zip(shortest)
        .try_fold(0u64, |acc, (p, &d)| Ok(acc + u64::from(delay(p, d)?)))
}

/// A pairwise collision. Agents are stored with the smaller id first; for edge
/// conflicts `from -> to` is the move of the first agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Conflict {
    Vertex { time: usize, agents: (usize, usize), location: Location },
    Edge { time: usize, agents: (usize, usize), from: Location, to: Location },
}

impl Conflict {
    pub fn time(&self) -> usize {
        match *self {
            Conflict::Vertex { time, .. } | Conflict::Edge { time, .. } => time,
        }
    }

    pub fn agents(&self) -> (usize, usize) {
        match *self {
            Conflict::Vertex { agents, .. } | Conflict::Edge { agents, .. } => agents,
        }
    }
}

/// Every vertex and edge conflict in the plan, with resting agents occupying
/// their goals after arrival. Sorted; empty means the plan is a solution.
pub fn validate(plan: &Plan) -> Vec<Conflict> {
    let mut conflicts = Vec::new();
    let horizon = plan.horizon();
    let mut occupants: HashMap<Location, Vec<usize>> = HashMap::with_capacity(plan.len());
    for t in 0..=horizon {
        occupants.clear();
        for (i, path) in plan.paths.iter().enumerate() {
            occupants.entry(path.at(t)).or_default().push(i);
        }
        for (&location, agents) in &occupants {
            for (k, &i) in agents.iter().enumerate() {
                for &j in &agents[k + 1..] {
                    conflicts.push(Conflict::Vertex { time: t, agents: (i.min(j), i.max(j)), location });
                }
            }
        }
        if t == 0 {
            continue;
        }
        for (i, path) in plan.paths.iter().enumerate() {
            let (from, to) = (path.at(t - 1), path.at(t));
            if from == to {
                continue;
            }
            let Some(others) = occupants.get(&from) else { continue };
            for &j in others {
                if i < j && plan.paths[j].at(t - 1) == to {
                    conflicts.push(Conflict::Edge { time: t, agents: (i, j), from, to });
                }
            }
        }
    }
    conflicts.sort();
    conflicts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loc(r: u32, c: u32) -> Location {
        Location::new(r, c)
    }

    fn path(cells: &[(u32, u32)]) -> Path {
        Path::new(cells.iter().map(|&(r, c)| loc(r, c)).collect()).unwrap()
    }

    #[test]
    fn adjacency_is_four_connected() {
        let map = GridMap::from_rows(&[".@.", "...", "..."]);
        assert_eq!(map.degree(loc(1, 1)), 3);
        assert_eq!(map.degree(loc(0, 1)), 0);
        assert!(map.are_adjacent(loc(1, 0), loc(1, 1)));
        assert!(!map.are_adjacent(loc(0, 0), loc(1, 1)));
        assert!(!map.are_adjacent(loc(0, 0), loc(0, 1)));
        assert!(!map.are_adjacent(loc(0, 0), loc(0, 0)));
        assert_eq!(map.passable_count(), 8);
    }

    #[test]
    fn bad_dimensions_rejected() {
        assert!(GridMap::new(0, 3, vec![]).is_err());
        assert!(GridMap::new(2, 2, vec![true; 3]).is_err());
    }

    #[test]
    fn path_lengths() {
        assert_eq!(path_length(&path(&[(0, 0)])), 0);
        assert_eq!(path_length(&path(&[(0, 0), (0, 1), (0, 2)])), 2);
        assert_eq!(path_length(&path(&[(0, 0), (0, 0), (0, 1)])), 2);
    }

    #[test]
    fn trailing_goal_steps_are_trimmed() {
        let p = path(&[(0, 0), (0, 1), (0, 1), (0, 1)]);
        assert_eq!(p.length(), 1);
        // waits before a later departure stay
        let p = path(&[(0, 1), (0, 1), (0, 0), (0, 1)]);
        assert_eq!(p.length(), 3);
        assert!(Path::new(vec![]).is_err());
    }

    #[test]
    fn delays() {
        let seven = Path::new(vec![loc(0, 0); 1].into_iter().chain((1..=7).map(|c| loc(0, c))).collect()).unwrap();
        assert_eq!(delay(&seven, 5), Ok(2));
        assert_eq!(delay(&seven, 7), Ok(0));
        let four = path(&[(0, 0), (0, 1), (0, 2), (0, 3), (0, 4)]);
        assert_eq!(delay(&four, 5), Err(ModelError::NegativeDelay { length: 4, shortest: 5 }));
    }

    #[test]
    fn sums_of_delays() {
        let p = |n: u32| Path::new((0..=n).map(|c| loc(0, c)).collect()).unwrap();
        let plan = Plan::new(vec![p(2), p(0), p(3)]);
        assert_eq!(sum_of_delays(&plan, &[2, 0, 3]), Ok(0));
        assert_eq!(sum_of_delays(&plan, &[0, 0, 0]), Ok(5));
        assert_eq!(sum_of_delays(&Plan::new(vec![p(4)]), &[0]), Ok(4));
        assert!(sum_of_delays(&plan, &[3, 0, 0]).is_err());
        assert!(sum_of_delays(&plan, &[0, 0]).is_err());
    }

    #[test]
    fn crossing_at_different_times_is_fine() {
        // a goes through (1,1) at t=1, b at t=2
        let a = path(&[(1, 0), (1, 1), (1, 2)]);
        let b = path(&[(3, 1), (2, 1), (1, 1), (0, 1)]);
        assert!(validate(&Plan::new(vec![a, b])).is_empty());
    }

    #[test]
    fn swap_is_an_edge_conflict() {
        let a = path(&[(0, 0), (0, 1)]);
        let b = path(&[(0, 1), (0, 0)]);
        let conflicts = validate(&Plan::new(vec![a, b]));
        assert_eq!(
            conflicts,
            vec![Conflict::Edge { time: 1, agents: (0, 1), from: loc(0, 0), to: loc(0, 1) }]
        );
    }

    #[test]
    fn passing_a_resting_agent_is_a_vertex_conflict() {
        // 1x4 corridor: agent 0 parks at (0,1) at t=1; agent 1 passes (0,1) at t=2.
        let a = path(&[(0, 0), (0, 1)]);
        let b = path(&[(0, 3), (0, 2), (0, 1), (0, 0)]);
        let plan = Plan::new(vec![a, b]);

        // brute-force occupancy table over the implicit horizon
        let horizon = plan.horizon();
        let mut expected = Vec::new();
        for t in 0..=horizon {
            for i in 0..2 {
                for j in i + 1..2 {
                    if plan.paths[i].at(t) == plan.paths[j].at(t) {
                        expected.push((t, plan.paths[i].at(t)));
                    }
                }
            }
        }
        assert_eq!(expected, vec![(2, loc(0, 1))]);

        // the swap at t=3 on (0,1)<->(0,0) cannot happen: agent 0 rests, so
        // only the vertex conflict is reported
        assert_eq!(
            validate(&plan),
            vec![Conflict::Vertex { time: 2, agents: (0, 1), location: loc(0, 1) }]
        );
    }

    #[test]
    fn conflicts_are_canonical_regardless_of_order() {
        let a = path(&[(0, 0), (0, 1)]);
        let b = path(&[(0, 1), (0, 0)]);
        let c = path(&[(1, 0), (1, 1), (0, 1)]);
        let forward = validate(&Plan::new(vec![a.clone(), b.clone(), c.clone()]));
        let backward = validate(&Plan::new(vec![c, b, a]));
        assert!(!forward.is_empty());
        assert_eq!(forward.len(), backward.len());
        for conflict in forward.iter().chain(&backward) {
            let (i, j) = conflict.agents();
            assert!(i < j);
        }
    }

    #[test]
    fn instance_rejects_duplicates_and_blocked_cells() {
        let map = Arc::new(GridMap::from_rows(&["..@", "..."]));
        let ok = Instance::new(map.clone(), &[(loc(0, 0), loc(1, 2)), (loc(1, 0), loc(0, 1))]);
        assert_eq!(ok.unwrap().num_agents(), 2);
        assert!(matches!(
            Instance::new(map.clone(), &[(loc(0, 0), loc(1, 2)), (loc(0, 0), loc(0, 1))]),
            Err(ModelError::DuplicateStart { .. })
        ));
        assert!(matches!(
            Instance::new(map.clone(), &[(loc(0, 0), loc(1, 2)), (loc(1, 0), loc(1, 2))]),
            Err(ModelError::DuplicateGoal { .. })
        ));
        assert!(matches!(
            Instance::new(map.clone(), &[(loc(0, 2), loc(1, 2))]),
            Err(ModelError::Blocked { .. })
        ));
        assert!(matches!(Instance::new(map, &[(loc(5, 2), loc(1, 2))]), Err(ModelError::OutOfBounds(_))));
    }

    #[test]
    fn path_check_catches_teleports() {
        let map = GridMap::from_rows(&["...."]);
        let agent = Agent { id: 0, start: loc(0, 0), goal: loc(0, 3) };
        assert!(path(&[(0, 0), (0, 1), (0, 2), (0, 3)]).check(&map, &agent).is_ok());
        assert_eq!(
            path(&[(0, 0), (0, 2), (0, 3)]).check(&map, &agent),
            Err(ModelError::IllegalMove { agent: 0, time: 1 })
        );
        assert_eq!(path(&[(0, 1), (0, 3)]).check(&map, &agent), Err(ModelError::WrongStart { agent: 0 }));
    }
}
