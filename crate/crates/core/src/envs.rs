//! Grid navigation environments: an 11×11 gridworld, an 11×11 four-rooms
//! layout and a 13×13 torus.
//!
//! Each cell emits a fixed random observation vector drawn once from a
//! standard Gaussian at construction. The bounded layouts append four wall
//! bits ordered (LEFT, RIGHT, UP, DOWN). `UP` is `+y` and `RIGHT` is `+x`.
//! Walking into a wall leaves the agent where it is.

use std::collections::hash_map::DefaultHasher;
use std::collections::VecDeque;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EnvKind {
    Gridworld,
    FourRooms,
    Torus,
}

impl EnvKind {
    pub const ALL: [EnvKind; 3] = [EnvKind::Gridworld, EnvKind::FourRooms, EnvKind::Torus];

    pub fn side(self) -> usize {
        match self {
            EnvKind::Gridworld | EnvKind::FourRooms => 11,
            EnvKind::Torus => 13,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::Gridworld => "gridworld",
            EnvKind::FourRooms => "four_rooms",
            EnvKind::Torus => "torus",
        }
    }

    pub fn has_walls(self) -> bool {
        self != EnvKind::Torus
    }

    pub fn default_start(self) -> GridPos {
        GridPos::new(0, 0)
    }

    pub fn default_goal(self) -> GridPos {
        match self {
            EnvKind::Gridworld | EnvKind::FourRooms => GridPos::new(10, 10),
            EnvKind::Torus => GridPos::new(6, 6),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gridworld" => Ok(EnvKind::Gridworld),
            "four_rooms" | "four-rooms" | "fourrooms" => Ok(EnvKind::FourRooms),
            "torus" => Ok(EnvKind::Torus),
            other => Err(Error::Unknown { what: "environment kind", value: other.to_string() }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Left,
    Right,
    Up,
    Down,
    Stay,
}

impl Action {
    pub const COUNT: usize = 5;
    pub const ALL: [Action; 5] = [Action::Left, Action::Right, Action::Up, Action::Down, Action::Stay];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("action index {i} out of range")))
    }

    pub fn one_hot<T: Scalar>(self) -> [T; 5] {
        let mut v = [T::zero(); 5];
        v[self.index()] = T::one();
        v
    }

    fn delta(self) -> (i64, i64) {
        match self {
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
            Action::Up => (0, 1),
            Action::Down => (0, -1),
            Action::Stay => (0, 0),
        }
    }
}

/// Batch of actions as one-hot rows.
pub fn one_hot_rows<T: Scalar>(actions: &[Action]) -> Array2<T> {
    let mut out = Array2::zeros((actions.len(), Action::COUNT));
    for (i, a) in actions.iter().enumerate() {
        out[[i, a.index()]] = T::one();
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct GridPos {
    pub x: usize,
    pub y: usize,
}

impl GridPos {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

impl fmt::Display for GridPos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

impl FromStr for GridPos {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().trim_start_matches('(').trim_end_matches(')');
        let mut it = t.split(',').map(|p| p.trim().parse::<usize>());
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(x)), Some(Ok(y)), None) => Ok(GridPos::new(x, y)),
            _ => Err(Error::Config(format!("cannot parse grid position `{s}`"))),
        }
    }
}

/// Construction parameters; `None` selects the kind's default.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub seed: u64,
    pub obs_dim: usize,
    pub start: Option<GridPos>,
    pub goal: Option<GridPos>,
    pub doorways: Option<Vec<GridPos>>,
}

impl EnvConfig {
    pub fn new(kind: EnvKind, seed: u64) -> Self {
        Self { kind, seed, obs_dim: DEFAULT_OBS_DIM, start: None, goal: None, doorways: None }
    }
}

pub const DEFAULT_OBS_DIM: usize = 50;

pub fn default_doorways() -> Vec<GridPos> {
    vec![GridPos::new(5, 2), GridPos::new(5, 8), GridPos::new(2, 5), GridPos::new(8, 5)]
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next: GridPos,
    pub reward: f64,
    pub observation: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct EnvInstance {
    kind: EnvKind,
    side: usize,
    /// Per cell, whether moving (LEFT, RIGHT, UP, DOWN) is blocked.
    walls: Vec<[bool; 4]>,
    /// One Gaussian row per cell, indexed `y * side + x`.
    table: Array2<f64>,
    start: GridPos,
    goal: GridPos,
    seed: u64,
}

/// Builds an environment; deterministic in `(kind, seed, obs_dim)` and the overrides.
pub fn build_env(cfg: &EnvConfig) -> Result<EnvInstance> {
    if cfg.obs_dim == 0 {
        return Err(Error::InvalidArgument("obs_dim must be at least 1".into()));
    }
    let side = cfg.kind.side();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let table = Array2::from_shape_simple_fn((side * side, cfg.obs_dim), || StandardNormal.sample(&mut rng));
    let mut walls = vec![[false; 4]; side * side];
    if cfg.kind.has_walls() {
        for y in 0..side {
            for x in 0..side {
                let w = &mut walls[y * side + x];
                w[0] = x == 0;
                w[1] = x + 1 == side;
                w[2] = y + 1 == side;
                w[3] = y == 0;
            }
        }
    }
    if cfg.kind == EnvKind::FourRooms {
        let doors = cfg.doorways.clone().unwrap_or_else(default_doorways);
        let p = side / 2;
        for t in 0..side {
            // Vertical partition between columns p-1 and p.
            if !doors.contains(&GridPos::new(p, t)) {
                walls[t * side + (p - 1)][1] = true;
                walls[t * side + p][0] = true;
            }
            // Horizontal partition between rows p-1 and p.
            if !doors.contains(&GridPos::new(t, p)) {
                walls[(p - 1) * side + t][2] = true;
                walls[p * side + t][3] = true;
            }
        }
    }
    let env = EnvInstance {
        kind: cfg.kind,
        side,
        walls,
        table,
        start: cfg.start.unwrap_or(cfg.kind.default_start()),
        goal: cfg.goal.unwrap_or(cfg.kind.default_goal()),
        seed: cfg.seed,
    };
    env.validate(env.start)?;
    env.validate(env.goal)?;
    Ok(env)
}

impl EnvInstance {
    pub fn new(kind: EnvKind, seed: u64, obs_dim: usize) -> Result<Self> {
        build_env(&EnvConfig { obs_dim, ..EnvConfig::new(kind, seed) })
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_cells(&self) -> usize {
        self.side * self.side
    }

    pub fn obs_dim(&self) -> usize {
        self.table.ncols()
    }

    /// Width of what [`EnvInstance::observe`] returns.
    pub fn observation_width(&self) -> usize {
        self.obs_dim() + if self.kind.has_walls() { 4 } else { 0 }
    }

    pub fn start(&self) -> GridPos {
        self.start
    }

    pub fn goal(&self) -> GridPos {
        self.goal
    }

    /// The same environment with a different start and goal.
    pub fn with_endpoints(&self, start: GridPos, goal: GridPos) -> Result<Self> {
        self.validate(start)?;
        self.validate(goal)?;
        Ok(Self { start, goal, ..self.clone() })
    }

    /// Observations of every cell, one row each in `cell_index` order.
    pub fn observation_table<T: Scalar>(&self) -> Array2<T> {
        let rows: Vec<Vec<f64>> = self.cells().map(|p| self.observe(p).expect("cell in range")).collect();
        Array2::from_shape_fn((rows.len(), rows[0].len()), |(r, c)| T::lit(rows[r][c]))
    }

    pub fn cells(&self) -> impl Iterator<Item = GridPos> + '_ {
        (0..self.side).flat_map(move |y| (0..self.side).map(move |x| GridPos::new(x, y)))
    }

    pub fn cell_index(&self, pos: GridPos) -> usize {
        pos.y * self.side + pos.x
    }

    pub fn validate(&self, pos: GridPos) -> Result<()> {
        if pos.x < self.side && pos.y < self.side {
            Ok(())
        } else {
            Err(Error::InvalidPosition { x: pos.x, y: pos.y, side: self.side })
        }
    }

    /// Number of blocked directed edges.
    pub fn wall_count(&self) -> usize {
        self.walls.iter().flatten().filter(|&&b| b).count()
    }

    pub fn is_blocked(&self, pos: GridPos, action: Action) -> bool {
        action != Action::Stay && self.walls[self.cell_index(pos)][action.index()]
    }

    /// Successor cell without the reward or observation.
    pub fn next_pos(&self, pos: GridPos, action: Action) -> GridPos {
        if self.is_blocked(pos, action) {
            return pos;
        }
        let (dx, dy) = action.delta();
        let n = self.side as i64;
        let (x, y) = (pos.x as i64 + dx, pos.y as i64 + dy);
        GridPos::new(x.rem_euclid(n) as usize, y.rem_euclid(n) as usize)
    }

    /// `+1` while occupying the goal, `-1` elsewhere.
    pub fn reward(&self, pos: GridPos) -> f64 {
        if pos == self.goal {
            1.0
        } else {
            -1.0
        }
    }

    pub fn step(&self, pos: GridPos, action: Action) -> Result<StepResult> {
        self.validate(pos)?;
        let next = self.next_pos(pos, action);
        Ok(StepResult { next, reward: self.reward(pos), observation: self.observe(next)? })
    }

    /// The cell's fixed Gaussian vector, followed by the wall bits where walls exist.
    pub fn observe(&self, pos: GridPos) -> Result<Vec<f64>> {
        self.validate(pos)?;
        let mut obs = self.table.row(self.cell_index(pos)).to_vec();
        if self.kind.has_walls() {
            obs.extend(self.walls[self.cell_index(pos)].iter().map(|&b| if b { 1.0 } else { 0.0 }));
        }
        Ok(obs)
    }

    /// Breadth-first distances from `from` to every cell.
    pub fn distances_from(&self, from: GridPos) -> Result<Vec<Option<usize>>> {
        self.validate(from)?;
        let mut dist = vec![None; self.num_cells()];
        let mut queue = VecDeque::from([from]);
        dist[self.cell_index(from)] = Some(0);
        while let Some(p) = queue.pop_front() {
            let d = dist[self.cell_index(p)].unwrap();
            for a in Action::ALL {
                let q = self.next_pos(p, a);
                let slot = &mut dist[self.cell_index(q)];
                if slot.is_none() {
                    *slot = Some(d + 1);
                    queue.push_back(q);
                }
            }
        }
        Ok(dist)
    }

    pub fn shortest_path(&self, from: GridPos, to: GridPos) -> Result<usize> {
        self.validate(to)?;
        self.distances_from(from)?[self.cell_index(to)]
            .ok_or_else(|| Error::InvalidArgument(format!("{to} is unreachable from {from}")))
    }

    /// Shortest action sequence from `from` to `to`, then `STAY` until `horizon`.
    pub fn optimal_actions(&self, from: GridPos, to: GridPos, horizon: usize) -> Result<Vec<Action>> {
        let to_goal = self.distances_from(to)?;
        let mut pos = from;
        let mut actions = Vec::with_capacity(horizon);
        while actions.len() < horizon {
            let here = to_goal[self.cell_index(pos)]
                .ok_or_else(|| Error::InvalidArgument(format!("{to} is unreachable from {pos}")))?;
            let action = if here == 0 {
                Action::Stay
            } else {
                // Any neighbour one step closer; walls are symmetric so this exists.
                *Action::ALL
                    .iter()
                    .find(|&&a| to_goal[self.cell_index(self.next_pos(pos, a))] == Some(here - 1))
                    .expect("a neighbour lies one step closer")
            };
            actions.push(action);
            pos = self.next_pos(pos, action);
        }
        Ok(actions)
    }

    /// Return of the best episode of `horizon` steps with `d` penalty steps: `N - 2d`.
    pub fn optimal_return(&self, from: GridPos, to: GridPos, horizon: usize) -> Result<f64> {
        let d = self.shortest_path(from, to)?.min(horizon);
        Ok(horizon as f64 - 2.0 * d as f64)
    }

    /// Hash over every observation entry's bits.
    pub fn observation_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for v in &self.table {
            v.to_bits().hash(&mut h);
        }
        self.walls.hash(&mut h);
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(kind: EnvKind) -> EnvInstance {
        EnvInstance::new(kind, 7, 8).unwrap()
    }

    #[test]
    fn cell_counts() {
        assert_eq!(env(EnvKind::Gridworld).num_cells(), 121);
        assert_eq!(env(EnvKind::FourRooms).num_cells(), 121);
        let torus = env(EnvKind::Torus);
        assert_eq!(torus.num_cells(), 169);
        assert_eq!(torus.wall_count(), 0);
    }

    #[test]
    fn construction_is_deterministic() {
        let a = EnvInstance::new(EnvKind::FourRooms, 11, 50).unwrap();
        let b = EnvInstance::new(EnvKind::FourRooms, 11, 50).unwrap();
        assert_eq!(a.observation_hash(), b.observation_hash());
        assert_eq!(a.table, b.table);
        let c = EnvInstance::new(EnvKind::FourRooms, 12, 50).unwrap();
        assert_ne!(a.observation_hash(), c.observation_hash());
        assert!(EnvInstance::new(EnvKind::Torus, 1, 0).is_err());
        assert!("maze".parse::<EnvKind>().is_err());
    }

    #[test]
    fn torus_wraps() {
        let t = env(EnvKind::Torus);
        assert_eq!(t.step(GridPos::new(0, 5), Action::Left).unwrap().next, GridPos::new(12, 5));
        assert_eq!(t.step(GridPos::new(3, 12), Action::Up).unwrap().next, GridPos::new(3, 0));
        assert_eq!(t.shortest_path(GridPos::new(0, 0), GridPos::new(12, 0)).unwrap(), 1);
    }

    #[test]
    fn gridworld_boundary_blocks() {
        let g = env(EnvKind::Gridworld);
        let r = g.step(GridPos::new(0, 5), Action::Left).unwrap();
        assert_eq!(r.next, GridPos::new(0, 5));
        assert_eq!(r.reward, -1.0);
        // Exhaustive sweep: a move is a no-op exactly when it would leave the grid.
        for p in g.cells() {
            for a in [Action::Left, Action::Right, Action::Up, Action::Down] {
                let (dx, dy) = a.delta();
                let (x, y) = (p.x as i64 + dx, p.y as i64 + dy);
                let outside = x < 0 || y < 0 || x >= 11 || y >= 11;
                assert_eq!(g.next_pos(p, a) == p, outside, "{p} {a:?}");
            }
        }
    }

    #[test]
    fn goal_reward() {
        let g = env(EnvKind::Gridworld);
        let r = g.step(g.goal(), Action::Stay).unwrap();
        assert_eq!((r.next, r.reward), (g.goal(), 1.0));
        assert!(g.step(GridPos::new(11, 0), Action::Stay).is_err());
    }

    #[test]
    fn wall_bits_at_corner() {
        let g = env(EnvKind::Gridworld);
        let obs = g.observe(GridPos::new(0, 0)).unwrap();
        assert_eq!(obs.len(), 12);
        assert_eq!(&obs[8..], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(env(EnvKind::Torus).observe(GridPos::new(4, 4)).unwrap().len(), 8);
        assert_ne!(g.observe(GridPos::new(1, 0)).unwrap(), obs);
        assert_eq!(g.observe(GridPos::new(0, 0)).unwrap(), obs);
    }

    #[test]
    fn four_rooms_partitions_force_detours() {
        let f = env(EnvKind::FourRooms);
        // Adjacent across the vertical partition away from the doorways.
        let d = f.shortest_path(GridPos::new(4, 0), GridPos::new(5, 0)).unwrap();
        assert!(d > 1);
        assert_eq!(d, 1 + 2 + 2 + 0); // up two rows to the door at y=2, across, down two
        // Through a doorway the distance equals the Manhattan distance.
        assert_eq!(f.shortest_path(GridPos::new(4, 2), GridPos::new(5, 2)).unwrap(), 1);
        let obs = f.observe(GridPos::new(4, 0)).unwrap();
        assert_eq!(&obs[8..], &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn optimal_return_matches_simulation() {
        let g = env(EnvKind::Gridworld);
        let (s, goal) = (GridPos::new(0, 0), g.goal());
        let actions = g.optimal_actions(s, goal, 250).unwrap();
        let mut pos = s;
        let mut total = 0.0;
        for a in actions {
            let r = g.step(pos, a).unwrap();
            total += r.reward;
            pos = r.next;
        }
        assert_eq!(total, g.optimal_return(s, goal, 250).unwrap());
        assert_eq!(total, 250.0 - 40.0);
    }

    #[test]
    fn positions_parse() {
        assert_eq!("(3, 4)".parse::<GridPos>().unwrap(), GridPos::new(3, 4));
        assert_eq!("10,0".parse::<GridPos>().unwrap(), GridPos::new(10, 0));
        assert!("1;2".parse::<GridPos>().is_err());
    }
}
