//! 17×17 GridWorld mazes with sparse goal reward.

use std::collections::{BinaryHeap, VecDeque};
use std::cmp::Reverse;
use std::fmt;
use std::str::FromStr;

use diffnet::Tensor;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{Action, ActionSpace, EnvId, Environment, StepOutcome};
use crate::error::{Error, Result};

pub const GRID_SIZE: usize = 17;
pub const GRID_HORIZON: usize = 100;
/// Observation channels: walls, goal, agent.
pub const GRID_CHANNELS: usize = 3;

pub type Cell = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayoutTag {
    UMaze,
    FourRooms,
    BlockMaze,
}

impl LayoutTag {
    pub fn ascii(self) -> &'static str {
        match self {
            LayoutTag::UMaze => include_str!("../../layouts/umaze.txt"),
            LayoutTag::FourRooms => include_str!("../../layouts/fourrooms.txt"),
            LayoutTag::BlockMaze => include_str!("../../layouts/blockmaze.txt"),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LayoutTag::UMaze => "umaze",
            LayoutTag::FourRooms => "fourrooms",
            LayoutTag::BlockMaze => "blockmaze",
        }
    }
}

impl fmt::Display for LayoutTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayoutTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "umaze" => Ok(LayoutTag::UMaze),
            "fourrooms" => Ok(LayoutTag::FourRooms),
            "blockmaze" => Ok(LayoutTag::BlockMaze),
            other => Err(Error::Config(format!("unknown layout `{other}`"))),
        }
    }
}

/// Wall mask plus fixed goal cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridLayout {
    pub tag: Option<LayoutTag>,
    height: usize,
    width: usize,
    walls: Vec<bool>,
    goal: Cell,
}

impl GridLayout {
    pub fn builtin(tag: LayoutTag) -> Self {
        let mut l = Self::parse(tag.ascii()).expect("built-in layouts are valid");
        l.tag = Some(tag);
        l
    }

    /// Parses an ASCII map: `#` wall, `.` free, `G` goal (exactly one).
    /// Border cells must be walls and all free cells must be connected.
    pub fn parse(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        let height = rows.len();
        let width = rows.first().map(|r| r.len()).unwrap_or(0);
        if height < 3 || width < 3 || rows.iter().any(|r| r.len() != width) {
            return Err(Error::Config("layout must be a rectangle of at least 3x3".into()));
        }
        let mut walls = Vec::with_capacity(height * width);
        let mut goal = None;
        for (r, line) in rows.iter().enumerate() {
            for (c, ch) in line.chars().enumerate() {
                match ch {
                    '#' => walls.push(true),
                    '.' => walls.push(false),
                    'G' => {
                        if goal.replace((r, c)).is_some() {
                            return Err(Error::Config("layout has more than one goal".into()));
                        }
                        walls.push(false);
                    }
                    other => return Err(Error::Config(format!("unexpected layout character `{other}`"))),
                }
            }
        }
        let goal = goal.ok_or_else(|| Error::Config("layout has no goal".into()))?;
        let layout = Self { tag: None, height, width, walls, goal };
        for r in 0..height {
            for c in 0..width {
                if (r == 0 || c == 0 || r == height - 1 || c == width - 1) && !layout.is_wall((r, c)) {
                    return Err(Error::Config(format!("border cell ({r}, {c}) is not a wall")));
                }
            }
        }
        let reach = layout.bfs_from(goal);
        if layout.free_cells().iter().any(|&cell| reach[layout.index(cell)].is_none()) {
            return Err(Error::Config("layout has unreachable free cells".into()));
        }
        Ok(layout)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn goal(&self) -> Cell {
        self.goal
    }

    fn index(&self, (r, c): Cell) -> usize {
        r * self.width + c
    }

    pub fn in_bounds(&self, (r, c): Cell) -> bool {
        r < self.height && c < self.width
    }

    pub fn is_wall(&self, cell: Cell) -> bool {
        !self.in_bounds(cell) || self.walls[self.index(cell)]
    }

    pub fn free_cells(&self) -> Vec<Cell> {
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (r, c)))
            .filter(|&cell| !self.is_wall(cell))
            .collect()
    }

    pub fn neighbors(&self, (r, c): Cell) -> impl Iterator<Item = Cell> + '_ {
        [(r.wrapping_sub(1), c), (r + 1, c), (r, c.wrapping_sub(1)), (r, c + 1)]
            .into_iter()
            .filter(move |&n| !self.is_wall(n))
    }

    /// Breadth-first distances from `start` to every cell (`None` for walls / unreachable).
    pub fn bfs_from(&self, start: Cell) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.walls.len()];
        if self.is_wall(start) {
            return dist;
        }
        dist[self.index(start)] = Some(0);
        let mut queue = VecDeque::from([start]);
        while let Some(cell) = queue.pop_front() {
            let d = dist[self.index(cell)].expect("queued cells have distances");
            for n in self.neighbors(cell) {
                let i = self.index(n);
                if dist[i].is_none() {
                    dist[i] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    /// Shortest 4-connected path length between two free cells (A* with the
    /// Manhattan heuristic).
    pub fn true_distance(&self, a: Cell, b: Cell) -> Result<usize> {
        for cell in [a, b] {
            if self.is_wall(cell) {
                return Err(Error::Invalid(format!("cell {cell:?} is a wall")));
            }
        }
        let h = |(r, c): Cell| r.abs_diff(b.0) + c.abs_diff(b.1);
        let mut best = vec![usize::MAX; self.walls.len()];
        let mut open = BinaryHeap::new();
        best[self.index(a)] = 0;
        open.push(Reverse((h(a), 0usize, a)));
        while let Some(Reverse((_, g, cell))) = open.pop() {
            if cell == b {
                return Ok(g);
            }
            if g > best[self.index(cell)] {
                continue;
            }
            for n in self.neighbors(cell) {
                let ng = g + 1;
                let i = self.index(n);
                if ng < best[i] {
                    best[i] = ng;
                    open.push(Reverse((ng + h(n), ng, n)));
                }
            }
        }
        Err(Error::Invalid(format!("no path between {a:?} and {b:?}")))
    }

    pub fn to_ascii(&self) -> String {
        let mut s = String::with_capacity((self.width + 1) * self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                s.push(if (r, c) == self.goal {
                    'G'
                } else if self.is_wall((r, c)) {
                    '#'
                } else {
                    '.'
                });
            }
            s.push('\n');
        }
        s
    }
}

/// Agent position in a maze.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridState {
    pub agent: Cell,
    pub goal: Cell,
}

#[derive(Debug, Clone)]
pub struct GridWorld {
    layout: GridLayout,
    state: GridState,
    horizon: usize,
    t: usize,
}

impl GridWorld {
    pub fn new(layout: GridLayout) -> Self {
        let goal = layout.goal();
        let start = layout.free_cells().into_iter().find(|&c| c != goal).unwrap_or(goal);
        Self { layout, state: GridState { agent: start, goal }, horizon: GRID_HORIZON, t: 0 }
    }

    pub fn layout(&self) -> &GridLayout {
        &self.layout
    }

    pub fn state(&self) -> GridState {
        self.state
    }

    /// Places the agent on `cell` and restarts the step counter.
    pub fn set_agent(&mut self, cell: Cell) -> Result<Tensor> {
        if self.layout.is_wall(cell) {
            return Err(Error::Invalid(format!("cannot place agent on wall {cell:?}")));
        }
        self.state.agent = cell;
        self.t = 0;
        Ok(self.observe())
    }

    /// `(17, 17, 3)` tensor: wall layer, goal layer, agent layer.
    pub fn observation_of(&self, agent: Cell) -> Tensor {
        let (h, w) = (self.layout.height(), self.layout.width());
        let mut data = vec![0.0; h * w * GRID_CHANNELS];
        for r in 0..h {
            for c in 0..w {
                if self.layout.is_wall((r, c)) {
                    data[(r * w + c) * GRID_CHANNELS] = 1.0;
                }
            }
        }
        let (gr, gc) = self.state.goal;
        data[(gr * w + gc) * GRID_CHANNELS + 1] = 1.0;
        data[(agent.0 * w + agent.1) * GRID_CHANNELS + 2] = 1.0;
        Tensor::new(vec![h, w, GRID_CHANNELS], data).expect("grid observation shape")
    }

    fn observe(&self) -> Tensor {
        self.observation_of(self.state.agent)
    }

    /// Agent cell encoded in an observation.
    pub fn agent_cell(obs: &Tensor) -> Option<Cell> {
        let shape = obs.shape();
        if shape.len() != 3 || shape[2] != GRID_CHANNELS {
            return None;
        }
        let w = shape[1];
        obs.data()
            .chunks_exact(GRID_CHANNELS)
            .position(|px| px[2] > 0.5)
            .map(|i| (i / w, i % w))
    }

    pub fn apply_move(&self, cell: Cell, action: usize) -> Cell {
        let (r, c) = cell;
        let next = match action {
            0 => (r.wrapping_sub(1), c),
            1 => (r + 1, c),
            2 => (r, c.wrapping_sub(1)),
            _ => (r, c + 1),
        };
        if self.layout.is_wall(next) {
            cell
        } else {
            next
        }
    }
}

impl Environment for GridWorld {
    fn clone_box(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }

    fn id(&self) -> EnvId {
        EnvId::GridWorld(self.layout.tag.unwrap_or(LayoutTag::UMaze))
    }

    fn observation_shape(&self) -> Vec<usize> {
        vec![self.layout.height(), self.layout.width(), GRID_CHANNELS]
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(4)
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn set_horizon(&mut self, horizon: usize) {
        self.horizon = horizon.max(1);
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Tensor {
        let cells: Vec<Cell> = self.layout.free_cells().into_iter().filter(|&c| c != self.state.goal).collect();
        self.state.agent = cells[rng.gen_range(0..cells.len())];
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        let a = match *action {
            Action::Discrete(a) if a < 4 => a,
            ref other => return Err(Error::InvalidAction(format!("GridWorld takes 0..=3, got {other:?}"))),
        };
        self.state.agent = self.apply_move(self.state.agent, a);
        self.t += 1;
        let success = self.state.agent == self.state.goal;
        Ok(StepOutcome {
            observation: self.observe(),
            reward: if success { 1.0 } else { 0.0 },
            done: success || self.t >= self.horizon,
            success,
        })
    }

    fn goal_observation(&self) -> Tensor {
        self.observation_of(self.state.goal)
    }
}
