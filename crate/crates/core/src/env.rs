//! FrozenLake-style gridworld with tile categories, four actions, no reward
//! signal of any kind, and a configurable volatility schedule that
//! regenerates the layout every K global steps.

use rand::Rng;
use thiserror::Error;

use crate::rng::{seeded_rng, SeededRng};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid action code {0} (valid: 0..=3)")]
    InvalidAction(u8),
    #[error("layout generation exhausted after {0} attempts")]
    LayoutExhausted(usize),
    #[error("malformed ascii layout: {0}")]
    BadAscii(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tile {
    Frozen,
    Hole,
    SubGoal,
    Goal,
}

impl Tile {
    pub fn ascii(self) -> char {
        match self {
            Tile::Frozen => 'F',
            Tile::Hole => 'H',
            Tile::SubGoal => 'S',
            Tile::Goal => 'G',
        }
    }

    fn from_ascii(c: char) -> Option<Tile> {
        match c {
            'F' | 'A' => Some(Tile::Frozen),
            'H' => Some(Tile::Hole),
            'S' => Some(Tile::SubGoal),
            'G' => Some(Tile::Goal),
            _ => None,
        }
    }

    /// Channel index in the observation encoding.
    pub fn channel(self) -> usize {
        match self {
            Tile::Frozen => 0,
            Tile::Hole => 1,
            Tile::SubGoal => 2,
            Tile::Goal => 3,
        }
    }
}

pub const TILE_CHANNELS: usize = 4;
/// Tile channels plus the agent-position channel.
pub const OBS_CHANNELS: usize = TILE_CHANNELS + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Left,
    Right,
    Down,
    Up,
}

pub const ACTIONS: [Action; 4] = [Action::Left, Action::Right, Action::Down, Action::Up];

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::Left => 0,
            Action::Right => 1,
            Action::Down => 2,
            Action::Up => 3,
        }
    }

    pub fn from_index(i: u8) -> Result<Action, EnvError> {
        ACTIONS.get(i as usize).copied().ok_or(EnvError::InvalidAction(i))
    }

    pub fn one_hot(self) -> Vec<f64> {
        let mut v = vec![0.0; 4];
        v[self.index()] = 1.0;
        v
    }
}

/// Layout regeneration schedule and start-cell policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VolatilitySchedule {
    /// `None` means the layout never regenerates.
    pub reset_period: Option<u32>,
    pub randomize_start: bool,
}

impl VolatilitySchedule {
    pub fn static_env() -> VolatilitySchedule {
        VolatilitySchedule {
            reset_period: None,
            randomize_start: false,
        }
    }

    pub fn volatile(period: u32) -> VolatilitySchedule {
        assert!(period >= 1, "reset period must be >= 1");
        VolatilitySchedule {
            reset_period: Some(period),
            randomize_start: true,
        }
    }
}

/// Generator parameters for a layout.
#[derive(Debug, Clone, Copy)]
pub struct LayoutParams {
    pub width: usize,
    pub height: usize,
    /// Probability that a non-special tile becomes a hole.
    pub hole_density: f64,
    pub subgoal_count: usize,
}

impl LayoutParams {
    pub fn new(width: usize, height: usize) -> LayoutParams {
        LayoutParams {
            width,
            height,
            hole_density: 0.25,
            subgoal_count: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridLayout {
    pub width: usize,
    pub height: usize,
    tiles: Vec<Tile>,
    pub seed: u64,
}

impl GridLayout {
    pub fn tile(&self, row: usize, col: usize) -> Tile {
        self.tiles[row * self.width + col]
    }

    pub fn tiles(&self) -> &[Tile] {
        &self.tiles
    }

    pub fn goal_pos(&self) -> (usize, usize) {
        let idx = self.tiles.iter().position(|t| *t == Tile::Goal).expect("one goal");
        (idx / self.width, idx % self.width)
    }

    /// ASCII grid, one row per line, with `A` marking the agent cell.
    pub fn to_ascii(&self, agent: Option<(usize, usize)>) -> String {
        let mut out = String::new();
        for r in 0..self.height {
            for c in 0..self.width {
                if agent == Some((r, c)) {
                    out.push('A');
                } else {
                    out.push(self.tile(r, c).ascii());
                }
            }
            out.push('\n');
        }
        out
    }

    /// Parses an ASCII grid produced by [`GridLayout::to_ascii`]. An `A`
    /// cell reads as a frozen tile with the agent on it.
    pub fn from_ascii(text: &str) -> Result<(GridLayout, Option<(usize, usize)>), EnvError> {
        let rows: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
        if rows.is_empty() {
            return Err(EnvError::BadAscii("empty grid".into()));
        }
        let width = rows[0].chars().count();
        let mut tiles = Vec::new();
        let mut agent = None;
        for (r, line) in rows.iter().enumerate() {
            if line.chars().count() != width {
                return Err(EnvError::BadAscii(format!("ragged row {r}")));
            }
            for (c, ch) in line.chars().enumerate() {
                let tile = Tile::from_ascii(ch)
                    .ok_or_else(|| EnvError::BadAscii(format!("bad char `{ch}` at ({r},{c})")))?;
                if ch == 'A' {
                    agent = Some((r, c));
                }
                tiles.push(tile);
            }
        }
        Ok((
            GridLayout {
                width,
                height: rows.len(),
                tiles,
                seed: 0,
            },
            agent,
        ))
    }

    fn passable(&self, row: usize, col: usize) -> bool {
        self.tile(row, col) != Tile::Hole
    }

    /// BFS over non-hole tiles from `start`; true when the goal is reached.
    fn path_to_goal_exists(&self, start: (usize, usize)) -> bool {
        let mut seen = vec![false; self.tiles.len()];
        let mut queue = std::collections::VecDeque::new();
        seen[start.0 * self.width + start.1] = true;
        queue.push_back(start);
        while let Some((r, c)) = queue.pop_front() {
            if self.tile(r, c) == Tile::Goal {
                return true;
            }
            let push = |nr: usize,
                            nc: usize,
                            seen: &mut Vec<bool>,
                            queue: &mut std::collections::VecDeque<(usize, usize)>| {
                let idx = nr * self.width + nc;
                if !seen[idx] && self.passable(nr, nc) {
                    seen[idx] = true;
                    queue.push_back((nr, nc));
                }
            };
            if r > 0 {
                push(r - 1, c, &mut seen, &mut queue);
            }
            if r + 1 < self.height {
                push(r + 1, c, &mut seen, &mut queue);
            }
            if c > 0 {
                push(r, c - 1, &mut seen, &mut queue);
            }
            if c + 1 < self.width {
                push(r, c + 1, &mut seen, &mut queue);
            }
        }
        false
    }
}

const MAX_LAYOUT_ATTEMPTS: usize = 1000;

/// Rejection-samples a valid layout: exactly one goal, frozen start at
/// (0,0), requested sub-goal count, hole density on the remaining tiles,
/// and a frozen path from start to goal.
pub fn regenerate_layout(params: &LayoutParams, rng: &mut SeededRng) -> Result<GridLayout, EnvError> {
    let n = params.width * params.height;
    assert!(n >= 2 + params.subgoal_count, "grid too small for special tiles");
    for _ in 0..MAX_LAYOUT_ATTEMPTS {
        let seed = rng.random::<u64>();
        let mut lrng = seeded_rng(seed);
        let mut tiles = vec![Tile::Frozen; n];

        let start_idx = 0;
        let goal_idx = 1 + lrng.random_range(0..n - 1); // any cell except start
        tiles[goal_idx] = Tile::Goal;

        let mut placed = 0;
        while placed < params.subgoal_count {
            let idx = lrng.random_range(0..n);
            if idx != start_idx && tiles[idx] == Tile::Frozen {
                tiles[idx] = Tile::SubGoal;
                placed += 1;
            }
        }

        for (idx, tile) in tiles.iter_mut().enumerate() {
            if idx != start_idx && *tile == Tile::Frozen && lrng.random::<f64>() < params.hole_density {
                *tile = Tile::Hole;
            }
        }

        let layout = GridLayout {
            width: params.width,
            height: params.height,
            tiles,
            seed,
        };
        if layout.path_to_goal_exists((0, 0)) {
            return Ok(layout);
        }
    }
    Err(EnvError::LayoutExhausted(MAX_LAYOUT_ATTEMPTS))
}

/// Flattened binary observation: one channel per tile category plus an
/// agent-position channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<f64>,
}

impl Observation {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn encode(layout: &GridLayout, agent: (usize, usize)) -> Observation {
        let cells = layout.width * layout.height;
        let mut bits = vec![0.0; cells * OBS_CHANNELS];
        for (idx, tile) in layout.tiles().iter().enumerate() {
            bits[tile.channel() * cells + idx] = 1.0;
        }
        bits[TILE_CHANNELS * cells + agent.0 * layout.width + agent.1] = 1.0;
        Observation {
            width: layout.width,
            height: layout.height,
            bits,
        }
    }

    /// Inverse of [`Observation::encode`].
    pub fn decode(&self) -> (Vec<Tile>, (usize, usize)) {
        let cells = self.width * self.height;
        let mut tiles = vec![Tile::Frozen; cells];
        for (idx, tile) in tiles.iter_mut().enumerate() {
            for t in [Tile::Frozen, Tile::Hole, Tile::SubGoal, Tile::Goal] {
                if self.bits[t.channel() * cells + idx] == 1.0 {
                    *tile = t;
                }
            }
        }
        let agent_idx = self.bits[TILE_CHANNELS * cells..]
            .iter()
            .position(|b| *b == 1.0)
            .expect("agent channel has one active cell");
        (tiles, (agent_idx / self.width, agent_idx % self.width))
    }
}

/// Result of one environment step. There is deliberately no reward field.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: Observation,
    /// Agent stepped onto a hole and was returned to the episode start cell.
    pub hole_reset: bool,
    /// The volatility schedule regenerated the layout on this step.
    pub layout_regenerated: bool,
}

pub struct GridWorld {
    params: LayoutParams,
    schedule: VolatilitySchedule,
    layout: GridLayout,
    agent: (usize, usize),
    episode_start: (usize, usize),
    global_step: u64,
    rng: SeededRng,
}

impl GridWorld {
    pub fn new(
        params: LayoutParams,
        schedule: VolatilitySchedule,
        seed: u64,
    ) -> Result<GridWorld, EnvError> {
        let mut rng = seeded_rng(seed);
        let layout = regenerate_layout(&params, &mut rng)?;
        let mut world = GridWorld {
            params,
            schedule,
            layout,
            agent: (0, 0),
            episode_start: (0, 0),
            global_step: 0,
            rng,
        };
        world.place_agent();
        Ok(world)
    }

    fn place_agent(&mut self) {
        let start = if self.schedule.randomize_start {
            self.random_frozen_cell()
        } else {
            (0, 0)
        };
        self.agent = start;
        self.episode_start = start;
    }

    fn random_frozen_cell(&mut self) -> (usize, usize) {
        let frozen: Vec<(usize, usize)> = (0..self.layout.height)
            .flat_map(|r| (0..self.layout.width).map(move |c| (r, c)))
            .filter(|(r, c)| self.layout.tile(*r, *c) == Tile::Frozen)
            .collect();
        frozen[self.rng.random_range(0..frozen.len())]
    }

    /// Starts an episode: repositions the agent per the schedule's start
    /// policy and returns the current observation. The layout itself only
    /// changes on the step schedule.
    pub fn reset(&mut self) -> Observation {
        self.place_agent();
        self.observe()
    }

    pub fn observe(&self) -> Observation {
        Observation::encode(&self.layout, self.agent)
    }

    pub fn agent_pos(&self) -> (usize, usize) {
        self.agent
    }

    pub fn layout(&self) -> &GridLayout {
        &self.layout
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    /// Returns the agent to the episode start cell (used by the pretraining
    /// phase's periodic position reset).
    pub fn return_agent_to_start(&mut self) {
        self.agent = self.episode_start;
    }

    pub fn observation_len(&self) -> usize {
        self.params.width * self.params.height * OBS_CHANNELS
    }

    /// Moves the agent one cell (boundary-clamped). Stepping onto a hole
    /// returns the agent to the episode start cell. The layout regenerates
    /// when the global step counter hits the schedule period.
    pub fn step(&mut self, action: Action) -> StepOutcome {
        let (r, c) = self.agent;
        let (nr, nc) = match action {
            Action::Left => (r, c.saturating_sub(1)),
            Action::Right => (r, (c + 1).min(self.layout.width - 1)),
            Action::Down => ((r + 1).min(self.layout.height - 1), c),
            Action::Up => (r.saturating_sub(1), c),
        };
        let mut hole_reset = false;
        if self.layout.tile(nr, nc) == Tile::Hole {
            self.agent = self.episode_start;
            hole_reset = true;
        } else {
            self.agent = (nr, nc);
        }

        self.global_step += 1;
        let mut layout_regenerated = false;
        if let Some(period) = self.schedule.reset_period {
            if self.global_step.is_multiple_of(period as u64) {
                self.layout = regenerate_layout(&self.params, &mut self.rng)
                    .expect("layout regeneration failed");
                self.place_agent();
                layout_regenerated = true;
            }
        }

        StepOutcome {
            observation: self.observe(),
            hole_reset,
            layout_regenerated,
        }
    }
}
