//! Episodic grid environment: an agent walks an 8-connected elevation grid
//! toward a goal cell under a shaped reward.
//!
//! Every step pays a distance penalty (a per-step term plus a remaining
//! 2D-distance term), a slope penalty proportional to the step's energy, and
//! a wall penalty inside a border band; reaching the goal adds a terminal
//! bonus. All step rewards except the terminal one are strictly negative, so
//! return maximization can never favor wandering.

use thiserror::Error;

use crate::cost::{step_energy, CostModel, Point3};
use crate::terrain::DemGrid;

/// Step cap per episode.
pub const DEFAULT_MAX_STEPS: u32 = 150;

/// Side length of the square sprite drawn for the agent and the goal.
pub const SPRITE_SIDE: usize = 3;

/// Elevation normalization divisor for the observation's terrain channel.
const Z_NORM: f64 = 2.0;

#[derive(Debug, Error)]
pub enum GridWorldError {
    #[error("cell ({0}, {1}) is outside the grid")]
    OutOfBounds(i32, i32),
    #[error("start and goal must differ")]
    StartEqualsGoal,
    #[error("episode is already finished")]
    EpisodeFinished,
    #[error("invalid reward parameters: {0}")]
    BadRewardParams(String),
}

/// Integer grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub fn new(x: i32, y: i32) -> Self {
        Cell { x, y }
    }
}

/// The eight movement directions, indexed 0..=7. North decreases `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Action {
    North = 0,
    NorthEast = 1,
    East = 2,
    SouthEast = 3,
    South = 4,
    SouthWest = 5,
    West = 6,
    NorthWest = 7,
}

impl Action {
    pub const ALL: [Action; 8] = [
        Action::North,
        Action::NorthEast,
        Action::East,
        Action::SouthEast,
        Action::South,
        Action::SouthWest,
        Action::West,
        Action::NorthWest,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Action> {
        Action::ALL.get(index).copied()
    }

    /// (dx, dy) of one step in this direction.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Action::North => (0, -1),
            Action::NorthEast => (1, -1),
            Action::East => (1, 0),
            Action::SouthEast => (1, 1),
            Action::South => (0, 1),
            Action::SouthWest => (-1, 1),
            Action::West => (-1, 0),
            Action::NorthWest => (-1, -1),
        }
    }
}

/// Constants of the shaped reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardParams {
    /// Divisor of the per-step 3D distance penalty.
    pub d_b1: f64,
    /// Divisor of the remaining-2D-distance penalty.
    pub d_b2: f64,
    /// Slope-penalty factor; also scales the terminal reward.
    pub k: f64,
    /// Cap on the summed per-axis wall terms.
    pub wall_bound: f64,
    /// Multiplier applied to the capped wall term.
    pub wall_intensity: f64,
    /// Band lines: cells with a coordinate <= l1 or >= l2 are penalized.
    pub wall_l1: f64,
    pub wall_l2: f64,
    /// Terminal reward is `reach_coefficient * k`.
    pub reach_coefficient: f64,
}

impl RewardParams {
    /// Standard constants for a grid of the given width: the wall band is
    /// three cells wide on every border.
    pub fn for_grid(width: usize) -> Self {
        RewardParams {
            d_b1: 10.0,
            d_b2: 50.0,
            k: 5.0,
            wall_bound: 6.0,
            wall_intensity: 5.0,
            wall_l1: 3.0,
            wall_l2: width as f64 - 3.0,
            reach_coefficient: 5.0,
        }
    }

    pub fn with_k(mut self, k: f64) -> Self {
        self.k = k;
        self
    }

    /// Terminal reward when the goal is reached.
    pub fn reach_reward(&self) -> f64 {
        self.reach_coefficient * self.k
    }

    fn validate(&self, width: usize) -> Result<(), GridWorldError> {
        let positive = [
            self.d_b1,
            self.d_b2,
            self.wall_bound,
            self.wall_intensity,
            self.reach_coefficient,
        ];
        if positive.iter().any(|v| !v.is_finite() || *v <= 0.0) || !self.k.is_finite() || self.k < 0.0
        {
            return Err(GridWorldError::BadRewardParams(
                "all parameters must be positive (k may be zero)".to_string(),
            ));
        }
        if !(self.wall_l1 < self.wall_l2 && self.wall_l2 < width as f64) {
            return Err(GridWorldError::BadRewardParams(format!(
                "need l1 < l2 < width, got l1={} l2={} width={width}",
                self.wall_l1, self.wall_l2
            )));
        }
        Ok(())
    }
}

/// State of one episode. Single-owner mutable; reward math itself is pure.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    pub agent: Cell,
    pub goal: Cell,
    pub prev: Option<Cell>,
    pub steps: u32,
    pub done: bool,
    pub reached: bool,
}

/// Result of one environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub reached: bool,
    /// The move would have left the grid; the agent stayed in place.
    pub blocked: bool,
}

/// The environment: a map, reward constants and a step cap.
pub struct GridWorld<'a> {
    map: &'a DemGrid,
    reward: RewardParams,
    cost: CostModel,
    max_steps: u32,
}

impl<'a> GridWorld<'a> {
    pub fn new(
        map: &'a DemGrid,
        reward: RewardParams,
        cost: CostModel,
        max_steps: u32,
    ) -> Result<Self, GridWorldError> {
        reward.validate(map.width())?;
        Ok(GridWorld {
            map,
            reward,
            cost,
            max_steps,
        })
    }

    /// Environment with the standard reward constants and step cap.
    pub fn standard(map: &'a DemGrid) -> Result<Self, GridWorldError> {
        GridWorld::new(
            map,
            RewardParams::for_grid(map.width()),
            CostModel::default(),
            DEFAULT_MAX_STEPS,
        )
    }

    pub fn map(&self) -> &DemGrid {
        self.map
    }

    pub fn reward_params(&self) -> &RewardParams {
        &self.reward
    }

    pub fn max_steps(&self) -> u32 {
        self.max_steps
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.x >= 0
            && cell.y >= 0
            && (cell.x as usize) < self.map.width()
            && (cell.y as usize) < self.map.height()
    }

    fn surface_point(&self, cell: Cell) -> Point3 {
        Point3::new(
            cell.x as f64,
            cell.y as f64,
            self.map.at(cell.x as usize, cell.y as usize),
        )
    }

    pub fn reset(&self, start: Cell, goal: Cell) -> Result<EpisodeState, GridWorldError> {
        if !self.in_bounds(start) {
            return Err(GridWorldError::OutOfBounds(start.x, start.y));
        }
        if !self.in_bounds(goal) {
            return Err(GridWorldError::OutOfBounds(goal.x, goal.y));
        }
        if start == goal {
            return Err(GridWorldError::StartEqualsGoal);
        }
        Ok(EpisodeState {
            agent: start,
            goal,
            prev: None,
            steps: 0,
            done: false,
            reached: false,
        })
    }

    /// Advances one step. Moves that would leave the grid keep the agent in
    /// place but still pay the position-dependent reward terms.
    pub fn step(
        &self,
        state: &mut EpisodeState,
        action: Action,
    ) -> Result<StepOutcome, GridWorldError> {
        if state.done {
            return Err(GridWorldError::EpisodeFinished);
        }
        let from = state.agent;
        let (dx, dy) = action.delta();
        let attempted = Cell::new(from.x + dx, from.y + dy);
        let to = if self.in_bounds(attempted) { attempted } else { from };

        let reached = to == state.goal;
        let mut reward = self.distance_penalty(from, to, state.goal)
            + self.slope_penalty(from, to)
            + self.wall_penalty(to);
        if reached {
            reward += self.reward.reach_reward();
        }

        state.prev = Some(from);
        state.agent = to;
        state.steps += 1;
        state.done = reached || state.steps >= self.max_steps;
        state.reached = reached;
        Ok(StepOutcome {
            reward,
            done: state.done,
            reached,
            blocked: to == from,
        })
    }

    /// Per-step 3D distance penalty, in map units. Zero for a blocked move.
    pub fn step_distance_penalty(&self, from: Cell, to: Cell) -> f64 {
        if from == to {
            return 0.0;
        }
        let d = crate::cost::point_distance(self.surface_point(from), self.surface_point(to), 1.0);
        -d / self.reward.d_b1
    }

    /// Remaining-2D-distance penalty of the cell the agent lands on.
    pub fn goal_distance_penalty(&self, next: Cell, goal: Cell) -> f64 {
        let dx = (next.x - goal.x) as f64;
        let dy = (next.y - goal.y) as f64;
        -(dx * dx + dy * dy).sqrt() / self.reward.d_b2
    }

    /// Combined distance penalty of a step landing on `to`.
    pub fn distance_penalty(&self, from: Cell, to: Cell, goal: Cell) -> f64 {
        self.step_distance_penalty(from, to) + self.goal_distance_penalty(to, goal)
    }

    /// Slope penalty of the executed step: minus its energy (in map-unit
    /// meters) times `k`. Zero for a blocked move.
    pub fn slope_penalty(&self, from: Cell, to: Cell) -> f64 {
        if from == to {
            return 0.0;
        }
        let e = step_energy(self.surface_point(from), self.surface_point(to), &self.cost, 1.0)
            .expect("distinct cells");
        -e * self.reward.k
    }

    /// Wall penalty of a cell: the per-axis band terms summed, capped at
    /// `wall_bound`, scaled by `wall_intensity` and applied negatively.
    pub fn wall_penalty(&self, cell: Cell) -> f64 {
        let axis = |p: f64| {
            if p <= self.reward.wall_l1 {
                (self.reward.wall_l1 - p) * 2.0
            } else if p >= self.reward.wall_l2 {
                (p - self.reward.wall_l2) * 2.0
            } else {
                0.0
            }
        };
        let sum = axis(cell.x as f64) + axis(cell.y as f64);
        -sum.min(self.reward.wall_bound) * self.reward.wall_intensity
    }
}

/// Three-channel image observation: normalized elevations, an agent sprite
/// and a goal sprite. Channel-major layout, `data[c * w * h + y * w + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Observation {
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[c * self.width * self.height + y * self.width + x]
    }
}

/// Renders observations for one map, caching the static elevation channel.
pub struct ObservationRenderer {
    width: usize,
    height: usize,
    elevation_channel: Vec<f64>,
}

impl ObservationRenderer {
    pub fn new(map: &DemGrid) -> Self {
        let (w, h) = (map.width(), map.height());
        let mut elevation_channel = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                elevation_channel.push((map.at(x, y) / Z_NORM).clamp(0.0, 1.0));
            }
        }
        ObservationRenderer {
            width: w,
            height: h,
            elevation_channel,
        }
    }

    pub fn render(&self, agent: Cell, goal: Cell) -> Observation {
        let mut obs = Observation {
            width: self.width,
            height: self.height,
            data: vec![0.0; 3 * self.width * self.height],
        };
        self.render_into(agent, goal, &mut obs);
        obs
    }

    /// Re-renders into an existing buffer of matching shape.
    pub fn render_into(&self, agent: Cell, goal: Cell, obs: &mut Observation) {
        let n = self.width * self.height;
        assert_eq!(obs.data.len(), 3 * n, "observation buffer shape mismatch");
        obs.width = self.width;
        obs.height = self.height;
        obs.data[..n].copy_from_slice(&self.elevation_channel);
        obs.data[n..].fill(0.0);
        self.draw_sprite(&mut obs.data[n..2 * n], agent);
        let (sprite2, _) = obs.data[2 * n..].split_at_mut(n);
        self.draw_sprite(sprite2, goal);
    }

    fn draw_sprite(&self, channel: &mut [f64], center: Cell) {
        let r = (SPRITE_SIDE / 2) as i32;
        for dy in -r..=r {
            for dx in -r..=r {
                let x = center.x + dx;
                let y = center.y + dy;
                if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
                    channel[y as usize * self.width + x as usize] = 1.0;
                }
            }
        }
    }
}

/// One-off observation render; training code should hold a renderer instead.
pub fn render_observation(map: &DemGrid, agent: Cell, goal: Cell) -> Observation {
    ObservationRenderer::new(map).render(agent, goal)
}
