//! Deterministic n-agent kitchen simulator.
//!
//! A [`WorldState`] is an immutable value; [`step`] produces the next state and
//! the [`RewardEvents`] of that transition. Worlds on the same [`Layout`] share
//! it through an `Arc`, which also carries the static lookup tables used by
//! [`encode_observation`].

mod layout;
mod obs;
mod replay;
mod step;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use layout::{parse_layout, shipped_layout, Layout, LayoutError, TileKind, SHIPPED_LAYOUTS};
pub use obs::{encode_observation, observation_width, ObservationVector};
pub use replay::{replay, ReplayError, ReplayLog, ReplayStep, REPLAY_VERSION};
pub use step::{
    step, step_batch, step_batch_sequential, EventKind, Interaction, RewardEvents, StepError,
    DELIVERY_REWARD, ONION_POTTED_REWARD, SOUP_PICKUP_REWARD,
};
#[cfg(feature = "parallel")]
pub use step::step_batch_parallel;

/// Episode horizon: no step is accepted once `t == HORIZON`.
pub const HORIZON: u32 = 400;

/// Number of low-level actions.
pub const NUM_ACTIONS: usize = 6;

/// Grid coordinate; `x` grows east, `y` grows south.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub x: usize,
    pub y: usize,
}

impl Pos {
    pub const fn new(x: usize, y: usize) -> Self {
        Pos { x, y }
    }

    pub fn manhattan(self, other: Pos) -> usize {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    North,
    South,
    East,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::North,
        Direction::South,
        Direction::East,
        Direction::West,
    ];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Direction::North => (0, -1),
            Direction::South => (0, 1),
            Direction::East => (1, 0),
            Direction::West => (-1, 0),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// One low-level action. Declaration order is the canonical tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    North,
    South,
    East,
    West,
    Stay,
    Interact,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::North,
        Action::South,
        Action::East,
        Action::West,
        Action::Stay,
        Action::Interact,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn direction(self) -> Option<Direction> {
        match self {
            Action::North => Some(Direction::North),
            Action::South => Some(Direction::South),
            Action::East => Some(Direction::East),
            Action::West => Some(Direction::West),
            Action::Stay | Action::Interact => None,
        }
    }

    pub fn from_direction(dir: Direction) -> Action {
        match dir {
            Direction::North => Action::North,
            Direction::South => Action::South,
            Direction::East => Action::East,
            Direction::West => Action::West,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::North => "north",
            Action::South => "south",
            Action::East => "east",
            Action::West => "west",
            Action::Stay => "stay",
            Action::Interact => "interact",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown action {0:?}")]
pub struct UnknownAction(pub String);

impl FromStr for Action {
    type Err = UnknownAction;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| UnknownAction(s.to_string()))
    }
}

/// Per-agent actions for one step, indexed by agent.
pub type JointAction = Vec<Action>;

/// A movable object. Agents hold at most one; counters hold at most one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Item {
    Onion,
    Dish,
    Soup,
}

impl Item {
    pub const ALL: [Item; 3] = [Item::Onion, Item::Dish, Item::Soup];

    /// Index in a held one-hot where slot 0 means "nothing".
    pub fn held_slot(held: Option<Item>) -> usize {
        match held {
            None => 0,
            Some(Item::Onion) => 1,
            Some(Item::Dish) => 2,
            Some(Item::Soup) => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentState {
    pub pos: Pos,
    pub facing: Direction,
    pub held: Option<Item>,
}

/// A pot fills to three onions, then cooks for the layout's cook time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct PotState {
    pub onions: u8,
    /// Remaining cook steps; `None` while idle (filling).
    pub cook_timer: Option<u32>,
}

impl PotState {
    pub fn is_ready(&self) -> bool {
        self.cook_timer == Some(0)
    }

    pub fn is_cooking(&self) -> bool {
        matches!(self.cook_timer, Some(k) if k > 0)
    }

    pub fn accepts_onion(&self) -> bool {
        self.cook_timer.is_none() && self.onions < 3
    }
}

/// Facing assigned to every agent on reset.
pub const SPAWN_FACING: Direction = Direction::North;

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum ResetError {
    #[error("layout {layout} has {spawns} spawn points, {requested} agents requested")]
    TooManyAgents {
        layout: String,
        spawns: usize,
        requested: usize,
    },
    #[error("at least 2 agents are required, {0} requested")]
    TooFewAgents(usize),
}

/// Complete simulator state of one world.
#[derive(Debug, Clone)]
pub struct WorldState {
    layout: Arc<Layout>,
    pub agents: Vec<AgentState>,
    /// Aligned with [`Layout::pot_cells`].
    pub pots: Vec<PotState>,
    /// Aligned with [`Layout::counter_cells`].
    pub counters: Vec<Option<Item>>,
    pub t: u32,
    pub score: u32,
    pub seed: u64,
}

impl PartialEq for WorldState {
    fn eq(&self, other: &Self) -> bool {
        (Arc::ptr_eq(&self.layout, &other.layout) || self.layout.name == other.layout.name)
            && self.agents == other.agents
            && self.pots == other.pots
            && self.counters == other.counters
            && self.t == other.t
            && self.score == other.score
            && self.seed == other.seed
    }
}

impl Eq for WorldState {}

impl WorldState {
    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn pot_at(&self, p: Pos) -> Option<&PotState> {
        self.layout.pot_index(p).map(|i| &self.pots[i])
    }

    pub fn counter_item(&self, p: Pos) -> Option<Item> {
        self.layout.counter_index(p).and_then(|i| self.counters[i])
    }

    pub fn agent_at(&self, p: Pos) -> Option<usize> {
        self.agents.iter().position(|a| a.pos == p)
    }

    pub fn is_done(&self) -> bool {
        self.t >= HORIZON
    }

    /// Cell the agent is facing (always in-grid: floor never touches the boundary).
    pub fn facing_cell(&self, agent: usize) -> Pos {
        let a = &self.agents[agent];
        self.layout
            .neighbor(a.pos, a.facing)
            .expect("agents stand on interior floor")
    }

    /// Onions currently in the world, counting each soup as three.
    pub fn onions_in_world(&self) -> u32 {
        let weight = |item: Option<Item>| match item {
            Some(Item::Onion) => 1,
            Some(Item::Soup) => 3,
            _ => 0,
        };
        self.agents.iter().map(|a| weight(a.held)).sum::<u32>()
            + self.counters.iter().map(|&c| weight(c)).sum::<u32>()
            + self.pots.iter().map(|p| p.onions as u32).sum::<u32>()
    }

    /// Construct a state directly; used by probes and tests that need
    /// configurations unreachable from reset.
    pub fn from_parts(
        layout: Arc<Layout>,
        agents: Vec<AgentState>,
        pots: Vec<PotState>,
        counters: Vec<Option<Item>>,
        t: u32,
    ) -> Self {
        assert_eq!(pots.len(), layout.pot_cells().len());
        assert_eq!(counters.len(), layout.counter_cells().len());
        WorldState {
            layout,
            agents,
            pots,
            counters,
            t,
            score: 0,
            seed: 0,
        }
    }
}

/// Fresh world with `n` agents on the first `n` spawn points.
pub fn reset(layout: &Arc<Layout>, n: usize, seed: u64) -> Result<WorldState, ResetError> {
    if n < 2 {
        return Err(ResetError::TooFewAgents(n));
    }
    if n > layout.max_agents() {
        return Err(ResetError::TooManyAgents {
            layout: layout.name.clone(),
            spawns: layout.max_agents(),
            requested: n,
        });
    }
    Ok(WorldState {
        layout: Arc::clone(layout),
        agents: layout.spawn_points()[..n]
            .iter()
            .map(|&pos| AgentState {
                pos,
                facing: SPAWN_FACING,
                held: None,
            })
            .collect(),
        pots: vec![PotState::default(); layout.pot_cells().len()],
        counters: vec![None; layout.counter_cells().len()],
        t: 0,
        score: 0,
        seed,
    })
}
