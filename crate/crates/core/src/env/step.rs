use serde::{Deserialize, Serialize};

use super::{Action, Item, Pos, TileKind, WorldState, HORIZON};

pub const ONION_POTTED_REWARD: u32 = 3;
pub const SOUP_PICKUP_REWARD: u32 = 5;
pub const DELIVERY_REWARD: u32 = 20;

/// What an interact did. Rewarded kinds are `PotOnion`, `PickSoup`, `Deliver`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    TakeOnion,
    TakeDish,
    /// Put the held item on an empty counter.
    Place(Item),
    /// Took an item off a counter.
    Pick(Item),
    PotOnion,
    PickSoup,
    Deliver,
}

impl EventKind {
    pub fn reward(self) -> u32 {
        match self {
            EventKind::PotOnion => ONION_POTTED_REWARD,
            EventKind::PickSoup => SOUP_PICKUP_REWARD,
            EventKind::Deliver => DELIVERY_REWARD,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interaction {
    pub agent: u8,
    pub cell: Pos,
    pub kind: EventKind,
}

/// Everything that happened through interacts in one step, attributed per agent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RewardEvents {
    pub interactions: Vec<Interaction>,
}

impl RewardEvents {
    fn count(&self, kind: EventKind) -> u32 {
        self.interactions.iter().filter(|e| e.kind == kind).count() as u32
    }

    pub fn onion_potted(&self) -> u32 {
        self.count(EventKind::PotOnion)
    }

    pub fn soup_picked_up(&self) -> u32 {
        self.count(EventKind::PickSoup)
    }

    pub fn soup_delivered(&self) -> u32 {
        self.count(EventKind::Deliver)
    }

    /// Shared team reward of the step.
    pub fn env_reward(&self) -> u32 {
        self.interactions.iter().map(|e| e.kind.reward()).sum()
    }

    /// Reward earned by interactions of one agent.
    pub fn agent_reward(&self, agent: usize) -> u32 {
        self.interactions
            .iter()
            .filter(|e| e.agent as usize == agent)
            .map(|e| e.kind.reward())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StepError {
    #[error("episode horizon {HORIZON} reached")]
    HorizonReached,
    #[error("expected {expected} actions, got {found}")]
    ActionCount { expected: usize, found: usize },
    #[error("batch has {states} states but {actions} joint actions")]
    BatchLength { states: usize, actions: usize },
    #[error("batch mixes layouts {first} and {other}")]
    MixedLayouts { first: String, other: String },
}

/// Advance one world by one step.
///
/// Order within a step: cooking pots tick down, movement resolves
/// simultaneously, then interacts apply in agent-index order.
pub fn step(state: &WorldState, actions: &[Action]) -> Result<(WorldState, RewardEvents), StepError> {
    if state.t >= HORIZON {
        return Err(StepError::HorizonReached);
    }
    if actions.len() != state.agents.len() {
        return Err(StepError::ActionCount {
            expected: state.agents.len(),
            found: actions.len(),
        });
    }

    let mut next = state.clone();
    let mut events = RewardEvents::default();

    for pot in next.pots.iter_mut() {
        if let Some(k) = pot.cook_timer.as_mut() {
            *k = k.saturating_sub(1);
        }
    }

    resolve_movement(&mut next, actions);

    for (i, &action) in actions.iter().enumerate() {
        if action == Action::Interact {
            interact(&mut next, i, &mut events);
        }
    }

    next.t += 1;
    next.score += events.env_reward();
    Ok((next, events))
}

/// Simultaneous movement. A mover is blocked when another agent ends up on
/// its target cell (same-target conflicts block every party) or when two
/// movers would swap cells. Blocking repeats to a fixpoint, so a chain of
/// agents following each other into vacated cells moves as long as its head
/// moves. No agent index has priority.
fn resolve_movement(state: &mut WorldState, actions: &[Action]) {
    let n = state.agents.len();
    let layout = state.layout().clone();
    let origin: Vec<Pos> = state.agents.iter().map(|a| a.pos).collect();
    let mut target = origin.clone();
    let mut moving = vec![false; n];

    for (i, &action) in actions.iter().enumerate() {
        if let Some(dir) = action.direction() {
            state.agents[i].facing = dir;
            if let Some(cell) = layout.neighbor(origin[i], dir) {
                if layout.is_floor(cell) {
                    target[i] = cell;
                    moving[i] = true;
                }
            }
        }
    }

    let mut blocked = vec![false; n];
    loop {
        blocked.iter_mut().for_each(|b| *b = false);
        let mut any = false;
        for i in (0..n).filter(|&i| moving[i]) {
            for j in (0..n).filter(|&j| j != i) {
                let conflict = target[j] == target[i];
                let swap = moving[j] && target[j] == origin[i] && target[i] == origin[j];
                if conflict || swap {
                    blocked[i] = true;
                    any = true;
                    break;
                }
            }
        }
        if !any {
            break;
        }
        for i in 0..n {
            if blocked[i] {
                moving[i] = false;
                target[i] = origin[i];
            }
        }
    }

    for (agent, cell) in state.agents.iter_mut().zip(target) {
        agent.pos = cell;
    }
}

fn interact(state: &mut WorldState, i: usize, events: &mut RewardEvents) {
    let cell = state.facing_cell(i);
    let layout = state.layout().clone();
    let held = state.agents[i].held;
    let kind = match (layout.tile(cell), held) {
        (TileKind::OnionSource, None) => {
            state.agents[i].held = Some(Item::Onion);
            Some(EventKind::TakeOnion)
        }
        (TileKind::DishSource, None) => {
            state.agents[i].held = Some(Item::Dish);
            Some(EventKind::TakeDish)
        }
        (TileKind::Counter, _) => {
            let slot = layout.counter_index(cell).expect("counter cell");
            match (held, state.counters[slot]) {
                (Some(item), None) => {
                    state.counters[slot] = Some(item);
                    state.agents[i].held = None;
                    Some(EventKind::Place(item))
                }
                (None, Some(item)) => {
                    state.counters[slot] = None;
                    state.agents[i].held = Some(item);
                    Some(EventKind::Pick(item))
                }
                _ => None,
            }
        }
        (TileKind::Pot, Some(Item::Onion)) => {
            let cook_time = layout.cook_time;
            let pot = &mut state.pots[layout.pot_index(cell).expect("pot cell")];
            if pot.accepts_onion() {
                pot.onions += 1;
                if pot.onions == 3 {
                    pot.cook_timer = Some(cook_time);
                }
                state.agents[i].held = None;
                Some(EventKind::PotOnion)
            } else {
                None
            }
        }
        (TileKind::Pot, Some(Item::Dish)) => {
            let pot = &mut state.pots[layout.pot_index(cell).expect("pot cell")];
            if pot.is_ready() {
                *pot = Default::default();
                state.agents[i].held = Some(Item::Soup);
                Some(EventKind::PickSoup)
            } else {
                None
            }
        }
        (TileKind::ServeWindow, Some(Item::Soup)) => {
            state.agents[i].held = None;
            Some(EventKind::Deliver)
        }
        _ => None,
    };
    if let Some(kind) = kind {
        events.interactions.push(Interaction {
            agent: i as u8,
            cell,
            kind,
        });
    }
}

fn check_batch(states: &[WorldState], actions: &[Vec<Action>]) -> Result<(), StepError> {
    if states.len() != actions.len() {
        return Err(StepError::BatchLength {
            states: states.len(),
            actions: actions.len(),
        });
    }
    if let Some(first) = states.first() {
        for s in &states[1..] {
            if !std::sync::Arc::ptr_eq(s.layout(), first.layout()) && s.layout().name != first.layout().name {
                return Err(StepError::MixedLayouts {
                    first: first.layout().name.clone(),
                    other: s.layout().name.clone(),
                });
            }
        }
    }
    Ok(())
}

/// Step every world of a batch one after the other.
pub fn step_batch_sequential(
    states: &[WorldState],
    actions: &[Vec<Action>],
) -> Result<Vec<(WorldState, RewardEvents)>, StepError> {
    check_batch(states, actions)?;
    states.iter().zip(actions).map(|(s, a)| step(s, a)).collect()
}

/// Step every world of a batch on the rayon pool.
#[cfg(feature = "parallel")]
pub fn step_batch_parallel(
    states: &[WorldState],
    actions: &[Vec<Action>],
) -> Result<Vec<(WorldState, RewardEvents)>, StepError> {
    use rayon::prelude::*;
    check_batch(states, actions)?;
    states
        .par_iter()
        .zip(actions.par_iter())
        .map(|(s, a)| step(s, a))
        .collect()
}

/// Step a batch of worlds sharing one layout. Results are elementwise
/// identical to [`step`]; worlds run in parallel when the `parallel`
/// feature is enabled.
pub fn step_batch(
    states: &[WorldState],
    actions: &[Vec<Action>],
) -> Result<Vec<(WorldState, RewardEvents)>, StepError> {
    #[cfg(feature = "parallel")]
    {
        step_batch_parallel(states, actions)
    }
    #[cfg(not(feature = "parallel"))]
    {
        step_batch_sequential(states, actions)
    }
}
