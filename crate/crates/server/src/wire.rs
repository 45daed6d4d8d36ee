//! JSON wire format. Every record carries a `type` tag; field names are part
//! of the protocol.

use serde::{Deserialize, Serialize};
use teamcook::env::{Action, AgentState, Item, Pos, RewardEvents, WorldState};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    /// Take a human slot, or watch read-only when `slot` is absent.
    Join {
        session: String,
        #[serde(default)]
        slot: Option<usize>,
    },
    /// `step` must echo the step index of the latest `state`.
    Action { step: u32, slot: usize, action: Action },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotView {
    pub x: usize,
    pub y: usize,
    pub onions: u8,
    /// Remaining cook steps; absent while the pot is filling.
    pub cook_timer: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterView {
    pub x: usize,
    pub y: usize,
    pub item: Item,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadMessage,
    InvalidSession,
    UnknownSession,
    NotJoined,
    SlotTaken,
    NotHumanSlot,
    NotYourSlot,
    NotRunning,
    StaleStep,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State {
        step: u32,
        /// Layout rows in the layout-file alphabet.
        grid: Vec<String>,
        agents: Vec<AgentState>,
        pots: Vec<PotView>,
        counters: Vec<CounterView>,
        score: u32,
    },
    /// Events of the step that moved the world from `step` to `step + 1`.
    StepResult { step: u32, events: RewardEvents },
    GameOver {
        score: u32,
        replay_id: String,
        truncated: bool,
    },
    Error {
        code: ErrorCode,
        message: String,
        /// The server's step index, on stale-step rejections.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        current_step: Option<u32>,
    },
}

impl ServerMessage {
    pub fn state(world: &WorldState) -> Self {
        let layout = world.layout();
        let pos = |p: Pos| (p.x, p.y);
        ServerMessage::State {
            step: world.t,
            grid: layout.render().lines().map(str::to_owned).collect(),
            agents: world.agents.clone(),
            pots: layout
                .pot_cells()
                .iter()
                .zip(&world.pots)
                .map(|(&p, s)| PotView {
                    x: pos(p).0,
                    y: pos(p).1,
                    onions: s.onions,
                    cook_timer: s.cook_timer,
                })
                .collect(),
            counters: layout
                .counter_cells()
                .iter()
                .zip(&world.counters)
                .filter_map(|(&p, item)| item.map(|item| CounterView { x: p.x, y: p.y, item }))
                .collect(),
            score: world.score,
        }
    }

    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        ServerMessage::Error {
            code,
            message: message.into(),
            current_step: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("wire messages serialize")
    }
}
