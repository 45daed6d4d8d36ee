use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::env::{Action, AgentState, Item, Layout, NUM_ACTIONS};

use super::PredictorError;

/// Steps of history the predictor sees.
pub const WINDOW_LEN: usize = 20;
/// Per-agent step features: x, y, facing (4), held (4), action (6).
pub const AGENT_FEATURES: usize = 2 + 4 + 4 + NUM_ACTIONS;

pub fn step_width(n: usize) -> usize {
    n * AGENT_FEATURES
}

/// One completed joint step: agent states before the step and the actions taken.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub agents: Vec<AgentState>,
    pub actions: Vec<Action>,
}

/// The last [`WINDOW_LEN`] steps, left-padded. Row-major `WINDOW_LEN x step_width(n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryWindow {
    pub n: usize,
    pub features: Vec<f64>,
    /// `mask[r]` is true for real rows; padded rows are zero and come first.
    pub mask: [bool; WINDOW_LEN],
}

impl TrajectoryWindow {
    pub fn width(&self) -> usize {
        step_width(self.n)
    }

    pub fn valid_rows(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.width();
        &self.features[r * w..(r + 1) * w]
    }
}

fn norm(v: usize, extent: usize) -> f64 {
    if extent > 1 {
        v as f64 / (extent - 1) as f64
    } else {
        0.0
    }
}

fn encode_step(layout: &Layout, rec: &StepRecord, out: &mut [f64]) {
    for (i, (a, act)) in rec.agents.iter().zip(&rec.actions).enumerate() {
        let f = &mut out[i * AGENT_FEATURES..(i + 1) * AGENT_FEATURES];
        f[0] = norm(a.pos.x, layout.width);
        f[1] = norm(a.pos.y, layout.height);
        f[2 + a.facing.index()] = 1.0;
        f[6 + Item::held_slot(a.held)] = 1.0;
        f[10 + act.index()] = 1.0;
    }
}

/// Window over the tail of `history`; the last record is the most recent step.
pub fn build_window(layout: &Layout, history: &[StepRecord]) -> Result<TrajectoryWindow, PredictorError> {
    let last = history.last().ok_or(PredictorError::EmptyHistory)?;
    let n = last.agents.len();
    let tail = &history[history.len().saturating_sub(WINDOW_LEN)..];
    window_from(layout, n, tail.iter())
}

fn window_from<'a>(
    layout: &Layout,
    n: usize,
    tail: impl ExactSizeIterator<Item = &'a StepRecord>,
) -> Result<TrajectoryWindow, PredictorError> {
    let w = step_width(n);
    let pad = WINDOW_LEN - tail.len();
    let mut features = vec![0.0; WINDOW_LEN * w];
    let mut mask = [false; WINDOW_LEN];
    for (k, rec) in tail.enumerate() {
        if rec.agents.len() != n || rec.actions.len() != n {
            return Err(PredictorError::WidthMismatch {
                expected: w,
                found: step_width(rec.agents.len().min(rec.actions.len())),
            });
        }
        let r = pad + k;
        mask[r] = true;
        encode_step(layout, rec, &mut features[r * w..(r + 1) * w]);
    }
    Ok(TrajectoryWindow { n, features, mask })
}

/// Rolling history for online use; keeps only the last [`WINDOW_LEN`] steps.
#[derive(Debug, Clone, Default)]
pub struct HistoryTracker {
    recent: VecDeque<StepRecord>,
}

impl HistoryTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, rec: StepRecord) {
        if self.recent.len() == WINDOW_LEN {
            self.recent.pop_front();
        }
        self.recent.push_back(rec);
    }

    pub fn clear(&mut self) {
        self.recent.clear();
    }

    pub fn is_empty(&self) -> bool {
        self.recent.is_empty()
    }

    /// `None` before the first completed step.
    pub fn window(&self, layout: &Layout) -> Option<TrajectoryWindow> {
        let n = self.recent.back()?.agents.len();
        Some(window_from(layout, n, self.recent.iter()).expect("tracked records share one team size"))
    }
}
