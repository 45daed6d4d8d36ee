//! Fixed-width, ego-centric observation encoding.
//!
//! Layout of the vector for agent `i` on a `W x H` layout with `n` agents and
//! `P` pots:
//!
//! | block | width |
//! |---|---|
//! | ego position one-hot over all cells | `W*H` |
//! | ego facing one-hot, ego held one-hot | `4 + 4` |
//! | per teammate `(i+k) % n`, `k = 1..n`: `dx/W`, `dy/H`, facing, held | `10 * (n-1)` |
//! | per pot: fill/3, cooking, ready, timer/cook_time, `dx/W`, `dy/H` | `6 * P` |
//! | nearest onion source, dish source, pot, serve window, empty counter, counter with onion / dish / soup: `dx/W`, `dy/H`, present | `3 * 8` |
//! | `t / H` | `1` |

use super::layout::Layout;
use super::{Item, Pos, WorldState, HORIZON};

pub type ObservationVector = Vec<f64>;

const NEAREST_SLOTS: usize = 8;

pub fn observation_width(layout: &Layout, n: usize) -> usize {
    layout.width * layout.height + 8 + 10 * (n - 1) + 6 * layout.pot_cells().len() + 3 * NEAREST_SLOTS + 1
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("agent index {index} out of range for {n} agents")]
pub struct AgentIndexError {
    pub index: usize,
    pub n: usize,
}

pub fn encode_observation(state: &WorldState, agent: usize) -> Result<ObservationVector, AgentIndexError> {
    let n = state.n_agents();
    if agent >= n {
        return Err(AgentIndexError { index: agent, n });
    }
    let layout = state.layout();
    let (w, h) = (layout.width as f64, layout.height as f64);
    let mut out = Vec::with_capacity(observation_width(layout, n));
    let ego = &state.agents[agent];

    let mut cells = vec![0.0; layout.width * layout.height];
    cells[ego.pos.y * layout.width + ego.pos.x] = 1.0;
    out.extend_from_slice(&cells);
    push_one_hot(&mut out, 4, ego.facing.index());
    push_one_hot(&mut out, 4, Item::held_slot(ego.held));

    for k in 1..n {
        let mate = &state.agents[(agent + k) % n];
        out.push((mate.pos.x as f64 - ego.pos.x as f64) / w);
        out.push((mate.pos.y as f64 - ego.pos.y as f64) / h);
        push_one_hot(&mut out, 4, mate.facing.index());
        push_one_hot(&mut out, 4, Item::held_slot(mate.held));
    }

    let cook_time = layout.cook_time.max(1) as f64;
    for (pot, cell) in state.pots.iter().zip(layout.pot_cells()) {
        out.push(pot.onions as f64 / 3.0);
        out.push(if pot.is_cooking() { 1.0 } else { 0.0 });
        out.push(if pot.is_ready() { 1.0 } else { 0.0 });
        out.push(pot.cook_timer.map_or(0.0, |k| (k as f64 / cook_time).min(1.0)));
        out.push((cell.x as f64 - ego.pos.x as f64) / w);
        out.push((cell.y as f64 - ego.pos.y as f64) / h);
    }

    for near in layout.nearest_static(ego.pos) {
        out.push(near.dx as f64 / w);
        out.push(near.dy as f64 / h);
        out.push(1.0);
    }

    let wanted: [Option<Item>; 4] = [None, Some(Item::Onion), Some(Item::Dish), Some(Item::Soup)];
    for want in wanted {
        let nearest = layout
            .counter_cells()
            .iter()
            .zip(&state.counters)
            .filter(|(_, &item)| item == want)
            .map(|(&cell, _)| cell)
            .min_by_key(|&cell| (ego.pos.manhattan(cell), cell.y, cell.x));
        push_offset(&mut out, ego.pos, nearest, w, h);
    }

    out.push(state.t as f64 / HORIZON as f64);
    debug_assert_eq!(out.len(), observation_width(layout, n));
    Ok(out)
}

fn push_one_hot(out: &mut Vec<f64>, width: usize, hot: usize) {
    out.extend((0..width).map(|i| if i == hot { 1.0 } else { 0.0 }));
}

fn push_offset(out: &mut Vec<f64>, from: Pos, to: Option<Pos>, w: f64, h: f64) {
    match to {
        Some(p) => {
            out.push((p.x as f64 - from.x as f64) / w);
            out.push((p.y as f64 - from.y as f64) / h);
            out.push(1.0);
        }
        None => out.extend_from_slice(&[0.0, 0.0, 0.0]),
    }
}
