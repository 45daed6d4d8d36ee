use crate::env::{Action, Item, StepError, WorldState, NUM_ACTIONS};

/// Collaborative feature vector: for every agent its normalized position and
/// held one-hot, for every counter its item one-hot, for every pot its fill
/// fraction. Facing and cook timers are excluded, so turning in place or
/// waiting never registers as a change.
pub fn collab_features(state: &WorldState) -> Vec<f64> {
    let layout = state.layout();
    let (w, h) = (layout.width as f64, layout.height as f64);
    let mut out = Vec::with_capacity(collab_width(state));
    for a in &state.agents {
        out.push(a.pos.x as f64 / w);
        out.push(a.pos.y as f64 / h);
        push_held(&mut out, a.held);
    }
    for &c in &state.counters {
        push_held(&mut out, c);
    }
    out.extend(state.pots.iter().map(|p| p.onions as f64 / 3.0));
    out
}

pub fn collab_width(state: &WorldState) -> usize {
    6 * state.n_agents() + 4 * state.counters.len() + state.pots.len()
}

fn push_held(out: &mut Vec<f64>, item: Option<Item>) {
    let hot = Item::held_slot(item);
    out.extend((0..4).map(|i| if i == hot { 1.0 } else { 0.0 }));
}

#[derive(Debug, Clone, PartialEq)]
pub struct SalientActionRecord {
    pub t: u32,
    pub action: Action,
    /// Mean feature change per candidate, indexed by [`Action::index`].
    pub changes: [f64; NUM_ACTIONS],
}

/// The action identity whose one-step execution changes the collaborative
/// features most, averaged over which agent executes it (others stay).
pub fn salient_action(state: &WorldState) -> Result<SalientActionRecord, StepError> {
    salient_action_by(state, collab_features)
}

/// [`salient_action`] with an arbitrary feature map.
pub fn salient_action_by(
    state: &WorldState,
    features: impl Fn(&WorldState) -> Vec<f64>,
) -> Result<SalientActionRecord, StepError> {
    let n = state.n_agents();
    let base = features(state);
    let mut changes = [0.0; NUM_ACTIONS];
    let mut joint = vec![Action::Stay; n];
    for (slot, action) in changes.iter_mut().zip(Action::ALL) {
        let mut total = 0.0;
        for i in 0..n {
            joint[i] = action;
            let (next, _) = crate::env::step(state, &joint)?;
            joint[i] = Action::Stay;
            total += l2_distance(&features(&next), &base);
        }
        *slot = total / n as f64;
    }
    Ok(SalientActionRecord {
        t: state.t,
        action: argmax_first(&changes),
        changes,
    })
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// First maximal entry in canonical action order.
fn argmax_first(changes: &[f64; NUM_ACTIONS]) -> Action {
    let mut best = 0;
    for i in 1..NUM_ACTIONS {
        if changes[i] > changes[best] {
            best = i;
        }
    }
    Action::ALL[best]
}
