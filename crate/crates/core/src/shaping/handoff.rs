use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::env::{EventKind, Item, Pos, RewardEvents};

/// Dense bonus for one agent placing an item on a counter and a different
/// agent picking it up within `window` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HandoffBonus {
    pub bonus: f64,
    pub window: u32,
}

impl Default for HandoffBonus {
    fn default() -> Self {
        HandoffBonus { bonus: 3.0, window: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handoff {
    pub item: Item,
    pub cell: Pos,
    pub giver: u8,
    pub receiver: u8,
    pub placed_at: u32,
    pub picked_at: u32,
}

/// Streaming detector. Each placement is matched only against the first pick
/// from the same cell; a pick by the placer itself cancels it.
#[derive(Debug, Clone, Default)]
pub struct HandoffTracker {
    window: u32,
    t: u32,
    pending: HashMap<Pos, (u8, u32)>,
}

impl HandoffTracker {
    pub fn new(window: u32) -> Self {
        HandoffTracker {
            window,
            ..Default::default()
        }
    }

    pub fn reset(&mut self) {
        self.t = 0;
        self.pending.clear();
    }

    /// Feed one step's events; returns the handoffs completed in it.
    pub fn observe(&mut self, events: &RewardEvents) -> Vec<Handoff> {
        let mut done = Vec::new();
        for e in &events.interactions {
            match e.kind {
                EventKind::Place(_) => {
                    self.pending.insert(e.cell, (e.agent, self.t));
                }
                EventKind::Pick(item) => {
                    if let Some((giver, placed_at)) = self.pending.remove(&e.cell) {
                        if giver != e.agent && self.t - placed_at <= self.window {
                            done.push(Handoff {
                                item,
                                cell: e.cell,
                                giver,
                                receiver: e.agent,
                                placed_at,
                                picked_at: self.t,
                            });
                        }
                    }
                }
                _ => {}
            }
        }
        self.t += 1;
        done
    }
}

/// Handoffs in one episode's event log.
pub fn detect_handoffs(events: &[RewardEvents], window: u32) -> Vec<Handoff> {
    let mut tracker = HandoffTracker::new(window);
    events.iter().flat_map(|e| tracker.observe(e)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Interaction;

    fn ev(agent: u8, kind: EventKind) -> RewardEvents {
        RewardEvents {
            interactions: vec![Interaction {
                agent,
                cell: Pos::new(3, 1),
                kind,
            }],
        }
    }

    #[test]
    fn place_then_pick_by_teammate_is_one_handoff() {
        let log = vec![
            ev(0, EventKind::Place(Item::Onion)),
            RewardEvents::default(),
            ev(1, EventKind::Pick(Item::Onion)),
        ];
        let h = detect_handoffs(&log, 4);
        assert_eq!(h.len(), 1);
        assert_eq!((h[0].giver, h[0].receiver, h[0].picked_at), (0, 1, 2));
    }

    #[test]
    fn self_handoff_and_late_pick_do_not_count() {
        let own = vec![ev(0, EventKind::Place(Item::Dish)), ev(0, EventKind::Pick(Item::Dish))];
        assert!(detect_handoffs(&own, 4).is_empty());
        let mut late = vec![ev(0, EventKind::Place(Item::Onion))];
        late.extend(std::iter::repeat_n(RewardEvents::default(), 4));
        late.push(ev(1, EventKind::Pick(Item::Onion)));
        assert!(detect_handoffs(&late, 4).is_empty());
        assert_eq!(detect_handoffs(&late, 5).len(), 1);
    }
}
