use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::env::{Action, Direction, Item, Layout, Pos, TileKind, WorldState};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassingRole {
    /// Takes onions from the source and puts them on the downstream counter.
    Fetcher,
    /// Moves onions from the upstream counter to the downstream counter.
    Passer,
    /// Pots onions, plates soup and serves.
    Cook,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct AgentPlan {
    role: PassingRole,
    upstream: Vec<Pos>,
    downstream: Vec<Pos>,
}

/// Role assignment for an assembly-line kitchen where each agent has its own
/// sealed room and rooms are chained by counters from the onion room to the
/// cooking room.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PassingPlan {
    pub layout: String,
    agents: Vec<AgentPlan>,
}

fn neighbors(layout: &Layout, p: Pos) -> impl Iterator<Item = (Direction, Pos)> + '_ {
    Direction::ALL.into_iter().filter_map(move |d| layout.neighbor(p, d).map(|q| (d, q)))
}

/// Floor component id per cell (`usize::MAX` off the floor).
fn floor_components(layout: &Layout) -> Vec<usize> {
    let idx = |p: Pos| p.y * layout.width + p.x;
    let mut comp = vec![usize::MAX; layout.width * layout.height];
    let mut next = 0;
    for start in layout.cells() {
        if !layout.is_floor(start) || comp[idx(start)] != usize::MAX {
            continue;
        }
        let mut queue = VecDeque::from([start]);
        comp[idx(start)] = next;
        while let Some(p) = queue.pop_front() {
            for (_, q) in neighbors(layout, p) {
                if layout.is_floor(q) && comp[idx(q)] == usize::MAX {
                    comp[idx(q)] = next;
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }
    comp
}

impl PassingPlan {
    pub fn new(layout: &Layout, n: usize) -> Result<Self, EvalError> {
        let undefined = |why: &str| EvalError::RoleUndefined(format!("{}: {why}", layout.name));
        let comp = floor_components(layout);
        let idx = |p: Pos| p.y * layout.width + p.x;
        let spawns = layout.spawn_points();
        if n > spawns.len() {
            return Err(undefined("more agents than spawn points"));
        }
        let rooms: Vec<usize> = spawns[..n].iter().map(|&p| comp[idx(p)]).collect();
        for i in 0..n {
            if rooms[..i].contains(&rooms[i]) {
                return Err(undefined("two agents share a room"));
            }
        }
        let touches = |room: usize, kind: TileKind| {
            layout
                .cells_of(kind)
                .any(|c| neighbors(layout, c).any(|(_, q)| layout.is_floor(q) && comp[idx(q)] == room))
        };
        // Counters joining two agent rooms.
        let links: Vec<(Pos, usize, usize)> = layout
            .counter_cells()
            .iter()
            .flat_map(|&c| {
                let adj: Vec<usize> = rooms
                    .iter()
                    .enumerate()
                    .filter(|&(_, &r)| neighbors(layout, c).any(|(_, q)| layout.is_floor(q) && comp[idx(q)] == r))
                    .map(|(i, _)| i)
                    .collect();
                adj.iter()
                    .flat_map(|&a| adj.iter().filter(move |&&b| b != a).map(move |&b| (c, a, b)))
                    .collect::<Vec<_>>()
            })
            .collect();
        let cooks: Vec<usize> = (0..n).filter(|&i| touches(rooms[i], TileKind::Pot)).collect();
        let [cook] = cooks[..] else {
            return Err(undefined("exactly one room must reach a pot"));
        };
        for kind in [TileKind::DishSource, TileKind::ServeWindow] {
            if !touches(rooms[cook], kind) {
                return Err(undefined("the cooking room needs a dish source and a serve window"));
            }
        }
        // Hops from the cooking room along counter links.
        let mut dist = vec![usize::MAX; n];
        dist[cook] = 0;
        let mut queue = VecDeque::from([cook]);
        while let Some(a) = queue.pop_front() {
            for &(_, x, b) in &links {
                if x == a && dist[b] == usize::MAX {
                    dist[b] = dist[a] + 1;
                    queue.push_back(b);
                }
            }
        }
        if dist.contains(&usize::MAX) {
            return Err(undefined("rooms are not chained by counters"));
        }
        let far = *dist.iter().max().expect("n >= 1");
        let fetchers: Vec<usize> = (0..n).filter(|&i| dist[i] == far).collect();
        if far == 0 || fetchers.len() != 1 || !touches(rooms[fetchers[0]], TileKind::OnionSource) {
            return Err(undefined("the room farthest from the pot must hold the onion source"));
        }
        let agents = (0..n)
            .map(|i| {
                let side = |d: usize| {
                    let mut v: Vec<Pos> = links
                        .iter()
                        .filter(|&&(_, a, b)| a == i && dist[b] == d)
                        .map(|&(c, _, _)| c)
                        .collect();
                    v.sort_by_key(|p| (p.y, p.x));
                    v.dedup();
                    v
                };
                AgentPlan {
                    role: if i == cook {
                        PassingRole::Cook
                    } else if dist[i] == far {
                        PassingRole::Fetcher
                    } else {
                        PassingRole::Passer
                    },
                    upstream: side(dist[i] + 1),
                    downstream: if dist[i] == 0 { Vec::new() } else { side(dist[i] - 1) },
                }
            })
            .collect();
        Ok(PassingPlan {
            layout: layout.name.clone(),
            agents,
        })
    }

    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn role(&self, agent: usize) -> PassingRole {
        self.agents[agent].role
    }

    /// The action of agent `agent`'s controller in `state`.
    pub fn act(&self, state: &WorldState, agent: usize) -> Action {
        let plan = &self.agents[agent];
        let layout = state.layout();
        let me = &state.agents[agent];
        let with_item = |cells: &[Pos], item: Option<Item>| -> Vec<Pos> {
            cells.iter().copied().filter(|&c| state.counter_item(c) == item).collect()
        };
        let onion_sources: Vec<Pos> = layout.cells_of(TileKind::OnionSource).collect();
        match plan.role {
            PassingRole::Fetcher | PassingRole::Passer => match me.held {
                Some(_) => {
                    let free = with_item(&plan.downstream, None);
                    if free.is_empty() {
                        approach(state, agent, &plan.downstream, false)
                    } else {
                        approach(state, agent, &free, true)
                    }
                }
                None if plan.role == PassingRole::Fetcher => approach(state, agent, &onion_sources, true),
                None => {
                    let ready = with_item(&plan.upstream, Some(Item::Onion));
                    if ready.is_empty() {
                        approach(state, agent, &plan.upstream, false)
                    } else {
                        approach(state, agent, &ready, true)
                    }
                }
            },
            PassingRole::Cook => cook_action(state, agent, plan, &with_item(&plan.upstream, Some(Item::Onion))),
        }
    }
}

fn cook_action(state: &WorldState, agent: usize, plan: &AgentPlan, onions_waiting: &[Pos]) -> Action {
    let layout = state.layout();
    let pots = layout.pot_cells();
    let pick = |f: &dyn Fn(usize) -> bool| -> Vec<Pos> { (0..pots.len()).filter(|&k| f(k)).map(|k| pots[k]).collect() };
    let ready = pick(&|k| state.pots[k].is_ready());
    let cooking = pick(&|k| state.pots[k].is_cooking());
    let open = pick(&|k| state.pots[k].accepts_onion());
    match state.agents[agent].held {
        Some(Item::Soup) => approach(state, agent, &layout.cells_of(TileKind::ServeWindow).collect::<Vec<_>>(), true),
        Some(Item::Dish) if !ready.is_empty() => approach(state, agent, &ready, true),
        Some(Item::Dish) => approach(state, agent, if cooking.is_empty() { pots } else { &cooking }, false),
        Some(Item::Onion) if !open.is_empty() => approach(state, agent, &open, true),
        Some(Item::Onion) => approach(state, agent, pots, false),
        None if !ready.is_empty() || !cooking.is_empty() => {
            approach(state, agent, &layout.cells_of(TileKind::DishSource).collect::<Vec<_>>(), true)
        }
        None if !onions_waiting.is_empty() && !open.is_empty() => approach(state, agent, onions_waiting, true),
        None => approach(state, agent, &plan.upstream, false),
    }
}

/// Walk to the nearest floor cell next to one of `targets`, face it, then
/// interact (or wait). Other agents block cells; ties break in direction order.
fn approach(state: &WorldState, agent: usize, targets: &[Pos], interact: bool) -> Action {
    let layout = state.layout();
    let me = state.agents[agent];
    if targets.is_empty() {
        return Action::Stay;
    }
    if targets.contains(&state.facing_cell(agent)) {
        return if interact { Action::Interact } else { Action::Stay };
    }
    let facing_target = |p: Pos| neighbors(layout, p).find(|(_, q)| targets.contains(q)).map(|(d, _)| d);
    if let Some(d) = facing_target(me.pos) {
        return Action::from_direction(d);
    }
    let idx = |p: Pos| p.y * layout.width + p.x;
    let mut first: Vec<Option<Direction>> = vec![None; layout.width * layout.height];
    let mut seen = vec![false; layout.width * layout.height];
    seen[idx(me.pos)] = true;
    let mut queue = VecDeque::from([me.pos]);
    while let Some(p) = queue.pop_front() {
        for (d, q) in neighbors(layout, p) {
            let free = layout.is_floor(q) && state.agent_at(q).is_none();
            if !free || seen[idx(q)] {
                continue;
            }
            seen[idx(q)] = true;
            first[idx(q)] = first[idx(p)].or(Some(d));
            if facing_target(q).is_some() {
                return Action::from_direction(first[idx(q)].expect("set on first hop"));
            }
            queue.push_back(q);
        }
    }
    Action::Stay
}
