//! Acceptance suite. Each criterion is checked against an oracle written
//! independently of the library code it exercises; the binary prints one
//! PASS/FAIL line per criterion and exits non-zero if any fail.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ndarray::Array2;
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use teamcook::env::{
    parse_layout, replay, reset, shipped_layout, step, Action, AgentState, Direction, EventKind, Item, Layout, PotState,
    Pos, ReplayLog, RewardEvents, WorldState, HORIZON, SHIPPED_LAYOUTS,
};
use teamcook::eval::{
    k_sensitivity_sweep, reward_hacking_baseline, run_episode, Controller, KSweepConfig, PassingPlan, RewardHackingConfig,
};
use teamcook::nn::{Grads, ParamSet};
use teamcook::predictor::{
    cross_entropy, generate_dataset, train_predictor, EncoderConfig, PredictorTrainConfig, TeamBehavior,
    TrajectoryPredictor, TrajectoryWindow,
};
use teamcook::shaping::{detect_handoffs, event_labels, influence_reward, BinaryClassifier, HandoffBonus};
use teamcook::steering::{
    action_histogram, bc_loss, distill_student, export_distill_dataset, steering_reward, steering_rewards, total_reward,
    trajectory_quality, train_teacher, DistillConfig, DistillDataset, DistillEpisode, DistillRecord, SteeringConfig,
    SteeringContext, TeacherConfig,
};
use teamcook::trainer::{
    compute_gae, ppo_update, PolicyBatch, PolicyNet, PoolConfig, PoolSchedule, PoolTrainer, PpoConfig, QualityScores,
    TeamPool,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:.1?}, limit {limit:?}"))
}

// ---------------------------------------------------------------- env oracle

const PROBE_KINDS: [char; 5] = ['X', 'O', 'D', 'P', 'S'];
const PROBE_COOK: u32 = 5;

/// 4x4 room with a 2x2 floor. The cells north and west of (1,1) are varied;
/// the rest of the wall supplies every static target.
fn probe_grid(north: char, west: char) -> Vec<Vec<char>> {
    vec![
        vec!['X', north, 'O', 'X'],
        vec![west, '1', '2', 'D'],
        vec!['X', '_', '_', 'P'],
        vec!['X', 'X', 'S', 'X'],
    ]
}

fn probe_text(grid: &[Vec<char>]) -> String {
    let mut text = format!("name: probe\ncook_time: {PROBE_COOK}\n");
    for row in grid {
        text.extend(row.iter());
        text.push('\n');
    }
    text
}

fn is_floor(c: char) -> bool {
    matches!(c, '_' | '1' | '2' | '3' | '4')
}

fn offset(p: Pos, d: Direction) -> Pos {
    match d {
        Direction::North => Pos::new(p.x, p.y - 1),
        Direction::South => Pos::new(p.x, p.y + 1),
        Direction::East => Pos::new(p.x + 1, p.y),
        Direction::West => Pos::new(p.x - 1, p.y),
    }
}

fn move_dir(a: Action) -> Option<Direction> {
    match a {
        Action::North => Some(Direction::North),
        Action::South => Some(Direction::South),
        Action::East => Some(Direction::East),
        Action::West => Some(Direction::West),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq)]
struct OracleWorld {
    agents: Vec<AgentState>,
    counters: BTreeMap<Pos, Option<Item>>,
    pots: BTreeMap<Pos, PotState>,
}

fn reward_of(kind: EventKind) -> u32 {
    match kind {
        EventKind::PotOnion => 3,
        EventKind::PickSoup => 5,
        EventKind::Deliver => 20,
        _ => 0,
    }
}

/// Two-agent rule table: cook tick, simultaneous movement, interacts in index order.
fn oracle_step(grid: &[Vec<char>], w: &OracleWorld, acts: &[Action]) -> (OracleWorld, Vec<(u8, Pos, EventKind)>) {
    assert_eq!(acts.len(), 2);
    let mut next = w.clone();
    for pot in next.pots.values_mut() {
        if let Some(k) = pot.cook_timer {
            pot.cook_timer = Some(k.saturating_sub(1));
        }
    }
    let origin = [w.agents[0].pos, w.agents[1].pos];
    let mut target = origin;
    for i in 0..2 {
        if let Some(d) = move_dir(acts[i]) {
            next.agents[i].facing = d;
            let cell = offset(origin[i], d);
            if is_floor(grid[cell.y][cell.x]) {
                target[i] = cell;
            }
        }
    }
    let same_cell = target[0] == target[1];
    let swap = target[0] == origin[1] && target[1] == origin[0] && target[0] != origin[0];
    if same_cell || swap {
        target = origin;
    }
    next.agents[0].pos = target[0];
    next.agents[1].pos = target[1];

    let mut events = Vec::new();
    for i in 0..2 {
        if acts[i] != Action::Interact {
            continue;
        }
        let cell = offset(next.agents[i].pos, next.agents[i].facing);
        let held = next.agents[i].held;
        let kind = match (grid[cell.y][cell.x], held) {
            ('O', None) => {
                next.agents[i].held = Some(Item::Onion);
                Some(EventKind::TakeOnion)
            }
            ('D', None) => {
                next.agents[i].held = Some(Item::Dish);
                Some(EventKind::TakeDish)
            }
            ('X', _) => {
                let slot = next.counters.get_mut(&cell).expect("counter");
                match (held, *slot) {
                    (Some(it), None) => {
                        *slot = Some(it);
                        next.agents[i].held = None;
                        Some(EventKind::Place(it))
                    }
                    (None, Some(it)) => {
                        *slot = None;
                        next.agents[i].held = Some(it);
                        Some(EventKind::Pick(it))
                    }
                    _ => None,
                }
            }
            ('P', Some(Item::Onion)) => {
                let pot = next.pots.get_mut(&cell).expect("pot");
                if pot.cook_timer.is_none() && pot.onions < 3 {
                    pot.onions += 1;
                    if pot.onions == 3 {
                        pot.cook_timer = Some(PROBE_COOK);
                    }
                    next.agents[i].held = None;
                    Some(EventKind::PotOnion)
                } else {
                    None
                }
            }
            ('P', Some(Item::Dish)) => {
                let pot = next.pots.get_mut(&cell).expect("pot");
                if pot.cook_timer == Some(0) {
                    *pot = PotState::default();
                    next.agents[i].held = Some(Item::Soup);
                    Some(EventKind::PickSoup)
                } else {
                    None
                }
            }
            ('S', Some(Item::Soup)) => {
                next.agents[i].held = None;
                Some(EventKind::Deliver)
            }
            _ => None,
        };
        if let Some(kind) = kind {
            events.push((i as u8, cell, kind));
        }
    }
    (next, events)
}

fn object_states(kind: char) -> Vec<ObjectState> {
    match kind {
        'X' => vec![None, Some(Item::Onion), Some(Item::Dish), Some(Item::Soup)]
            .into_iter()
            .map(ObjectState::Counter)
            .collect(),
        'P' => [(0, None), (1, None), (2, None), (3, Some(3)), (3, Some(1)), (3, Some(0))]
            .into_iter()
            .map(|(onions, cook_timer)| ObjectState::Pot(PotState { onions, cook_timer }))
            .collect(),
        _ => vec![ObjectState::Static],
    }
}

#[derive(Clone, Copy, Debug)]
enum ObjectState {
    Counter(Option<Item>),
    Pot(PotState),
    Static,
}

fn held_states() -> [Option<Item>; 4] {
    [None, Some(Item::Onion), Some(Item::Dish), Some(Item::Soup)]
}

fn to_world(layout: &Arc<Layout>, w: &OracleWorld) -> WorldState {
    let counters = layout.counter_cells().iter().map(|c| w.counters[c]).collect();
    let pots = layout.pot_cells().iter().map(|c| w.pots[c]).collect();
    WorldState::from_parts(Arc::clone(layout), w.agents.clone(), pots, counters, 0)
}

fn env_oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let ego = Pos::new(1, 1);
    let partner_cells = [Pos::new(2, 1), Pos::new(1, 2), Pos::new(2, 2)];
    let (mut checked, mut disagreements) = (0u64, Vec::new());
    for north in PROBE_KINDS {
        for west in PROBE_KINDS {
            let grid = probe_grid(north, west);
            let layout = Arc::new(parse_layout(&probe_text(&grid)).map_err(|e| e.to_string())?);
            for n_obj in object_states(north) {
                for w_obj in object_states(west) {
                    let mut base = OracleWorld {
                        agents: Vec::new(),
                        counters: layout.counter_cells().iter().map(|&c| (c, None)).collect(),
                        pots: layout.pot_cells().iter().map(|&c| (c, PotState::default())).collect(),
                    };
                    for (cell, obj) in [(Pos::new(1, 0), n_obj), (Pos::new(0, 1), w_obj)] {
                        match obj {
                            ObjectState::Counter(it) => {
                                base.counters.insert(cell, it);
                            }
                            ObjectState::Pot(p) => {
                                base.pots.insert(cell, p);
                            }
                            ObjectState::Static => {}
                        }
                    }
                    for &partner in &partner_cells {
                        for f0 in Direction::ALL {
                            for h0 in held_states() {
                                for f1 in Direction::ALL {
                                    for h1 in held_states() {
                                        let mut w = base.clone();
                                        w.agents = vec![
                                            AgentState { pos: ego, facing: f0, held: h0 },
                                            AgentState { pos: partner, facing: f1, held: h1 },
                                        ];
                                        let world = to_world(&layout, &w);
                                        for a0 in Action::ALL {
                                            for a1 in Action::ALL {
                                                let acts = [a0, a1];
                                                let (want, want_events) = oracle_step(&grid, &w, &acts);
                                                let (got, got_events) = step(&world, &acts).map_err(|e| e.to_string())?;
                                                let got_w = OracleWorld {
                                                    agents: got.agents.clone(),
                                                    counters: layout
                                                        .counter_cells()
                                                        .iter()
                                                        .copied()
                                                        .zip(got.counters.iter().copied())
                                                        .collect(),
                                                    pots: layout.pot_cells().iter().copied().zip(got.pots.iter().copied()).collect(),
                                                };
                                                let got_ev: Vec<(u8, Pos, EventKind)> =
                                                    got_events.interactions.iter().map(|e| (e.agent, e.cell, e.kind)).collect();
                                                let want_score: u32 = want_events.iter().map(|e| reward_of(e.2)).sum();
                                                checked += 1;
                                                if got_w != want || got_ev != want_events || got.score != want_score || got.t != 1 {
                                                    if disagreements.len() < 5 {
                                                        disagreements.push(format!(
                                                            "N={north} W={west} agents={:?} acts={acts:?}",
                                                            w.agents
                                                        ));
                                                    }
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    ensure(disagreements.is_empty(), || format!("disagreements, first: {disagreements:?}"))?;
    within(started.elapsed(), Duration::from_secs(60))?;
    Ok(format!("{checked} transitions agree in {:.1?}", started.elapsed()))
}

// ---------------------------------------------------------- reward accounting

/// Mostly-scripted play on layouts where the passing plan applies, biased
/// random play elsewhere, so that every reward kind occurs.
fn fuzz_actions(state: &WorldState, plan: Option<&PassingPlan>, rng: &mut ChaCha8Rng) -> Vec<Action> {
    (0..state.n_agents())
        .map(|i| match plan {
            Some(p) if rng.random_bool(0.85) => p.act(state, i),
            _ if rng.random_bool(0.3) => Action::Interact,
            _ => Action::ALL[rng.random_range(0..6)],
        })
        .collect()
}

fn reward_accounting() -> Outcome {
    let started = Instant::now();
    let mut totals = [0u64; 3];
    for e in 0..1000u64 {
        let name = SHIPPED_LAYOUTS[e as usize % SHIPPED_LAYOUTS.len()];
        let layout = shipped_layout(name).ok_or("missing layout")?;
        let mut rng = ChaCha8Rng::seed_from_u64(e);
        let n = rng.random_range(2..=layout.max_agents());
        let plan = PassingPlan::new(&layout, n).ok();
        let mut s = reset(&layout, n, e).map_err(|e| e.to_string())?;
        let mut identity = 0u64;
        while !s.is_done() {
            let acts = fuzz_actions(&s, plan.as_ref(), &mut rng);
            let (next, ev) = step(&s, &acts).map_err(|e| e.to_string())?;
            for i in &ev.interactions {
                match i.kind {
                    EventKind::PotOnion => {
                        identity += 3;
                        totals[0] += 1;
                    }
                    EventKind::PickSoup => {
                        identity += 5;
                        totals[1] += 1;
                    }
                    EventKind::Deliver => {
                        identity += 20;
                        totals[2] += 1;
                    }
                    _ => {}
                }
            }
            s = next;
        }
        ensure(s.score as u64 == identity, || format!("episode {e} on {name}: score {} vs event sum {identity}", s.score))?;
    }
    ensure(totals.iter().all(|&t| t > 0), || format!("reward kinds never exercised: {totals:?}"))?;
    within(started.elapsed(), Duration::from_secs(300))?;
    Ok(format!(
        "1000 episodes; {} onions potted, {} soups picked, {} delivered; {:.1?}",
        totals[0],
        totals[1],
        totals[2],
        started.elapsed()
    ))
}

// ------------------------------------------------------------ determinism

fn fuzzed_log(e: u64) -> Result<(ReplayLog, Vec<RewardEvents>), String> {
    let name = SHIPPED_LAYOUTS[e as usize % SHIPPED_LAYOUTS.len()];
    let layout = shipped_layout(name).ok_or("missing layout")?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xDE7 + e);
    let n = rng.random_range(2..=layout.max_agents());
    let plan = PassingPlan::new(&layout, n).ok();
    let len = if e % 4 == 0 { rng.random_range(0..HORIZON as usize) } else { HORIZON as usize };
    let mut s = reset(&layout, n, e).map_err(|e| e.to_string())?;
    let mut log = ReplayLog::new(name, e, (0..n).map(|i| format!("fuzz:{i}")).collect());
    let mut events = Vec::new();
    for _ in 0..len {
        let acts = fuzz_actions(&s, plan.as_ref(), &mut rng);
        let (next, ev) = step(&s, &acts).map_err(|e| e.to_string())?;
        log.push(acts, ev.clone());
        events.push(ev);
        s = next;
    }
    log.close(s.score);
    Ok((log, events))
}

fn determinism_replay() -> Outcome {
    let mut total_score = 0u64;
    for e in 0..100u64 {
        let (log, events) = fuzzed_log(e)?;
        let (again, _) = fuzzed_log(e)?;
        ensure(again == log, || format!("episode {e}: rerun differs"))?;
        let text = log.to_jsonl();
        let parsed = ReplayLog::from_jsonl(&text).map_err(|e| e.to_string())?;
        ensure(parsed.to_jsonl() == text, || format!("episode {e}: serialization not bit-exact"))?;
        let (score, replayed) = replay(&parsed).map_err(|err| format!("episode {e}: {err}"))?;
        ensure(Some(score) == log.final_score, || format!("episode {e}: score {score} vs {:?}", log.final_score))?;
        ensure(replayed == events, || format!("episode {e}: per-step events differ"))?;
        total_score += score as u64;
    }
    Ok(format!("100 logs replay exactly (total score {total_score})"))
}

// ---------------------------------------------------------------- influence

fn influence_bounds() -> Outcome {
    let strategy = (2usize..=4).prop_flat_map(|n| {
        let unit = prop_oneof![Just(0.0), Just(1.0), 0.0f64..=1.0];
        (
            proptest::collection::vec(proptest::collection::vec(unit.clone(), n), n),
            proptest::collection::vec(unit, n),
        )
    });
    let mut runner = TestRunner::new(ProptestConfig {
        cases: 100_000,
        failure_persistence: None,
        ..ProptestConfig::default()
    });
    runner
        .run(&strategy, |(q, omega)| {
            let n = omega.len();
            let got = influence_reward(&q, &omega).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(got.len(), n);
            for i in 0..n {
                let mut lift = 0.0;
                for j in 0..n {
                    if j != i {
                        let d = q[i][j] - omega[j];
                        lift += if d > 0.0 { d } else { 0.0 };
                    }
                }
                let want = lift / (n - 1) as f64;
                prop_assert!((0.0..=1.0).contains(&got[i]), "r_inf {} out of [0,1]", got[i]);
                prop_assert!((got[i] - want).abs() <= 1e-12, "agent {}: {} vs {}", i, got[i], want);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("100000 random (q, omega, n) configurations".into())
}

// ------------------------------------------------------------------ labels

fn all_sequences(len: usize) -> impl Iterator<Item = Vec<Action>> {
    (0..6usize.pow(len as u32)).map(move |mut code| {
        (0..len)
            .map(|_| {
                let a = Action::ALL[code % 6];
                code /= 6;
                a
            })
            .collect()
    })
}

fn label_oracle(actions: &[Vec<Action>], salient: &[Action], k: usize) -> Vec<Vec<bool>> {
    let len = actions.len();
    let n = actions[0].len();
    let mut y = vec![vec![false; n]; len];
    for t in 0..len {
        for j in 0..n {
            let mut hits = 0;
            for tau in 1..=k {
                if t + tau < len && actions[t + tau][j] == salient[t] {
                    hits += 1;
                }
            }
            y[t][j] = hits > 0;
        }
    }
    y
}

fn event_label_semantics() -> Outcome {
    let mut cases = 0u64;
    for len in 1..=6 {
        for seq in all_sequences(len) {
            // Two agents: the second plays a relabeled copy so columns differ.
            let actions: Vec<Vec<Action>> = seq.iter().map(|&a| vec![a, Action::ALL[(a.index() + 1) % 6]]).collect();
            let salients = (0..6)
                .map(|s| vec![Action::ALL[s]; len])
                .chain((0..6).map(|s| (0..len).map(|t| Action::ALL[(t + s) % 6]).collect()));
            for salient in salients {
                for k in [1, 4, 7] {
                    let got = event_labels(&actions, &salient, k).map_err(|e| e.to_string())?;
                    let want = label_oracle(&actions, &salient, k);
                    ensure(got == want, || format!("mismatch: actions {seq:?} salient {salient:?} K={k}"))?;
                    cases += 1;
                }
            }
        }
    }
    // Repeated follow-ups still give a single positive label, not a count.
    let repeated = vec![vec![Action::Stay], vec![Action::Interact], vec![Action::Interact], vec![Action::Interact]];
    let y = event_labels(&repeated, &[Action::Interact; 4], 4).map_err(|e| e.to_string())?;
    ensure(y[0] == vec![true], || "repeated follow-ups must label true".into())?;
    Ok(format!("{cases} (sequence, salient, K) cases match"))
}

// --------------------------------------------------------------- gradients

// A small step keeps the stencil clear of ReLU kinks. Its rounding noise is
// about eps * |loss| / h, near 1e-9, so relative error is measured against at
// least GRAD_FLOOR: smaller gradients must match to an absolute 1e-9.
const FD_STEP: f64 = 1e-6;
const GRAD_FLOOR: f64 = 1e-5;

/// Largest per-element relative error between analytic gradients and a
/// fourth-order central finite difference of `loss`.
fn grad_check(params: &ParamSet, grads: &Grads, loss: &dyn Fn(&ParamSet) -> f64) -> (f64, usize) {
    let mut p = params.clone();
    let mut worst = 0.0f64;
    let mut count = 0;
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let shape = params.get(id).dim();
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let x0 = params.get(id)[[r, c]];
                let mut at = |dx: f64| {
                    p.get_mut(id)[[r, c]] = x0 + dx;
                    loss(&p)
                };
                let fd = (-at(2.0 * FD_STEP) + 8.0 * at(FD_STEP) - 8.0 * at(-FD_STEP) + at(-2.0 * FD_STEP)) / (12.0 * FD_STEP);
                p.get_mut(id)[[r, c]] = x0;
                let g = grads.get(id).map_or(0.0, |g| g[[r, c]]);
                let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(GRAD_FLOOR);
                worst = worst.max(rel);
                count += 1;
            }
        }
    }
    (worst, count)
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

struct Wander;

impl TeamBehavior for Wander {
    fn joint_actions(&self, s: &WorldState, rng: &mut ChaCha8Rng) -> Vec<Action> {
        (0..s.n_agents()).map(|_| Action::ALL[rng.random_range(0..6)]).collect()
    }
}

fn gradient_checks() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut report = Vec::new();

    let width = 5;
    let mut clf = BinaryClassifier::new(width, &mut rng);
    let x = random_matrix(8, width, &mut rng);
    let targets: Vec<f64> = (0..8).map(|i| (i % 2) as f64).collect();
    let (_, grads) = clf.bce(x.clone(), &targets);
    let base = clf.params.clone();
    let (worst, count) = grad_check(&base, &grads, &|p: &ParamSet| {
        let mut probe = BinaryClassifier::new(width, &mut ChaCha8Rng::seed_from_u64(0));
        probe.params = p.clone();
        probe.bce(x.clone(), &targets).0
    });
    clf.params = base;
    ensure(worst < 1e-4, || format!("BCE relative error {worst:.2e}"))?;
    report.push(format!("bce {worst:.1e} over {count}"));

    let layout = shipped_layout("cramped-2").ok_or("missing layout")?;
    let ds = generate_dataset(&layout, 2, &[&Wander], 3, 37, 5).map_err(|e| e.to_string())?;
    let windows: Vec<&TrajectoryWindow> = ds.samples.iter().step_by(3).take(4).map(|s| &s.window).collect();
    let labels: Vec<usize> = (0..windows.len()).map(|i| i % 3).collect();
    let enc = EncoderConfig { d_model: 8, heads: 2, layers: 1, feedforward: 12, dropout: 0.1 };
    let model = TrajectoryPredictor::new(enc, 2, 3, &mut rng).map_err(|e| e.to_string())?;
    let (_, grads) = cross_entropy(&model, &model.params, &windows, &labels, None).map_err(|e| e.to_string())?;
    let (worst, count) = grad_check(&model.params, &grads, &|p: &ParamSet| {
        cross_entropy(&model, p, &windows, &labels, None).expect("shapes checked").0
    });
    ensure(worst < 1e-4, || format!("predictor cross-entropy relative error {worst:.2e}"))?;
    report.push(format!("predictor {worst:.1e} over {count}"));

    let width = 7;
    let student = PolicyNet::new(width, &mut rng);
    let x = random_matrix(10, width, &mut rng);
    let actions: Vec<usize> = (0..10).map(|i| (i * 5) % 6).collect();
    let (_, grads) = bc_loss(&student, x.clone(), &actions);
    let (worst, count) = grad_check(&student.params, &grads, &|p: &ParamSet| {
        let mut probe = student.clone();
        probe.params = p.clone();
        bc_loss(&probe, x.clone(), &actions).0
    });
    ensure(worst < 1e-4, || format!("BC relative error {worst:.2e}"))?;
    report.push(format!("bc {worst:.1e} over {count}"));

    within(started.elapsed(), Duration::from_secs(120))?;
    Ok(format!("max relative error: {} ({:.1?})", report.join(", "), started.elapsed()))
}

// --------------------------------------------------------------------- GAE

fn gae_by_definition(r: &[f64], v: &[f64], done: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let len = r.len();
    let delta: Vec<f64> = (0..len)
        .map(|t| r[t] + if done[t] { 0.0 } else { gamma * v[t + 1] } - v[t])
        .collect();
    (0..len)
        .map(|t| {
            let mut sum = 0.0;
            let mut weight = 1.0;
            for l in t..len {
                sum += weight * delta[l];
                if done[l] {
                    break;
                }
                weight *= gamma * lambda;
            }
            sum
        })
        .collect()
}

fn gae_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let len = rng.random_range(1..=200);
        let r: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..=len).map(|_| rng.random_range(-2.0..2.0)).collect();
        let done: Vec<bool> = (0..len).map(|_| rng.random_bool(0.05)).collect();
        let gamma = rng.random_range(0.5..=1.0);
        let lambda = rng.random_range(0.5..=1.0);
        let (adv, ret) = compute_gae(&r, &v, &done, gamma, lambda).map_err(|e| e.to_string())?;
        let want = gae_by_definition(&r, &v, &done, gamma, lambda);
        for t in 0..len {
            worst = worst.max((adv[t] - want[t]).abs());
            ensure((ret[t] - (want[t] + v[t])).abs() <= 1e-10, || format!("return mismatch at {t}"))?;
        }
    }
    ensure(worst <= 1e-10, || format!("max deviation {worst:.2e}"))?;
    Ok(format!("1000 rollouts, max deviation {worst:.1e}"))
}

// --------------------------------------------------------------------- PPO

/// Two arms (actions 0 and 1) and two one-hot contexts; the rewarded arm equals the context.
fn ppo_bandit() -> Outcome {
    let cfg = PpoConfig {
        lr: 3e-3,
        epochs: 4,
        batch_size: 64,
        entropy_coef: 0.01,
        target_kl: 0.05,
        ..PpoConfig::default()
    };
    let contexts = Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 1.0]).expect("2x2");
    let mut reached = Vec::new();
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut policy = PolicyNet::new(2, &mut rng);
        let mut opt = teamcook::nn::Adam::new(&policy.params, cfg.lr);
        let mut hit = None;
        for update in 1..=200 {
            let probs = policy.probs(contexts.clone());
            let mut obs = Array2::zeros((256, 2));
            let (mut actions, mut old_logp, mut rewards) = (Vec::new(), Vec::new(), Vec::new());
            for row in 0..256 {
                let c = row % 2;
                obs[[row, c]] = 1.0;
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut a = 5;
                for (k, &p) in probs.row(c).iter().enumerate() {
                    acc += p;
                    if u < acc {
                        a = k;
                        break;
                    }
                }
                actions.push(a);
                old_logp.push(probs[[c, a]].ln());
                rewards.push(if a == c { 1.0 } else { 0.0 });
            }
            let batch = PolicyBatch { obs, actions, old_logp, advantages: rewards };
            ppo_update(&mut policy, &mut opt, &batch, &cfg, &mut rng).map_err(|e| e.to_string())?;
            let after = policy.probs(contexts.clone());
            if after[[0, 0]] >= 0.9 && after[[1, 1]] >= 0.9 {
                hit = Some(update);
                break;
            }
        }
        let update = hit.ok_or_else(|| format!("seed {seed} did not reach 0.9 within 200 updates"))?;
        reached.push(update);
    }
    Ok(format!("updates to p(optimal) >= 0.9 per seed: {reached:?}"))
}

// --------------------------------------------------------------- predictor

/// Team `m` favors one action; the remaining probability is uniform.
struct Favoring(Action);

impl TeamBehavior for Favoring {
    fn joint_actions(&self, s: &WorldState, rng: &mut ChaCha8Rng) -> Vec<Action> {
        (0..s.n_agents())
            .map(|_| if rng.random_bool(0.5) { self.0 } else { Action::ALL[rng.random_range(0..6)] })
            .collect()
    }
}

fn predictor_separability() -> Outcome {
    let started = Instant::now();
    let layout = shipped_layout("cramped-2").ok_or("missing layout")?;
    let teams: Vec<Favoring> = [Action::North, Action::South, Action::East, Action::West, Action::Interact]
        .into_iter()
        .map(Favoring)
        .collect();
    let refs: Vec<&dyn TeamBehavior> = teams.iter().map(|t| t as &dyn TeamBehavior).collect();
    let ds = generate_dataset(&layout, 2, &refs, 10, 10, 3).map_err(|e| e.to_string())?;
    let cfg = PredictorTrainConfig {
        encoder: EncoderConfig { d_model: 16, heads: 2, layers: 1, feedforward: 32, dropout: 0.1 },
        batch_size: 64,
        max_epochs: 20,
        patience: 5,
        lr: 3e-3,
        ..PredictorTrainConfig::default()
    };
    let trained = train_predictor(&ds, &cfg, &mut |_| {}).map_err(|e| e.to_string())?;
    ensure(trained.test_accuracy >= 0.4, || format!("held-out accuracy {:.3}", trained.test_accuracy))?;
    within(started.elapsed(), Duration::from_secs(600))?;
    Ok(format!(
        "held-out accuracy {:.3} over {} windows ({:.1?})",
        trained.test_accuracy,
        ds.samples.len(),
        started.elapsed()
    ))
}

// ---------------------------------------------------------------- steering

fn steering_algebra() -> Outcome {
    let strategy = (1usize..=6).prop_flat_map(|m| {
        (
            proptest::collection::vec(0.0f64..=1.0, m),
            proptest::collection::vec(prop_oneof![Just(0.0), Just(1.0), 0.0f64..=1.0], m),
            proptest::collection::vec(0.0f64..=1.0, m),
            -20.0f64..20.0,
            0.0f64..2.0,
        )
    });
    let mut runner = TestRunner::new(ProptestConfig {
        cases: 100_000,
        failure_persistence: None,
        ..ProptestConfig::default()
    });
    runner
        .run(&strategy, |(w_now, scores, w_future, r_env, alpha)| {
            let normalize = |w: &[f64]| {
                let total: f64 = w.iter().sum();
                if total > 0.0 {
                    w.iter().map(|x| x / total).collect::<Vec<_>>()
                } else {
                    vec![1.0 / w.len() as f64; w.len()]
                }
            };
            let (p_now, p_future) = (normalize(&w_now), normalize(&w_future));
            let q = |p: &[f64]| trajectory_quality(p, &scores).map_err(|e| TestCaseError::fail(e.to_string()));
            let (q_now, q_future) = (q(&p_now)?, q(&p_future)?);
            let dot = |p: &[f64]| p.iter().zip(&scores).map(|(a, b)| a * b).sum::<f64>();
            prop_assert!((q_now - dot(&p_now)).abs() <= 1e-12);
            for qv in [q_now, q_future] {
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&qv), "Q = {}", qv);
            }
            let r = steering_reward(q_now, q_future, true);
            prop_assert!((0.0..=1.0).contains(&r), "r_steer = {}", r);
            if q_future <= q_now {
                prop_assert_eq!(r, 0.0);
            } else {
                prop_assert!((r - (q_future - q_now)).abs() <= 1e-12);
            }
            prop_assert_eq!(steering_reward(q_now, q_future, false), 0.0);
            let cfg = SteeringConfig { alpha, delta: 1 };
            prop_assert!((total_reward(r_env, r, &cfg) - (r_env + alpha * r)).abs() <= 1e-12);

            let series = [q_now, q_future, q_now, q_future];
            for delta in 1..=4 {
                let got = steering_rewards(&series, delta);
                prop_assert_eq!(got.len(), 3);
                for (t, g) in got.iter().enumerate() {
                    let want = if t + delta <= 3 { (series[t + delta] - series[t]).max(0.0) } else { 0.0 };
                    prop_assert!((g - want).abs() <= 1e-12);
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("100000 random (p, S, delta) cases".into())
}

// ------------------------------------------------------------------ freeze

fn tiny_ppo() -> PpoConfig {
    PpoConfig {
        n_envs: 1,
        n_steps: 64,
        batch_size: 64,
        epochs: 2,
        lr: 1e-3,
        ..PpoConfig::default()
    }
}

fn scored_pool(layout: &Arc<Layout>, n: usize, seed: u64) -> Result<TeamPool, String> {
    let mut pool = TeamPool::new(layout, n, 3, seed).map_err(|e| e.to_string())?;
    pool.scores = Some(QualityScores {
        raw_mean: vec![0.0, 4.0, 8.0],
        normalized: vec![0.0, 0.5, 1.0],
        episodes: 1,
        seed,
    });
    Ok(pool)
}

fn small_predictor(n: usize, seed: u64) -> Result<TrajectoryPredictor, String> {
    let enc = EncoderConfig { d_model: 8, heads: 2, layers: 1, feedforward: 16, dropout: 0.1 };
    TrajectoryPredictor::new(enc, n, 3, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(|e| e.to_string())
}

fn freeze_contracts() -> Outcome {
    let cfg = PoolConfig {
        layout: "cramped-2".into(),
        n: 2,
        seed: 5,
        ppo: tiny_ppo(),
        schedule: PoolSchedule { pool_size: 3, chunk_steps: 64, cycles: 2 },
        ..PoolConfig::default()
    };
    let mut trainer = PoolTrainer::new(cfg).map_err(|e| e.to_string())?;
    let mut chunks = 0;
    for _ in 0..4 {
        let before = trainer.pool().hashes();
        let influence_before: Vec<String> = (0..3).map(|m| trainer.predictors(m).bundle().hash_hex()).collect();
        let report = trainer.train_chunk(&mut |_| {}).map_err(|e| e.to_string())?;
        let after = trainer.pool().hashes();
        for m in 0..3 {
            let influence_after = trainer.predictors(m).bundle().hash_hex();
            if m == report.team {
                ensure(after[m] != before[m], || format!("chunk {}: active team {m} did not train", report.chunk))?;
            } else {
                ensure(after[m] == before[m], || format!("chunk {}: frozen team {m} changed", report.chunk))?;
                ensure(influence_after == influence_before[m], || {
                    format!("chunk {}: influence predictors of frozen team {m} changed", report.chunk)
                })?;
            }
        }
        chunks += 1;
    }

    let layout = shipped_layout("cramped-2").ok_or("missing layout")?;
    let pool = scored_pool(&layout, 2, 9)?;
    let predictor = small_predictor(2, 9)?;
    let (pool_before, predictor_before) = (pool.hashes(), predictor.params.hash_hex());
    let ctx = SteeringContext::new(&pool, &predictor).map_err(|e| e.to_string())?;
    let tcfg = TeacherConfig {
        ppo: PpoConfig { n_envs: 2, batch_size: 200, epochs: 1, ..PpoConfig::default() },
        steering: SteeringConfig { alpha: 0.5, delta: 10 },
        total_steps: 1600,
        seed: 4,
    };
    let mut iterations = 0;
    let teacher = train_teacher(ctx, 0, tcfg, &mut |_| iterations += 1).map_err(|e| e.to_string())?;
    ensure(teacher.params.all_finite(), || "teacher diverged".into())?;
    ensure(pool.hashes() == pool_before, || "pool changed during teacher training".into())?;
    ensure(predictor.params.hash_hex() == predictor_before, || "predictor changed during teacher training".into())?;
    Ok(format!("{chunks} pool chunks and {iterations} teacher iterations leave frozen hashes intact"))
}

// ------------------------------------------------------------ distillation

fn distillation_fidelity() -> Outcome {
    let layout = shipped_layout("cramped-2").ok_or("missing layout")?;
    let pool = scored_pool(&layout, 2, 21)?;
    let predictor = small_predictor(2, 21)?;
    let ctx = SteeringContext::new(&pool, &predictor).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut teacher = PolicyNet::new(ctx.actor_width().map_err(|e| e.to_string())?, &mut rng);
    teacher.scale_head(40.0);
    let teachers = vec![teacher.clone(), teacher];
    let ds = export_distill_dataset(&ctx, &teachers, 10, 3).map_err(|e| e.to_string())?;
    let cfg = DistillConfig { epochs: 40, lr: 3e-3, batch_size: 128, seed: 1 };
    let report = distill_student(&ds, &cfg).map_err(|e| e.to_string())?;
    ensure(report.held_out_agreement >= 0.9, || format!("held-out agreement {:.3}", report.held_out_agreement))?;

    // Two inputs with conflicting labels in opposite 70/30 proportions.
    let mut records = Vec::new();
    for i in 0..1000 {
        let first = i % 2 == 0;
        let minority = (i / 2) % 10 < 3;
        let action = match (first, minority) {
            (true, false) | (false, true) => Action::East,
            (true, true) | (false, false) => Action::West,
        };
        records.push(DistillRecord {
            obs: if first { vec![1.0, 0.0, 0.5] } else { vec![0.0, 1.0, -0.5] },
            embedding: vec![0.2],
            action,
            teacher: i % 2,
            episode: usize::from(i % 10 == 9),
        });
    }
    let episode = |held_out| DistillEpisode { teacher: 0, partner_team: 0, seed: 0, held_out };
    let conflict = DistillDataset {
        layout: "cramped-2".into(),
        n: 2,
        obs_width: 3,
        embedding_width: 1,
        seed: 0,
        episodes: vec![episode(false), episode(true)],
        records,
    };
    let cfg = DistillConfig { epochs: 300, lr: 3e-3, batch_size: 100, seed: 2 };
    let student = distill_student(&conflict, &cfg).map_err(|e| e.to_string())?.student;
    let (train, _) = conflict.split();
    let mut gaps = Vec::new();
    for first in [true, false] {
        let subset: Vec<&DistillRecord> = train.iter().copied().filter(|r| (r.obs[0] == 1.0) == first).collect();
        let empirical = action_histogram(&subset);
        let x = Array2::from_shape_vec((1, 4), subset[0].input()).expect("one row");
        let probs = student.probs(x);
        for a in 0..6 {
            let gap = (probs[[0, a]] - empirical[a]).abs();
            ensure(gap <= 0.05, || format!("input {first}: action {a} prob {:.3} vs {:.3}", probs[[0, a]], empirical[a]))?;
            gaps.push(gap);
        }
    }
    let worst = gaps.iter().cloned().fold(0.0, f64::max);
    Ok(format!(
        "held-out agreement {:.3} on {} records; conflicting labels within {worst:.3}",
        report.held_out_agreement,
        ds.records.len()
    ))
}

// ---------------------------------------------------------------- heuristic

fn deliveries(log: &ReplayLog) -> usize {
    log.steps
        .iter()
        .flat_map(|s| &s.events.interactions)
        .filter(|i| i.kind == EventKind::Deliver)
        .count()
}

fn heuristic_gap() -> Outcome {
    let started = Instant::now();
    let layout = shipped_layout("pl-3").ok_or("missing layout")?;
    let plan = Arc::new(PassingPlan::new(&layout, 3).map_err(|e| e.to_string())?);
    let passing = vec![Controller::Passing(plan); 3];
    let random = vec![Controller::Random; 3];
    let (mut heur, mut rand_total) = (Vec::new(), 0usize);
    for seed in 0..12u64 {
        let log = run_episode(&layout, &passing, seed).map_err(|e| e.to_string())?;
        ensure(log.steps.len() == HORIZON as usize, || "episode shorter than the horizon".into())?;
        let d = deliveries(&log);
        ensure(d >= 1, || format!("seed {seed}: passing team delivered nothing"))?;
        heur.push(d);
        rand_total += deliveries(&run_episode(&layout, &random, seed).map_err(|e| e.to_string())?);
    }
    let heur_total: usize = heur.iter().sum();
    ensure(rand_total < heur_total, || format!("random {rand_total} vs passing {heur_total} deliveries"))?;
    within(started.elapsed(), Duration::from_secs(120))?;
    Ok(format!(
        "passing deliveries per seed {heur:?}; random total {rand_total} ({:.1?})",
        started.elapsed()
    ))
}

// ---------------------------------------------------------------- K sweep

fn desk_pool_config() -> PoolConfig {
    PoolConfig {
        layout: "pl-2".into(),
        n: 2,
        ppo: tiny_ppo(),
        schedule: PoolSchedule { chunk_steps: 128, ..PoolSchedule::default() },
        ..PoolConfig::default()
    }
}

fn k_sweep() -> Outcome {
    let cfg = KSweepConfig {
        ks: vec![1, 4, 7],
        seeds: vec![0, 1, 2],
        train: desk_pool_config(),
        eval_episodes: 2,
    };
    let report = k_sensitivity_sweep(&cfg, &mut |_, _| {}).map_err(|e| e.to_string())?;
    let methods: Vec<&str> = report.table.rows.iter().map(|r| r.method.as_str()).collect();
    ensure(methods == ["K=1", "K=4", "K=7"], || format!("rows {methods:?}"))?;
    for row in &report.table.rows {
        ensure(row.per_seed.len() == 3 && row.cell.seeds == 3, || format!("{} has unmatched seeds", row.method))?;
    }
    for k in [1, 4, 7] {
        let seeds: Vec<u64> = report.returns.keys().filter(|(kk, _)| *kk == k).map(|(_, s)| *s).collect();
        ensure(seeds == [0, 1, 2], || format!("K={k} ran seeds {seeds:?}"))?;
    }
    Ok(format!("3 rows: {}", report.table.rows.iter().map(|r| format!("{} {}", r.method, r.cell)).collect::<Vec<_>>().join("; ")))
}

// ---------------------------------------------------------------- handoffs

fn handoff_oracle(steps: &[Vec<(u8, usize, bool)>], window: u32) -> Vec<(u8, u8, usize, u32, u32)> {
    // Flatten to (t, agent, cell, is_place) in execution order.
    let flat: Vec<(u32, u8, usize, bool)> = steps
        .iter()
        .enumerate()
        .flat_map(|(t, evs)| evs.iter().map(move |&(a, c, place)| (t as u32, a, c, place)))
        .collect();
    let mut out = Vec::new();
    for (idx, &(t, agent, cell, place)) in flat.iter().enumerate() {
        if place {
            continue;
        }
        // The latest placement on this cell with no pick from it in between.
        let mut source = None;
        for &(t0, a0, c0, p0) in flat[..idx].iter().rev() {
            if c0 != cell {
                continue;
            }
            if p0 {
                source = Some((t0, a0));
            }
            break;
        }
        if let Some((t0, giver)) = source {
            if giver != agent && t - t0 <= window {
                out.push((giver, agent, cell, t0, t));
            }
        }
    }
    out
}

fn handoff_detector() -> Outcome {
    // Per step each agent does nothing, or places/picks on one of two cells.
    let per_agent: Vec<Option<(usize, bool)>> =
        std::iter::once(None).chain([(0, true), (0, false), (1, true), (1, false)].into_iter().map(Some)).collect();
    let cells = [Pos::new(2, 0), Pos::new(3, 0)];
    let mut cases = 0u64;
    for len in 1..=4usize {
        for code in 0..25usize.pow(len as u32) {
            let mut c = code;
            let steps: Vec<Vec<(u8, usize, bool)>> = (0..len)
                .map(|_| {
                    let s = c % 25;
                    c /= 25;
                    [(0u8, per_agent[s % 5]), (1u8, per_agent[s / 5])]
                        .into_iter()
                        .filter_map(|(a, ev)| ev.map(|(cell, place)| (a, cell, place)))
                        .collect()
                })
                .collect();
            let events: Vec<RewardEvents> = steps
                .iter()
                .map(|evs| RewardEvents {
                    interactions: evs
                        .iter()
                        .map(|&(agent, cell, place)| teamcook::env::Interaction {
                            agent,
                            cell: cells[cell],
                            kind: if place { EventKind::Place(Item::Onion) } else { EventKind::Pick(Item::Onion) },
                        })
                        .collect(),
                })
                .collect();
            for window in [0, 1, 2, 4] {
                let got: Vec<(u8, u8, usize, u32, u32)> = detect_handoffs(&events, window)
                    .iter()
                    .map(|h| (h.giver, h.receiver, cells.iter().position(|&c| c == h.cell).expect("known cell"), h.placed_at, h.picked_at))
                    .collect();
                let want = handoff_oracle(&steps, window);
                ensure(got == want, || format!("sequence {steps:?} window {window}: {got:?} vs {want:?}"))?;
                cases += 1;
            }
        }
    }

    let cfg = RewardHackingConfig {
        train: desk_pool_config(),
        bonus: HandoffBonus::default(),
        eval_seeds: vec![0, 1],
        eval_episodes: 1,
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut iterations = 0;
    let report = reward_hacking_baseline(&cfg, &mut |_| iterations += 1, Some(dir.path())).map_err(|e| e.to_string())?;
    ensure(iterations > 0, || "baseline ran no iterations".into())?;
    ensure(report.team.bundle().all_finite(), || "baseline team diverged".into())?;
    ensure(report.row.meta.contains_key("handoff_bonus"), || "baseline row lacks its bonus metadata".into())?;
    ensure(dir.path().join("scores.jsonl").exists(), || "baseline wrote no scores".into())?;
    Ok(format!(
        "{cases} place/pick sequences match; baseline trained {iterations} iterations, {} handoffs, score {}",
        report.handoffs, report.row.cell
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 15] = [
        ("environment oracle equivalence", env_oracle_equivalence),
        ("reward accounting", reward_accounting),
        ("determinism and replay", determinism_replay),
        ("influence reward bounds", influence_bounds),
        ("event label semantics", event_label_semantics),
        ("gradient checks", gradient_checks),
        ("GAE oracle", gae_oracle),
        ("PPO contextual bandit", ppo_bandit),
        ("predictor separability", predictor_separability),
        ("steering algebra", steering_algebra),
        ("freeze contracts", freeze_contracts),
        ("distillation fidelity", distillation_fidelity),
        ("heuristic gap", heuristic_gap),
        ("K sweep harness", k_sweep),
        ("handoff detector and baseline", handoff_detector),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        match run() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} ({:.1?})", started.elapsed());
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
