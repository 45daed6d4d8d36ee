use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{encode_observation, reset, step, Action, Layout, ReplayLog, WorldState, NUM_ACTIONS};
use crate::nn::rows_to_matrix;
use crate::predictor::{HistoryTracker, Inference, StepRecord, TrajectoryPredictor};
use crate::steering::actor_input;
use crate::trainer::{mix_seed, sample_index, PolicyNet};

use super::{EvalError, PassingPlan};

/// One agent slot's decision rule.
#[derive(Debug, Clone)]
pub enum Controller {
    /// Uniform over the six actions.
    Random,
    Stay,
    /// Samples from an actor on its own observation.
    Policy { label: String, net: Arc<PolicyNet> },
    /// Samples from an actor on its observation plus the predictor's embedding
    /// of the joint history.
    Conditioned {
        label: String,
        net: Arc<PolicyNet>,
        predictor: Arc<TrajectoryPredictor>,
    },
    Passing(Arc<PassingPlan>),
}

impl Controller {
    pub fn label(&self) -> String {
        match self {
            Controller::Random => "random".into(),
            Controller::Stay => "stay".into(),
            Controller::Policy { label, .. } => format!("policy:{label}"),
            Controller::Conditioned { label, .. } => format!("conditioned:{label}"),
            Controller::Passing(_) => "heuristic:passing".into(),
        }
    }

    /// Checks that this controller can drive slot `slot` of an `n`-agent game on `layout`.
    pub fn check(&self, layout: &Layout, n: usize, slot: usize) -> Result<(), EvalError> {
        let obs_w = crate::env::observation_width(layout, n);
        let shape = |reason: String| Err(EvalError::Shape { slot, reason });
        match self {
            Controller::Random | Controller::Stay => Ok(()),
            Controller::Policy { net, .. } if net.input_width() != obs_w => {
                shape(format!("policy input {} != observation width {obs_w}", net.input_width()))
            }
            Controller::Conditioned { net, predictor, .. } => {
                let want = obs_w + predictor.embedding_width();
                if predictor.n != n {
                    shape(format!("predictor built for {} agents", predictor.n))
                } else if net.input_width() != want {
                    shape(format!("policy input {} != {want}", net.input_width()))
                } else {
                    Ok(())
                }
            }
            Controller::Passing(plan) if plan.layout != layout.name || plan.n() != n => {
                shape(format!("passing plan is for {} with {} agents", plan.layout, plan.n()))
            }
            _ => Ok(()),
        }
    }

    fn act(&self, state: &WorldState, slot: usize, embedding: Option<&Inference>, rng: &mut ChaCha8Rng) -> Action {
        let sample = |net: &PolicyNet, x: Vec<f64>, rng: &mut ChaCha8Rng| {
            let p = net.probs(rows_to_matrix(&[x]));
            Action::ALL[sample_index(p.row(0).as_slice().expect("contiguous"), rng)]
        };
        match self {
            Controller::Random => Action::ALL[rng.random_range(0..NUM_ACTIONS)],
            Controller::Stay => Action::Stay,
            Controller::Policy { net, .. } => sample(net, encode_observation(state, slot).expect("slot in range"), rng),
            Controller::Conditioned { net, .. } => {
                let inf = embedding.expect("inference computed for conditioned slots");
                sample(net, actor_input(state, slot, &inf.embedding), rng)
            }
            Controller::Passing(plan) => plan.act(state, slot),
        }
    }
}

/// Server-side decisions for the machine slots of a game; `None` slots are
/// driven from outside (e.g. human clients). All machine slots draw from one
/// RNG in slot order, so actions are a function of `(controllers, seed, history)`.
#[derive(Debug, Clone)]
pub struct MachineAgents {
    controllers: Vec<Option<Controller>>,
    rng: ChaCha8Rng,
    history: HistoryTracker,
    conditioned: bool,
}

impl MachineAgents {
    pub fn new(controllers: Vec<Option<Controller>>, seed: u64) -> Self {
        let conditioned = controllers.iter().flatten().any(|c| matches!(c, Controller::Conditioned { .. }));
        MachineAgents {
            controllers,
            rng: ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xE7A1)),
            history: HistoryTracker::new(),
            conditioned,
        }
    }

    pub fn check(&self, layout: &Layout) -> Result<(), EvalError> {
        let n = self.controllers.len();
        for (slot, c) in self.controllers.iter().enumerate() {
            if let Some(c) = c {
                c.check(layout, n, slot)?;
            }
        }
        Ok(())
    }

    /// Actions for the machine slots in `state`; `None` for external slots.
    pub fn act(&mut self, state: &WorldState) -> Result<Vec<Option<Action>>, EvalError> {
        // One inference per distinct predictor per step.
        let mut cache: HashMap<*const TrajectoryPredictor, Inference> = HashMap::new();
        if self.conditioned {
            let window = self.history.window(state.layout());
            for c in self.controllers.iter().flatten() {
                if let Controller::Conditioned { predictor, .. } = c {
                    let key = Arc::as_ptr(predictor);
                    if !cache.contains_key(&key) {
                        let inf = match &window {
                            Some(w) => predictor.infer(w)?,
                            None => predictor.cold_start(),
                        };
                        cache.insert(key, inf);
                    }
                }
            }
        }
        let rng = &mut self.rng;
        Ok(self
            .controllers
            .iter()
            .enumerate()
            .map(|(slot, c)| {
                c.as_ref().map(|c| {
                    let inf = match c {
                        Controller::Conditioned { predictor, .. } => cache.get(&Arc::as_ptr(predictor)),
                        _ => None,
                    };
                    c.act(state, slot, inf, rng)
                })
            })
            .collect())
    }

    /// Record the joint action taken from `state`.
    pub fn observe(&mut self, state: &WorldState, joint: &[Action]) {
        if self.conditioned {
            self.history.push(StepRecord {
                agents: state.agents.clone(),
                actions: joint.to_vec(),
            });
        }
    }
}

/// Play one episode with `roster[i]` driving agent `i`.
pub fn run_episode(layout: &Arc<Layout>, roster: &[Controller], seed: u64) -> Result<ReplayLog, EvalError> {
    let n = roster.len();
    let mut agents = MachineAgents::new(roster.iter().cloned().map(Some).collect(), seed);
    agents.check(layout)?;
    let mut state = reset(layout, n, seed).map_err(crate::trainer::TrainError::from)?;
    let mut log = ReplayLog::new(layout.name.clone(), seed, roster.iter().map(Controller::label).collect());
    while !state.is_done() {
        let joint: Vec<Action> = agents.act(&state)?.into_iter().map(|a| a.expect("all slots are machines")).collect();
        let (next, events) = step(&state, &joint)?;
        agents.observe(&state, &joint);
        log.push(joint, events);
        state = next;
    }
    log.close(state.score);
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{replay, shipped_layout};

    #[test]
    fn random_episode_replays_to_its_score() {
        let l = shipped_layout("cramped-2").unwrap();
        let log = run_episode(&l, &[Controller::Random, Controller::Random], 7).unwrap();
        assert_eq!(log.steps.len(), 400);
        let (score, _) = replay(&log).unwrap();
        assert_eq!(Some(score), log.final_score);
        assert_eq!(log, run_episode(&l, &[Controller::Random, Controller::Random], 7).unwrap());
    }

    #[test]
    fn mis_shaped_policy_is_rejected() {
        let l = shipped_layout("cramped-2").unwrap();
        let net = PolicyNet::new(5, &mut ChaCha8Rng::seed_from_u64(0));
        let bad = Controller::Policy {
            label: "x".into(),
            net: Arc::new(net),
        };
        let err = run_episode(&l, &[Controller::Stay, bad], 0).unwrap_err();
        assert!(matches!(err, EvalError::Shape { slot: 1, .. }), "{err}");
    }
}
