use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{
    encode_observation, observation_width, reset, step, step_batch, Action, AgentState, Layout, RewardEvents,
    WorldState, HORIZON,
};
use crate::nn::{log_softmax_rows, rows_to_matrix};
use crate::par;
use crate::shaping::{collab_features, collab_width, salient_action, RewardBreakdown};

use super::{CriticNet, PolicyNet, TrainError};

/// Derive an independent stream seed from a base seed (splitmix64 finalizer).
pub fn mix_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Inverse-CDF draw from a probability row.
pub fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Concatenated observations of all agents.
pub fn joint_observation(state: &WorldState) -> Vec<f64> {
    (0..state.n_agents())
        .flat_map(|i| encode_observation(state, i).expect("agent index in range"))
        .collect()
}

pub fn joint_observation_width(layout: &Layout, n: usize) -> usize {
    n * observation_width(layout, n)
}

/// Centralized critic input: joint observation followed by collaborative features.
pub fn critic_input(state: &WorldState) -> Vec<f64> {
    let mut x = joint_observation(state);
    x.extend(collab_features(state));
    x
}

pub fn critic_input_width(layout: &Arc<Layout>, n: usize) -> Result<usize, TrainError> {
    let probe = reset(layout, n, 0)?;
    Ok(joint_observation_width(layout, n) + collab_width(&probe))
}

/// A batch of independently seeded worlds that reset themselves at the horizon.
#[derive(Debug, Clone)]
pub struct VecEnv {
    pub layout: Arc<Layout>,
    pub n: usize,
    pub worlds: Vec<WorldState>,
    rngs: Vec<ChaCha8Rng>,
    /// Final scores of episodes finished since the last drain.
    finished: Vec<f64>,
}

impl VecEnv {
    pub fn new(layout: &Arc<Layout>, n: usize, n_envs: usize, seed: u64) -> Result<Self, TrainError> {
        let mut rngs: Vec<ChaCha8Rng> = (0..n_envs)
            .map(|e| ChaCha8Rng::seed_from_u64(mix_seed(seed, e as u64)))
            .collect();
        let worlds = rngs
            .iter_mut()
            .map(|rng| reset(layout, n, rng.next_u64()))
            .collect::<Result<_, _>>()?;
        Ok(VecEnv {
            layout: Arc::clone(layout),
            n,
            worlds,
            rngs,
            finished: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.worlds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.worlds.is_empty()
    }

    pub fn rng(&mut self, env: usize) -> &mut ChaCha8Rng {
        &mut self.rngs[env]
    }

    /// Step every world; finished worlds are replaced by fresh episodes.
    /// Returns each world's events and whether its episode ended.
    pub fn step(&mut self, actions: &[Vec<Action>]) -> Result<Vec<(RewardEvents, bool)>, TrainError> {
        let results = step_batch(&self.worlds, actions)?;
        let mut out = Vec::with_capacity(results.len());
        for (e, (next, events)) in results.into_iter().enumerate() {
            let done = next.is_done();
            if done {
                self.finished.push(next.score as f64);
                let seed = self.rngs[e].next_u64();
                self.worlds[e] = reset(&self.layout, self.n, seed)?;
            } else {
                self.worlds[e] = next;
            }
            out.push((events, done));
        }
        Ok(out)
    }

    pub fn drain_finished(&mut self) -> Vec<f64> {
        std::mem::take(&mut self.finished)
    }
}

/// Transitions of one collection, stored env-major: row `e * n_steps + t`.
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    pub n_envs: usize,
    pub n_steps: usize,
    pub n_agents: usize,
    /// Per agent, its own observation rows.
    pub obs: Vec<Array2<f64>>,
    pub joint_obs: Array2<f64>,
    pub critic_in: Array2<f64>,
    pub actions: Vec<Vec<Action>>,
    /// `logp[row][agent]` of the sampled action.
    pub logp: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    /// Value of the state after each env's last step.
    pub bootstrap: Vec<f64>,
    pub env_reward: Vec<f64>,
    pub events: Vec<RewardEvents>,
    /// Empty unless requested at collection time.
    pub salient: Vec<Action>,
    pub dones: Vec<bool>,
    /// `breakdown[row][agent]`, filled by the reward stage.
    pub breakdown: Vec<Vec<RewardBreakdown>>,
    /// Mean of the per-agent totals.
    pub team_reward: Vec<f64>,
    pub completed_returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn rows(&self) -> usize {
        self.n_envs * self.n_steps
    }

    pub fn row(&self, env: usize, t: usize) -> usize {
        env * self.n_steps + t
    }

    /// Set per-agent breakdowns and reduce them to the team reward by mean.
    pub fn set_breakdowns(&mut self, breakdown: Vec<Vec<RewardBreakdown>>) {
        self.team_reward = breakdown
            .iter()
            .map(|b| b.iter().map(|x| x.total).sum::<f64>() / b.len() as f64)
            .collect();
        self.breakdown = breakdown;
    }
}

/// Run `n_steps` joint steps of `actors` (one per agent index) in every world.
pub fn collect_rollout(
    envs: &mut VecEnv,
    actors: &[PolicyNet],
    critic: &CriticNet,
    n_steps: usize,
    with_salient: bool,
) -> Result<RolloutBuffer, TrainError> {
    let n = envs.n;
    if actors.len() != n {
        return Err(TrainError::Config(format!("{} actors for {n} agents", actors.len())));
    }
    let n_envs = envs.len();
    let rows = n_envs * n_steps;
    let obs_w = observation_width(&envs.layout, n);
    let crit_w = critic.input_width();
    let mut obs: Vec<Array2<f64>> = (0..n).map(|_| Array2::zeros((rows, obs_w))).collect();
    let mut joint_obs = Array2::zeros((rows, n * obs_w));
    let mut critic_in = Array2::zeros((rows, crit_w));
    let mut actions = vec![Vec::new(); rows];
    let mut logp = vec![Vec::new(); rows];
    let mut values = vec![0.0; rows];
    let mut env_reward = vec![0.0; rows];
    let mut step_events = vec![RewardEvents::default(); rows];
    let mut salient = if with_salient { vec![Action::Stay; rows] } else { Vec::new() };
    let mut dones = vec![false; rows];
    envs.drain_finished();

    for t in 0..n_steps {
        let per_env: Vec<(Vec<Vec<f64>>, Vec<f64>, Option<Action>)> = par::map_slice(&envs.worlds, |w| {
            let o: Vec<Vec<f64>> = (0..n).map(|i| encode_observation(w, i).expect("in range")).collect();
            let c = critic_input(w);
            let s = with_salient.then(|| salient_action(w).expect("world not done").action);
            (o, c, s)
        });
        let crit = rows_to_matrix(&per_env.iter().map(|p| p.1.clone()).collect::<Vec<_>>());
        let v = critic.values(crit.clone());
        let mut joint: Vec<Vec<Action>> = vec![Vec::with_capacity(n); n_envs];
        let mut lp: Vec<Vec<f64>> = vec![Vec::with_capacity(n); n_envs];
        for (i, actor) in actors.iter().enumerate() {
            let x = rows_to_matrix(&per_env.iter().map(|p| p.0[i].clone()).collect::<Vec<_>>());
            let l = log_softmax_rows(&actor.logits(x));
            for e in 0..n_envs {
                let probs: Vec<f64> = l.row(e).iter().map(|v| v.exp()).collect();
                let a = sample_index(&probs, envs.rng(e));
                joint[e].push(Action::ALL[a]);
                lp[e].push(l[[e, a]]);
            }
        }
        for e in 0..n_envs {
            let r = e * n_steps + t;
            for i in 0..n {
                let o = ndarray::ArrayView1::from(&per_env[e].0[i]);
                obs[i].row_mut(r).assign(&o);
                joint_obs.slice_mut(ndarray::s![r, i * obs_w..(i + 1) * obs_w]).assign(&o);
            }
            critic_in.row_mut(r).assign(&crit.row(e));
            values[r] = v[e];
            if let Some(s) = per_env[e].2 {
                salient[r] = s;
            }
        }
        let results = envs.step(&joint)?;
        for (e, ((events, done), (a, l))) in results.into_iter().zip(joint.into_iter().zip(lp)).enumerate() {
            let r = e * n_steps + t;
            env_reward[r] = events.env_reward() as f64;
            step_events[r] = events;
            dones[r] = done;
            actions[r] = a;
            logp[r] = l;
        }
    }
    let last = rows_to_matrix(&par::map_slice(&envs.worlds, critic_input));
    let bootstrap = critic.values(last);
    Ok(RolloutBuffer {
        n_envs,
        n_steps,
        n_agents: n,
        obs,
        joint_obs,
        critic_in,
        actions,
        logp,
        values,
        bootstrap,
        env_reward,
        events: step_events,
        salient,
        dones,
        breakdown: Vec::new(),
        team_reward: Vec::new(),
        completed_returns: envs.drain_finished(),
    })
}

/// Everything observed in one complete episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub seed: u64,
    /// Agent states before each step.
    pub poses: Vec<Vec<AgentState>>,
    pub actions: Vec<Vec<Action>>,
    pub events: Vec<RewardEvents>,
    pub score: u32,
}

/// Play one full episode; `policy` sees the state and a per-episode RNG.
pub fn play_episode(
    layout: &Arc<Layout>,
    n: usize,
    seed: u64,
    mut policy: impl FnMut(&WorldState, &mut ChaCha8Rng) -> Vec<Action>,
) -> Result<EpisodeRecord, TrainError> {
    let mut state = reset(layout, n, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xE915));
    let mut rec = EpisodeRecord {
        seed,
        poses: Vec::with_capacity(HORIZON as usize),
        actions: Vec::with_capacity(HORIZON as usize),
        events: Vec::with_capacity(HORIZON as usize),
        score: 0,
    };
    while !state.is_done() {
        let joint = policy(&state, &mut rng);
        let (next, events) = step(&state, &joint)?;
        rec.poses.push(state.agents.clone());
        rec.actions.push(joint);
        rec.events.push(events);
        state = next;
    }
    rec.score = state.score;
    Ok(rec)
}

/// Sample one action per agent from per-agent actors on their own observations.
pub fn sample_team_actions(actors: &[&PolicyNet], state: &WorldState, rng: &mut impl Rng) -> Vec<Action> {
    actors
        .iter()
        .enumerate()
        .map(|(i, pi)| {
            let o = encode_observation(state, i).expect("in range");
            let p = pi.probs(rows_to_matrix(&[o]));
            Action::ALL[sample_index(p.row(0).as_slice().expect("contiguous"), rng)]
        })
        .collect()
}
