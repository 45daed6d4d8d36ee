use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{encode_observation, observation_width, reset, step, Action, Layout, WorldState};
use crate::nn::{rows_to_matrix, Adam, CheckpointError};
use crate::par;
use crate::predictor::{HistoryTracker, Inference, StepRecord, TrajectoryPredictor};
use crate::trainer::{
    compute_gae, critic_input, critic_input_width, mix_seed, ppo_update, sample_index, value_update, CriticNet,
    PolicyBatch, PolicyNet, PpoConfig, TeamPool,
};

use super::reward::{steering_rewards, total_reward, trajectory_quality, SteeringConfig};
use super::SteeringError;

/// Uniform draws of the pool team that fills every partner slot of an episode.
#[derive(Debug, Clone)]
pub struct PartnerSampler {
    n_teams: usize,
    rng: ChaCha8Rng,
}

impl PartnerSampler {
    pub fn new(n_teams: usize, seed: u64) -> Self {
        PartnerSampler {
            n_teams,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn sample(&mut self) -> usize {
        self.rng.random_range(0..self.n_teams)
    }
}

/// Frozen inputs shared by teacher training, export and deployment.
#[derive(Debug, Clone, Copy)]
pub struct SteeringContext<'a> {
    pub pool: &'a TeamPool,
    pub predictor: &'a TrajectoryPredictor,
    /// Normalized team quality scores, one per pool team.
    pub scores: &'a [f64],
}

impl<'a> SteeringContext<'a> {
    pub fn new(pool: &'a TeamPool, predictor: &'a TrajectoryPredictor) -> Result<Self, SteeringError> {
        let scores = pool.quality().map_err(|_| SteeringError::Unscored)?;
        if predictor.n_teams != pool.len() || predictor.n != pool.n {
            return Err(SteeringError::Config(format!(
                "predictor covers {} teams of {} agents, pool has {} of {}",
                predictor.n_teams,
                predictor.n,
                pool.len(),
                pool.n
            )));
        }
        Ok(SteeringContext { pool, predictor, scores })
    }

    pub fn layout(&self) -> Result<Arc<Layout>, SteeringError> {
        Ok(self.pool.layout()?)
    }

    /// Width of an `(o_t, c_t)` actor input.
    pub fn actor_width(&self) -> Result<usize, SteeringError> {
        Ok(observation_width(&*self.layout()?, self.pool.n) + self.predictor.embedding_width())
    }

    pub fn infer(&self, layout: &Layout, history: &HistoryTracker) -> Result<Inference, SteeringError> {
        match history.window(layout) {
            Some(w) => Ok(self.predictor.infer(&w)?),
            None => Ok(self.predictor.cold_start()),
        }
    }
}

/// `o_t^i` followed by `c_t`.
pub fn actor_input(state: &WorldState, agent: usize, embedding: &[f64]) -> Vec<f64> {
    let mut x = encode_observation(state, agent).expect("agent index in range");
    x.extend_from_slice(embedding);
    x
}

/// One full episode with the ego policy at `agent` and pool team `partner_team` elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeredEpisode {
    pub agent: usize,
    pub partner_team: usize,
    pub seed: u64,
    pub actor_in: Vec<Vec<f64>>,
    pub critic_in: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub logp: Vec<f64>,
    pub env_reward: Vec<f64>,
    /// Quality of the history before each step plus after the last one.
    pub quality: Vec<f64>,
    pub score: u32,
}

/// Roll out `ego` as agent `agent` with partners from one pool team.
pub fn steered_episode(
    ctx: &SteeringContext,
    ego: &PolicyNet,
    agent: usize,
    partner_team: usize,
    seed: u64,
) -> Result<SteeredEpisode, SteeringError> {
    let layout = ctx.layout()?;
    let n = ctx.pool.n;
    if agent >= n {
        return Err(SteeringError::Config(format!("agent {agent} out of range for {n} agents")));
    }
    let partners = &ctx.pool.teams[partner_team];
    let mut state = reset(&layout, n, seed).map_err(crate::trainer::TrainError::from)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x57EE));
    let mut history = HistoryTracker::new();
    let mut ep = SteeredEpisode {
        agent,
        partner_team,
        seed,
        actor_in: Vec::new(),
        critic_in: Vec::new(),
        actions: Vec::new(),
        logp: Vec::new(),
        env_reward: Vec::new(),
        quality: Vec::new(),
        score: 0,
    };
    while !state.is_done() {
        let inf = ctx.infer(&layout, &history)?;
        ep.quality.push(trajectory_quality(&inf.probs, ctx.scores)?);
        let x = actor_input(&state, agent, &inf.embedding);
        let probs = ego.probs(rows_to_matrix(std::slice::from_ref(&x)));
        let probs = probs.row(0);
        let mut joint = Vec::with_capacity(n);
        for j in 0..n {
            if j == agent {
                let a = sample_index(probs.as_slice().expect("contiguous"), &mut rng);
                ep.logp.push(probs[a].max(1e-300).ln());
                joint.push(Action::ALL[a]);
            } else {
                let o = encode_observation(&state, j).expect("in range");
                let p = partners.actors[j].probs(rows_to_matrix(&[o]));
                joint.push(Action::ALL[sample_index(p.row(0).as_slice().expect("contiguous"), &mut rng)]);
            }
        }
        let mut c = critic_input(&state);
        c.extend_from_slice(&inf.embedding);
        let (next, events) = step(&state, &joint).map_err(crate::trainer::TrainError::from)?;
        ep.actor_in.push(x);
        ep.critic_in.push(c);
        ep.actions.push(joint[agent]);
        ep.env_reward.push(events.env_reward() as f64);
        history.push(StepRecord {
            agents: state.agents.clone(),
            actions: joint,
        });
        state = next;
    }
    let inf = ctx.infer(&layout, &history)?;
    ep.quality.push(trajectory_quality(&inf.probs, ctx.scores)?);
    ep.score = state.score;
    Ok(ep)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherConfig {
    pub ppo: PpoConfig,
    pub steering: SteeringConfig,
    /// Environment steps per teacher; each iteration plays `ppo.n_envs` full episodes.
    pub total_steps: u64,
    pub seed: u64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            ppo: PpoConfig::default(),
            steering: SteeringConfig::default(),
            total_steps: 50_000_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TeacherMetrics {
    pub agent: usize,
    pub iteration: usize,
    pub steps: u64,
    pub mean_score: f64,
    pub r_steer_mean: f64,
    pub r_steer_positive: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    /// Partner team of each episode in the iteration.
    pub partners: Vec<usize>,
}

/// PPO on `r_env + alpha * r_steer` for one agent index; predictor and pool stay frozen.
pub struct TeacherTrainer<'a> {
    ctx: SteeringContext<'a>,
    pub agent: usize,
    pub cfg: TeacherConfig,
    pub teacher: PolicyNet,
    critic: CriticNet,
    actor_opt: Adam,
    critic_opt: Adam,
    sampler: PartnerSampler,
    rng: ChaCha8Rng,
    steps: u64,
    iteration: usize,
}

impl<'a> TeacherTrainer<'a> {
    pub fn new(ctx: SteeringContext<'a>, agent: usize, cfg: TeacherConfig) -> Result<Self, SteeringError> {
        cfg.ppo.validate()?;
        cfg.steering.validate()?;
        if agent >= ctx.pool.n {
            return Err(SteeringError::MissingTeacher(agent));
        }
        let layout = ctx.layout()?;
        let base = mix_seed(cfg.seed, 0x7EAC_0000 + agent as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(base);
        let teacher = PolicyNet::new(ctx.actor_width()?, &mut rng);
        let critic = CriticNet::new(
            critic_input_width(&layout, ctx.pool.n)? + ctx.predictor.embedding_width(),
            &mut rng,
        );
        Ok(TeacherTrainer {
            actor_opt: Adam::new(&teacher.params, cfg.ppo.lr),
            critic_opt: Adam::new(&critic.params, cfg.ppo.lr),
            sampler: PartnerSampler::new(ctx.pool.len(), mix_seed(base, 1)),
            ctx,
            agent,
            cfg,
            teacher,
            critic,
            rng,
            steps: 0,
            iteration: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn is_finished(&self) -> bool {
        self.steps >= self.cfg.total_steps
    }

    pub fn iterate(&mut self) -> Result<TeacherMetrics, SteeringError> {
        let episodes: Vec<(usize, u64)> =
            (0..self.cfg.ppo.n_envs).map(|_| (self.sampler.sample(), self.rng.next_u64())).collect();
        let ctx = self.ctx;
        let teacher = &self.teacher;
        let agent = self.agent;
        let played = par::map_slice(&episodes, |&(m, seed)| steered_episode(&ctx, teacher, agent, m, seed));
        let played: Vec<SteeredEpisode> = played.into_iter().collect::<Result<_, _>>()?;

        let mut actor_rows = Vec::new();
        let mut critic_rows = Vec::new();
        let mut actions = Vec::new();
        let mut old_logp = Vec::new();
        let mut advantages = Vec::new();
        let mut returns = Vec::new();
        let mut steer = Vec::new();
        for ep in &played {
            let r_steer = steering_rewards(&ep.quality, self.cfg.steering.delta);
            let rewards: Vec<f64> =
                ep.env_reward.iter().zip(&r_steer).map(|(&e, &s)| total_reward(e, s, &self.cfg.steering)).collect();
            let mut values = self.critic.values(rows_to_matrix(&ep.critic_in));
            values.push(0.0);
            let mut dones = vec![false; rewards.len()];
            if let Some(d) = dones.last_mut() {
                *d = true;
            }
            let (adv, ret) = compute_gae(&rewards, &values, &dones, self.cfg.ppo.gamma, self.cfg.ppo.gae_lambda)?;
            actor_rows.extend(ep.actor_in.iter().cloned());
            critic_rows.extend(ep.critic_in.iter().cloned());
            actions.extend(ep.actions.iter().map(|a| a.index()));
            old_logp.extend(&ep.logp);
            advantages.extend(adv);
            returns.extend(ret);
            steer.extend(r_steer);
        }
        let batch = PolicyBatch {
            obs: rows_to_matrix(&actor_rows),
            actions,
            old_logp,
            advantages,
        };
        let stats = ppo_update(&mut self.teacher, &mut self.actor_opt, &batch, &self.cfg.ppo, &mut self.rng)?;
        let critic_x: Array2<f64> = rows_to_matrix(&critic_rows);
        let value_loss = value_update(&mut self.critic, &mut self.critic_opt, &critic_x, &returns, &self.cfg.ppo, &mut self.rng)?;
        let rows = steer.len() as u64;
        self.steps += rows;
        let metrics = TeacherMetrics {
            agent: self.agent,
            iteration: self.iteration,
            steps: self.steps,
            mean_score: played.iter().map(|e| e.score as f64).sum::<f64>() / played.len() as f64,
            r_steer_mean: steer.iter().sum::<f64>() / rows as f64,
            r_steer_positive: steer.iter().filter(|&&s| s > 0.0).count() as f64 / rows as f64,
            policy_loss: stats.policy_loss,
            value_loss,
            entropy: stats.entropy,
            approx_kl: stats.approx_kl,
            partners: episodes.iter().map(|e| e.0).collect(),
        };
        self.iteration += 1;
        Ok(metrics)
    }

    /// Iterate until `total_steps` is reached.
    pub fn train(mut self, on_iteration: &mut dyn FnMut(&TeacherMetrics)) -> Result<PolicyNet, SteeringError> {
        while !self.is_finished() {
            let m = self.iterate()?;
            on_iteration(&m);
        }
        Ok(self.teacher)
    }
}

/// Train the teacher for agent index `agent`.
pub fn train_teacher(
    ctx: SteeringContext,
    agent: usize,
    cfg: TeacherConfig,
    on_iteration: &mut dyn FnMut(&TeacherMetrics),
) -> Result<PolicyNet, SteeringError> {
    TeacherTrainer::new(ctx, agent, cfg)?.train(on_iteration)
}

pub fn save_teacher(path: &Path, teacher: &PolicyNet, agent: usize, ctx: &SteeringContext) -> Result<(), CheckpointError> {
    teacher.save(
        path,
        serde_json::json!({
            "kind": "teacher",
            "agent": agent,
            "layout": ctx.pool.layout,
            "n": ctx.pool.n,
            "embedding_width": ctx.predictor.embedding_width(),
        }),
    )
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::env::shipped_layout;
    use crate::predictor::EncoderConfig;
    use crate::trainer::{QualityScores, TeamPool};

    pub(crate) fn fixture(seed: u64) -> (TeamPool, TrajectoryPredictor) {
        let layout = shipped_layout("cramped-2").unwrap();
        let mut pool = TeamPool::new(&layout, 2, 3, seed).unwrap();
        pool.scores = Some(QualityScores {
            raw_mean: vec![0.0, 5.0, 10.0],
            normalized: vec![0.0, 0.5, 1.0],
            episodes: 1,
            seed: 0,
        });
        let enc = EncoderConfig {
            d_model: 8,
            heads: 2,
            layers: 1,
            feedforward: 16,
            dropout: 0.1,
        };
        let predictor = TrajectoryPredictor::new(enc, 2, 3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (pool, predictor)
    }

    pub(crate) fn tiny_cfg(alpha: f64) -> TeacherConfig {
        TeacherConfig {
            ppo: PpoConfig {
                n_envs: 1,
                batch_size: 200,
                epochs: 1,
                ..Default::default()
            },
            steering: SteeringConfig { alpha, delta: 10 },
            total_steps: 400,
            seed: 3,
        }
    }

    #[test]
    fn partner_sampling_is_uniform() {
        let mut s = PartnerSampler::new(5, 0);
        let mut hist = [0usize; 5];
        for _ in 0..10_000 {
            hist[s.sample()] += 1;
        }
        let sigma = (10_000.0f64 * 0.2 * 0.8).sqrt();
        assert!(hist.iter().all(|&h| (h as f64 - 2000.0).abs() < 3.0 * sigma), "{hist:?}");
    }

    #[test]
    fn unscored_pool_is_rejected() {
        let (mut pool, predictor) = fixture(0);
        pool.scores = None;
        assert!(matches!(SteeringContext::new(&pool, &predictor), Err(SteeringError::Unscored)));
    }

    #[test]
    fn training_keeps_frozen_networks_fixed() {
        let (pool, predictor) = fixture(1);
        let before = (pool.hashes(), predictor.params.hash_hex());
        let ctx = SteeringContext::new(&pool, &predictor).unwrap();
        let teacher = train_teacher(ctx, 1, tiny_cfg(0.5), &mut |_| {}).unwrap();
        assert_eq!((pool.hashes(), predictor.params.hash_hex()), before);
        assert_eq!(teacher.input_width(), ctx.actor_width().unwrap());
    }

    #[test]
    fn steering_weight_changes_the_update() {
        let (pool, predictor) = fixture(2);
        let ctx = SteeringContext::new(&pool, &predictor).unwrap();
        let mut steer = 0.0;
        let a = train_teacher(ctx, 0, tiny_cfg(0.5), &mut |m| steer = m.r_steer_mean).unwrap();
        let b = train_teacher(ctx, 0, tiny_cfg(0.0), &mut |_| {}).unwrap();
        assert!(steer > 0.0);
        assert_ne!(a.params.hash_hex(), b.params.hash_hex());
    }

    #[test]
    fn episodes_are_reproducible() {
        let (pool, predictor) = fixture(4);
        let ctx = SteeringContext::new(&pool, &predictor).unwrap();
        let ego = PolicyNet::new(ctx.actor_width().unwrap(), &mut ChaCha8Rng::seed_from_u64(0));
        let a = steered_episode(&ctx, &ego, 0, 2, 11).unwrap();
        assert_eq!(a, steered_episode(&ctx, &ego, 0, 2, 11).unwrap());
        assert_eq!(a.quality.len(), a.actions.len() + 1);
        // Cold start: uniform distribution over S = {0, 0.5, 1}.
        assert!((a.quality[0] - 0.5).abs() < 1e-12);
        assert!(a.quality.iter().all(|q| (0.0..=1.0).contains(q)));
    }
}
