use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{observation_width, shipped_layout, Layout};
use crate::nn::{read_checkpoint, write_checkpoint, Adam, ParamSet};
use crate::par;
use crate::shaping::{
    combined_reward, diversity_reward, event_labels, population_mean_policy, HandoffBonus, HandoffTracker,
    InfluenceBatch, InfluencePredictors, PredictorTraining, RewardBreakdown, ShapingWeights,
};

use super::rollout::{
    collect_rollout, critic_input_width, joint_observation_width, mix_seed, play_episode, sample_team_actions,
    RolloutBuffer, VecEnv,
};
use super::{compute_gae, ppo_update, value_update, CriticNet, PolicyBatch, PolicyNet, PoolSchedule, PpoConfig, TrainError};

/// One self-play team: an actor per agent index and its training critic.
#[derive(Debug, Clone)]
pub struct Team {
    pub actors: Vec<PolicyNet>,
    pub critic: CriticNet,
}

impl Team {
    pub fn new(layout: &Arc<Layout>, n: usize, rng: &mut ChaCha8Rng) -> Result<Self, TrainError> {
        let obs_w = observation_width(layout, n);
        Ok(Team {
            actors: (0..n).map(|_| PolicyNet::new(obs_w, rng)).collect(),
            critic: CriticNet::new(critic_input_width(layout, n)?, rng),
        })
    }

    pub fn bundle(&self) -> ParamSet {
        let mut out = ParamSet::new();
        for (i, a) in self.actors.iter().enumerate() {
            out.extend_prefixed(&format!("agent{i}"), &a.params);
        }
        out.extend_prefixed("critic", &self.critic.params);
        out
    }

    pub fn load_bundle(&mut self, bundle: &ParamSet) {
        for (i, a) in self.actors.iter_mut().enumerate() {
            a.params.copy_from(&bundle.extract_prefixed(&format!("agent{i}")));
        }
        self.critic.params.copy_from(&bundle.extract_prefixed("critic"));
    }

    pub fn hash_hex(&self) -> String {
        self.bundle().hash_hex()
    }

    pub fn actor_refs(&self) -> Vec<&PolicyNet> {
        self.actors.iter().collect()
    }
}

/// `M` frozen teams with optional quality scores.
#[derive(Debug, Clone)]
pub struct TeamPool {
    pub layout: String,
    pub n: usize,
    pub teams: Vec<Team>,
    pub scores: Option<QualityScores>,
    pub steps_trained: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityScores {
    pub raw_mean: Vec<f64>,
    pub normalized: Vec<f64>,
    pub episodes: usize,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct PoolManifest {
    layout: String,
    n: usize,
    pool_size: usize,
    steps_trained: Vec<u64>,
    team_files: Vec<String>,
    team_hashes: Vec<String>,
    scores: Option<QualityScores>,
}

pub const POOL_MANIFEST: &str = "pool.json";

impl TeamPool {
    pub fn new(layout: &Arc<Layout>, n: usize, size: usize, seed: u64) -> Result<Self, TrainError> {
        let teams = (0..size)
            .map(|m| Team::new(layout, n, &mut ChaCha8Rng::seed_from_u64(mix_seed(seed, 1000 + m as u64))))
            .collect::<Result<_, _>>()?;
        Ok(TeamPool {
            layout: layout.name.clone(),
            n,
            teams,
            scores: None,
            steps_trained: vec![0; size],
        })
    }

    pub fn len(&self) -> usize {
        self.teams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.teams.is_empty()
    }

    pub fn layout(&self) -> Result<Arc<Layout>, TrainError> {
        shipped_layout(&self.layout).ok_or_else(|| TrainError::UnknownLayout(self.layout.clone()))
    }

    /// Normalized quality scores, or an error if the pool was never scored.
    pub fn quality(&self) -> Result<&[f64], TrainError> {
        self.scores.as_ref().map(|s| s.normalized.as_slice()).ok_or(TrainError::Unscored)
    }

    /// Population-mean action distribution of agent index `agent`.
    pub fn mean_policy(&self, agent: usize, obs: &Array2<f64>) -> Result<Array2<f64>, TrainError> {
        let members: Vec<&PolicyNet> = self.teams.iter().map(|t| &t.actors[agent]).collect();
        Ok(population_mean_policy(&members, obs)?)
    }

    pub fn hashes(&self) -> Vec<String> {
        self.teams.iter().map(Team::hash_hex).collect()
    }

    /// Write one checkpoint per team plus `pool.json`.
    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        std::fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
        let mut files = Vec::new();
        for (m, team) in self.teams.iter().enumerate() {
            let name = format!("team{m}.ckpt");
            let meta = serde_json::json!({"kind": "team", "team": m, "layout": self.layout, "n": self.n});
            write_checkpoint(&dir.join(&name), &team.bundle(), &meta)?;
            files.push(name);
        }
        let manifest = PoolManifest {
            layout: self.layout.clone(),
            n: self.n,
            pool_size: self.len(),
            steps_trained: self.steps_trained.clone(),
            team_files: files,
            team_hashes: self.hashes(),
            scores: self.scores.clone(),
        };
        write_json(&dir.join(POOL_MANIFEST), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self, TrainError> {
        let path = dir.join(POOL_MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| TrainError::io(&path, e))?;
        let manifest: PoolManifest =
            serde_json::from_str(&text).map_err(|e| TrainError::Manifest(format!("{}: {e}", path.display())))?;
        let layout = shipped_layout(&manifest.layout).ok_or_else(|| TrainError::UnknownLayout(manifest.layout.clone()))?;
        let mut pool = TeamPool::new(&layout, manifest.n, manifest.pool_size, 0)?;
        for (team, file) in pool.teams.iter_mut().zip(&manifest.team_files) {
            let ck = read_checkpoint(&dir.join(file))?;
            team.load_bundle(&ck.params);
        }
        pool.steps_trained = manifest.steps_trained;
        pool.scores = manifest.scores;
        Ok(pool)
    }
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<(), TrainError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| TrainError::io(path, e))
}

/// Everything that determines a team-pool run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolConfig {
    pub layout: String,
    pub n: usize,
    pub seed: u64,
    pub ppo: PpoConfig,
    pub shaping: ShapingWeights,
    pub schedule: PoolSchedule,
    pub predictor: PredictorTraining,
    /// Reward-hacking baseline: dense bonus per counter handoff.
    pub handoff: Option<HandoffBonus>,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            layout: "pl-3".into(),
            n: 3,
            seed: 0,
            ppo: PpoConfig::default(),
            shaping: ShapingWeights::default(),
            schedule: PoolSchedule::default(),
            predictor: PredictorTraining::default(),
            handoff: None,
        }
    }
}

/// One record per PPO iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationMetrics {
    pub team: usize,
    pub cycle: usize,
    pub chunk: usize,
    pub iteration: usize,
    /// Joint transitions trained on by this team so far.
    pub steps: u64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub epochs_run: usize,
    /// Mean final score of episodes that ended during collection.
    pub mean_return: Option<f64>,
    pub r_env_mean: f64,
    pub r_inf_mean: f64,
    pub r_div_mean: f64,
    pub diversity_active: bool,
    pub influence_loss: Option<f64>,
    /// Handoffs rewarded in this iteration (reward-hacking baseline only).
    pub handoffs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChunkReport {
    pub chunk: usize,
    pub cycle: usize,
    pub team: usize,
    pub iterations: usize,
    pub steps: u64,
    pub team_hashes: Vec<String>,
}

/// Round-robin trainer for a pool of self-play teams with shaped rewards.
pub struct PoolTrainer {
    pub cfg: PoolConfig,
    layout: Arc<Layout>,
    pool: TeamPool,
    actor_opts: Vec<Vec<Adam>>,
    critic_opts: Vec<Adam>,
    predictors: Vec<InfluencePredictors>,
    next_chunk: usize,
}

impl PoolTrainer {
    pub fn new(cfg: PoolConfig) -> Result<Self, TrainError> {
        cfg.ppo.validate()?;
        cfg.schedule.validate()?;
        cfg.shaping.validate()?;
        let layout = shipped_layout(&cfg.layout).ok_or_else(|| TrainError::UnknownLayout(cfg.layout.clone()))?;
        let pool = TeamPool::new(&layout, cfg.n, cfg.schedule.pool_size, cfg.seed)?;
        Self::resume(cfg, pool, 0)
    }

    /// Continue from an existing pool at chunk `next_chunk` (optimizer state starts fresh).
    pub fn resume(cfg: PoolConfig, pool: TeamPool, next_chunk: usize) -> Result<Self, TrainError> {
        let layout = pool.layout()?;
        let joint_w = joint_observation_width(&layout, cfg.n);
        let lr = cfg.ppo.lr;
        let actor_opts = pool
            .teams
            .iter()
            .map(|t| t.actors.iter().map(|a| Adam::new(&a.params, lr)).collect())
            .collect();
        let critic_opts = pool.teams.iter().map(|t| Adam::new(&t.critic.params, lr)).collect();
        let predictors = (0..pool.len())
            .map(|m| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 2000 + m as u64));
                InfluencePredictors::new(cfg.n, joint_w, cfg.predictor, &mut rng)
            })
            .collect::<Result<_, _>>()?;
        Ok(PoolTrainer {
            cfg,
            layout,
            pool,
            actor_opts,
            critic_opts,
            predictors,
            next_chunk,
        })
    }

    pub fn pool(&self) -> &TeamPool {
        &self.pool
    }

    pub fn into_pool(self) -> TeamPool {
        self.pool
    }

    pub fn predictors(&self, team: usize) -> &InfluencePredictors {
        &self.predictors[team]
    }

    pub fn next_chunk(&self) -> usize {
        self.next_chunk
    }

    pub fn is_finished(&self) -> bool {
        self.next_chunk >= self.cfg.schedule.chunks().len()
    }

    /// Train the next scheduled chunk.
    pub fn train_chunk(&mut self, on_iteration: &mut dyn FnMut(&IterationMetrics)) -> Result<ChunkReport, TrainError> {
        let chunks = self.cfg.schedule.chunks();
        let chunk = self.next_chunk;
        let &(cycle, team) = chunks.get(chunk).ok_or(TrainError::ScheduleDone)?;
        let mut shaping = self.cfg.shaping;
        shaping.diversity_active = cycle >= 1;
        let per_iter = self.cfg.ppo.steps_per_iteration();
        let iterations = self.cfg.schedule.chunk_steps.div_ceil(per_iter) as usize;
        let chunk_seed = mix_seed(self.cfg.seed, chunk as u64);
        let mut envs = VecEnv::new(&self.layout, self.cfg.n, self.cfg.ppo.n_envs, chunk_seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(chunk_seed, 77));
        for iteration in 0..iterations {
            let metrics = self.iterate(team, &mut envs, &shaping, &mut rng)?;
            self.pool.steps_trained[team] += per_iter;
            on_iteration(&IterationMetrics {
                team,
                cycle,
                chunk,
                iteration,
                steps: self.pool.steps_trained[team],
                ..metrics
            });
        }
        self.next_chunk += 1;
        Ok(ChunkReport {
            chunk,
            cycle,
            team,
            iterations,
            steps: iterations as u64 * per_iter,
            team_hashes: self.pool.hashes(),
        })
    }

    fn iterate(
        &mut self,
        m: usize,
        envs: &mut VecEnv,
        shaping: &ShapingWeights,
        rng: &mut ChaCha8Rng,
    ) -> Result<IterationMetrics, TrainError> {
        let cfg = self.cfg.ppo;
        let influence_on = shaping.lambda_inf > 0.0;
        let mut buf = {
            let team = &self.pool.teams[m];
            collect_rollout(envs, &team.actors, &team.critic, cfg.n_steps, influence_on)?
        };
        let labels = if influence_on { Some(buffer_labels(&buf, shaping.k)?) } else { None };
        let handoffs = match self.cfg.handoff {
            Some(h) => add_handoff_bonus(&mut buf, &h),
            None => 0,
        };
        shape_rewards(&mut buf, &self.pool, &self.predictors[m], shaping)?;
        let (adv, returns) = buffer_gae(&buf, &cfg)?;

        let n = buf.n_agents;
        let mut stats = Vec::with_capacity(n);
        for i in 0..n {
            let batch = PolicyBatch {
                obs: buf.obs[i].clone(),
                actions: buf.actions.iter().map(|a| a[i].index()).collect(),
                old_logp: buf.logp.iter().map(|l| l[i]).collect(),
                advantages: adv.clone(),
            };
            let team = &mut self.pool.teams[m];
            stats.push(ppo_update(&mut team.actors[i], &mut self.actor_opts[m][i], &batch, &cfg, rng)?);
        }
        let team = &mut self.pool.teams[m];
        let value_loss = value_update(&mut team.critic, &mut self.critic_opts[m], &buf.critic_in, &returns, &cfg, rng)?;

        let influence_loss = match labels {
            Some(labels) => {
                let batch = InfluenceBatch {
                    joint_obs: buf.joint_obs.clone(),
                    actions: buf.actions.clone(),
                    labels,
                };
                let l = self.predictors[m].update(&batch, rng)?;
                let all: Vec<f64> = l.q.iter().chain(&l.omega).copied().collect();
                Some(all.iter().sum::<f64>() / all.len() as f64)
            }
            None => None,
        };
        if !self.pool.teams[m].bundle().all_finite() {
            return Err(TrainError::NonFinite("team parameters"));
        }
        let rows = buf.rows() as f64;
        let mean_of = |f: fn(&RewardBreakdown) -> f64| {
            buf.breakdown.iter().flatten().map(f).sum::<f64>() / (rows * n as f64)
        };
        let avg = |f: fn(&super::UpdateStats) -> f64| stats.iter().map(f).sum::<f64>() / n as f64;
        Ok(IterationMetrics {
            team: m,
            cycle: 0,
            chunk: 0,
            iteration: 0,
            steps: 0,
            policy_loss: avg(|s| s.policy_loss),
            value_loss,
            entropy: avg(|s| s.entropy),
            approx_kl: avg(|s| s.approx_kl),
            epochs_run: stats.iter().map(|s| s.epochs_run).min().unwrap_or(0),
            mean_return: (!buf.completed_returns.is_empty())
                .then(|| buf.completed_returns.iter().sum::<f64>() / buf.completed_returns.len() as f64),
            r_env_mean: buf.env_reward.iter().sum::<f64>() / rows,
            r_inf_mean: mean_of(|b| b.r_inf),
            r_div_mean: mean_of(|b| b.r_div),
            diversity_active: shaping.diversity_active,
            influence_loss,
            handoffs,
        })
    }

    /// Run every remaining chunk. After each chunk `on_chunk` sees the report and the pool.
    pub fn run(
        &mut self,
        on_iteration: &mut dyn FnMut(&IterationMetrics),
        on_chunk: &mut dyn FnMut(&ChunkReport, &TeamPool) -> Result<(), TrainError>,
    ) -> Result<(), TrainError> {
        while !self.is_finished() {
            let report = self.train_chunk(on_iteration)?;
            on_chunk(&report, &self.pool)?;
        }
        Ok(())
    }
}

/// Follow-up labels for every row, computed per env and never across an episode end.
pub fn buffer_labels(buf: &RolloutBuffer, k: usize) -> Result<Vec<Vec<bool>>, TrainError> {
    let mut out = vec![Vec::new(); buf.rows()];
    for e in 0..buf.n_envs {
        let mut start = 0;
        for t in 0..buf.n_steps {
            let r = buf.row(e, t);
            if buf.dones[r] || t + 1 == buf.n_steps {
                let (a, b) = (buf.row(e, start), r + 1);
                let labels = event_labels(&buf.actions[a..b], &buf.salient[a..b], k)?;
                for (offset, l) in labels.into_iter().enumerate() {
                    out[a + offset] = l;
                }
                start = t + 1;
            }
        }
    }
    Ok(out)
}

/// Add the handoff bonus to the environment reward of the step that completes
/// each handoff. Detection restarts at every episode end and every buffer start.
pub fn add_handoff_bonus(buf: &mut RolloutBuffer, h: &HandoffBonus) -> usize {
    let mut count = 0;
    for e in 0..buf.n_envs {
        let mut tracker = HandoffTracker::new(h.window);
        for t in 0..buf.n_steps {
            let r = buf.row(e, t);
            let done = tracker.observe(&buf.events[r]).len();
            buf.env_reward[r] += h.bonus * done as f64;
            count += done;
            if buf.dones[r] {
                tracker.reset();
            }
        }
    }
    count
}

/// Fill per-agent breakdowns and the team reward of a Stage-1 buffer.
pub fn shape_rewards(
    buf: &mut RolloutBuffer,
    pool: &TeamPool,
    predictors: &InfluencePredictors,
    shaping: &ShapingWeights,
) -> Result<(), TrainError> {
    let rows = buf.rows();
    let n = buf.n_agents;
    let r_inf = if shaping.lambda_inf > 0.0 {
        predictors.influence_rewards(&buf.joint_obs, &buf.actions)?
    } else {
        vec![vec![0.0; n]; rows]
    };
    let mut r_div = vec![vec![0.0; n]; rows];
    if shaping.diversity_active && shaping.lambda_div > 0.0 {
        for i in 0..n {
            let mean = pool.mean_policy(i, &buf.obs[i])?;
            for r in 0..rows {
                r_div[r][i] = diversity_reward(mean[[r, buf.actions[r][i].index()]], shaping.epsilon);
            }
        }
    }
    let breakdown = (0..rows)
        .map(|r| (0..n).map(|i| combined_reward(buf.env_reward[r], r_inf[r][i], r_div[r][i], shaping)).collect())
        .collect();
    buf.set_breakdowns(breakdown);
    Ok(())
}

/// GAE over every env of a buffer using its team rewards.
pub fn buffer_gae(buf: &RolloutBuffer, cfg: &PpoConfig) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    let mut adv = vec![0.0; buf.rows()];
    let mut ret = vec![0.0; buf.rows()];
    for e in 0..buf.n_envs {
        let (a, b) = (buf.row(e, 0), buf.row(e, 0) + buf.n_steps);
        let mut values = buf.values[a..b].to_vec();
        values.push(buf.bootstrap[e]);
        let (ad, re) = compute_gae(&buf.team_reward[a..b], &values, &buf.dones[a..b], cfg.gamma, cfg.gae_lambda)?;
        adv[a..b].copy_from_slice(&ad);
        ret[a..b].copy_from_slice(&re);
    }
    Ok((adv, ret))
}

/// Mean self-play episode score per team on shared seeds, min-max normalized.
pub fn score_team_pool(pool: &TeamPool, episodes: usize, seed: u64) -> Result<QualityScores, TrainError> {
    if episodes == 0 {
        return Err(TrainError::Config("zero evaluation episodes".into()));
    }
    if pool.is_empty() {
        return Err(TrainError::Config("empty pool".into()));
    }
    let layout = pool.layout()?;
    let raw_mean = pool
        .teams
        .iter()
        .map(|team| {
            let actors = team.actor_refs();
            let scores = par::map_range(episodes, |ep| {
                play_episode(&layout, pool.n, mix_seed(seed, ep as u64), |s, rng| sample_team_actions(&actors, s, rng))
                    .map(|r| r.score as f64)
            });
            let scores: Vec<f64> = scores.into_iter().collect::<Result<_, _>>()?;
            Ok(scores.iter().sum::<f64>() / episodes as f64)
        })
        .collect::<Result<Vec<f64>, TrainError>>()?;
    Ok(QualityScores {
        normalized: normalize_scores(&raw_mean),
        raw_mean,
        episodes,
        seed,
    })
}

/// Min-max normalization to `[0, 1]`; an all-equal input maps to all ones.
pub fn normalize_scores(raw: &[f64]) -> Vec<f64> {
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return vec![1.0; raw.len()];
    }
    raw.iter().map(|r| (r - lo) / (hi - lo)).collect()
}

/// SHA-256 of a config serialized to JSON; used in run manifests.
pub fn config_hash(value: &impl Serialize) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(value).expect("serializable")))
}

/// Directory holding the chunk checkpoints of one run.
pub fn chunk_dir(out: &Path, chunk: usize) -> PathBuf {
    out.join("chunks").join(format!("chunk{chunk:03}"))
}

/// Save the active team of a finished chunk as `team{m}.ckpt` under [`chunk_dir`].
pub fn save_chunk(out: &Path, report: &ChunkReport, pool: &TeamPool) -> Result<PathBuf, TrainError> {
    let path = chunk_dir(out, report.chunk).join(format!("team{}.ckpt", report.team));
    let meta = serde_json::json!({
        "kind": "team",
        "team": report.team,
        "chunk": report.chunk,
        "cycle": report.cycle,
        "layout": pool.layout,
        "n": pool.n,
        "steps_trained": pool.steps_trained[report.team],
    });
    write_checkpoint(&path, &pool.teams[report.team].bundle(), &meta)?;
    Ok(path)
}
