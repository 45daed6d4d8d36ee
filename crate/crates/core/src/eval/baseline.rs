use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::shaping::{HandoffBonus, ShapingWeights};
use crate::trainer::{IterationMetrics, PoolConfig, PoolSchedule, PoolTrainer, Team};

use super::harness::append_row;
use super::{run_eval, Controller, EvalError, EvalRun, EvalSpec, ScoreRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardHackingConfig {
    /// Layout, team size, PPO settings and `schedule.chunk_steps` (the budget)
    /// are used; the pool, shaping and handoff fields are overridden.
    pub train: PoolConfig,
    pub bonus: HandoffBonus,
    pub eval_seeds: Vec<u64>,
    pub eval_episodes: usize,
}

impl Default for RewardHackingConfig {
    fn default() -> Self {
        RewardHackingConfig {
            train: PoolConfig::default(),
            bonus: HandoffBonus::default(),
            eval_seeds: (0..12).collect(),
            eval_episodes: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaselineReport {
    pub team: Team,
    pub row: ScoreRow,
    /// Handoffs rewarded over the whole training run.
    pub handoffs: u64,
}

/// Every slot of `team` playing its own actor.
pub fn team_self_play(
    team: &Team,
    layout: &str,
    method: &str,
    seeds: Vec<u64>,
    episodes_per_seed: usize,
    out: Option<&Path>,
) -> Result<EvalRun, EvalError> {
    let mut slots = team.actors.iter().enumerate().map(|(i, a)| Controller::Policy {
        label: format!("{method}/agent{i}"),
        net: Arc::new(a.clone()),
    });
    let ego = slots.next().ok_or_else(|| EvalError::Config("team without actors".into()))?;
    let spec = EvalSpec {
        layout: layout.into(),
        n: team.actors.len(),
        method: method.into(),
        ego,
        ego_slots: vec![0],
        partners: slots.collect(),
        seeds,
        episodes_per_seed,
    };
    run_eval(&spec, out)
}

/// Self-play PPO on the environment reward plus a dense bonus per counter
/// handoff, with no influence or diversity terms.
pub fn reward_hacking_baseline(
    cfg: &RewardHackingConfig,
    on_iteration: &mut dyn FnMut(&IterationMetrics),
    out: Option<&Path>,
) -> Result<BaselineReport, EvalError> {
    let mut train = cfg.train.clone();
    train.schedule = PoolSchedule {
        pool_size: 1,
        cycles: 1,
        ..train.schedule
    };
    train.shaping = ShapingWeights::off();
    train.handoff = Some(cfg.bonus);
    let mut handoffs = 0u64;
    let mut trainer = PoolTrainer::new(train.clone())?;
    trainer.run(
        &mut |m| {
            handoffs += m.handoffs as u64;
            on_iteration(m);
        },
        &mut |_, _| Ok(()),
    )?;
    let team = trainer.into_pool().teams.remove(0);
    let run = team_self_play(&team, &train.layout, "reward-hacking", cfg.eval_seeds.clone(), cfg.eval_episodes, out)?;
    let mut row = run.row;
    row.meta.insert("handoff_bonus".into(), cfg.bonus.bonus.into());
    row.meta.insert("handoff_window".into(), cfg.bonus.window.into());
    row.meta.insert("handoffs_rewarded".into(), handoffs.into());
    if let Some(out) = out {
        // The harness already wrote the bare row; follow it with the annotated one.
        let path = out.join(super::SCORES_FILE);
        std::fs::remove_file(&path).map_err(|e| EvalError::io(&path, e))?;
        append_row(out, &row)?;
    }
    Ok(BaselineReport { team, row, handoffs })
}
