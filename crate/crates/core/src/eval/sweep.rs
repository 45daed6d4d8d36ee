use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::trainer::{mix_seed, IterationMetrics, PoolConfig, PoolSchedule, PoolTrainer};

use super::{team_self_play, EvalError, ScoreCell, ScoreRow, ScoreTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KSweepConfig {
    pub ks: Vec<usize>,
    /// Training seeds, shared by every K.
    pub seeds: Vec<u64>,
    /// Base influence-shaped run; `shaping.k` and `seed` are overridden.
    pub train: PoolConfig,
    pub eval_episodes: usize,
}

impl Default for KSweepConfig {
    fn default() -> Self {
        KSweepConfig {
            ks: vec![1, 4, 7],
            seeds: vec![0, 1, 2],
            train: PoolConfig::default(),
            eval_episodes: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KSweepReport {
    pub table: ScoreTable,
    /// `(k, seed)` to the final mean return of that run.
    pub returns: BTreeMap<(usize, u64), f64>,
}

/// One single-team influence-shaped run per (K, seed); each run's final return
/// is its mean self-play score over evaluation seeds derived from the
/// training seed, so every K sees the same rollout and evaluation streams.
pub fn k_sensitivity_sweep(
    cfg: &KSweepConfig,
    on_iteration: &mut dyn FnMut(usize, &IterationMetrics),
) -> Result<KSweepReport, EvalError> {
    if cfg.ks.is_empty() {
        return Err(EvalError::EmptySweep);
    }
    if cfg.seeds.is_empty() || cfg.eval_episodes == 0 {
        return Err(EvalError::Config("need at least one seed and one evaluation episode".into()));
    }
    let mut table = ScoreTable::default();
    let mut returns = BTreeMap::new();
    for &k in &cfg.ks {
        let mut finals = Vec::with_capacity(cfg.seeds.len());
        for &seed in &cfg.seeds {
            let mut train = cfg.train.clone();
            train.seed = seed;
            train.shaping.k = k;
            train.schedule = PoolSchedule {
                pool_size: 1,
                cycles: 1,
                ..train.schedule
            };
            let mut trainer = PoolTrainer::new(train.clone())?;
            trainer.run(&mut |m| on_iteration(k, m), &mut |_, _| Ok(()))?;
            let team = trainer.into_pool().teams.remove(0);
            let run = team_self_play(&team, &train.layout, &format!("K={k}"), vec![mix_seed(seed, 0x5EE9)], cfg.eval_episodes, None)?;
            returns.insert((k, seed), run.row.cell.mean);
            finals.push(run.row.cell.mean);
        }
        let mut meta = BTreeMap::new();
        meta.insert("k".into(), k.into());
        table.push(ScoreRow {
            layout: cfg.train.layout.clone(),
            n: cfg.train.n,
            method: format!("K={k}"),
            cell: ScoreCell::from_values(&finals).expect("seeds checked above"),
            per_seed: finals,
            normalized: None,
            meta,
        });
    }
    Ok(KSweepReport { table, returns })
}
