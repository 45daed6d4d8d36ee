use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub n_envs: usize,
    pub n_steps: usize,
    pub max_grad_norm: f64,
    pub target_kl: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.15,
            entropy_coef: 0.05,
            lr: 1e-4,
            epochs: 6,
            batch_size: 1024,
            n_envs: 64,
            n_steps: 1024,
            max_grad_norm: 0.5,
            target_kl: 0.025,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0 && self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return bad("gamma and gae_lambda must lie in (0, 1]");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must lie in (0, 1)");
        }
        if !(self.entropy_coef > 0.0 && self.lr > 0.0 && self.max_grad_norm > 0.0 && self.target_kl > 0.0) {
            return bad("entropy_coef, lr, max_grad_norm and target_kl must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.n_envs == 0 || self.n_steps == 0 {
            return bad("epochs, batch_size, n_envs and n_steps must be positive");
        }
        Ok(())
    }

    /// Joint transitions gathered per iteration.
    pub fn steps_per_iteration(&self) -> u64 {
        (self.n_envs * self.n_steps) as u64
    }
}

/// Round-robin population schedule: `cycles` passes over `pool_size` teams,
/// each visit training the active team for `chunk_steps` joint transitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolSchedule {
    pub pool_size: usize,
    pub chunk_steps: u64,
    pub cycles: usize,
}

impl Default for PoolSchedule {
    fn default() -> Self {
        PoolSchedule {
            pool_size: 5,
            chunk_steps: 50_000,
            cycles: 6,
        }
    }
}

impl PoolSchedule {
    /// 30M steps per team in 5M chunks.
    pub fn full_scale() -> Self {
        PoolSchedule {
            pool_size: 5,
            chunk_steps: 5_000_000,
            cycles: 6,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        // A single-team pool is plain self-play, used by the baselines.
        if self.pool_size == 0 {
            return Err(TrainError::Config("pool_size must be positive".into()));
        }
        if self.chunk_steps == 0 || self.cycles == 0 {
            return Err(TrainError::Config("chunk_steps and cycles must be positive".into()));
        }
        Ok(())
    }

    /// `(cycle, team)` for every chunk, in execution order.
    pub fn chunks(&self) -> Vec<(usize, usize)> {
        (0..self.cycles)
            .flat_map(|c| (0..self.pool_size).map(move |m| (c, m)))
            .collect()
    }

    pub fn steps_per_team(&self) -> u64 {
        self.chunk_steps * self.cycles as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_visits_thirty_chunks_in_order() {
        let s = PoolSchedule::full_scale();
        let chunks = s.chunks();
        assert_eq!(chunks.len(), 30);
        assert_eq!(s.steps_per_team(), 30_000_000);
        let teams: Vec<usize> = chunks.iter().map(|c| c.1).collect();
        assert_eq!(&teams[..7], &[0, 1, 2, 3, 4, 0, 1]);
    }

    #[test]
    fn defaults_validate() {
        let c = PpoConfig::default();
        c.validate().unwrap();
        assert_eq!(c.steps_per_iteration(), 65_536);
        assert!(PpoConfig { clip: 1.0, ..c }.validate().is_err());
        assert!(PoolSchedule { pool_size: 0, ..Default::default() }.validate().is_err());
    }
}
