use serde::{Deserialize, Serialize};

use super::SteeringError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SteeringConfig {
    /// Weight of the steering bonus.
    pub alpha: f64,
    /// Lookahead in steps.
    pub delta: usize,
}

impl Default for SteeringConfig {
    fn default() -> Self {
        SteeringConfig { alpha: 0.5, delta: 10 }
    }
}

impl SteeringConfig {
    pub fn validate(&self) -> Result<(), SteeringError> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(SteeringError::Config("alpha must be finite and non-negative".into()));
        }
        if self.delta == 0 {
            return Err(SteeringError::Config("delta must be at least 1".into()));
        }
        Ok(())
    }
}

/// Quality-weighted trajectory score `sum_m p(m) S(m)`.
pub fn trajectory_quality(probs: &[f64], scores: &[f64]) -> Result<f64, SteeringError> {
    if probs.len() != scores.len() {
        return Err(SteeringError::LengthMismatch {
            probs: probs.len(),
            scores: scores.len(),
        });
    }
    Ok(probs.iter().zip(scores).map(|(p, s)| p * s).sum())
}

/// Non-negative quality gain; zero when the future window does not exist.
pub fn steering_reward(q_now: f64, q_future: f64, valid: bool) -> f64 {
    if valid {
        (q_future - q_now).max(0.0)
    } else {
        0.0
    }
}

pub fn total_reward(r_env: f64, r_steer: f64, cfg: &SteeringConfig) -> f64 {
    r_env + cfg.alpha * r_steer
}

/// Per-step steering rewards of one episode. `quality[t]` is the score of the
/// history before step `t`, so an episode of `T` steps has `T + 1` entries;
/// step `t` is rewarded only when `t + delta <= T`.
pub fn steering_rewards(quality: &[f64], delta: usize) -> Vec<f64> {
    let steps = quality.len().saturating_sub(1);
    (0..steps)
        .map(|t| {
            let future = quality.get(t + delta).copied();
            steering_reward(quality[t], future.unwrap_or(0.0), future.is_some())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        let mut one_hot = vec![0.0; 5];
        one_hot[3] = 1.0;
        let s = [0.0, 0.5, 1.0, 0.8, 0.8];
        assert_eq!(trajectory_quality(&one_hot, &s).unwrap(), 0.8);
        let q = trajectory_quality(&[0.2; 5], &[0.0, 0.5, 1.0, 0.2, 0.8]).unwrap();
        assert!((q - 0.5).abs() < 1e-15);
        assert!((steering_reward(0.2, 0.5, true) - 0.3).abs() < 1e-15);
        assert_eq!(steering_reward(0.6, 0.4, true), 0.0);
        assert_eq!(steering_reward(0.2, 0.9, false), 0.0);
        let cfg = SteeringConfig::default();
        assert!((total_reward(20.0, 0.3, &cfg) - 20.15).abs() < 1e-12);
        let off = SteeringConfig { alpha: 0.0, ..cfg };
        assert_eq!(total_reward(7.0, 0.9, &off), 7.0);
        assert!(matches!(
            trajectory_quality(&[0.5, 0.5], &[1.0]),
            Err(SteeringError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn lookahead_stops_at_the_episode_end() {
        let q = [0.0, 0.1, 0.2, 0.3, 0.4];
        assert_eq!(steering_rewards(&q, 2).len(), 4);
        let r = steering_rewards(&q, 2);
        assert!((r[0] - 0.2).abs() < 1e-15 && (r[2] - 0.2).abs() < 1e-15);
        assert_eq!(r[3], 0.0);
        assert!(steering_rewards(&[0.5, 0.1, 0.0], 1).iter().all(|&x| x == 0.0));
    }
}
