use super::TrainError;

/// Generalized advantage estimates for one environment's trajectory.
///
/// `values` holds one entry per step plus the bootstrap value after the last
/// step. `dones[t]` marks an episode ending with step `t`; no value or
/// advantage flows across it. Returns `(advantages, returns)` with
/// `returns = advantages + values`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    let len = rewards.len();
    if values.len() != len + 1 {
        return Err(TrainError::MissingBootstrap {
            steps: len,
            values: values.len(),
        });
    }
    if dones.len() != len {
        return Err(TrainError::Config(format!("{} done flags for {len} steps", dones.len())));
    }
    let mut adv = vec![0.0; len];
    let mut next = 0.0;
    for t in (0..len).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        next = delta + gamma * lambda * live * next;
        adv[t] = next;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}
