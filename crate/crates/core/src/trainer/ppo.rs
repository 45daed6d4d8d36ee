use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::nn::{log_softmax_rows, Adam, Tape};

use super::{CriticNet, PolicyNet, PpoConfig, TrainError};

/// On-policy samples for one actor.
#[derive(Debug, Clone)]
pub struct PolicyBatch {
    pub obs: Array2<f64>,
    pub actions: Vec<usize>,
    pub old_logp: Vec<f64>,
    pub advantages: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub entropy: f64,
    /// Approximate KL after the last epoch that ran.
    pub approx_kl: f64,
    pub epochs_run: usize,
    pub clip_fraction: f64,
}

/// Standardize to mean 0 and unit variance; a constant vector becomes zeros.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    let n = adv.len().max(1) as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// Mean of `old_logp - new_logp` over the batch.
pub fn approx_kl(policy: &PolicyNet, batch: &PolicyBatch) -> f64 {
    let logp = log_softmax_rows(&policy.logits(batch.obs.clone()));
    batch
        .actions
        .iter()
        .enumerate()
        .map(|(r, &a)| batch.old_logp[r] - logp[[r, a]])
        .sum::<f64>()
        / batch.actions.len().max(1) as f64
}

/// Clipped-surrogate update with entropy bonus. Advantages are standardized
/// over the whole batch; epochs stop early once the approximate KL exceeds
/// the target.
pub fn ppo_update(
    policy: &mut PolicyNet,
    opt: &mut Adam,
    batch: &PolicyBatch,
    cfg: &PpoConfig,
    rng: &mut impl Rng,
) -> Result<UpdateStats, TrainError> {
    let rows = batch.actions.len();
    if rows == 0 {
        return Err(TrainError::EmptyBatch);
    }
    let adv = normalize_advantages(&batch.advantages);
    let mut order: Vec<usize> = (0..rows).collect();
    let mut stats = UpdateStats::default();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let (mut loss_sum, mut ent_sum, mut clipped) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let obs = batch.obs.select(Axis(0), chunk);
            let acts: Vec<usize> = chunk.iter().map(|&r| batch.actions[r]).collect();
            let old: Vec<f64> = chunk.iter().map(|&r| batch.old_logp[r]).collect();
            let a: Vec<f64> = chunk.iter().map(|&r| adv[r]).collect();
            let mut grads = {
                let mut t = Tape::new(&policy.params);
                let x = t.constant(obs);
                let logits = policy.forward(&mut t, x);
                let logp = t.log_softmax(logits);
                let picked = t.pick(logp, &acts);
                let surrogate = t.ppo_clip(picked, &old, &a, cfg.clip);
                let ent = t.entropy_rows(logp);
                let ent = t.mean(ent);
                let bonus = t.scale(ent, -cfg.entropy_coef);
                let loss = t.add(surrogate, bonus);
                let value = t.scalar(loss);
                if !value.is_finite() {
                    return Err(TrainError::NonFinite("policy loss"));
                }
                let w = chunk.len() as f64;
                loss_sum += t.scalar(surrogate) * w;
                ent_sum += t.scalar(ent) * w;
                clipped += t
                    .value(picked)
                    .iter()
                    .zip(&old)
                    .filter(|(l, o)| ((*l - *o).exp() - 1.0).abs() > cfg.clip)
                    .count();
                t.backward(loss)
            };
            if !grads.all_finite() {
                return Err(TrainError::NonFinite("policy gradient"));
            }
            grads.clip_global_norm(cfg.max_grad_norm);
            opt.step(&mut policy.params, &grads);
        }
        stats.epochs_run += 1;
        stats.policy_loss = loss_sum / rows as f64;
        stats.entropy = ent_sum / rows as f64;
        stats.clip_fraction = clipped as f64 / rows as f64;
        stats.approx_kl = approx_kl(policy, batch);
        if stats.approx_kl > cfg.target_kl {
            break;
        }
    }
    Ok(stats)
}

/// Squared-error regression of the critic onto `returns`; returns the mean loss of the last epoch.
pub fn value_update(
    critic: &mut CriticNet,
    opt: &mut Adam,
    inputs: &Array2<f64>,
    returns: &[f64],
    cfg: &PpoConfig,
    rng: &mut impl Rng,
) -> Result<f64, TrainError> {
    let rows = returns.len();
    if rows == 0 {
        return Err(TrainError::EmptyBatch);
    }
    let mut order: Vec<usize> = (0..rows).collect();
    let mut last = 0.0;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = inputs.select(Axis(0), chunk);
            let y: Vec<f64> = chunk.iter().map(|&r| returns[r]).collect();
            let (loss, mut grads) = {
                let mut t = Tape::new(&critic.params);
                let xv = t.constant(x);
                let v = critic.forward(&mut t, xv);
                let l = t.mse(v, &y);
                (t.scalar(l), t.backward(l))
            };
            if !loss.is_finite() || !grads.all_finite() {
                return Err(TrainError::NonFinite("value loss"));
            }
            grads.clip_global_norm(cfg.max_grad_norm);
            opt.step(&mut critic.params, &grads);
            sum += loss * chunk.len() as f64;
        }
        last = sum / rows as f64;
    }
    Ok(last)
}
