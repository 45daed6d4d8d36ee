use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Adam, Grads, ParamSet, Tape};

use super::dataset::{PredictorDataset, Sample, Split};
use super::model::{EncoderConfig, TrajectoryPredictor};
use super::window::TrajectoryWindow;
use super::PredictorError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorTrainConfig {
    pub encoder: EncoderConfig,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for PredictorTrainConfig {
    fn default() -> Self {
        PredictorTrainConfig {
            encoder: EncoderConfig::default(),
            lr: 1e-3,
            weight_decay: 1e-4,
            batch_size: 256,
            patience: 25,
            max_epochs: 500,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedPredictor {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: TrajectoryPredictor,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub history: Vec<EpochRecord>,
}

/// Mean cross-entropy of the team labels; dropout is on when `rng` is given.
pub fn cross_entropy(
    model: &TrajectoryPredictor,
    params: &ParamSet,
    windows: &[&TrajectoryWindow],
    labels: &[usize],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Grads), PredictorError> {
    let (x, mask) = model.stack(windows)?;
    let mut t = Tape::new(params);
    let xv = t.constant(x);
    let (_, logits) = model.forward(&mut t, xv, &mask, rng);
    let logp = t.log_softmax(logits);
    let picked = t.pick(logp, labels);
    let mean = t.mean(picked);
    let loss = t.scale(mean, -1.0);
    Ok((t.scalar(loss), t.backward(loss)))
}

/// Inference-mode loss and accuracy (first maximum wins ties).
pub fn evaluate(model: &TrajectoryPredictor, samples: &[&Sample]) -> Result<(f64, f64), PredictorError> {
    if samples.is_empty() {
        return Err(PredictorError::EmptyDataset);
    }
    let windows: Vec<TrajectoryWindow> = samples.iter().map(|s| s.window.clone()).collect();
    let out = model.infer_many(&windows)?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (s, inf) in samples.iter().zip(&out) {
        loss -= inf.probs[s.label].max(1e-300).ln();
        if crate::trainer::argmax(&inf.probs) == s.label {
            correct += 1;
        }
    }
    let n = samples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Train with AdamW and early stopping on validation loss; reports test metrics
/// of the best-validation parameters.
pub fn train_predictor(
    dataset: &PredictorDataset,
    cfg: &PredictorTrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainedPredictor, PredictorError> {
    if cfg.batch_size == 0 || cfg.max_epochs == 0 || !(cfg.lr > 0.0) {
        return Err(PredictorError::Config("batch_size, max_epochs and lr must be positive".into()));
    }
    let train = dataset.split(Split::Train);
    let val = dataset.split(Split::Val);
    let test = dataset.split(Split::Test);
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(PredictorError::EmptyDataset);
    }
    for m in 0..dataset.n_teams {
        if !train.iter().any(|s| s.label == m) {
            return Err(PredictorError::MissingLabel(m));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = TrajectoryPredictor::new(cfg.encoder, dataset.n, dataset.n_teams, &mut rng)?;
    let mut opt = Adam::with_weight_decay(&model.params, cfg.lr, cfg.weight_decay);
    let mut best = model.params.clone();
    let (mut best_epoch, mut best_val) = (0, f64::INFINITY);
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let windows: Vec<&TrajectoryWindow> = chunk.iter().map(|&i| &train[i].window).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train[i].label).collect();
            let (loss, grads) = cross_entropy(&model, &model.params, &windows, &labels, Some(&mut rng))?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(PredictorError::NonFinite);
            }
            opt.step(&mut model.params, &grads);
            total += loss * chunk.len() as f64;
        }
        let (val_loss, val_accuracy) = evaluate(&model, &val)?;
        let rec = EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            val_loss,
            val_accuracy,
        };
        on_epoch(&rec);
        history.push(rec);
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best.copy_from(&model.params);
        } else if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    model.params.copy_from(&best);
    let (test_loss, test_accuracy) = evaluate(&model, &test)?;
    Ok(TrainedPredictor {
        model,
        best_epoch,
        best_val_loss: best_val,
        test_loss,
        test_accuracy,
        history,
    })
}
