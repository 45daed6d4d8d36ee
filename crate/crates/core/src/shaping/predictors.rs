use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::env::{Action, NUM_ACTIONS};
use crate::nn::{sigmoid, Adam, Grads, Mlp, ParamSet, Tape};
use crate::trainer::HIDDEN;

use super::ShapingError;

/// Training settings for the online influence classifiers.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PredictorTraining {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_grad_norm: f64,
}

impl Default for PredictorTraining {
    fn default() -> Self {
        PredictorTraining {
            lr: 1e-4,
            batch_size: 2048,
            epochs: 1,
            max_grad_norm: 0.5,
        }
    }
}

/// Feed-forward network with a single logit; probabilities are its sigmoid.
#[derive(Debug, Clone)]
pub struct BinaryClassifier {
    pub params: ParamSet,
    mlp: Mlp,
}

impl BinaryClassifier {
    pub fn new(input_width: usize, rng: &mut impl Rng) -> Self {
        let mut params = ParamSet::new();
        let mlp = Mlp::new(&mut params, "clf", &[input_width, HIDDEN, HIDDEN, 1], rng);
        BinaryClassifier { params, mlp }
    }

    pub fn input_width(&self) -> usize {
        self.mlp.input_width()
    }

    pub fn probs(&self, x: Array2<f64>) -> Vec<f64> {
        self.mlp.infer(&self.params, x).iter().map(|&z| sigmoid(z)).collect()
    }

    /// Mean binary cross-entropy and its gradients.
    pub fn bce(&self, x: Array2<f64>, targets: &[f64]) -> (f64, Grads) {
        let mut t = Tape::new(&self.params);
        let xv = t.constant(x);
        let z = self.mlp.forward(&mut t, xv);
        let loss = t.bce_with_logits(z, targets);
        (t.scalar(loss), t.backward(loss))
    }
}

/// Per-step training tuples for the influence classifiers of one team.
#[derive(Debug, Clone)]
pub struct InfluenceBatch {
    /// One row per step: the concatenated observations of all agents.
    pub joint_obs: Array2<f64>,
    pub actions: Vec<Vec<Action>>,
    /// `labels[row][j]`.
    pub labels: Vec<Vec<bool>>,
}

/// Mean loss per network for one update, in [`InfluencePredictors::pair_index`] order for `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceLosses {
    pub q: Vec<f64>,
    pub omega: Vec<f64>,
}

/// Directed follow-up classifiers `q[i -> j]` (input: joint observation and
/// the one-hot action of `i`) and observation-only baselines `omega[j]`.
#[derive(Debug, Clone)]
pub struct InfluencePredictors {
    n: usize,
    obs_width: usize,
    pub q: Vec<BinaryClassifier>,
    pub omega: Vec<BinaryClassifier>,
    q_opt: Vec<Adam>,
    omega_opt: Vec<Adam>,
    pub training: PredictorTraining,
}

impl InfluencePredictors {
    pub fn new(n: usize, joint_obs_width: usize, training: PredictorTraining, rng: &mut impl Rng) -> Result<Self, ShapingError> {
        if n < 2 {
            return Err(ShapingError::TooFewAgents(n));
        }
        let q: Vec<_> = (0..n * (n - 1))
            .map(|_| BinaryClassifier::new(joint_obs_width + NUM_ACTIONS, rng))
            .collect();
        let omega: Vec<_> = (0..n).map(|_| BinaryClassifier::new(joint_obs_width, rng)).collect();
        let q_opt = q.iter().map(|c| Adam::new(&c.params, training.lr)).collect();
        let omega_opt = omega.iter().map(|c| Adam::new(&c.params, training.lr)).collect();
        Ok(InfluencePredictors {
            n,
            obs_width: joint_obs_width,
            q,
            omega,
            q_opt,
            omega_opt,
            training,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    /// Position of `q[source -> target]` in [`Self::q`].
    pub fn pair_index(&self, source: usize, target: usize) -> usize {
        assert!(source != target && source < self.n && target < self.n);
        source * (self.n - 1) + if target < source { target } else { target - 1 }
    }

    fn with_action(&self, joint_obs: &Array2<f64>, actions: &[Vec<Action>], source: usize) -> Array2<f64> {
        let mut x = Array2::zeros((joint_obs.nrows(), self.obs_width + NUM_ACTIONS));
        x.slice_mut(s![.., ..self.obs_width]).assign(joint_obs);
        for (r, a) in actions.iter().enumerate() {
            x[[r, self.obs_width + a[source].index()]] = 1.0;
        }
        x
    }

    /// `q[i][j]` for each row; the diagonal is unused and left at zero.
    pub fn q_probs(&self, joint_obs: &Array2<f64>, actions: &[Vec<Action>]) -> Vec<Vec<Vec<f64>>> {
        let rows = joint_obs.nrows();
        let mut out = vec![vec![vec![0.0; self.n]; self.n]; rows];
        for i in 0..self.n {
            let x = self.with_action(joint_obs, actions, i);
            for j in (0..self.n).filter(|&j| j != i) {
                let p = self.q[self.pair_index(i, j)].probs(x.clone());
                for (r, v) in p.into_iter().enumerate() {
                    out[r][i][j] = v;
                }
            }
        }
        out
    }

    pub fn omega_probs(&self, joint_obs: &Array2<f64>) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n]; joint_obs.nrows()];
        for (j, clf) in self.omega.iter().enumerate() {
            for (r, v) in clf.probs(joint_obs.clone()).into_iter().enumerate() {
                out[r][j] = v;
            }
        }
        out
    }

    /// Influence reward of every agent on every row.
    pub fn influence_rewards(&self, joint_obs: &Array2<f64>, actions: &[Vec<Action>]) -> Result<Vec<Vec<f64>>, ShapingError> {
        let q = self.q_probs(joint_obs, actions);
        let omega = self.omega_probs(joint_obs);
        q.iter().zip(&omega).map(|(q, w)| influence_reward(q, w)).collect()
    }

    /// One pass over the batch in shuffled minibatches; `q` and `omega` see the same minibatches.
    pub fn update(&mut self, batch: &InfluenceBatch, rng: &mut impl Rng) -> Result<InfluenceLosses, ShapingError> {
        let rows = batch.joint_obs.nrows();
        if rows == 0 {
            return Err(ShapingError::EmptyBatch);
        }
        if batch.actions.len() != rows || batch.labels.len() != rows {
            return Err(ShapingError::LengthMismatch {
                what: "influence batch",
                expected: rows,
                found: batch.actions.len().min(batch.labels.len()),
            });
        }
        let mut q_loss = vec![0.0; self.q.len()];
        let mut omega_loss = vec![0.0; self.n];
        let mut order: Vec<usize> = (0..rows).collect();
        let bs = self.training.batch_size.max(1);
        let clip = self.training.max_grad_norm;
        for _ in 0..self.training.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(bs) {
                let obs = batch.joint_obs.select(ndarray::Axis(0), chunk);
                let acts: Vec<Vec<Action>> = chunk.iter().map(|&r| batch.actions[r].clone()).collect();
                let weight = chunk.len() as f64 / (rows * self.training.epochs) as f64;
                for j in 0..self.n {
                    let y: Vec<f64> = chunk.iter().map(|&r| batch.labels[r][j] as u8 as f64).collect();
                    let (loss, mut g) = self.omega[j].bce(obs.clone(), &y);
                    check_finite(loss)?;
                    g.clip_global_norm(clip);
                    self.omega_opt[j].step(&mut self.omega[j].params, &g);
                    omega_loss[j] += loss * weight;
                    for i in (0..self.n).filter(|&i| i != j) {
                        let k = self.pair_index(i, j);
                        let x = self.with_action(&obs, &acts, i);
                        let (loss, mut g) = self.q[k].bce(x, &y);
                        check_finite(loss)?;
                        g.clip_global_norm(clip);
                        self.q_opt[k].step(&mut self.q[k].params, &g);
                        q_loss[k] += loss * weight;
                    }
                }
            }
        }
        Ok(InfluenceLosses {
            q: q_loss,
            omega: omega_loss,
        })
    }

    /// All classifier tensors in one set, prefixed `q{i}_{j}` and `omega{j}`.
    pub fn bundle(&self) -> ParamSet {
        let mut out = ParamSet::new();
        for i in 0..self.n {
            for j in (0..self.n).filter(|&j| j != i) {
                out.extend_prefixed(&format!("q{i}_{j}"), &self.q[self.pair_index(i, j)].params);
            }
        }
        for (j, w) in self.omega.iter().enumerate() {
            out.extend_prefixed(&format!("omega{j}"), &w.params);
        }
        out
    }

    /// Inverse of [`Self::bundle`]; optimizer state is not restored.
    pub fn load_bundle(&mut self, bundle: &ParamSet) {
        for i in 0..self.n {
            for j in (0..self.n).filter(|&j| j != i) {
                let k = self.pair_index(i, j);
                self.q[k].params.copy_from(&bundle.extract_prefixed(&format!("q{i}_{j}")));
            }
        }
        for (j, w) in self.omega.iter_mut().enumerate() {
            w.params.copy_from(&bundle.extract_prefixed(&format!("omega{j}")));
        }
    }
}

fn check_finite(loss: f64) -> Result<(), ShapingError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(ShapingError::NonFinite)
    }
}

/// Influence reward per source agent from `q[i][j]` and `omega[j]`:
/// the mean over targets `j != i` of `max(q - omega, 0)`.
pub fn influence_reward(q: &[Vec<f64>], omega: &[f64]) -> Result<Vec<f64>, ShapingError> {
    let n = omega.len();
    if n < 2 {
        return Err(ShapingError::TooFewAgents(n));
    }
    if q.len() != n {
        return Err(ShapingError::LengthMismatch {
            what: "q rows",
            expected: n,
            found: q.len(),
        });
    }
    Ok((0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (q[i][j] - omega[j]).max(0.0))
                .sum::<f64>()
                / (n - 1) as f64
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn arithmetic_examples() {
        let r = influence_reward(&[vec![0.0, 0.7], vec![0.0, 0.0]], &[0.0, 0.4]).unwrap();
        assert!((r[0] - 0.3).abs() < 1e-12);
        let r = influence_reward(&[vec![0.0, 0.2], vec![0.0, 0.0]], &[0.0, 0.6]).unwrap();
        assert_eq!(r[0], 0.0);
        let q = vec![vec![0.0, 0.5, 0.3], vec![0.0; 3], vec![0.0; 3]];
        let r = influence_reward(&q, &[0.0, 0.2, 0.2]).unwrap();
        assert!((r[0] - 0.2).abs() < 1e-12);
        assert_eq!(influence_reward(&[vec![0.5]], &[0.1]), Err(ShapingError::TooFewAgents(1)));
    }

    #[test]
    fn counts_and_pair_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = InfluencePredictors::new(4, 3, PredictorTraining::default(), &mut rng).unwrap();
        assert_eq!(p.q.len(), 12);
        assert_eq!(p.omega.len(), 4);
        let mut seen = std::collections::HashSet::new();
        for i in 0..4 {
            for j in (0..4).filter(|&j| j != i) {
                assert!(seen.insert(p.pair_index(i, j)));
            }
        }
        assert_eq!(seen.len(), 12);
        let back = {
            let mut q = InfluencePredictors::new(4, 3, PredictorTraining::default(), &mut rng).unwrap();
            q.load_bundle(&p.bundle());
            q
        };
        assert_eq!(back.bundle().hash_hex(), p.bundle().hash_hex());
    }

    #[test]
    fn all_positive_labels_drive_loss_down() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = InfluencePredictors::new(2, 4, PredictorTraining::default(), &mut rng).unwrap();
        let rows = 64;
        let batch = InfluenceBatch {
            joint_obs: Array2::from_shape_fn((rows, 4), |(r, c)| ((r * 7 + c) % 5) as f64 / 5.0),
            actions: (0..rows).map(|r| vec![Action::ALL[r % 6], Action::ALL[(r + 1) % 6]]).collect(),
            labels: vec![vec![true, true]; rows],
        };
        let mut last = f64::INFINITY;
        for _ in 0..30 {
            let l = p.update(&batch, &mut rng).unwrap();
            let total: f64 = l.q.iter().chain(&l.omega).sum();
            assert!(total < last);
            last = total;
        }
        assert!(p.q_probs(&batch.joint_obs, &batch.actions)[0][0][1] > 0.5);
        assert_eq!(
            p.update(
                &InfluenceBatch {
                    joint_obs: Array2::zeros((0, 4)),
                    actions: vec![],
                    labels: vec![]
                },
                &mut rng
            ),
            Err(ShapingError::EmptyBatch)
        );
    }
}
