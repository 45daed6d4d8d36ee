use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::env::{Action, NUM_ACTIONS};
use crate::nn::{load_into, read_checkpoint, softmax_rows, write_checkpoint, CheckpointError, Mlp, ParamSet, Tape, Var};

/// Hidden width shared by every feed-forward network in the pipeline.
pub const HIDDEN: usize = 64;

/// Decentralized actor: observation (optionally with a coordination
/// embedding appended) to logits over the six actions.
#[derive(Debug, Clone)]
pub struct PolicyNet {
    pub params: ParamSet,
    mlp: Mlp,
}

impl PolicyNet {
    pub fn new(input_width: usize, rng: &mut impl Rng) -> Self {
        let mut params = ParamSet::new();
        let mlp = Mlp::new(&mut params, "pi", &[input_width, HIDDEN, HIDDEN, NUM_ACTIONS], rng);
        PolicyNet { params, mlp }
    }

    pub fn input_width(&self) -> usize {
        self.mlp.input_width()
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        self.mlp.forward(t, x)
    }

    pub fn logits(&self, x: Array2<f64>) -> Array2<f64> {
        self.mlp.infer(&self.params, x)
    }

    /// Row-wise action probabilities.
    pub fn probs(&self, x: Array2<f64>) -> Array2<f64> {
        softmax_rows(&self.logits(x))
    }

    /// Greedy action per row, first maximum in canonical order.
    pub fn greedy(&self, x: Array2<f64>) -> Vec<Action> {
        self.logits(x).rows().into_iter().map(|r| Action::ALL[argmax(r.as_slice().expect("contiguous"))]).collect()
    }

    /// Multiply the output layer, sharpening (factor > 1) or flattening the policy.
    pub fn scale_head(&mut self, factor: f64) {
        self.mlp.head().rescale(&mut self.params, factor);
    }

    pub fn save(&self, path: &Path, metadata: serde_json::Value) -> Result<(), CheckpointError> {
        write_checkpoint(path, &self.params, &metadata)
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value), CheckpointError> {
        let ck = read_checkpoint(path)?;
        let net = Self::from_params(&ck.params).ok_or_else(|| CheckpointError::Corrupt {
            path: path.display().to_string(),
            reason: "not a policy network".into(),
        })?;
        Ok((net, ck.metadata))
    }

    /// Rebuild from tensors named like those of [`PolicyNet::new`].
    pub fn from_params(params: &ParamSet) -> Option<Self> {
        let width = params.get(params.id("pi.0.weight")?).nrows();
        let mut net = PolicyNet::new(width, &mut ChaCha8Rng::seed_from_u64(0));
        if net.params.len() != params.len() || net.params.iter().zip(params.iter()).any(|(a, b)| a.0 != b.0 || a.1.dim() != b.1.dim()) {
            return None;
        }
        net.params.copy_from(params);
        Some(net)
    }
}

/// Centralized value function used only during training.
#[derive(Debug, Clone)]
pub struct CriticNet {
    pub params: ParamSet,
    mlp: Mlp,
}

impl CriticNet {
    pub fn new(input_width: usize, rng: &mut impl Rng) -> Self {
        let mut params = ParamSet::new();
        let mlp = Mlp::new(&mut params, "vf", &[input_width, HIDDEN, HIDDEN, 1], rng);
        CriticNet { params, mlp }
    }

    pub fn input_width(&self) -> usize {
        self.mlp.input_width()
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        self.mlp.forward(t, x)
    }

    pub fn values(&self, x: Array2<f64>) -> Vec<f64> {
        self.mlp.infer(&self.params, x).into_raw_vec_and_offset().0
    }

    pub fn load_from(&mut self, path: &Path) -> Result<(), CheckpointError> {
        load_into(path, &mut self.params).map(|_| ())
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
