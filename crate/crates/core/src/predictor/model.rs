use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{read_checkpoint, softmax_rows, write_checkpoint, CheckpointError, Linear, ParamId, ParamSet, Tape, Var};
use crate::par;

use super::window::{step_width, TrajectoryWindow, WINDOW_LEN};
use super::PredictorError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub feedforward: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 64,
            heads: 4,
            layers: 2,
            feedforward: 128,
            dropout: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), PredictorError> {
        let bad = |m: &str| Err(PredictorError::Config(m.into()));
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return bad("d_model must be a positive multiple of heads");
        }
        if self.layers == 0 || self.feedforward == 0 {
            return bad("layers and feedforward must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Block {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    ln1: (ParamId, ParamId),
    ff1: Linear,
    ff2: Linear,
    ln2: (ParamId, ParamId),
}

/// Embedding and team distribution for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    /// Coordination embedding `c_t`, width `d_model`.
    pub embedding: Vec<f64>,
    /// Distribution over pool teams.
    pub probs: Vec<f64>,
}

/// Post-LN transformer encoder over a trajectory window with masked mean
/// pooling and a softmax head over pool teams.
#[derive(Debug, Clone)]
pub struct TrajectoryPredictor {
    pub config: EncoderConfig,
    pub n: usize,
    pub n_teams: usize,
    pub params: ParamSet,
    embed: Linear,
    pos: ParamId,
    blocks: Vec<Block>,
    head: Linear,
}

fn layer_norm_params(params: &mut ParamSet, name: &str, d: usize) -> (ParamId, ParamId) {
    (
        params.add(format!("{name}.gamma"), Array2::ones((1, d))),
        params.add(format!("{name}.beta"), Array2::zeros((1, d))),
    )
}

impl TrajectoryPredictor {
    pub fn new(config: EncoderConfig, n: usize, n_teams: usize, rng: &mut impl Rng) -> Result<Self, PredictorError> {
        config.validate()?;
        if n_teams < 2 {
            return Err(PredictorError::Config("at least two teams are needed".into()));
        }
        let d = config.d_model;
        let mut params = ParamSet::new();
        let embed = Linear::new(&mut params, "embed", step_width(n), d, rng);
        let bound = 1.0 / (d as f64).sqrt();
        let pos = params.add("pos", Array2::from_shape_fn((WINDOW_LEN, d), |_| rng.random_range(-bound..bound)));
        let blocks = (0..config.layers)
            .map(|l| Block {
                wq: Linear::new(&mut params, &format!("block{l}.q"), d, d, rng),
                wk: Linear::new(&mut params, &format!("block{l}.k"), d, d, rng),
                wv: Linear::new(&mut params, &format!("block{l}.v"), d, d, rng),
                wo: Linear::new(&mut params, &format!("block{l}.o"), d, d, rng),
                ln1: layer_norm_params(&mut params, &format!("block{l}.ln1"), d),
                ff1: Linear::new(&mut params, &format!("block{l}.ff1"), d, config.feedforward, rng),
                ff2: Linear::new(&mut params, &format!("block{l}.ff2"), config.feedforward, d, rng),
                ln2: layer_norm_params(&mut params, &format!("block{l}.ln2"), d),
            })
            .collect();
        let head = Linear::new(&mut params, "head", d, n_teams, rng);
        Ok(TrajectoryPredictor {
            config,
            n,
            n_teams,
            params,
            embed,
            pos,
            blocks,
            head,
        })
    }

    /// Zero the classifier head so every window maps to the uniform distribution.
    pub fn zero_head(&mut self) {
        self.head.rescale(&mut self.params, 0.0);
    }

    pub fn embedding_width(&self) -> usize {
        self.config.d_model
    }

    fn dropout(&self, t: &mut Tape, x: Var, rng: Option<&mut ChaCha8Rng>) -> Var {
        let p = self.config.dropout;
        match rng {
            Some(rng) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                let dim = t.value(x).dim();
                let m = Array2::from_shape_fn(dim, |_| if rng.random::<f64>() < p { 0.0 } else { keep });
                let mv = t.constant(m);
                t.mul(x, mv)
            }
            _ => x,
        }
    }

    /// Build the graph for `B` stacked windows (`B*WINDOW_LEN` rows).
    /// Dropout is active only when `rng` is given. Returns `(c, logits)`.
    pub fn forward(&self, t: &mut Tape, x: Var, mask: &[bool], mut rng: Option<&mut ChaCha8Rng>) -> (Var, Var) {
        let e = self.embed.forward(t, x);
        let pos = t.param(self.pos);
        let mut h = t.add_tiled(e, pos);
        h = self.dropout(t, h, rng.as_deref_mut());
        for b in &self.blocks {
            let q = b.wq.forward(t, h);
            let k = b.wk.forward(t, h);
            let v = b.wv.forward(t, h);
            let a = t.attention(q, k, v, self.config.heads, WINDOW_LEN, mask);
            let a = b.wo.forward(t, a);
            let a = self.dropout(t, a, rng.as_deref_mut());
            let r = t.add(h, a);
            let (g, be) = (t.param(b.ln1.0), t.param(b.ln1.1));
            h = t.layer_norm(r, g, be);
            let f = b.ff1.forward(t, h);
            let f = t.relu(f);
            let f = b.ff2.forward(t, f);
            let f = self.dropout(t, f, rng.as_deref_mut());
            let r = t.add(h, f);
            let (g, be) = (t.param(b.ln2.0), t.param(b.ln2.1));
            h = t.layer_norm(r, g, be);
        }
        let c = t.masked_mean(h, WINDOW_LEN, mask);
        let logits = self.head.forward(t, c);
        (c, logits)
    }

    /// Stack windows into the encoder's input layout.
    pub fn stack(&self, windows: &[&TrajectoryWindow]) -> Result<(Array2<f64>, Vec<bool>), PredictorError> {
        let w = step_width(self.n);
        let mut flat = Vec::with_capacity(windows.len() * WINDOW_LEN * w);
        let mut mask = Vec::with_capacity(windows.len() * WINDOW_LEN);
        for win in windows {
            if win.n != self.n || win.features.len() != WINDOW_LEN * w {
                return Err(PredictorError::WidthMismatch {
                    expected: w,
                    found: win.features.len() / WINDOW_LEN,
                });
            }
            if win.valid_rows() == 0 {
                return Err(PredictorError::EmptyHistory);
            }
            flat.extend_from_slice(&win.features);
            mask.extend_from_slice(&win.mask);
        }
        let x = Array2::from_shape_vec((windows.len() * WINDOW_LEN, w), flat).expect("shape");
        Ok((x, mask))
    }

    /// Inference-mode embeddings and team distributions (`B x d`, `B x M`).
    pub fn infer_batch(&self, windows: &[&TrajectoryWindow]) -> Result<(Array2<f64>, Array2<f64>), PredictorError> {
        let (x, mask) = self.stack(windows)?;
        let mut t = Tape::new(&self.params);
        let xv = t.constant(x);
        let (c, logits) = self.forward(&mut t, xv, &mask, None);
        Ok((t.value(c).clone(), softmax_rows(t.value(logits))))
    }

    pub fn infer(&self, window: &TrajectoryWindow) -> Result<Inference, PredictorError> {
        let (c, p) = self.infer_batch(&[window])?;
        Ok(Inference {
            embedding: c.row(0).to_vec(),
            probs: p.row(0).to_vec(),
        })
    }

    /// Inference over many windows, split into parallel chunks; order is preserved.
    pub fn infer_many(&self, windows: &[TrajectoryWindow]) -> Result<Vec<Inference>, PredictorError> {
        const CHUNK: usize = 128;
        let chunks: Vec<&[TrajectoryWindow]> = windows.chunks(CHUNK).collect();
        let out = par::map_slice(&chunks, |chunk| {
            let refs: Vec<&TrajectoryWindow> = chunk.iter().collect();
            self.infer_batch(&refs).map(|(c, p)| {
                (0..chunk.len())
                    .map(|r| Inference {
                        embedding: c.row(r).to_vec(),
                        probs: p.row(r).to_vec(),
                    })
                    .collect::<Vec<_>>()
            })
        });
        let mut all = Vec::with_capacity(windows.len());
        for part in out {
            all.extend(part?);
        }
        Ok(all)
    }

    /// Cold-start output used before any history exists.
    pub fn cold_start(&self) -> Inference {
        Inference {
            embedding: vec![0.0; self.config.d_model],
            probs: vec![1.0 / self.n_teams as f64; self.n_teams],
        }
    }

    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "predictor",
            "encoder": self.config,
            "n": self.n,
            "n_teams": self.n_teams,
        })
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<(), CheckpointError> {
        let mut meta = self.metadata();
        meta["extra"] = extra;
        write_checkpoint(path, &self.params, &meta)
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value), PredictorError> {
        let ck = read_checkpoint(path)?;
        let corrupt = |reason: String| {
            PredictorError::Checkpoint(CheckpointError::Corrupt {
                path: path.display().to_string(),
                reason,
            })
        };
        let meta = &ck.metadata;
        if meta["kind"] != "predictor" {
            return Err(corrupt("not a predictor checkpoint".into()));
        }
        let config: EncoderConfig =
            serde_json::from_value(meta["encoder"].clone()).map_err(|e| corrupt(format!("encoder config: {e}")))?;
        let n = meta["n"].as_u64().ok_or_else(|| corrupt("missing n".into()))? as usize;
        let n_teams = meta["n_teams"].as_u64().ok_or_else(|| corrupt("missing n_teams".into()))? as usize;
        let mut model = TrajectoryPredictor::new(config, n, n_teams, &mut ChaCha8Rng::seed_from_u64(0))?;
        let same = model.params.len() == ck.params.len()
            && model.params.iter().zip(ck.params.iter()).all(|(a, b)| a.0 == b.0 && a.1.dim() == b.1.dim());
        if !same {
            return Err(corrupt("tensor layout does not match its metadata".into()));
        }
        model.params.copy_from(&ck.params);
        Ok((model, ck.metadata))
    }
}
