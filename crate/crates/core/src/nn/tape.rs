//! Reverse-mode automatic differentiation over row-major `f64` matrices.
//!
//! A [`Tape`] records one forward pass against a borrowed [`ParamSet`];
//! [`Tape::backward`] returns gradients aligned with that set. Scalars are
//! `1 x 1` matrices. Batches are rows; sequence models stack `B` windows of
//! `T` steps as `B*T` rows.

use ndarray::{s, Array2, Axis, Zip};

use super::params::{Grads, ParamId, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Const,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
        rstd: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seq_len: usize,
        /// Softmax weights, one `T x T` block per (window, head), stacked.
        probs: Vec<Array2<f64>>,
    },
    MaskedMean {
        x: Var,
        seq_len: usize,
        mask: Vec<bool>,
    },
    AddTiled(Var, Var),
    Pick(Var, Vec<usize>),
    Mean(Var),
    BceWithLogits(Var, Vec<f64>),
    PpoClip {
        logp: Var,
        /// d loss / d logp per row.
        dlogp: Vec<f64>,
    },
    EntropyRows(Var),
    Mse(Var, Vec<f64>),
    Concat(Var, Var),
}

struct Node {
    value: Option<Array2<f64>>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(val), _) => val,
            (None, Op::Param(id)) => self.params.get(*id),
            (None, _) => unreachable!("only parameter nodes borrow their value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.dim(), (1, 1));
        val[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Const)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `x + bias` with a `1 x k` bias broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let out = self.value(x) + self.value(bias);
        self.push(out, Op::AddRow(x, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x) * s;
        self.push(out, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(f64::tanh);
        self.push(out, Op::Tanh(x))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let out = log_softmax_rows(self.value(x));
        self.push(out, Op::LogSoftmax(x))
    }

    /// Column-wise concatenation `[a | b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let out = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("row counts agree");
        self.push(out, Op::Concat(a, b))
    }

    /// Row-wise layer normalization with `1 x d` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let d = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut rstd = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mu = row.sum() / d;
            let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / d;
            let r = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| (v - mu) * r);
            rstd.push(r);
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        )
    }

    /// Multi-head scaled dot-product self-attention over `B` windows of
    /// `seq_len` rows each. `key_mask[r]` is false for padded rows, which are
    /// never attended to. Every window must have at least one valid row.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, seq_len: usize, key_mask: &[bool]) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (rows, d) = qv.dim();
        assert_eq!(rows % seq_len, 0);
        assert_eq!(d % heads, 0);
        assert_eq!(key_mask.len(), rows);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Array2::zeros((rows, d));
        let mut probs = Vec::with_capacity(rows / seq_len * heads);
        for b in 0..rows / seq_len {
            let r = b * seq_len..(b + 1) * seq_len;
            let mask = &key_mask[r.clone()];
            assert!(mask.iter().any(|&m| m), "window {b} has no valid rows");
            for h in 0..heads {
                let c = h * dh..(h + 1) * dh;
                let qh = qv.slice(s![r.clone(), c.clone()]);
                let kh = kv.slice(s![r.clone(), c.clone()]);
                let vh = vv.slice(s![r.clone(), c.clone()]);
                let mut p = qh.dot(&kh.t()) * scale;
                for mut row in p.rows_mut() {
                    let max = row
                        .iter()
                        .zip(mask)
                        .filter(|(_, &m)| m)
                        .map(|(&x, _)| x)
                        .fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for (x, &m) in row.iter_mut().zip(mask) {
                        *x = if m { (*x - max).exp() } else { 0.0 };
                        z += *x;
                    }
                    row.mapv_inplace(|x| x / z);
                }
                out.slice_mut(s![r.clone(), c]).assign(&p.dot(&vh));
                probs.push(p);
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                seq_len,
                probs,
            },
        )
    }

    /// Mean over the valid rows of each window: `B*T x d` to `B x d`.
    pub fn masked_mean(&mut self, x: Var, seq_len: usize, mask: &[bool]) -> Var {
        let xv = self.value(x);
        let (rows, d) = xv.dim();
        assert_eq!(mask.len(), rows);
        let mut out = Array2::zeros((rows / seq_len, d));
        for (b, mut o) in out.rows_mut().into_iter().enumerate() {
            let mut count = 0.0;
            for t in 0..seq_len {
                if mask[b * seq_len + t] {
                    o += &xv.row(b * seq_len + t);
                    count += 1.0;
                }
            }
            if count > 0.0 {
                o.mapv_inplace(|v| v / count);
            }
        }
        self.push(
            out,
            Op::MaskedMean {
                x,
                seq_len,
                mask: mask.to_vec(),
            },
        )
    }

    /// `x + tile(pos)`: a `T x d` table added to every window of `T` rows.
    pub fn add_tiled(&mut self, x: Var, pos: Var) -> Var {
        let (xv, pv) = (self.value(x), self.value(pos));
        let t = pv.nrows();
        assert_eq!(xv.nrows() % t, 0);
        let mut out = xv.clone();
        for (r, mut row) in out.rows_mut().into_iter().enumerate() {
            row += &pv.row(r % t);
        }
        self.push(out, Op::AddTiled(x, pos))
    }

    /// Select column `idx[r]` from each row `r`: `B x k` to `B x 1`.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Var {
        let xv = self.value(x);
        assert_eq!(idx.len(), xv.nrows());
        let out = Array2::from_shape_fn((idx.len(), 1), |(r, _)| xv[[r, idx[r]]]);
        self.push(out, Op::Pick(x, idx.to_vec()))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let m = self.value(x).mean().unwrap_or(0.0);
        self.push(Array2::from_elem((1, 1), m), Op::Mean(x))
    }

    /// Mean binary cross-entropy of `B x 1` logits against targets in `[0, 1]`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.dim(), (targets.len(), 1));
        let loss = lv
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / targets.len() as f64;
        self.push(Array2::from_elem((1, 1), loss), Op::BceWithLogits(logits, targets.to_vec()))
    }

    /// Clipped surrogate loss `-mean(min(r A, clip(r, 1-eps, 1+eps) A))` with
    /// `r = exp(logp - old_logp)`; `logp` is `B x 1`.
    pub fn ppo_clip(&mut self, logp: Var, old_logp: &[f64], adv: &[f64], eps: f64) -> Var {
        let lv = self.value(logp);
        let n = old_logp.len();
        assert_eq!(lv.dim(), (n, 1));
        assert_eq!(adv.len(), n);
        let mut loss = 0.0;
        let mut dlogp = Vec::with_capacity(n);
        for i in 0..n {
            let ratio = (lv[[i, 0]] - old_logp[i]).exp();
            let unclipped = ratio * adv[i];
            let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv[i];
            // The gradient flows only through the unclipped branch when it is the minimum.
            if unclipped <= clipped {
                loss -= unclipped;
                dlogp.push(-unclipped / n as f64);
            } else {
                loss -= clipped;
                dlogp.push(0.0);
            }
        }
        self.push(Array2::from_elem((1, 1), loss / n as f64), Op::PpoClip { logp, dlogp })
    }

    /// Per-row entropy `-sum(exp(l) * l)` of log-probabilities: `B x k` to `B x 1`.
    pub fn entropy_rows(&mut self, logp: Var) -> Var {
        let out = self
            .value(logp)
            .map_axis(Axis(1), |row| -row.iter().map(|&l| l.exp() * l).sum::<f64>())
            .insert_axis(Axis(1));
        self.push(out, Op::EntropyRows(logp))
    }

    /// Mean squared error of a `B x 1` prediction.
    pub fn mse(&mut self, pred: Var, targets: &[f64]) -> Var {
        let pv = self.value(pred);
        assert_eq!(pv.dim(), (targets.len(), 1));
        let loss = pv.iter().zip(targets).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / targets.len() as f64;
        self.push(Array2::from_elem((1, 1), loss), Op::Mse(pred, targets.to_vec()))
    }

    /// Gradients of the scalar `loss` with respect to every parameter used.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).dim(), (1, 1), "loss must be a scalar");
        let mut grads: Vec<Option<Array2<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));
        let mut out = Grads::zeros_like(self.params);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut send = |v: Var, d: Array2<f64>| match &mut grads[v.0] {
                Some(acc) => *acc += &d,
                slot @ None => *slot = Some(d),
            };
            match &node.op {
                Op::Const => {}
                Op::Param(id) => out.accumulate(id.0, &g),
                Op::MatMul(a, b) => {
                    send(*a, g.dot(&self.value(*b).t()));
                    send(*b, self.value(*a).t().dot(&g));
                }
                Op::AddRow(x, b) => {
                    send(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    send(*x, g);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Mul(a, b) => {
                    send(*a, &g * self.value(*b));
                    send(*b, &g * self.value(*a));
                }
                Op::Scale(x, s) => send(*x, g * *s),
                Op::Relu(x) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(self.value(*x))
                        .for_each(|d, &x| if x <= 0.0 { *d = 0.0 });
                    send(*x, d);
                }
                Op::Tanh(x) => {
                    let y = node.value.as_ref().expect("owned");
                    send(*x, g * &y.mapv(|y| 1.0 - y * y));
                }
                Op::LogSoftmax(x) => {
                    let y = node.value.as_ref().expect("owned");
                    let sums = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    send(*x, &g - &(y.mapv(f64::exp) * &sums));
                }
                Op::Concat(a, b) => {
                    let ca = self.value(*a).ncols();
                    send(*a, g.slice(s![.., ..ca]).to_owned());
                    send(*b, g.slice(s![.., ca..]).to_owned());
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    send(*beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    send(*gamma, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dxhat = &g * self.value(*gamma);
                    let d = xhat.ncols() as f64;
                    let mut dx = Array2::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let gr = dxhat.row(r);
                        let xr = xhat.row(r);
                        let mean_g = gr.sum() / d;
                        let mean_gx = gr.dot(&xr) / d;
                        Zip::from(dx.row_mut(r))
                            .and(&gr)
                            .and(&xr)
                            .for_each(|o, &gi, &xi| *o = rstd[r] * (gi - mean_g - xi * mean_gx));
                    }
                    send(*x, dx);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    seq_len,
                    probs,
                } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let (rows, d) = qv.dim();
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dq = Array2::zeros((rows, d));
                    let mut dk = Array2::zeros((rows, d));
                    let mut dv = Array2::zeros((rows, d));
                    for b in 0..rows / seq_len {
                        let r = b * seq_len..(b + 1) * seq_len;
                        for h in 0..*heads {
                            let c = h * dh..(h + 1) * dh;
                            let p = &probs[b * heads + h];
                            let go = g.slice(s![r.clone(), c.clone()]);
                            let vh = vv.slice(s![r.clone(), c.clone()]);
                            dv.slice_mut(s![r.clone(), c.clone()]).assign(&p.t().dot(&go));
                            let dp = go.dot(&vh.t());
                            let row_dot = (&dp * p).sum_axis(Axis(1)).insert_axis(Axis(1));
                            let ds = p * &(&dp - &row_dot) * scale;
                            let qh = qv.slice(s![r.clone(), c.clone()]);
                            let kh = kv.slice(s![r.clone(), c.clone()]);
                            dq.slice_mut(s![r.clone(), c.clone()]).assign(&ds.dot(&kh));
                            dk.slice_mut(s![r.clone(), c]).assign(&ds.t().dot(&qh));
                        }
                    }
                    send(*q, dq);
                    send(*k, dk);
                    send(*v, dv);
                }
                Op::MaskedMean { x, seq_len, mask } => {
                    let rows = mask.len();
                    let mut dx = Array2::zeros((rows, g.ncols()));
                    for b in 0..rows / seq_len {
                        let valid = &mask[b * seq_len..(b + 1) * seq_len];
                        let count = valid.iter().filter(|&&m| m).count() as f64;
                        for (t, &m) in valid.iter().enumerate() {
                            if m {
                                dx.row_mut(b * seq_len + t).assign(&(&g.row(b) / count));
                            }
                        }
                    }
                    send(*x, dx);
                }
                Op::AddTiled(x, pos) => {
                    let t = self.value(*pos).nrows();
                    let mut dp = Array2::zeros((t, g.ncols()));
                    for (r, row) in g.rows().into_iter().enumerate() {
                        let mut acc = dp.row_mut(r % t);
                        acc += &row;
                    }
                    send(*pos, dp);
                    send(*x, g);
                }
                Op::Pick(x, idx) => {
                    let mut dx = Array2::zeros(self.value(*x).dim());
                    for (r, &c) in idx.iter().enumerate() {
                        dx[[r, c]] = g[[r, 0]];
                    }
                    send(*x, dx);
                }
                Op::Mean(x) => {
                    let dim = self.value(*x).dim();
                    let n = (dim.0 * dim.1).max(1) as f64;
                    send(*x, Array2::from_elem(dim, g[[0, 0]] / n));
                }
                Op::BceWithLogits(x, targets) => {
                    let n = targets.len() as f64;
                    let lv = self.value(*x);
                    let d = Array2::from_shape_fn(lv.dim(), |(r, _)| {
                        g[[0, 0]] * (sigmoid(lv[[r, 0]]) - targets[r]) / n
                    });
                    send(*x, d);
                }
                Op::PpoClip { logp, dlogp } => {
                    let d = Array2::from_shape_fn((dlogp.len(), 1), |(r, _)| g[[0, 0]] * dlogp[r]);
                    send(*logp, d);
                }
                Op::EntropyRows(x) => {
                    let lv = self.value(*x);
                    let d = Array2::from_shape_fn(lv.dim(), |(r, c)| {
                        let l = lv[[r, c]];
                        -g[[r, 0]] * l.exp() * (l + 1.0)
                    });
                    send(*x, d);
                }
                Op::Mse(x, targets) => {
                    let n = targets.len() as f64;
                    let pv = self.value(*x);
                    let d = Array2::from_shape_fn(pv.dim(), |(r, _)| g[[0, 0]] * 2.0 * (pv[[r, 0]] - targets[r]) / n);
                    send(*x, d);
                }
            }
        }
        out
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn log_softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    log_softmax_rows(x).mapv(f64::exp)
}
