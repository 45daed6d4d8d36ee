use ndarray::Array2;
use rand::Rng;

use super::params::{ParamId, ParamSet};
use super::tape::{Tape, Var};

/// Affine map `x W + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn new(params: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound));
        let b = Array2::from_shape_fn((1, fan_out), |_| rng.random_range(-bound..bound));
        Linear {
            weight: params.add(format!("{name}.weight"), w),
            bias: params.add(format!("{name}.bias"), b),
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let w = t.param(self.weight);
        let b = t.param(self.bias);
        let h = t.matmul(x, w);
        t.add_row(h, b)
    }

    /// Multiply the weight and bias by `factor` (e.g. zero or sharpen a head).
    pub fn rescale(&self, params: &mut ParamSet, factor: f64) {
        params.get_mut(self.weight).mapv_inplace(|v| v * factor);
        params.get_mut(self.bias).mapv_inplace(|v| v * factor);
    }
}

/// Feed-forward network: ReLU hidden layers and a linear head.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(params: &mut ParamSet, name: &str, sizes: &[usize], rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2);
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(params, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out
    }

    pub fn head(&self) -> &Linear {
        self.layers.last().expect("non-empty")
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(t, h);
            if i < last {
                h = t.relu(h);
            }
        }
        h
    }

    /// Forward pass without building a gradient graph.
    pub fn infer(&self, params: &ParamSet, x: Array2<f64>) -> Array2<f64> {
        let mut t = Tape::new(params);
        let xv = t.constant(x);
        let out = self.forward(&mut t, xv);
        t.value(out).clone()
    }
}

/// Stack equal-width rows into a matrix.
pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Array2<f64> {
    let width = rows.first().map_or(0, Vec::len);
    let mut flat = Vec::with_capacity(rows.len() * width);
    for r in rows {
        assert_eq!(r.len(), width, "ragged rows");
        flat.extend_from_slice(r);
    }
    Array2::from_shape_vec((rows.len(), width), flat).expect("shape matches")
}
