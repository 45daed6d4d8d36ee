use ndarray::Array2;
use sha2::{Digest, Sha256};

/// Index of one tensor inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named, ordered collection of trainable tensors belonging to one network.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub(crate) fn values_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.values
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// SHA-256 over names, shapes and the exact bit patterns of every value.
    pub fn hash_hex(&self) -> String {
        let mut h = Sha256::new();
        for (name, v) in self.iter() {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update((v.nrows() as u64).to_le_bytes());
            h.update((v.ncols() as u64).to_le_bytes());
            for x in v.iter() {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Copy values from `other`, which must have the same names and shapes.
    pub fn copy_from(&mut self, other: &ParamSet) {
        assert_eq!(self.names, other.names, "parameter layout mismatch");
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            assert_eq!(dst.dim(), src.dim());
            dst.assign(src);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Append every tensor of `other` under `prefix.`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParamSet) {
        for (name, v) in other.iter() {
            self.add(format!("{prefix}.{name}"), v.clone());
        }
    }

    /// Tensors stored under `prefix.`, with the prefix stripped.
    pub fn extract_prefixed(&self, prefix: &str) -> ParamSet {
        let head = format!("{prefix}.");
        let mut out = ParamSet::new();
        for (name, v) in self.iter() {
            if let Some(rest) = name.strip_prefix(&head) {
                out.add(rest, v.clone());
            }
        }
        out
    }
}

/// Gradients aligned with a [`ParamSet`]; `None` for parameters the loss did not touch.
#[derive(Debug, Clone)]
pub struct Grads {
    pub(crate) by_param: Vec<Option<Array2<f64>>>,
}

impl Grads {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Grads {
            by_param: vec![None; params.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.by_param[id.0].as_ref()
    }

    pub(crate) fn accumulate(&mut self, idx: usize, g: &Array2<f64>) {
        match &mut self.by_param[idx] {
            Some(acc) => *acc += g,
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.by_param
            .iter()
            .flatten()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescale so the global L2 norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for g in self.by_param.iter_mut().flatten() {
                g.mapv_inplace(|x| x * s);
            }
        }
        norm
    }

    pub fn all_finite(&self) -> bool {
        self.by_param.iter().flatten().all(|g| g.iter().all(|x| x.is_finite()))
    }
}
