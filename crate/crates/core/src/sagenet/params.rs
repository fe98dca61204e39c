use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LayerKind, ModelConfig, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Slot {
    pub offset: usize,
    pub len: usize,
}

impl Slot {
    pub fn of<'a, T>(&self, data: &'a [T]) -> &'a [T] {
        &data[self.offset..self.offset + self.len]
    }

    pub fn of_mut<'a, T>(&self, data: &'a mut [T]) -> &'a mut [T] {
        &mut data[self.offset..self.offset + self.len]
    }
}

/// Name, shape and position of one tensor in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    /// Number of inputs feeding each output; sets the initialization range.
    pub fan_in: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub proj_w: Slot,
    pub proj_b: Slot,
    /// Per layer: self/neighbor weights (one shared weight for GCN).
    pub layers: Vec<Vec<Slot>>,
    pub head0_w: Slot,
    pub head0_b: Slot,
    pub head1_w: Slot,
    pub head1_b: Slot,
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
}

impl Layout {
    pub fn new(config: &ModelConfig) -> Self {
        let d = config.hidden_dim;
        let half = d / 2;
        let mut tensors = Vec::new();
        let mut total = 0;
        let mut push = |name: String, shape: Vec<usize>, fan_in: usize| {
            let len: usize = shape.iter().product();
            let slot = Slot { offset: total, len };
            tensors.push(TensorSpec { name, shape, offset: total, fan_in });
            total += len;
            slot
        };
        let proj_w = push("projection.weight".into(), vec![d, 3], 3);
        let proj_b = push("projection.bias".into(), vec![d], 3);
        let names: &[&str] = match config.layer_kind {
            LayerKind::GcnMean => &["weight"],
            LayerKind::SageMax | LayerKind::GraphConv => &["self", "neighbor"],
        };
        let layers = (0..config.n_layers)
            .map(|l| names.iter().map(|n| push(format!("layers.{l}.{n}"), vec![d, d], d)).collect())
            .collect();
        let head0_w = push("head.0.weight".into(), vec![half, d], d);
        let head0_b = push("head.0.bias".into(), vec![half], d);
        let head1_w = push("head.1.weight".into(), vec![3, half], half);
        let head1_b = push("head.1.bias".into(), vec![3], half);
        Self { proj_w, proj_b, layers, head0_w, head0_b, head1_w, head1_b, tensors, total }
    }
}

/// All learnable parameters in one flat vector with a named-tensor layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub(crate) layout: Layout,
    pub data: Vec<f64>,
}

impl Params {
    pub fn zeros(config: &ModelConfig) -> Self {
        let layout = Layout::new(config);
        Self { data: vec![0.0; layout.total], layout }
    }

    /// Uniform in `±1/√fan_in`, seeded by the model config.
    pub fn init(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut p = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        for t in &p.layout.tensors {
            let bound = 1.0 / (t.fan_in as f64).sqrt();
            for x in &mut p.data[t.offset..t.offset + t.len()] {
                *x = rng.random_range(-bound..bound);
            }
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.layout.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.tensors.iter().find(|t| t.name == name).map(|t| &self.data[t.offset..t.offset + t.len()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let t = self.layout.tensors.iter().find(|t| t.name == name)?.clone();
        Some(&mut self.data[t.offset..t.offset + t.len()])
    }

    pub fn zeros_like(&self) -> Self {
        Self { layout: self.layout.clone(), data: vec![0.0; self.data.len()] }
    }
}
