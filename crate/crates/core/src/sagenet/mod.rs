//! Graph neural network surrogate: projection, a stack of message-passing layers and an MLP head.
//!
//! Training runs in `f64` with hand-written reverse mode; inference is also available in `f32`.

mod checkpoint;
mod model;
mod optim;
mod params;
pub mod tensor;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, FeatureScales};
pub use model::{forward, loss_and_gradients, sage_layer, ActivationPattern, InferenceModel};
pub use optim::{adamw_step, AdamState};
pub use params::{Params, TensorSpec};
pub use train::{predict, train, EpochRecord, History};

use std::fmt;
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("invalid training config: {0}")]
    InvalidTrainConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite activation after {layer}")]
    NonFiniteActivation { layer: String },
    #[error("non-finite loss at epoch {epoch}, sample {sample}")]
    NonFiniteLoss { epoch: usize, sample: usize },
    #[error("dataset has no training samples")]
    EmptyTrainingSet,
    #[error("checkpoint file: {0}")]
    Format(#[from] crate::BinError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    /// `W₁ h_v + W₂ max_{w∈N(v)} h_w`.
    SageMax,
    /// `W Σ_{w∈N(v)∪{v}} h_w / √(d̃_v d̃_w)`.
    GcnMean,
    /// `W₁ h_v + W₂ Σ_{w∈N(v)} h_w`.
    GraphConv,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::SageMax => "sage",
            LayerKind::GcnMean => "gcn",
            LayerKind::GraphConv => "graphconv",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayerKind {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sage" => Ok(LayerKind::SageMax),
            "gcn" => Ok(LayerKind::GcnMean),
            "graphconv" => Ok(LayerKind::GraphConv),
            other => Err(ModelError::InvalidConfig(format!("unknown layer kind `{other}` (sage, gcn, graphconv)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub use_jumping_knowledge: bool,
    pub layer_kind: LayerKind,
    /// Rescale inputs and targets by training-set RMS values.
    pub standardize: bool,
    pub rng_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 80,
            n_layers: 8,
            use_jumping_knowledge: false,
            layer_kind: LayerKind::SageMax,
            standardize: false,
            rng_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden_dim < 4 || self.hidden_dim % 2 != 0 {
            return Err(ModelError::InvalidConfig(format!("hidden_dim {} must be even and at least 4", self.hidden_dim)));
        }
        if self.n_layers == 0 {
            return Err(ModelError::InvalidConfig("n_layers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn head_dims(&self) -> [usize; 3] {
        [self.hidden_dim, self.hidden_dim / 2, 3]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Seeds the per-epoch sample order.
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 500, learning_rate: 1e-3, weight_decay: 1e-2, beta1: 0.9, beta2: 0.999, eps: 1e-8, rng_seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 {
            return Err(ModelError::InvalidTrainConfig("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::InvalidTrainConfig(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0) {
            return Err(ModelError::InvalidTrainConfig("weight decay, betas or eps out of range".into()));
        }
        Ok(())
    }
}
