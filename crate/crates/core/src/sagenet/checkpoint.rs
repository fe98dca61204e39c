use std::path::Path;

use super::optim::AdamState;
use super::params::Params;
use super::{LayerKind, ModelConfig, ModelError, TrainConfig};
use crate::binio::{Reader, Writer};
use crate::{BinError, ContentHash};

const MAGIC: &[u8; 4] = b"DFCK";
const VERSION: u32 = 1;

/// Divisors applied to input features and to targets before they reach the network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureScales {
    pub input: f64,
    pub output: f64,
}

impl Default for FeatureScales {
    fn default() -> Self {
        Self { input: 1.0, output: 1.0 }
    }
}

/// Trained (or freshly initialized) model with everything needed to resume or reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub train: TrainConfig,
    pub params: Params,
    pub optimizer: AdamState,
    pub scales: FeatureScales,
    /// Epoch (1-based) the parameters were taken from; 0 before training.
    pub epoch: usize,
    pub val_loss: f64,
    pub mesh_hash: ContentHash,
    pub dataset_hash: ContentHash,
    pub graph_hash: ContentHash,
}

impl Checkpoint {
    pub fn fresh(config: ModelConfig, train: TrainConfig) -> Result<Self, ModelError> {
        train.validate()?;
        let params = Params::init(&config)?;
        Ok(Self {
            optimizer: AdamState::new(params.len()),
            config,
            train,
            params,
            scales: FeatureScales::default(),
            epoch: 0,
            val_loss: f64::NAN,
            mesh_hash: ContentHash::default(),
            dataset_hash: ContentHash::default(),
            graph_hash: ContentHash::default(),
        })
    }

    pub fn n_parameters(&self) -> usize {
        self.params.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        let c = &self.config;
        w.str(c.layer_kind.name());
        w.u64(c.hidden_dim as u64);
        w.u64(c.n_layers as u64);
        w.u8(c.use_jumping_knowledge as u8);
        w.u8(c.standardize as u8);
        w.u64(c.rng_seed);
        let t = &self.train;
        w.u64(t.epochs as u64);
        for x in [t.learning_rate, t.weight_decay, t.beta1, t.beta2, t.eps] {
            w.f64(x);
        }
        w.u64(t.rng_seed);
        w.f64(self.scales.input);
        w.f64(self.scales.output);
        w.u64(self.epoch as u64);
        w.f64(self.val_loss);
        for h in [&self.mesh_hash, &self.dataset_hash, &self.graph_hash] {
            w.hash(h);
        }
        w.u64(self.optimizer.step);
        w.u64(self.params.tensors().len() as u64);
        for spec in self.params.tensors() {
            w.str(&spec.name);
            w.u64(spec.shape.len() as u64);
            for &s in &spec.shape {
                w.u64(s as u64);
            }
            let range = spec.offset..spec.offset + spec.len();
            w.f64s(&self.params.data[range.clone()]);
            w.f64s(&self.optimizer.m[range.clone()]);
            w.f64s(&self.optimizer.v[range]);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let (mut r, version) = Reader::open(bytes, MAGIC, "checkpoint")?;
        if version != VERSION {
            return Err(BinError::Version(version).into());
        }
        let limit = r.remaining();
        let layer_kind: LayerKind = r.str()?.parse()?;
        let config = ModelConfig {
            layer_kind,
            hidden_dim: r.len(limit)?,
            n_layers: r.len(limit)?,
            use_jumping_knowledge: flag(&mut r)?,
            standardize: flag(&mut r)?,
            rng_seed: r.u64()?,
        };
        config.validate()?;
        let train = TrainConfig {
            epochs: r.len(usize::MAX)?,
            learning_rate: r.f64()?,
            weight_decay: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            eps: r.f64()?,
            rng_seed: r.u64()?,
        };
        let scales = FeatureScales { input: r.f64()?, output: r.f64()? };
        let epoch = r.len(usize::MAX)?;
        let val_loss = r.f64()?;
        let mesh_hash = r.hash()?;
        let dataset_hash = r.hash()?;
        let graph_hash = r.hash()?;
        let step = r.u64()?;

        let mut params = Params::zeros(&config);
        let mut optimizer = AdamState::new(params.len());
        let n_tensors = r.len(limit)?;
        if n_tensors != params.tensors().len() {
            return Err(shape_error(format!("{n_tensors} tensors, config implies {}", params.tensors().len())));
        }
        for spec in params.tensors().to_vec() {
            let name = r.str()?;
            let rank = r.len(8)?;
            let shape = (0..rank).map(|_| r.len(limit)).collect::<Result<Vec<_>, _>>()?;
            if name != spec.name || shape != spec.shape {
                return Err(shape_error(format!("tensor {name} {shape:?}, expected {} {:?}", spec.name, spec.shape)));
            }
            let range = spec.offset..spec.offset + spec.len();
            for dst in [&mut params.data, &mut optimizer.m, &mut optimizer.v] {
                let values = r.f64s()?;
                if values.len() != spec.len() {
                    return Err(shape_error(format!("tensor {name} holds {} values, expected {}", values.len(), spec.len())));
                }
                dst[range.clone()].copy_from_slice(&values);
            }
        }
        r.finish()?;
        if !params.data.iter().all(|x| x.is_finite()) {
            return Err(BinError::Malformed("non-finite parameter".into()).into());
        }
        optimizer.step = step;
        Ok(Self { config, train, params, optimizer, scales, epoch, val_loss, mesh_hash, dataset_hash, graph_hash })
    }

    pub fn content_hash(&self) -> ContentHash {
        ContentHash::of_bytes(&self.to_bytes())
    }
}

fn flag(r: &mut Reader<'_>) -> Result<bool, BinError> {
    match r.u8()? {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(BinError::Malformed(format!("flag byte {other}"))),
    }
}

fn shape_error(msg: String) -> ModelError {
    ModelError::Format(BinError::Malformed(msg))
}

pub fn write_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<(), ModelError> {
    std::fs::write(path, checkpoint.to_bytes())?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, ModelError> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let cfg = ModelConfig { hidden_dim: 6, n_layers: 2, layer_kind: LayerKind::GraphConv, use_jumping_knowledge: true, ..Default::default() };
        let mut c = Checkpoint::fresh(cfg, TrainConfig { epochs: 7, ..Default::default() }).unwrap();
        c.optimizer.m[3] = 0.25;
        c.optimizer.step = 11;
        c.scales.output = 0.004;
        c.mesh_hash = ContentHash::of_bytes(b"mesh");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        write_checkpoint(&c, &path).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap().to_bytes(), c.to_bytes());

        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(ModelError::Format(BinError::Integrity { .. }))));
    }
}
