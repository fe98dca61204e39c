use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, FeatureScales};
use super::model::{forward, forward_params, loss_and_gradients};
use super::optim::adamw_step;
use super::{ModelConfig, ModelError, TrainConfig};
use crate::hash::derive_seed;
use crate::loadcase::{Dataset, Sample, Split};
use crate::meshgraph::DeformationGraph;
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-step loss over the epoch, in m².
    pub train_loss: f64,
    /// Mean loss over validation samples after the epoch, in m²; NaN without a validation split.
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub seconds: f64,
}

impl History {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|r| r.epoch == self.best_epoch)
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for v in values {
        sum += v * v;
        count += 1;
    }
    let r = if count == 0 { 0.0 } else { (sum / count as f64).sqrt() };
    if r > 0.0 && r.is_finite() {
        r
    } else {
        1.0
    }
}

fn scales_for(samples: &[&Sample]) -> FeatureScales {
    FeatureScales {
        input: rms(samples.iter().flat_map(|s| s.surface.iter().filter(|v| **v != Vec3::zeros()).flat_map(|v| v.iter().copied()))),
        output: rms(samples.iter().flat_map(|s| s.full.iter().flat_map(|v| v.iter().copied()))),
    }
}

fn mse(pred: &[Vec3], target: &[Vec3]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t).norm_squared()).sum::<f64>() / (3 * pred.len()) as f64
}

/// One sample per AdamW step, reshuffled every epoch; keeps the parameters with the lowest
/// validation loss (training loss when there is no validation split).
pub fn train(
    dataset: &Dataset,
    graph: &DeformationGraph,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<(Checkpoint, History), ModelError> {
    model.validate()?;
    config.validate()?;
    if graph.n_nodes != dataset.n_nodes {
        return Err(ModelError::Shape(format!("graph has {} nodes, dataset {}", graph.n_nodes, dataset.n_nodes)));
    }
    let train_idx: Vec<usize> = (0..dataset.samples.len()).filter(|&i| dataset.samples[i].split == Split::Train).collect();
    if train_idx.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    let val: Vec<&Sample> = dataset.split(Split::Val).collect();
    let start = Instant::now();

    let mut ckpt = Checkpoint::fresh(model.clone(), config.clone())?;
    ckpt.mesh_hash = dataset.mesh_hash;
    if model.standardize {
        let samples: Vec<&Sample> = train_idx.iter().map(|&i| &dataset.samples[i]).collect();
        ckpt.scales = scales_for(&samples);
    }
    let scale2 = ckpt.scales.output * ckpt.scales.output;
    let mut g = graph.clone();
    let mut best = ckpt.clone();
    let mut history = History::default();
    let mut best_metric = f64::INFINITY;
    let mut order = train_idx;

    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.rng_seed, &format!("epoch/{epoch}")));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let s = &dataset.samples[i];
            g.set_features(&s.surface).map_err(|e| ModelError::Shape(e.to_string()))?;
            let (loss, grads) = loss_and_gradients(&ckpt.config, &ckpt.params, &ckpt.scales, &g, &s.full)?;
            if !loss.is_finite() || !grads.data.iter().all(|x| x.is_finite()) {
                return Err(ModelError::NonFiniteLoss { epoch, sample: i });
            }
            total += loss * scale2;
            adamw_step(&mut ckpt.params, &grads, &mut ckpt.optimizer, config);
        }
        let train_loss = total / order.len() as f64;
        let val_loss = if val.is_empty() {
            f64::NAN
        } else {
            let mut sum = 0.0;
            for s in &val {
                g.set_features(&s.surface).map_err(|e| ModelError::Shape(e.to_string()))?;
                sum += mse(&forward_params(&ckpt.config, &ckpt.params, &ckpt.scales, &g)?, &s.full);
            }
            sum / val.len() as f64
        };
        history.epochs.push(EpochRecord { epoch, train_loss, val_loss });
        let metric = if val.is_empty() { train_loss } else { val_loss };
        if metric < best_metric {
            best_metric = metric;
            ckpt.epoch = epoch;
            ckpt.val_loss = val_loss;
            best = ckpt.clone();
            history.best_epoch = epoch;
        }
        if epoch % 50 == 0 || epoch == config.epochs {
            log::info!("epoch {epoch}/{}: train {train_loss:.3e} m², val {val_loss:.3e} m²", config.epochs);
        } else {
            log::debug!("epoch {epoch}: train {train_loss:.3e}, val {val_loss:.3e}");
        }
    }
    history.seconds = start.elapsed().as_secs_f64();
    Ok((best, history))
}

/// Forward pass with wall-clock timing of the forward only.
pub fn predict(graph: &DeformationGraph, checkpoint: &Checkpoint) -> Result<(Vec<Vec3>, f64), ModelError> {
    let start = Instant::now();
    let out = forward(graph, checkpoint)?;
    Ok((out, start.elapsed().as_secs_f64()))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};

    use super::*;
    use crate::loadcase::LoadCase;

    fn synthetic_dataset(n_train: usize, n_val: usize) -> (Dataset, DeformationGraph) {
        let n = 16;
        let edges: Vec<(usize, usize)> = (0..n).flat_map(|a| [(a, (a + 1) % n), (a, (a + 5) % n)]).collect();
        let graph = DeformationGraph::from_edges(n, &edges, &[]);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let samples = (0..n_train + n_val)
            .map(|k| {
                let amp = rng.random_range(0.5..1.5) * 1e-3;
                let full: Vec<Vec3> = (0..n).map(|i| Vec3::new((i as f64 * 0.4).sin(), 0.5, (i as f64 * 0.3).cos()) * amp).collect();
                let surface = full.iter().enumerate().map(|(i, u)| if i % 3 == 0 { *u } else { Vec3::zeros() }).collect();
                Sample {
                    case: LoadCase {
                        location: 0,
                        center: Vec3::zeros(),
                        direction: Vec3::y(),
                        magnitude: 1.0,
                        radius: 0.01,
                        nodal_forces: vec![Vec3::zeros(); n],
                    },
                    surface,
                    full,
                    split: if k < n_train { Split::Train } else { Split::Val },
                }
            })
            .collect();
        (Dataset { mesh_hash: Default::default(), config_hash: Default::default(), n_nodes: n, samples }, graph)
    }

    #[test]
    fn single_sample_is_memorised() {
        let (ds, mut g) = synthetic_dataset(1, 0);
        let model = ModelConfig { hidden_dim: 32, n_layers: 2, standardize: true, rng_seed: 2, ..Default::default() };
        let cfg = TrainConfig { epochs: 500, learning_rate: 1e-2, weight_decay: 0.0, ..Default::default() };
        let (ckpt, h) = train(&ds, &g, &model, &cfg).unwrap();
        let s = &ds.samples[0];
        g.set_features(&s.surface).unwrap();
        let first = h.epochs[0].train_loss;
        let last = mse(&forward(&g, &ckpt).unwrap(), &s.full);
        assert!(last < 1e-6 * first, "loss {first:e} -> {last:e}");
    }

    #[test]
    fn returns_best_validation_epoch_and_is_reproducible() {
        let (ds, g) = synthetic_dataset(6, 2);
        let model = ModelConfig { hidden_dim: 8, n_layers: 2, ..Default::default() };
        let cfg = TrainConfig { epochs: 30, learning_rate: 5e-3, rng_seed: 4, ..Default::default() };
        let (ckpt, h) = train(&ds, &g, &model, &cfg).unwrap();
        let best = h.best().unwrap();
        assert!(h.epochs.iter().all(|r| best.val_loss <= r.val_loss));
        assert!(best.val_loss <= h.last().unwrap().val_loss);
        assert_eq!(ckpt.epoch, best.epoch);

        let mut probe = g.clone();
        let s = ds.split(Split::Val).next().unwrap();
        probe.set_features(&s.surface).unwrap();
        let (pred, secs) = predict(&probe, &ckpt).unwrap();
        assert!(secs > 0.0);
        assert_eq!(pred, forward(&probe, &ckpt).unwrap());

        let (again, h2) = train(&ds, &g, &model, &cfg).unwrap();
        let losses = |h: &History| h.epochs.iter().map(|r| (r.train_loss.to_bits(), r.val_loss.to_bits())).collect::<Vec<_>>();
        assert_eq!(losses(&h), losses(&h2));
        assert_eq!(again.params, ckpt.params);
    }

    #[test]
    fn empty_training_split_is_rejected() {
        let (mut ds, g) = synthetic_dataset(2, 1);
        ds.samples.iter_mut().for_each(|s| s.split = Split::Test);
        assert!(matches!(train(&ds, &g, &ModelConfig::default(), &TrainConfig::default()), Err(ModelError::EmptyTrainingSet)));
    }
}
