//! Accuracy metrics (RMSE, winding-number voxelization, Dice) and FE-versus-surrogate timing.

mod bench;
mod voxel;

pub use bench::{benchmark, BenchOptions, CaseTiming, Precision, TimingReport};
pub use voxel::{voxelize_region, winding_number, VoxelRegion};

use std::fmt::Write as _;

use crate::loadcase::{Dataset, LoadError, Split};
use crate::meshgen::{extract_region_surface, ElementSet, Mesh, MeshError, Region, SurfaceTriangulation};
use crate::meshgraph::DeformationGraph;
use crate::sagenet::{Checkpoint, InferenceModel, ModelError};
use crate::hyperfem::FemError;
use crate::Vec3;

pub const DEFAULT_RESOLUTION: f64 = 0.001;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("RMSE over an empty node set")]
    EmptySubset,
    #[error("field sizes differ: {0}")]
    Shape(String),
    #[error("voxel resolution {0} must be positive")]
    InvalidResolution(f64),
    #[error("surface has a degenerate bounding box")]
    DegenerateBoundingBox,
    #[error("Dice coefficient of two empty voxel sets")]
    EmptyVoxelSets,
    #[error("voxel sets use different lattices")]
    LatticeMismatch,
    #[error("no samples in the {0} split")]
    EmptySplit(&'static str),
    #[error("benchmark needs at least one case and one repeat")]
    InvalidBenchmark,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
}

/// Root-mean-square of the per-node Euclidean error over `nodes` (all nodes when `None`), in millimeters.
pub fn rmse(pred: &[Vec3], target: &[Vec3], nodes: Option<&[usize]>) -> Result<f64, EvalError> {
    if pred.len() != target.len() {
        return Err(EvalError::Shape(format!("{} predicted vs {} target nodes", pred.len(), target.len())));
    }
    let sum_count = match nodes {
        None => (pred.iter().zip(target).map(|(p, t)| (p - t).norm_squared()).sum::<f64>(), pred.len()),
        Some(ids) => {
            if let Some(&bad) = ids.iter().find(|&&i| i >= pred.len()) {
                return Err(EvalError::Shape(format!("node {bad} outside a field of {}", pred.len())));
            }
            (ids.iter().map(|&i| (pred[i] - target[i]).norm_squared()).sum::<f64>(), ids.len())
        }
    };
    if sum_count.1 == 0 {
        return Err(EvalError::EmptySubset);
    }
    Ok((sum_count.0 / sum_count.1 as f64).sqrt() * 1e3)
}

/// `2|A∩B| / (|A|+|B|)`.
pub fn dsc(target: &VoxelRegion, pred: &VoxelRegion) -> Result<f64, EvalError> {
    if target.resolution != pred.resolution || target.origin != pred.origin {
        return Err(EvalError::LatticeMismatch);
    }
    let total = target.len() + pred.len();
    if total == 0 {
        return Err(EvalError::EmptyVoxelSets);
    }
    let (small, large) = if target.len() <= pred.len() { (target, pred) } else { (pred, target) };
    let common = small.occupancy.iter().filter(|k| large.occupancy.contains(*k)).count();
    Ok(2.0 * common as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleMetrics {
    /// Index of the sample in its dataset.
    pub sample: usize,
    pub global_rmse_mm: f64,
    pub cancer_rmse_mm: f64,
    pub dsc: f64,
    /// Mean ground-truth displacement magnitude over cancer nodes, in millimeters.
    pub cancer_displacement_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub samples: Vec<SampleMetrics>,
}

impl MetricsReport {
    fn mean(&self, f: impl Fn(&SampleMetrics) -> f64) -> f64 {
        self.samples.iter().map(f).sum::<f64>() / self.samples.len() as f64
    }

    pub fn global_rmse_mm(&self) -> f64 {
        self.mean(|s| s.global_rmse_mm)
    }

    pub fn cancer_rmse_mm(&self) -> f64 {
        self.mean(|s| s.cancer_rmse_mm)
    }

    pub fn dsc(&self) -> f64 {
        self.mean(|s| s.dsc)
    }

    pub fn cancer_displacement_mm(&self) -> f64 {
        self.mean(|s| s.cancer_displacement_mm)
    }

    /// One `key=value` record per sample followed by a `mean` record.
    pub fn records(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            let _ = writeln!(
                out,
                "sample={} global_rmse_mm={:.6} cancer_rmse_mm={:.6} dsc={:.6} cancer_displacement_mm={:.6}",
                s.sample, s.global_rmse_mm, s.cancer_rmse_mm, s.dsc, s.cancer_displacement_mm
            );
        }
        let _ = writeln!(
            out,
            "sample=mean global_rmse_mm={:.6} cancer_rmse_mm={:.6} dsc={:.6} cancer_displacement_mm={:.6}",
            self.global_rmse_mm(),
            self.cancer_rmse_mm(),
            self.dsc(),
            self.cancer_displacement_mm()
        );
        out
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "| Sample | Global RMSE (mm) | Cancer RMSE (mm) | DSC |");
        let _ = writeln!(out, "|---|---|---|---|");
        for s in &self.samples {
            let _ = writeln!(out, "| {} | {:.3} | {:.3} | {:.3} |", s.sample, s.global_rmse_mm, s.cancer_rmse_mm, s.dsc);
        }
        let _ = writeln!(
            out,
            "| Mean | {:.3} | {:.3} | {:.3} |",
            self.global_rmse_mm(),
            self.cancer_rmse_mm(),
            self.dsc()
        );
        out
    }
}

/// Reference geometry shared by every scored sample of one mesh.
#[derive(Debug, Clone)]
pub struct Scorer {
    cancer_nodes: Vec<usize>,
    cancer_surface: SurfaceTriangulation,
    resolution: f64,
}

impl Scorer {
    pub fn new(mesh: &Mesh, resolution: f64) -> Result<Self, EvalError> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(EvalError::InvalidResolution(resolution));
        }
        Ok(Self {
            cancer_nodes: mesh.region_nodes(Region::Cancer),
            cancer_surface: extract_region_surface(mesh, ElementSet::Region(Region::Cancer))?,
            resolution,
        })
    }

    pub fn cancer_nodes(&self) -> &[usize] {
        &self.cancer_nodes
    }

    /// Voxelized cancer region after applying `displacement` to the reference surface.
    pub fn cancer_voxels(&self, displacement: &[Vec3]) -> Result<VoxelRegion, EvalError> {
        voxelize_region(&self.cancer_surface.deformed(displacement), self.resolution)
    }

    pub fn score(&self, sample: usize, pred: &[Vec3], target: &[Vec3]) -> Result<SampleMetrics, EvalError> {
        let target_voxels = self.cancer_voxels(target)?;
        self.score_with(sample, pred, target, &target_voxels)
    }

    /// As [`Scorer::score`] with the target voxelization supplied by the caller.
    pub fn score_with(&self, sample: usize, pred: &[Vec3], target: &[Vec3], target_voxels: &VoxelRegion) -> Result<SampleMetrics, EvalError> {
        let cancer_displacement_mm =
            self.cancer_nodes.iter().map(|&i| target[i].norm()).sum::<f64>() / self.cancer_nodes.len().max(1) as f64 * 1e3;
        Ok(SampleMetrics {
            sample,
            global_rmse_mm: rmse(pred, target, None)?,
            cancer_rmse_mm: rmse(pred, target, Some(&self.cancer_nodes))?,
            dsc: dsc(target_voxels, &self.cancer_voxels(pred)?)?,
            cancer_displacement_mm,
        })
    }
}

/// Scores the checkpoint on every sample of `split`, in dataset order.
pub fn evaluate(
    checkpoint: &Checkpoint,
    dataset: &Dataset,
    split: Split,
    mesh: &Mesh,
    graph: &DeformationGraph,
    resolution: f64,
) -> Result<MetricsReport, EvalError> {
    dataset.check_mesh(mesh)?;
    let scorer = Scorer::new(mesh, resolution)?;
    let mut model = InferenceModel::<f64>::new(checkpoint);
    let mut g = graph.clone();
    let mut report = MetricsReport::default();
    for (i, s) in dataset.samples.iter().enumerate().filter(|(_, s)| s.split == split) {
        g.set_features(&s.surface).map_err(|e| EvalError::Shape(e.to_string()))?;
        let pred = model.predict(&g)?;
        report.samples.push(scorer.score(i, &pred, &s.full)?);
    }
    if report.samples.is_empty() {
        return Err(EvalError::EmptySplit(split.name()));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::loadcase::test_support::coarse_phantom;

    #[test]
    fn rmse_examples() {
        let a = vec![Vec3::new(0.003, 0.004, 0.0)];
        assert!((rmse(&a, &[Vec3::zeros()], None).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(rmse(&a, &a, None).unwrap(), 0.0);
        assert!(matches!(rmse(&a, &a, Some(&[])), Err(EvalError::EmptySubset)));
        let shift = Vec3::new(1.0, -2.0, 0.5);
        let b = vec![Vec3::new(0.001, 0.0, 0.0), Vec3::new(0.0, 0.002, 0.0)];
        let z = vec![Vec3::zeros(); 2];
        let moved: Vec<Vec3> = b.iter().map(|v| v + shift).collect();
        let moved_z: Vec<Vec3> = z.iter().map(|v| v + shift).collect();
        assert!((rmse(&b, &z, None).unwrap() - rmse(&moved, &moved_z, None).unwrap()).abs() < 1e-9);
    }

    fn region(cells: impl IntoIterator<Item = [i64; 3]>) -> VoxelRegion {
        VoxelRegion { origin: Vec3::zeros(), resolution: 0.001, lower: [0; 3], upper: [200; 3], occupancy: cells.into_iter().collect() }
    }

    #[test]
    fn dice_examples() {
        let a = region((0..100).map(|i| [i, 0, 0]));
        let b = region((20..120).map(|i| [i, 0, 0]));
        assert!((dsc(&a, &b).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(dsc(&a, &b).unwrap(), dsc(&b, &a).unwrap());
        assert_eq!(dsc(&a, &a).unwrap(), 1.0);
        assert_eq!(dsc(&a, &region((150..160).map(|i| [i, 1, 0]))).unwrap(), 0.0);
        assert!(matches!(dsc(&region([]), &region([])), Err(EvalError::EmptyVoxelSets)));
    }

    #[test]
    fn metrics_match_naive_loops() {
        let mesh = coarse_phantom();
        let scorer = Scorer::new(&mesh, 0.002).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for sample in 0..3 {
            let target: Vec<Vec3> = (0..mesh.n_nodes())
                .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-2.0..0.0), rng.random_range(-1.0..1.0)) * 1e-3)
                .collect();
            let pred: Vec<Vec3> = target.iter().map(|v| v + Vec3::new(rng.random_range(-5e-4..5e-4), 2e-4, 0.0)).collect();
            let m = scorer.score(sample, &pred, &target).unwrap();

            let node_error = |i: usize| {
                let (dx, dy, dz) = (pred[i].x - target[i].x, pred[i].y - target[i].y, pred[i].z - target[i].z);
                dx * dx + dy * dy + dz * dz
            };
            let mut sq = 0.0;
            for i in 0..mesh.n_nodes() {
                sq += node_error(i);
            }
            assert_eq!(m.global_rmse_mm, (sq / mesh.n_nodes() as f64).sqrt() * 1e3);
            let cancer = mesh.region_nodes(Region::Cancer);
            let mut sq = 0.0;
            for &i in &cancer {
                sq += node_error(i);
            }
            assert_eq!(m.cancer_rmse_mm, (sq / cancer.len() as f64).sqrt() * 1e3);

            let vt: Vec<[i64; 3]> = scorer.cancer_voxels(&target).unwrap().occupancy.into_iter().collect();
            let vp: Vec<[i64; 3]> = scorer.cancer_voxels(&pred).unwrap().occupancy.into_iter().collect();
            let mut common = 0;
            for a in &vt {
                for b in &vp {
                    if a == b {
                        common += 1;
                    }
                }
            }
            assert_eq!(m.dsc, 2.0 * common as f64 / (vt.len() + vp.len()) as f64);
        }
    }

    #[test]
    fn ground_truth_scores_perfectly() {
        let mesh = coarse_phantom();
        let scorer = Scorer::new(&mesh, 0.002).unwrap();
        let u: Vec<Vec3> = mesh.nodes.iter().map(|p| Vec3::new(0.0, -0.05 * p.y, 0.01 * p.x)).collect();
        let m = scorer.score(0, &u, &u).unwrap();
        assert_eq!((m.global_rmse_mm, m.cancer_rmse_mm, m.dsc), (0.0, 0.0, 1.0));
        let zero = vec![Vec3::zeros(); mesh.n_nodes()];
        let reference = voxelize_region(&extract_region_surface(&mesh, ElementSet::Region(Region::Cancer)).unwrap(), 0.002).unwrap();
        assert_eq!(scorer.cancer_voxels(&zero).unwrap(), reference);
    }

    #[test]
    fn table_layout() {
        let r = MetricsReport {
            samples: vec![SampleMetrics { sample: 4, global_rmse_mm: 0.5, cancer_rmse_mm: 0.25, dsc: 0.95, cancer_displacement_mm: 3.0 }],
        };
        assert!(r.table().starts_with("| Sample | Global RMSE (mm) | Cancer RMSE (mm) | DSC |"));
        assert!(r.table().contains("| Mean | 0.500 | 0.250 | 0.950 |"));
        assert_eq!(r.records().lines().count(), 2);
    }
}
