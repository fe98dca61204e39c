use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{mask_surface, LoadCase, LoadError, LoadSampler, LoadSpec};
use crate::binio::{BinError, Reader, Writer};
use crate::hash::derive_seed;
use crate::hyperfem::{Constraints, FemProblem, Materials, SolveOptions};
use crate::meshgen::Mesh;
use crate::{ContentHash, Vec3};

const MAGIC: &[u8; 4] = b"DFDS";
const VERSION: u32 = 1;
const MAX_FAILURE_RATE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        [Split::Train, Split::Val, Split::Test].into_iter().find(|s| s.code() == code)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub case: LoadCase,
    /// `U_s`: displacements observed on the top surface, zero elsewhere.
    pub surface: Vec<Vec3>,
    /// `U`: full displacement field.
    pub full: Vec<Vec3>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub mesh_hash: ContentHash,
    /// Hash of the load spec, materials and solver options that produced the samples.
    pub config_hash: ContentHash,
    pub n_nodes: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    /// `(train, val, test)` sample counts.
    pub fn split_counts(&self) -> (usize, usize, usize) {
        let count = |s| self.split(s).count();
        (count(Split::Train), count(Split::Val), count(Split::Test))
    }

    pub fn check_mesh(&self, mesh: &Mesh) -> Result<(), LoadError> {
        let found = mesh.content_hash();
        if found != self.mesh_hash {
            return Err(LoadError::MeshMismatch { expected: self.mesh_hash, found });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildStats {
    pub attempts: usize,
    pub failures: usize,
    pub newton_iterations: usize,
    pub cutbacks: usize,
    /// Largest post-hoc residual over its tolerance; below 1 for a valid dataset.
    pub worst_residual_ratio: f64,
    pub solve_seconds: f64,
}

struct CaseOutcome {
    sample: Option<(LoadCase, Vec<Vec3>)>,
    attempts: usize,
    failures: usize,
    last_error: String,
    iterations: usize,
    cutbacks: usize,
    residual_ratio: f64,
    seconds: f64,
}

fn run_case(problem: &FemProblem, sampler: &LoadSampler, spec: &LoadSpec, opts: &SolveOptions, case: usize) -> Result<CaseOutcome, LoadError> {
    let mut out = CaseOutcome {
        sample: None,
        attempts: 0,
        failures: 0,
        last_error: String::new(),
        iterations: 0,
        cutbacks: 0,
        residual_ratio: 0.0,
        seconds: 0.0,
    };
    let location = case % spec.n_locations;
    for attempt in 0..spec.max_attempts {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.rng_seed, &format!("case/{case}/{attempt}")));
        let load = sampler.sample_at(&mut rng, location)?;
        out.attempts += 1;
        let start = Instant::now();
        let result = problem.solve(&load.nodal_forces, opts);
        out.seconds += start.elapsed().as_secs_f64();
        match result {
            Ok((u, stats)) => {
                let residual = problem.residual_norm(&u, &load.nodal_forces)?;
                if residual >= stats.tolerance {
                    return Err(LoadError::Unverified { case, residual, tolerance: stats.tolerance });
                }
                out.residual_ratio = residual / stats.tolerance;
                out.iterations += stats.total_iterations();
                out.cutbacks += stats.cutbacks;
                out.sample = Some((load, u));
                break;
            }
            Err(e) => {
                log::warn!("case {case} attempt {attempt} (location {location}, {:.1} N): {e}; resampling", load.magnitude);
                out.failures += 1;
                out.last_error = e.to_string();
            }
        }
    }
    Ok(out)
}

/// Solves `spec.n_cases` randomized load cases and splits them 80/10/10.
///
/// Cases run in parallel; sample order and content depend only on the seeds.
pub fn build_dataset(
    mesh: &Mesh,
    materials: &Materials,
    spec: &LoadSpec,
    opts: &SolveOptions,
) -> Result<(Dataset, BuildStats), LoadError> {
    spec.validate()?;
    let sampler = LoadSampler::new(mesh, spec)?;
    let problem = FemProblem::new(mesh, materials, Constraints::bottom_fixed(mesh))?;
    let outcomes: Vec<Result<CaseOutcome, LoadError>> =
        (0..spec.n_cases).into_par_iter().map(|case| run_case(&problem, &sampler, spec, opts, case)).collect();
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut stats = BuildStats::default();
    for o in &outcomes {
        stats.attempts += o.attempts;
        stats.failures += o.failures;
        stats.newton_iterations += o.iterations;
        stats.cutbacks += o.cutbacks;
        stats.worst_residual_ratio = stats.worst_residual_ratio.max(o.residual_ratio);
        stats.solve_seconds += o.seconds;
    }
    let last_error = || outcomes.iter().rev().find(|o| o.failures > 0).map(|o| o.last_error.clone()).unwrap_or_default();
    if stats.failures as f64 > MAX_FAILURE_RATE * stats.attempts as f64 {
        return Err(LoadError::FailureRate { failed: stats.failures, attempts: stats.attempts, last_error: last_error() });
    }
    if let Some((case, o)) = outcomes.iter().enumerate().find(|(_, o)| o.sample.is_none()) {
        return Err(LoadError::CaseExhausted { case, attempts: o.attempts, last_error: o.last_error.clone() });
    }
    log::info!(
        "dataset: {} cases, {} failed attempts of {}, {} Newton iterations, {:.1} s solving",
        spec.n_cases,
        stats.failures,
        stats.attempts,
        stats.newton_iterations,
        stats.solve_seconds
    );

    let splits = assign_splits(spec.n_cases, derive_seed(spec.rng_seed, "split"));
    let samples = outcomes
        .into_iter()
        .zip(splits)
        .map(|(o, split)| {
            let (case, full) = o.sample.expect("checked above");
            Sample { surface: mask_surface(&full, mesh), full, case, split }
        })
        .collect();
    let config_hash = ContentHash::of_parts([
        ("loads", format!("{spec:?}").as_bytes()),
        ("materials", format!("{materials:?}").as_bytes()),
        ("solver", format!("{opts:?}").as_bytes()),
    ]);
    Ok((Dataset { mesh_hash: mesh.content_hash(), config_hash, n_nodes: mesh.n_nodes(), samples }, stats))
}

/// Seeded shuffle; the first tenth is Test, the next tenth Val, the rest Train.
fn assign_splits(n: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_holdout = n / 10;
    let mut splits = vec![Split::Train; n];
    for (rank, &i) in order.iter().enumerate() {
        if rank < n_holdout {
            splits[i] = Split::Test;
        } else if rank < 2 * n_holdout {
            splits[i] = Split::Val;
        }
    }
    splits
}

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), LoadError> {
    std::fs::write(path, dataset_to_bytes(dataset))?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset, LoadError> {
    dataset_from_bytes(&std::fs::read(path)?)
}

pub fn dataset_to_bytes(dataset: &Dataset) -> Vec<u8> {
    let mut w = Writer::new(MAGIC, VERSION);
    w.hash(&dataset.mesh_hash);
    w.hash(&dataset.config_hash);
    w.u64(dataset.n_nodes as u64);
    w.u64(dataset.samples.len() as u64);
    for s in &dataset.samples {
        let c = &s.case;
        w.u8(s.split.code());
        w.u64(c.location as u64);
        w.vec3(&c.center);
        w.vec3(&c.direction);
        w.f64(c.magnitude);
        w.f64(c.radius);
        let loaded: Vec<(usize, &Vec3)> = c.nodal_forces.iter().enumerate().filter(|(_, f)| **f != Vec3::zeros()).collect();
        w.u64(loaded.len() as u64);
        for (i, f) in loaded {
            w.u64(i as u64);
            w.vec3(f);
        }
        w.field(&s.surface);
        w.field(&s.full);
    }
    w.finish()
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Dataset, LoadError> {
    let (mut r, version) = Reader::open(bytes, MAGIC, "dataset")?;
    if version != VERSION {
        return Err(BinError::Version(version).into());
    }
    let mesh_hash = r.hash()?;
    let config_hash = r.hash()?;
    let n_nodes = r.len(r.remaining())?;
    let n_samples = r.len(r.remaining())?;
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let split = Split::from_code(r.u8()?).ok_or_else(|| BinError::Malformed("unknown split tag".into()))?;
        let location = r.u64()? as usize;
        let center = r.vec3()?;
        let direction = r.vec3()?;
        let magnitude = r.f64()?;
        let radius = r.f64()?;
        let n_loaded = r.len(n_nodes)?;
        let mut nodal_forces = vec![Vec3::zeros(); n_nodes];
        for _ in 0..n_loaded {
            let i = r.u64()? as usize;
            if i >= n_nodes {
                return Err(BinError::Malformed(format!("force on node {i} of {n_nodes}")).into());
            }
            nodal_forces[i] = r.vec3()?;
        }
        let surface = r.field(n_nodes)?;
        let full = r.field(n_nodes)?;
        if surface.iter().chain(&full).any(|v| !v.iter().all(|x| x.is_finite())) {
            return Err(BinError::Malformed("non-finite displacement".into()).into());
        }
        samples.push(Sample {
            case: LoadCase { location, center, direction, magnitude, radius, nodal_forces },
            surface,
            full,
            split,
        });
    }
    r.finish()?;
    Ok(Dataset { mesh_hash, config_hash, n_nodes, samples })
}
