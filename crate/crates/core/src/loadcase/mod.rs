//! Randomized distributed surface loads and the supervised `(U_s, U)` dataset.

mod dataset;

pub use dataset::{
    build_dataset, dataset_from_bytes, dataset_to_bytes, read_dataset, write_dataset, BuildStats, Dataset, Sample, Split,
};

use rand::Rng;

use crate::binio::BinError;
use crate::hyperfem::FemError;
use crate::meshgen::{Mesh, NodeTags, Region};
use crate::Vec3;

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("invalid load spec: {0}")]
    InvalidSpec(String),
    #[error("mesh has no top-surface nodes")]
    NoTopSurface,
    #[error("no top-surface node within {radius} m of {center:?}")]
    EmptySupport { center: [f64; 3], radius: f64 },
    #[error("{failed} of {attempts} FE solves failed (limit 20%); last failure: {last_error}")]
    FailureRate { failed: usize, attempts: usize, last_error: String },
    #[error("case {case}: every one of {attempts} attempts failed; last failure: {last_error}")]
    CaseExhausted { case: usize, attempts: usize, last_error: String },
    #[error("case {case}: stored solution has residual {residual:e} N above tolerance {tolerance:e} N")]
    Unverified { case: usize, residual: f64, tolerance: f64 },
    #[error("dataset was built on mesh {expected}, got mesh {found}")]
    MeshMismatch { expected: crate::ContentHash, found: crate::ContentHash },
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error("dataset file: {0}")]
    Format(#[from] BinError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadSpec {
    pub n_locations: usize,
    /// Total number of load cases, assigned to locations round-robin.
    pub n_cases: usize,
    /// Meters.
    pub radius_range: [f64; 2],
    /// Newtons.
    pub magnitude_range: [f64; 2],
    pub rng_seed: u64,
    /// Attempts per case before the case counts as failed.
    pub max_attempts: usize,
}

impl Default for LoadSpec {
    fn default() -> Self {
        Self {
            n_locations: 10,
            n_cases: 3000,
            radius_range: [0.02, 0.032],
            magnitude_range: [120.0, 240.0],
            rng_seed: 0,
            max_attempts: 8,
        }
    }
}

impl LoadSpec {
    pub fn validate(&self) -> Result<(), LoadError> {
        let bad = |m: String| Err(LoadError::InvalidSpec(m));
        let [r0, r1] = self.radius_range;
        let [m0, m1] = self.magnitude_range;
        if self.n_locations == 0 || self.n_cases == 0 || self.max_attempts == 0 {
            return bad("n_locations, n_cases and max_attempts must be positive".into());
        }
        if !(r0.is_finite() && r1.is_finite() && r0 > 0.0 && r0 <= r1) {
            return bad(format!("radius range [{r0}, {r1}] must be positive and ordered"));
        }
        if !(m0.is_finite() && m1.is_finite() && m0 >= 0.0 && m0 <= m1) {
            return bad(format!("magnitude range [{m0}, {m1}] must be non-negative and ordered"));
        }
        Ok(())
    }
}

/// One distributed external load.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadCase {
    pub location: usize,
    pub center: Vec3,
    /// Unit vector with negative y component.
    pub direction: Vec3,
    pub magnitude: f64,
    pub radius: f64,
    pub nodal_forces: Vec<Vec3>,
}

impl LoadCase {
    pub fn total_force(&self) -> Vec3 {
        self.nodal_forces.iter().sum()
    }
}

/// Anchor nodes for load centers: half nearest the tumor, half spread by farthest-point sampling.
pub fn anchor_locations(mesh: &Mesh, n_locations: usize) -> Result<Vec<usize>, LoadError> {
    let top = mesh.nodes_with(NodeTags::TOP_SURFACE);
    if top.is_empty() {
        return Err(LoadError::NoTopSurface);
    }
    if n_locations > top.len() {
        return Err(LoadError::InvalidSpec(format!(
            "{n_locations} locations requested but only {} top-surface nodes",
            top.len()
        )));
    }
    let target = mesh.region_centroid(Region::Cancer).unwrap_or_else(|| mesh.nodes.iter().sum::<Vec3>() / mesh.n_nodes() as f64);
    let n_near = n_locations / 2;
    let mut by_distance = top.clone();
    by_distance.sort_by(|&a, &b| {
        (mesh.nodes[a] - target).norm().total_cmp(&(mesh.nodes[b] - target).norm()).then(a.cmp(&b))
    });
    let mut anchors: Vec<usize> = by_distance[..n_near].to_vec();
    let seeds = if anchors.is_empty() { vec![by_distance[0]] } else { anchors.clone() };
    let spread = farthest_point_sample(mesh, &top, &seeds, n_locations - n_near);
    anchors.extend(spread);
    Ok(anchors)
}

/// Greedy farthest-point sampling of `count` nodes from `candidates`, starting from the `seeds` set.
pub fn farthest_point_sample(mesh: &Mesh, candidates: &[usize], seeds: &[usize], count: usize) -> Vec<usize> {
    let mut dist: Vec<f64> = candidates
        .iter()
        .map(|&c| seeds.iter().map(|&s| (mesh.nodes[c] - mesh.nodes[s]).norm()).fold(f64::INFINITY, f64::min))
        .collect();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count.min(candidates.len()) {
        let (best, _) = dist
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
        let chosen = candidates[best];
        out.push(chosen);
        for (d, &c) in dist.iter_mut().zip(candidates) {
            *d = d.min((mesh.nodes[c] - mesh.nodes[chosen]).norm());
        }
    }
    out
}

/// Uniform direction on the hemisphere `y < 0`.
pub fn sample_direction(rng: &mut impl Rng) -> Vec3 {
    let down: f64 = 1.0 - rng.random::<f64>();
    let phi = rng.random::<f64>() * std::f64::consts::TAU;
    let planar = (1.0 - down * down).max(0.0).sqrt();
    Vec3::new(planar * phi.cos(), -down, planar * phi.sin())
}

fn uniform_in(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi { lo } else { rng.random_range(lo..=hi) }
}

/// Draws loads at precomputed anchor locations.
#[derive(Debug, Clone)]
pub struct LoadSampler<'m> {
    mesh: &'m Mesh,
    spec: LoadSpec,
    anchors: Vec<usize>,
}

impl<'m> LoadSampler<'m> {
    pub fn new(mesh: &'m Mesh, spec: &LoadSpec) -> Result<Self, LoadError> {
        spec.validate()?;
        Ok(Self { mesh, spec: spec.clone(), anchors: anchor_locations(mesh, spec.n_locations)? })
    }

    pub fn anchors(&self) -> &[usize] {
        &self.anchors
    }

    pub fn sample_at(&self, rng: &mut impl Rng, location: usize) -> Result<LoadCase, LoadError> {
        let center = self.mesh.nodes[self.anchors[location]];
        let mut last = None;
        for _ in 0..16 {
            let direction = sample_direction(rng);
            let magnitude = uniform_in(rng, self.spec.magnitude_range);
            let radius = uniform_in(rng, self.spec.radius_range);
            match distribute_force(self.mesh, center, direction, magnitude, radius) {
                Ok(nodal_forces) => return Ok(LoadCase { location, center, direction, magnitude, radius, nodal_forces }),
                Err(e @ LoadError::EmptySupport { .. }) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one draw"))
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Result<LoadCase, LoadError> {
        let location = rng.random_range(0..self.anchors.len());
        self.sample_at(rng, location)
    }
}

/// Draws one load case at a uniformly chosen anchor location.
pub fn sample_load(rng: &mut impl Rng, mesh: &Mesh, spec: &LoadSpec) -> Result<LoadCase, LoadError> {
    LoadSampler::new(mesh, spec)?.sample(rng)
}

/// Spreads `magnitude · direction` over the top-surface nodes strictly inside the load sphere,
/// with weights proportional to `1 − d/radius`.
pub fn distribute_force(
    mesh: &Mesh,
    center: Vec3,
    direction: Vec3,
    magnitude: f64,
    radius: f64,
) -> Result<Vec<Vec3>, LoadError> {
    let mut weights = vec![0.0; mesh.n_nodes()];
    let mut total = 0.0;
    for (i, (p, tags)) in mesh.nodes.iter().zip(&mesh.node_tags).enumerate() {
        if !tags.contains(NodeTags::TOP_SURFACE) {
            continue;
        }
        let d = (p - center).norm();
        if d < radius {
            weights[i] = 1.0 - d / radius;
            total += weights[i];
        }
    }
    if total == 0.0 {
        return Err(LoadError::EmptySupport { center: center.into(), radius });
    }
    let force = direction * magnitude;
    Ok(weights.iter().map(|w| force * (w / total)).collect())
}

/// Keeps the top-surface entries of `u` and zeroes the rest.
pub fn mask_surface(u: &[Vec3], mesh: &Mesh) -> Vec<Vec3> {
    u.iter()
        .zip(&mesh.node_tags)
        .map(|(v, t)| if t.contains(NodeTags::TOP_SURFACE) { *v } else { Vec3::zeros() })
        .collect()
}
