use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    boundary_faces, face_component_labels, tet_triple, ElementSet, Mesh, MeshError, NodeTags, Region,
    BASE_PLANE_TOLERANCE,
};
use crate::Vec3;

/// Geometry of a hemispherical breast phantom with one spherical tumor.
///
/// The hemisphere is centred at the origin with its flat base on `y = 0` and
/// the dome towards `+y`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub breast_radius: f64,
    pub tumor_center: Vec3,
    pub tumor_radius: f64,
    pub target_edge_length: f64,
    pub rng_seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            breast_radius: 0.06,
            tumor_center: Vec3::new(0.008, 0.024, -0.004),
            tumor_radius: 0.014,
            target_edge_length: 0.006,
            rng_seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<(), MeshError> {
        let finite = [self.breast_radius, self.tumor_radius, self.target_edge_length]
            .iter()
            .chain(self.tumor_center.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(MeshError::InvalidSpec("non-finite value".into()));
        }
        if !(self.breast_radius > 0.0) {
            return Err(MeshError::InvalidSpec("breast_radius must be positive".into()));
        }
        if !(self.target_edge_length > 0.0) {
            return Err(MeshError::InvalidSpec("target_edge_length must be positive".into()));
        }
        if self.breast_radius < 2.0 * self.target_edge_length {
            return Err(MeshError::InvalidSpec("target_edge_length too coarse for breast_radius".into()));
        }
        if self.tumor_radius < 0.0 {
            return Err(MeshError::InvalidSpec("tumor_radius must be non-negative".into()));
        }
        if self.tumor_center.norm() + self.tumor_radius >= self.breast_radius
            || self.tumor_center.y - self.tumor_radius <= 0.0
        {
            return Err(MeshError::InvalidSpec("tumor sphere intersects the hemisphere boundary".into()));
        }
        Ok(())
    }
}

/// Nodes closer than this fraction of the grid spacing to a boundary sphere are snapped onto it.
const SNAP_FRACTION: f64 = 0.4;
/// Elements flattened below this fraction of the undistorted grid-tet volume are rejected.
const MIN_QUALITY: f64 = 0.15;

/// Vertex offsets of the six Kuhn tetrahedra of a unit cube; they all share the
/// main diagonal, so neighbouring cubes triangulate conformingly.
fn kuhn_tets() -> [[[usize; 3]; 4]; 6] {
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    perms.map(|p| {
        let mut corner = [0usize; 3];
        let mut verts = [[0usize; 3]; 4];
        for (step, &axis) in p.iter().enumerate() {
            corner[axis] = 1;
            verts[step + 1] = corner;
        }
        verts
    })
}

/// Builds the tagged phantom mesh.
///
/// A regular grid (spacing `target_edge_length`, base plane on a grid layer,
/// seeded sub-cell offset in x and z) is split into Kuhn tetrahedra. Nodes near
/// the dome or the tumor sphere are projected onto them, elements whose centroid
/// lies outside the hemisphere are dropped, and elements are tagged `Cancer` by
/// centroid inclusion in the tumor sphere.
pub fn build_phantom(spec: &PhantomSpec) -> Result<Mesh, MeshError> {
    spec.validate()?;
    let h = spec.target_edge_length;
    let r_outer = spec.breast_radius;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let offset_x = (rng.random::<f64>() - 0.5) * h;
    let offset_z = (rng.random::<f64>() - 0.5) * h;

    let i_lo = ((-r_outer - offset_x) / h).floor() as i64 - 1;
    let i_hi = ((r_outer - offset_x) / h).ceil() as i64 + 1;
    let k_lo = ((-r_outer - offset_z) / h).floor() as i64 - 1;
    let k_hi = ((r_outer - offset_z) / h).ceil() as i64 + 1;
    let j_hi = (r_outer / h).ceil() as i64 + 1;
    let (ni, nj, nk) = ((i_hi - i_lo + 1) as usize, (j_hi + 1) as usize, (k_hi - k_lo + 1) as usize);
    let grid_index = |i: usize, j: usize, k: usize| (i * nj + j) * nk + k;

    let mut original = Vec::with_capacity(ni * nj * nk);
    for i in 0..ni {
        for j in 0..nj {
            for k in 0..nk {
                original.push(Vec3::new(
                    offset_x + (i_lo + i as i64) as f64 * h,
                    j as f64 * h,
                    offset_z + (k_lo + k as i64) as f64 * h,
                ));
            }
        }
    }

    let mut positions = original.clone();
    let mut snapped = vec![false; original.len()];
    for (p, flag) in positions.iter_mut().zip(snapped.iter_mut()) {
        let dist = p.norm();
        if dist > 0.0 && (dist - r_outer).abs() < SNAP_FRACTION * h {
            *p *= r_outer / dist;
            *flag = true;
            continue;
        }
        if spec.tumor_radius > 0.0 && p.y > 0.0 {
            let rel = *p - spec.tumor_center;
            let dist = rel.norm();
            if dist > 0.0 && (dist - spec.tumor_radius).abs() < SNAP_FRACTION * h {
                *p = spec.tumor_center + rel * (spec.tumor_radius / dist);
                *flag = true;
            }
        }
    }

    let mut candidates: Vec<[usize; 4]> = Vec::new();
    for i in 0..ni - 1 {
        for j in 0..nj - 1 {
            for k in 0..nk - 1 {
                for tet in kuhn_tets() {
                    let ids = tet.map(|[a, b, c]| grid_index(i + a, j + b, k + c));
                    let sign = tet_triple(&original[ids[0]], &original[ids[1]], &original[ids[2]], &original[ids[3]]);
                    candidates.push(if sign > 0.0 { ids } else { [ids[0], ids[2], ids[1], ids[3]] });
                }
            }
        }
    }

    let grid_volume = h * h * h;
    let inside = |c: &Vec3| c.y > 0.0 && c.norm() < r_outer;
    let kept = loop {
        let kept: Vec<[usize; 4]> = candidates
            .iter()
            .copied()
            .filter(|ids| inside(&(ids.iter().map(|&n| positions[n]).sum::<Vec3>() / 4.0)))
            .collect();
        let mut reverted = false;
        for ids in &kept {
            let q = tet_triple(&positions[ids[0]], &positions[ids[1]], &positions[ids[2]], &positions[ids[3]]);
            if q < MIN_QUALITY * grid_volume {
                for &n in ids {
                    if snapped[n] {
                        snapped[n] = false;
                        positions[n] = original[n];
                        reverted = true;
                    }
                }
            }
        }
        if !reverted {
            break kept;
        }
    };

    // Drop elements around non-manifold edges of the outer boundary until it is a manifold.
    let mut kept = kept;
    loop {
        let regions = vec![Region::Normal; kept.len()];
        let bad = nonmanifold_edges(&kept, &regions, ElementSet::All);
        if bad.is_empty() {
            break;
        }
        kept.retain(|ids| !bad.iter().any(|&(a, b)| ids.contains(&a) && ids.contains(&b)));
    }

    // Keep the largest face-connected component; ties go to the lowest label.
    let labels = face_component_labels(&kept);
    let n_labels = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; n_labels];
    for &l in &labels {
        sizes[l] += 1;
    }
    let main = (0..n_labels).max_by_key(|&l| (sizes[l], std::cmp::Reverse(l))).unwrap_or(0);
    let kept: Vec<[usize; 4]> = kept.into_iter().zip(&labels).filter(|(_, &l)| l == main).map(|(e, _)| e).collect();

    let mut new_index = vec![usize::MAX; positions.len()];
    let mut nodes = Vec::new();
    let mut used = vec![false; positions.len()];
    for ids in &kept {
        for &n in ids {
            used[n] = true;
        }
    }
    for (n, &u) in used.iter().enumerate() {
        if u {
            new_index[n] = nodes.len();
            nodes.push(positions[n]);
        }
    }
    let elements: Vec<[usize; 4]> = kept.iter().map(|ids| ids.map(|n| new_index[n])).collect();

    let mut element_region: Vec<Region> = elements
        .iter()
        .map(|ids| {
            let c = ids.iter().map(|&n| nodes[n]).sum::<Vec3>() / 4.0;
            if (c - spec.tumor_center).norm() < spec.tumor_radius {
                Region::Cancer
            } else {
                Region::Normal
            }
        })
        .collect();
    if !element_region.contains(&Region::Cancer) {
        return Err(MeshError::NoCancerElements);
    }
    // Close pinched spots of the tumor boundary by absorbing the normal elements around them.
    loop {
        let bad = nonmanifold_edges(&elements, &element_region, ElementSet::Region(Region::Cancer));
        if bad.is_empty() {
            break;
        }
        for (ids, region) in elements.iter().zip(element_region.iter_mut()) {
            if bad.iter().any(|&(a, b)| ids.contains(&a) && ids.contains(&b)) {
                *region = Region::Cancer;
            }
        }
    }

    let node_tags = tag_nodes(&nodes, &elements, &element_region);
    let mesh = Mesh { nodes, elements, element_region, node_tags };
    mesh.validate()?;
    Ok(mesh)
}

/// Undirected edges used twice in the same direction by the boundary of `set`.
fn nonmanifold_edges(elements: &[[usize; 4]], regions: &[Region], set: ElementSet) -> Vec<(usize, usize)> {
    let mut directed: HashMap<(usize, usize), u32> = HashMap::new();
    for [a, b, c] in boundary_faces(elements, regions, set) {
        for edge in [(a, b), (b, c), (c, a)] {
            *directed.entry(edge).or_default() += 1;
        }
    }
    let mut bad: Vec<(usize, usize)> =
        directed.into_iter().filter(|&(_, n)| n > 1).map(|((a, b), _)| (a.min(b), a.max(b))).collect();
    bad.sort_unstable();
    bad.dedup();
    bad
}

fn tag_nodes(nodes: &[Vec3], elements: &[[usize; 4]], regions: &[Region]) -> Vec<NodeTags> {
    let mut tags = vec![NodeTags::empty(); nodes.len()];
    for (tag, p) in tags.iter_mut().zip(nodes) {
        if p.y.abs() < BASE_PLANE_TOLERANCE {
            *tag |= NodeTags::BOTTOM_FIXED;
        }
    }
    for face in boundary_faces(elements, regions, ElementSet::All) {
        for n in face {
            if !tags[n].contains(NodeTags::BOTTOM_FIXED) {
                tags[n] |= NodeTags::TOP_SURFACE;
            }
        }
    }
    for face in boundary_faces(elements, regions, ElementSet::Region(Region::Cancer)) {
        for n in face {
            tags[n] |= NodeTags::CANCER_SURFACE;
        }
    }
    for (ids, &r) in elements.iter().zip(regions) {
        if r == Region::Cancer {
            for &n in ids {
                if !tags[n].contains(NodeTags::CANCER_SURFACE) {
                    tags[n] |= NodeTags::CANCER_INTERIOR;
                }
            }
        }
    }
    tags
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::meshgen::extract_region_surface;

    fn desk_spec() -> PhantomSpec {
        PhantomSpec::default()
    }

    #[test]
    fn kuhn_split_fills_the_cube() {
        let unit: f64 = kuhn_tets()
            .iter()
            .map(|t| {
                let p = t.map(|[a, b, c]| Vec3::new(a as f64, b as f64, c as f64));
                tet_triple(&p[0], &p[1], &p[2], &p[3]).abs() / 6.0
            })
            .sum();
        assert!((unit - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_radius_tumor_is_rejected() {
        let spec = PhantomSpec { tumor_radius: 0.0, ..desk_spec() };
        assert!(matches!(build_phantom(&spec), Err(MeshError::NoCancerElements)));
    }

    #[test]
    fn tumor_touching_the_dome_is_rejected() {
        let spec = PhantomSpec { tumor_center: Vec3::new(0.0, 0.05, 0.0), tumor_radius: 0.015, ..desk_spec() };
        assert!(matches!(build_phantom(&spec), Err(MeshError::InvalidSpec(_))));
        let spec = PhantomSpec { tumor_center: Vec3::new(0.0, 0.01, 0.0), tumor_radius: 0.015, ..desk_spec() };
        assert!(matches!(build_phantom(&spec), Err(MeshError::InvalidSpec(_))));
    }

    #[test]
    fn hemisphere_volume_matches_analytic() {
        let mesh = build_phantom(&desk_spec()).unwrap();
        let exact = 2.0 / 3.0 * PI * 0.06f64.powi(3);
        let rel = (mesh.total_volume() - exact).abs() / exact;
        assert!(rel < 0.05, "relative volume error {rel}");
    }

    #[test]
    fn build_is_deterministic_and_seed_dependent() {
        let a = build_phantom(&desk_spec()).unwrap();
        let b = build_phantom(&desk_spec()).unwrap();
        assert_eq!(a, b);
        let c = build_phantom(&PhantomSpec { rng_seed: 99, ..desk_spec() }).unwrap();
        assert_ne!(a.nodes, c.nodes);
    }

    #[test]
    fn tags_are_consistent_with_surfaces() {
        let mesh = build_phantom(&desk_spec()).unwrap();
        let cancer = extract_region_surface(&mesh, ElementSet::Region(Region::Cancer)).unwrap();
        let mut on_surface: Vec<usize> = cancer.source_nodes.clone();
        on_surface.sort_unstable();
        assert_eq!(on_surface, mesh.nodes_with(NodeTags::CANCER_SURFACE));
        assert!(!mesh.nodes_with(NodeTags::TOP_SURFACE).is_empty());
        assert!(!mesh.nodes_with(NodeTags::BOTTOM_FIXED).is_empty());
        assert!(!mesh.nodes_with(NodeTags::CANCER_INTERIOR).is_empty());
    }
}
