//! Tagged tetrahedral phantom meshes.
//!
//! A [`Mesh`] is a linear (Tet4) tetrahedral mesh with two element groups
//! (normal and cancer tissue) and per-node boundary tags. [`build_phantom`]
//! produces a hemispherical breast phantom with an embedded spherical tumor.

mod io;
mod phantom;
mod surface;

use std::collections::HashMap;

use bitflags::bitflags;

use crate::{ContentHash, Vec3};

pub use io::{mesh_to_text, parse_mesh, read_mesh, write_mesh};
pub use phantom::{build_phantom, PhantomSpec};
pub use surface::{boundary_faces, extract_region_surface, ElementSet, SurfaceTriangulation};

/// Smallest admissible element volume, in cubic meters.
pub const MIN_ELEMENT_VOLUME: f64 = 1e-12;

/// Nodes with `|y|` below this are on the fixed base plane.
pub const BASE_PLANE_TOLERANCE: f64 = 1e-6;

bitflags! {
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
    pub struct NodeTags: u8 {
        const BOTTOM_FIXED = 1;
        const TOP_SURFACE = 1 << 1;
        const CANCER_SURFACE = 1 << 2;
        const CANCER_INTERIOR = 1 << 3;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    Normal,
    Cancer,
}

impl Region {
    pub fn code(self) -> u8 {
        match self {
            Region::Normal => 0,
            Region::Cancer => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Region::Normal),
            1 => Some(Region::Cancer),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MeshError {
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("no cancer elements: the tumor sphere does not contain any element centroid")]
    NoCancerElements,
    #[error("element {element} references node {index} but the mesh has {n_nodes} nodes")]
    IndexOutOfRange { element: usize, index: usize, n_nodes: usize },
    #[error("element {element} is degenerate or inverted (signed volume {volume:e} m^3)")]
    DegenerateElement { element: usize, volume: f64 },
    #[error("mesh has {components} disconnected components")]
    Disconnected { components: usize },
    #[error("node {node} has inconsistent tags: {reason}")]
    TagConflict { node: usize, reason: &'static str },
    #[error("region has no elements")]
    EmptyRegion,
    #[error("extracted surface is not a closed oriented manifold: {0}")]
    SurfaceNotClosed(String),
    #[error("missing header: expected `MESH v1 <n_nodes> <n_elems>`")]
    MissingHeader,
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub nodes: Vec<Vec3>,
    pub elements: Vec<[usize; 4]>,
    pub element_region: Vec<Region>,
    pub node_tags: Vec<NodeTags>,
}

/// Six times the signed volume of the tetrahedron `(a, b, c, d)`.
pub fn tet_triple(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> f64 {
    (b - a).dot(&(c - a).cross(&(d - a)))
}

impl Mesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn signed_volume(&self, element: usize) -> f64 {
        let [a, b, c, d] = self.elements[element];
        tet_triple(&self.nodes[a], &self.nodes[b], &self.nodes[c], &self.nodes[d]) / 6.0
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.n_elements()).map(|e| self.signed_volume(e)).sum()
    }

    pub fn centroid(&self, element: usize) -> Vec3 {
        self.elements[element].iter().map(|&i| self.nodes[i]).sum::<Vec3>() / 4.0
    }

    pub fn nodes_with(&self, tag: NodeTags) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&i| self.node_tags[i].contains(tag)).collect()
    }

    pub fn has_tag(&self, node: usize, tag: NodeTags) -> bool {
        self.node_tags[node].contains(tag)
    }

    /// Nodes belonging to at least one element of `region`, ascending.
    pub fn region_nodes(&self, region: Region) -> Vec<usize> {
        let mut used = vec![false; self.n_nodes()];
        for (elem, &r) in self.elements.iter().zip(&self.element_region) {
            if r == region {
                for &i in elem {
                    used[i] = true;
                }
            }
        }
        (0..self.n_nodes()).filter(|&i| used[i]).collect()
    }

    pub fn region_element_count(&self, region: Region) -> usize {
        self.element_region.iter().filter(|&&r| r == region).count()
    }

    /// Volume-weighted centroid of the elements of `region`.
    pub fn region_centroid(&self, region: Region) -> Option<Vec3> {
        let mut weighted = Vec3::zeros();
        let mut volume = 0.0;
        for e in 0..self.n_elements() {
            if self.element_region[e] == region {
                let v = self.signed_volume(e);
                weighted += self.centroid(e) * v;
                volume += v;
            }
        }
        (volume > 0.0).then(|| weighted / volume)
    }

    /// Number of connected components under face adjacency.
    pub fn face_components(&self) -> usize {
        let labels = face_component_labels(&self.elements);
        labels.iter().copied().max().map_or(0, |m| m + 1)
    }

    /// Checks every structural invariant of the mesh.
    pub fn validate(&self) -> Result<(), MeshError> {
        let n = self.n_nodes();
        if self.element_region.len() != self.n_elements() || self.node_tags.len() != n {
            return Err(MeshError::InvalidSpec("tag arrays do not match mesh size".into()));
        }
        for (e, elem) in self.elements.iter().enumerate() {
            if let Some(&index) = elem.iter().find(|&&i| i >= n) {
                return Err(MeshError::IndexOutOfRange { element: e, index, n_nodes: n });
            }
            let volume = self.signed_volume(e);
            if !(volume > MIN_ELEMENT_VOLUME) {
                return Err(MeshError::DegenerateElement { element: e, volume });
            }
        }
        let in_cancer = {
            let mut flags = vec![false; n];
            for i in self.region_nodes(Region::Cancer) {
                flags[i] = true;
            }
            flags
        };
        for (i, tags) in self.node_tags.iter().enumerate() {
            if tags.contains(NodeTags::BOTTOM_FIXED | NodeTags::TOP_SURFACE) {
                return Err(MeshError::TagConflict { node: i, reason: "both bottom-fixed and top-surface" });
            }
            if tags.intersects(NodeTags::CANCER_SURFACE | NodeTags::CANCER_INTERIOR) && !in_cancer[i] {
                return Err(MeshError::TagConflict { node: i, reason: "cancer tag outside cancer elements" });
            }
        }
        let components = self.face_components();
        if components != 1 {
            return Err(MeshError::Disconnected { components });
        }
        Ok(())
    }

    pub fn content_hash(&self) -> ContentHash {
        ContentHash::of_bytes(io::mesh_to_text(self).as_bytes())
    }
}

fn sorted_face(a: usize, b: usize, c: usize) -> [usize; 3] {
    let mut f = [a, b, c];
    f.sort_unstable();
    f
}

/// Component label per element under face adjacency, numbered by first appearance.
pub(crate) fn face_component_labels(elements: &[[usize; 4]]) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..elements.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut owner: HashMap<[usize; 3], usize> = HashMap::with_capacity(elements.len() * 2);
    for (e, &[a, b, c, d]) in elements.iter().enumerate() {
        for face in [sorted_face(a, b, c), sorted_face(a, b, d), sorted_face(a, c, d), sorted_face(b, c, d)] {
            match owner.get(&face) {
                Some(&other) => {
                    let (ra, rb) = (find(&mut parent, e), find(&mut parent, other));
                    if ra != rb {
                        parent[ra.max(rb)] = ra.min(rb);
                    }
                }
                None => {
                    owner.insert(face, e);
                }
            }
        }
    }
    let mut label_of_root = HashMap::new();
    (0..elements.len())
        .map(|e| {
            let root = find(&mut parent, e);
            let next = label_of_root.len();
            *label_of_root.entry(root).or_insert(next)
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod test_meshes {
    use super::*;

    /// Reference tetrahedron with unit legs along the axes.
    pub fn unit_tet() -> Mesh {
        Mesh {
            nodes: vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(0.0, 0.0, 1.0),
            ],
            elements: vec![[0, 1, 2, 3]],
            element_region: vec![Region::Normal],
            node_tags: vec![NodeTags::empty(); 4],
        }
    }
}
