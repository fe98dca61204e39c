use std::collections::HashMap;

use super::{sorted_face, Mesh, MeshError, Region};
use crate::Vec3;

/// Which elements form the region whose boundary is extracted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementSet {
    All,
    Region(Region),
}

impl ElementSet {
    fn contains(self, region: Region) -> bool {
        match self {
            ElementSet::All => true,
            ElementSet::Region(r) => r == region,
        }
    }
}

/// Closed, outward-oriented triangle surface.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceTriangulation {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    /// Mesh node index of each vertex.
    pub source_nodes: Vec<usize>,
}

/// Outward faces of a positively oriented tetrahedron.
const TET_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]];

/// Faces owned by exactly one element of `set`, as outward-oriented mesh node triples
/// in element order.
pub fn boundary_faces(elements: &[[usize; 4]], regions: &[Region], set: ElementSet) -> Vec<[usize; 3]> {
    let selected = || {
        elements
            .iter()
            .zip(regions)
            .filter(move |(_, &r)| set.contains(r))
            .map(|(e, _)| e)
    };
    let mut count: HashMap<[usize; 3], u32> = HashMap::new();
    for elem in selected() {
        for f in TET_FACES {
            *count.entry(sorted_face(elem[f[0]], elem[f[1]], elem[f[2]])).or_default() += 1;
        }
    }
    let mut faces = Vec::new();
    for elem in selected() {
        for f in TET_FACES {
            let tri = [elem[f[0]], elem[f[1]], elem[f[2]]];
            if count[&sorted_face(tri[0], tri[1], tri[2])] == 1 {
                faces.push(tri);
            }
        }
    }
    faces
}

/// Boundary surface of the elements in `set`.
pub fn extract_region_surface(mesh: &Mesh, set: ElementSet) -> Result<SurfaceTriangulation, MeshError> {
    if !mesh.element_region.iter().any(|&r| set.contains(r)) {
        return Err(MeshError::EmptyRegion);
    }
    let faces = boundary_faces(&mesh.elements, &mesh.element_region, set);
    let mut local: HashMap<usize, usize> = HashMap::new();
    let mut source_nodes = Vec::new();
    let triangles = faces
        .iter()
        .map(|tri| {
            tri.map(|node| {
                *local.entry(node).or_insert_with(|| {
                    source_nodes.push(node);
                    source_nodes.len() - 1
                })
            })
        })
        .collect();
    let surface = SurfaceTriangulation {
        vertices: source_nodes.iter().map(|&i| mesh.nodes[i]).collect(),
        triangles,
        source_nodes,
    };
    surface.check_closed()?;
    Ok(surface)
}

impl SurfaceTriangulation {
    /// Volume enclosed by the surface, by the divergence theorem.
    pub fn enclosed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|&[a, b, c]| self.vertices[a].dot(&self.vertices[b].cross(&self.vertices[c])))
            .sum::<f64>()
            / 6.0
    }

    /// Every directed edge must appear exactly once and its reverse exactly once.
    pub fn check_closed(&self) -> Result<(), MeshError> {
        if self.triangles.is_empty() {
            return Err(MeshError::SurfaceNotClosed("no triangles".into()));
        }
        let mut directed: HashMap<(usize, usize), u32> = HashMap::new();
        for &[a, b, c] in &self.triangles {
            for edge in [(a, b), (b, c), (c, a)] {
                *directed.entry(edge).or_default() += 1;
            }
        }
        for (&(a, b), &n) in &directed {
            if n != 1 {
                return Err(MeshError::SurfaceNotClosed(format!("edge ({a}, {b}) used {n} times in one direction")));
            }
            if !directed.contains_key(&(b, a)) {
                return Err(MeshError::SurfaceNotClosed(format!("edge ({a}, {b}) has no opposite")));
            }
        }
        if !(self.enclosed_volume() > 0.0) {
            return Err(MeshError::SurfaceNotClosed("non-positive enclosed volume".into()));
        }
        Ok(())
    }

    /// Surface with every vertex moved by the displacement of its source node.
    pub fn deformed(&self, displacement: &[Vec3]) -> Self {
        Self {
            vertices: self
                .vertices
                .iter()
                .zip(&self.source_nodes)
                .map(|(p, &i)| p + displacement[i])
                .collect(),
            triangles: self.triangles.clone(),
            source_nodes: self.source_nodes.clone(),
        }
    }

    pub fn translated(&self, offset: &Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(|p| p + offset).collect(),
            ..self.clone()
        }
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &self.vertices {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }
}
