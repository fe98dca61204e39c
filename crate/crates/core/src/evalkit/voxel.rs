use std::collections::BTreeSet;
use std::f64::consts::PI;

use rayon::prelude::*;

use super::EvalError;
use crate::meshgen::SurfaceTriangulation;
use crate::Vec3;

/// Distance a point lying on the surface is pushed inward before classification.
const ON_SURFACE_OFFSET: f64 = 1e-9;
const PADDING: i64 = 2;

/// Signed solid angle subtended by triangle `(a, b, c)` seen from the origin.
fn solid_angle(a: &Vec3, b: &Vec3, c: &Vec3) -> (f64, f64, f64) {
    let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
    let num = a.dot(&b.cross(c));
    let den = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
    (2.0 * num.atan2(den), num, la * lb * lc)
}

/// Winding number, or the triangles the point lies on.
fn raw_winding(point: &Vec3, surface: &SurfaceTriangulation) -> Result<f64, Vec<usize>> {
    let mut total = 0.0;
    let mut touched = Vec::new();
    for (t, tri) in surface.triangles.iter().enumerate() {
        let a = surface.vertices[tri[0]] - point;
        let b = surface.vertices[tri[1]] - point;
        let c = surface.vertices[tri[2]] - point;
        let (omega, num, scale) = solid_angle(&a, &b, &c);
        if scale == 0.0 || (num.abs() <= 1e-12 * scale && on_triangle(&a, &b, &c)) {
            touched.push(t);
        }
        total += omega;
    }
    if touched.is_empty() {
        Ok(total / (4.0 * PI))
    } else {
        Err(touched)
    }
}

/// Whether the origin lies inside the (coplanar) triangle `(a, b, c)`.
fn on_triangle(a: &Vec3, b: &Vec3, c: &Vec3) -> bool {
    let n = (b - a).cross(&(c - a));
    let s0 = b.cross(c).dot(&n);
    let s1 = c.cross(a).dot(&n);
    let s2 = a.cross(b).dot(&n);
    s0 >= 0.0 && s1 >= 0.0 && s2 >= 0.0
}

/// Generalized winding number of `surface` about `point`: about 1 inside, 0 outside.
///
/// A point on the surface is moved 1 nm against the mean outward normal of the triangles
/// it touches, so the boundary counts as inside.
pub fn winding_number(point: &Vec3, surface: &SurfaceTriangulation) -> f64 {
    match raw_winding(point, surface) {
        Ok(w) => w,
        Err(touched) => {
            let normal: Vec3 = touched
                .iter()
                .map(|&t| {
                    let [i, j, k] = surface.triangles[t];
                    let (a, b, c) = (surface.vertices[i], surface.vertices[j], surface.vertices[k]);
                    (b - a).cross(&(c - a)).normalize()
                })
                .sum();
            let inside = point - normal.normalize() * ON_SURFACE_OFFSET;
            raw_winding(&inside, surface).unwrap_or(1.0)
        }
    }
}

/// Occupied cells of the lattice of `resolution`-sized voxels whose cell `k` has center
/// `(k + ½)·resolution`; all regions share it, so indices are directly comparable.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelRegion {
    pub origin: Vec3,
    pub resolution: f64,
    /// Inclusive index bounds of the classified box.
    pub lower: [i64; 3],
    pub upper: [i64; 3],
    pub occupancy: BTreeSet<[i64; 3]>,
}

impl VoxelRegion {
    pub fn len(&self) -> usize {
        self.occupancy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy.is_empty()
    }

    pub fn center(&self, index: [i64; 3]) -> Vec3 {
        voxel_center(&self.origin, self.resolution, index)
    }

    pub fn volume(&self) -> f64 {
        self.len() as f64 * self.resolution.powi(3)
    }
}

fn voxel_center(origin: &Vec3, resolution: f64, k: [i64; 3]) -> Vec3 {
    origin + Vec3::new(k[0] as f64 + 0.5, k[1] as f64 + 0.5, k[2] as f64 + 0.5) * resolution
}

/// Voxels over the surface's bounding box (padded by two cells) whose centers have winding number above ½.
pub fn voxelize_region(surface: &SurfaceTriangulation, resolution: f64) -> Result<VoxelRegion, EvalError> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(EvalError::InvalidResolution(resolution));
    }
    let (lo, hi) = surface.bounding_box();
    if surface.triangles.is_empty() || !(hi - lo).iter().all(|e| *e > 0.0 && e.is_finite()) {
        return Err(EvalError::DegenerateBoundingBox);
    }
    let origin = Vec3::zeros();
    let index = |x: f64| (x / resolution).floor() as i64;
    let lower = [index(lo.x) - PADDING, index(lo.y) - PADDING, index(lo.z) - PADDING];
    let upper = [index(hi.x) + PADDING, index(hi.y) + PADDING, index(hi.z) + PADDING];
    let columns: Vec<(i64, i64)> =
        (lower[0]..=upper[0]).flat_map(|i| (lower[1]..=upper[1]).map(move |j| (i, j))).collect();
    let occupancy = columns
        .par_iter()
        .flat_map_iter(|&(i, j)| {
            (lower[2]..=upper[2])
                .filter(move |&k| winding_number(&voxel_center(&origin, resolution, [i, j, k]), surface) > 0.5)
                .map(move |k| [i, j, k])
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    Ok(VoxelRegion { origin, resolution, lower, upper, occupancy })
}

#[cfg(test)]
pub(crate) mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn tetrahedron() -> SurfaceTriangulation {
        let s = 1.0 / 2f64.sqrt();
        let vertices = vec![Vec3::new(1.0, 0.0, -s), Vec3::new(-1.0, 0.0, -s), Vec3::new(0.0, 1.0, s), Vec3::new(0.0, -1.0, s)];
        let mut triangles = Vec::new();
        let c: Vec3 = vertices.iter().sum::<Vec3>() / 4.0;
        for skip in 0..4 {
            let mut t: Vec<usize> = (0..4).filter(|&i| i != skip).collect();
            let n = (vertices[t[1]] - vertices[t[0]]).cross(&(vertices[t[2]] - vertices[t[0]]));
            if n.dot(&(vertices[t[0]] - c)) < 0.0 {
                t.swap(1, 2);
            }
            triangles.push([t[0], t[1], t[2]]);
        }
        SurfaceTriangulation { vertices, triangles, source_nodes: (0..4).collect() }
    }

    /// Icosphere by repeated midpoint subdivision, outward oriented.
    pub(crate) fn sphere(center: Vec3, radius: f64, levels: usize) -> SurfaceTriangulation {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut v: Vec<Vec3> = [
            (-1.0, t, 0.0), (1.0, t, 0.0), (-1.0, -t, 0.0), (1.0, -t, 0.0),
            (0.0, -1.0, t), (0.0, 1.0, t), (0.0, -1.0, -t), (0.0, 1.0, -t),
            (t, 0.0, -1.0), (t, 0.0, 1.0), (-t, 0.0, -1.0), (-t, 0.0, 1.0),
        ]
        .iter()
        .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
        .collect();
        let mut f: Vec<[usize; 3]> = vec![
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ];
        for _ in 0..levels {
            let mut mid = std::collections::HashMap::new();
            let mut midpoint = |a: usize, b: usize, v: &mut Vec<Vec3>| {
                *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    v.push(((v[a] + v[b]) / 2.0).normalize());
                    v.len() - 1
                })
            };
            f = f
                .iter()
                .flat_map(|&[a, b, c]| {
                    let ab = midpoint(a, b, &mut v);
                    let bc = midpoint(b, c, &mut v);
                    let ca = midpoint(c, a, &mut v);
                    [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
                })
                .collect();
        }
        let n = v.len();
        SurfaceTriangulation { vertices: v.into_iter().map(|p| center + p * radius).collect(), triangles: f, source_nodes: (0..n).collect() }
    }

    /// Inside test by counting crossings of a ray in a fixed irrational direction.
    fn ray_parity(p: &Vec3, s: &SurfaceTriangulation) -> bool {
        let dir = Vec3::new(0.5773, 0.5774, 0.57735).normalize();
        let mut hits = 0;
        for tri in &s.triangles {
            let (a, b, c) = (s.vertices[tri[0]], s.vertices[tri[1]], s.vertices[tri[2]]);
            let e1 = b - a;
            let e2 = c - a;
            let h = dir.cross(&e2);
            let det = e1.dot(&h);
            if det.abs() < 1e-15 {
                continue;
            }
            let q = p - a;
            let u = q.dot(&h) / det;
            let w = q.cross(&e1);
            let v = dir.dot(&w) / det;
            let t = e2.dot(&w) / det;
            if u >= 0.0 && v >= 0.0 && u + v <= 1.0 && t > 0.0 {
                hits += 1;
            }
        }
        hits % 2 == 1
    }

    #[test]
    fn tetrahedron_centroid_and_far_point() {
        let s = tetrahedron();
        assert!((winding_number(&Vec3::zeros(), &s) - 1.0).abs() < 1e-9);
        assert!(winding_number(&Vec3::new(15.0, -3.0, 2.0), &s).abs() < 1e-9);
    }

    #[test]
    fn points_on_the_surface_count_as_inside() {
        let s = tetrahedron();
        let on_face = (s.vertices[0] + s.vertices[1] + s.vertices[2]) / 3.0;
        assert!(winding_number(&on_face, &s) > 0.5);
        assert!(winding_number(&s.vertices[3], &s) > 0.5);
    }

    #[test]
    fn agrees_with_ray_casting_on_random_points() {
        let s = sphere(Vec3::new(0.1, -0.2, 0.05), 1.0, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let p = Vec3::new(rng.random_range(-1.5..1.7), rng.random_range(-1.8..1.4), rng.random_range(-1.5..1.6));
            assert_eq!(winding_number(&p, &s) > 0.5, ray_parity(&p, &s), "{p:?}");
        }
    }

    #[test]
    fn sphere_volume_at_one_millimetre() {
        let s = sphere(Vec3::new(0.003, -0.0021, 0.0174), 0.01, 4);
        let v = voxelize_region(&s, 0.001).unwrap();
        let exact = 4.0 / 3.0 * PI * 1e-6 / 1e-9;
        assert!((v.len() as f64 - exact).abs() < 0.05 * exact, "{} voxels vs {exact}", v.len());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cells: Vec<_> = v.occupancy.iter().copied().collect();
        for _ in 0..cells.len() / 100 {
            let k = cells[rng.random_range(0..cells.len())];
            assert!(winding_number(&v.center(k), &s) > 0.5);
        }
    }

    #[test]
    fn lattice_translation_shifts_indices() {
        let s = sphere(Vec3::new(0.0012, 0.0, -0.0007), 0.004, 3);
        let v = voxelize_region(&s, 0.001).unwrap();
        let shifted = voxelize_region(&s.translated(&Vec3::new(0.003, -0.002, 0.005)), 0.001).unwrap();
        let expected: BTreeSet<[i64; 3]> = v.occupancy.iter().map(|k| [k[0] + 3, k[1] - 2, k[2] + 5]).collect();
        assert_eq!(shifted.occupancy, expected);
    }

    #[test]
    fn degenerate_input_is_rejected() {
        let mut s = tetrahedron();
        assert!(matches!(voxelize_region(&s, 0.0), Err(EvalError::InvalidResolution(_))));
        s.vertices.iter_mut().for_each(|p| p.z = 0.0);
        assert!(matches!(voxelize_region(&s, 0.1), Err(EvalError::DegenerateBoundingBox)));
    }
}
