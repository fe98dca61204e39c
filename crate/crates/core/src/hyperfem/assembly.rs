use std::sync::Arc;

use faer::sparse::linalg::solvers::SymbolicLlt;
use faer::sparse::SymbolicSparseColMatRef;
use faer::Side;
use rayon::prelude::*;

use super::element::{evaluate_element, Matrix12, ReferenceElement, Vector12};
use super::{Constraints, FemError, Materials, MaterialModel};
use crate::meshgen::Mesh;
use crate::Vec3;

const FIXED: u32 = u32::MAX;

/// Compressed-column pattern of the tangent over free DOFs (both triangles stored).
#[derive(Debug)]
pub(crate) struct SparsityPattern {
    pub n_free: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
}

impl SparsityPattern {
    pub fn symbolic(&self) -> SymbolicSparseColMatRef<'_, usize> {
        SymbolicSparseColMatRef::new_checked(self.n_free, self.n_free, &self.col_ptr, None, &self.row_idx)
    }

    fn position(&self, row: usize, col: usize) -> Option<usize> {
        let range = self.col_ptr[col]..self.col_ptr[col + 1];
        self.row_idx[range.clone()].binary_search(&row).ok().map(|k| range.start + k)
    }
}

/// Assembled linear system over the free degrees of freedom at one displacement state.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub(crate) pattern: Arc<SparsityPattern>,
    /// Nonzero values matching the pattern, column by column.
    pub tangent_values: Vec<f64>,
    pub internal_force: Vec<f64>,
    pub external_force: Vec<f64>,
}

impl SparseSystem {
    pub fn dim(&self) -> usize {
        self.pattern.n_free
    }

    pub fn nnz(&self) -> usize {
        self.tangent_values.len()
    }

    /// Entry of the tangent, zero outside the pattern.
    pub fn tangent(&self, row: usize, col: usize) -> f64 {
        self.pattern.position(row, col).map_or(0.0, |p| self.tangent_values[p])
    }

    pub fn tangent_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.dim();
        let mut k = nalgebra::DMatrix::zeros(n, n);
        for col in 0..n {
            for p in self.pattern.col_ptr[col]..self.pattern.col_ptr[col + 1] {
                k[(self.pattern.row_idx[p], col)] = self.tangent_values[p];
            }
        }
        k
    }

    /// `‖K − Kᵀ‖_F / ‖K‖_F`.
    pub fn asymmetry(&self) -> f64 {
        let mut diff = 0.0;
        let mut norm = 0.0;
        for col in 0..self.dim() {
            for p in self.pattern.col_ptr[col]..self.pattern.col_ptr[col + 1] {
                let row = self.pattern.row_idx[p];
                let v = self.tangent_values[p];
                norm += v * v;
                diff += (v - self.tangent(col, row)).powi(2);
            }
        }
        if norm == 0.0 { 0.0 } else { (diff / norm).sqrt() }
    }

    /// Out-of-balance force `R − F` over the free DOFs.
    pub fn residual(&self) -> Vec<f64> {
        self.external_force.iter().zip(&self.internal_force).map(|(r, f)| r - f).collect()
    }

    pub fn residual_norm(&self) -> f64 {
        self.external_force.iter().zip(&self.internal_force).map(|(r, f)| (r - f).powi(2)).sum::<f64>().sqrt()
    }
}

/// Mesh-dependent data shared by every assembly and solve on the same mesh and constraints.
#[derive(Debug)]
pub struct FemProblem {
    n_nodes: usize,
    elements: Vec<[usize; 4]>,
    references: Vec<ReferenceElement>,
    element_materials: Vec<MaterialModel>,
    constraints: Constraints,
    /// Free-DOF index of every global DOF, `FIXED` when constrained.
    free_index: Vec<u32>,
    pattern: Arc<SparsityPattern>,
    /// Pattern position of each local (row, col) pair of each element.
    scatter: Vec<[u32; 144]>,
    symbolic: SymbolicLlt<usize>,
}

impl FemProblem {
    pub fn new(mesh: &Mesh, materials: &Materials, constraints: Constraints) -> Result<Self, FemError> {
        materials.normal.validate()?;
        materials.cancer.validate()?;
        let n_nodes = mesh.n_nodes();
        if constraints.n_nodes() != n_nodes {
            return Err(FemError::InvalidInput(format!(
                "constraints cover {} nodes, mesh has {n_nodes}",
                constraints.n_nodes()
            )));
        }
        let references = ReferenceElement::of_mesh(mesh)?;
        let element_materials = mesh.element_region.iter().map(|r| *materials.for_region(*r)).collect();

        let mut free_index = vec![FIXED; 3 * n_nodes];
        let mut n_free = 0usize;
        for node in 0..n_nodes {
            for k in 0..3 {
                if !constraints.is_fixed(node, k) {
                    free_index[3 * node + k] = n_free as u32;
                    n_free += 1;
                }
            }
        }
        if n_free == 0 {
            return Err(FemError::InvalidInput("every degree of freedom is constrained".into()));
        }

        let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
        for e in &mesh.elements {
            for &a in e {
                neighbors[a].extend_from_slice(e);
            }
        }
        let mut col_ptr = Vec::with_capacity(n_free + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for (node, adj) in neighbors.iter_mut().enumerate() {
            adj.sort_unstable();
            adj.dedup();
            for k in 0..3 {
                if free_index[3 * node + k] == FIXED {
                    continue;
                }
                for &m in adj.iter() {
                    for kk in 0..3 {
                        let f = free_index[3 * m + kk];
                        if f != FIXED {
                            row_idx.push(f as usize);
                        }
                    }
                }
                col_ptr.push(row_idx.len());
            }
        }
        let pattern = SparsityPattern { n_free, col_ptr, row_idx };

        let scatter = mesh
            .elements
            .iter()
            .map(|e| {
                let mut map = [FIXED; 144];
                for i in 0..12 {
                    let row = free_index[3 * e[i / 3] + i % 3];
                    for j in 0..12 {
                        let col = free_index[3 * e[j / 3] + j % 3];
                        if row != FIXED && col != FIXED {
                            let p = pattern.position(row as usize, col as usize).expect("element pair in pattern");
                            map[12 * i + j] = p as u32;
                        }
                    }
                }
                map
            })
            .collect();
        let symbolic = SymbolicLlt::try_new(pattern.symbolic(), Side::Lower)
            .map_err(|e| FemError::FactorizationFailed(format!("symbolic analysis: {e:?}")))?;

        Ok(Self {
            n_nodes,
            elements: mesh.elements.clone(),
            references,
            element_materials,
            constraints,
            free_index,
            pattern: Arc::new(pattern),
            scatter,
            symbolic,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_free(&self) -> usize {
        self.pattern.n_free
    }

    pub fn constraints(&self) -> &Constraints {
        &self.constraints
    }

    pub(crate) fn symbolic(&self) -> &SymbolicLlt<usize> {
        &self.symbolic
    }

    pub(crate) fn pattern(&self) -> &SparsityPattern {
        &self.pattern
    }

    /// Gathers the free components of a nodal field.
    pub fn restrict(&self, field: &[Vec3]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_free()];
        for (g, &f) in self.free_index.iter().enumerate() {
            if f != FIXED {
                out[f as usize] = field[g / 3][g % 3];
            }
        }
        out
    }

    /// Adds `scale · delta` (free DOFs) onto a nodal field.
    pub fn add_free(&self, field: &mut [Vec3], delta: &[f64], scale: f64) {
        for (g, &f) in self.free_index.iter().enumerate() {
            if f != FIXED {
                field[g / 3][g % 3] += scale * delta[f as usize];
            }
        }
    }

    fn check_lengths(&self, u: &[Vec3], external: &[Vec3]) -> Result<(), FemError> {
        if u.len() != self.n_nodes || external.len() != self.n_nodes {
            return Err(FemError::InvalidInput(format!(
                "fields have {} and {} nodes, mesh has {}",
                u.len(),
                external.len(),
                self.n_nodes
            )));
        }
        Ok(())
    }

    fn evaluate_all(&self, u: &[Vec3]) -> Result<Vec<(Vector12, Matrix12)>, FemError> {
        let results: Vec<Result<(Vector12, Matrix12), FemError>> = self
            .elements
            .par_iter()
            .zip(self.references.par_iter())
            .zip(self.element_materials.par_iter())
            .enumerate()
            .map(|(e, ((ids, reference), mat))| {
                let ws = evaluate_element(reference, mat, &ids.map(|i| u[i])).map_err(|err| err.at_element(e))?;
                Ok((ws.internal_force, ws.stiffness()))
            })
            .collect();
        results.into_iter().collect()
    }

    /// Tangent, internal force and external force at displacement `u`.
    pub fn assemble(&self, u: &[Vec3], external: &[Vec3]) -> Result<SparseSystem, FemError> {
        self.check_lengths(u, external)?;
        let contributions = self.evaluate_all(u)?;
        let mut values = vec![0.0; self.pattern.row_idx.len()];
        let mut internal = vec![0.0; self.n_free()];
        for ((ids, map), (f, k)) in self.elements.iter().zip(&self.scatter).zip(&contributions) {
            for i in 0..12 {
                let row = self.free_index[3 * ids[i / 3] + i % 3];
                if row == FIXED {
                    continue;
                }
                internal[row as usize] += f[i];
                for j in 0..12 {
                    let p = map[12 * i + j];
                    if p != FIXED {
                        values[p as usize] += k[(i, j)];
                    }
                }
            }
        }
        Ok(SparseSystem {
            pattern: Arc::clone(&self.pattern),
            tangent_values: values,
            internal_force: internal,
            external_force: self.restrict(external),
        })
    }

    /// Nodal internal force over all DOFs, including reactions at constrained ones.
    pub fn internal_force_full(&self, u: &[Vec3]) -> Result<Vec<Vec3>, FemError> {
        if u.len() != self.n_nodes {
            return Err(FemError::InvalidInput(format!("field has {} nodes, mesh has {}", u.len(), self.n_nodes)));
        }
        let contributions = self.evaluate_all(u)?;
        let mut out = vec![Vec3::zeros(); self.n_nodes];
        for (ids, (f, _)) in self.elements.iter().zip(&contributions) {
            for (a, &node) in ids.iter().enumerate() {
                out[node] += Vec3::new(f[3 * a], f[3 * a + 1], f[3 * a + 2]);
            }
        }
        Ok(out)
    }

    /// `‖R − F(U)‖` over the free DOFs.
    pub fn residual_norm(&self, u: &[Vec3], external: &[Vec3]) -> Result<f64, FemError> {
        self.check_lengths(u, external)?;
        let f = self.internal_force_full(u)?;
        let mut sum = 0.0;
        for (g, &idx) in self.free_index.iter().enumerate() {
            if idx != FIXED {
                sum += (external[g / 3][g % 3] - f[g / 3][g % 3]).powi(2);
            }
        }
        Ok(sum.sqrt())
    }
}

/// One-shot assembly; builds the DOF numbering and pattern for this call only.
pub fn assemble(mesh: &Mesh, materials: &Materials, u: &[Vec3], bc: &Constraints) -> Result<SparseSystem, FemError> {
    let problem = FemProblem::new(mesh, materials, bc.clone())?;
    let mut u = u.to_vec();
    bc.apply(&mut u);
    problem.assemble(&u, &vec![Vec3::zeros(); mesh.n_nodes()])
}
