//! Nonlinear total-Lagrangian finite elements for Mooney–Rivlin solids.
//!
//! Tet4 elements with one-point quadrature, a sparse assembled tangent over the
//! free degrees of freedom and a load-ramped Newton–Raphson solve.

mod assembly;
mod element;
mod material;
mod newton;

pub use assembly::{assemble, FemProblem, SparseSystem};
pub use element::{evaluate_element, ElementWorkspace, Matrix12, ReferenceElement, Vector12};
pub use material::{mooney_rivlin_response, MaterialModel, Materials};
pub use newton::{solve_newton, SolveStats};

use crate::meshgen::{Mesh, NodeTags};
use crate::Vec3;

#[derive(Debug, thiserror::Error)]
pub enum FemError {
    #[error("invalid material: {0}")]
    InvalidMaterial(String),
    #[error("non-positive Jacobian {jacobian:e}{}", fmt_element(*.element))]
    SingularConfiguration { element: Option<usize>, jacobian: f64 },
    #[error("degenerate reference element (volume {volume:e}){}", fmt_element(*.element))]
    DegenerateElement { element: Option<usize>, volume: f64 },
    #[error("Newton iteration did not converge in load increment {increment} (residual {residual:e} N)")]
    NotConverged { increment: usize, residual: f64 },
    #[error("tangent factorization failed: {0}")]
    FactorizationFailed(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

fn fmt_element(element: Option<usize>) -> String {
    element.map(|e| format!(" in element {e}")).unwrap_or_default()
}

impl FemError {
    /// Failures that a smaller load increment may avoid.
    pub fn is_recoverable(&self) -> bool {
        matches!(
            self,
            Self::NotConverged { .. } | Self::FactorizationFailed(_) | Self::SingularConfiguration { .. }
        )
    }

    pub(crate) fn at_element(self, e: usize) -> Self {
        match self {
            Self::SingularConfiguration { jacobian, .. } => Self::SingularConfiguration { element: Some(e), jacobian },
            Self::DegenerateElement { volume, .. } => Self::DegenerateElement { element: Some(e), volume },
            other => other,
        }
    }
}

/// Per-node 3-vector field in meters.
pub type DisplacementField = Vec<Vec3>;

/// Which nodal degrees of freedom are held at zero displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraints {
    fixed: Vec<[bool; 3]>,
}

impl Constraints {
    /// Clamps every component of the `BottomFixed` nodes.
    pub fn bottom_fixed(mesh: &Mesh) -> Self {
        Self {
            fixed: mesh.node_tags.iter().map(|t| [t.contains(NodeTags::BOTTOM_FIXED); 3]).collect(),
        }
    }

    pub fn from_fixed_dofs(fixed: Vec<[bool; 3]>) -> Self {
        Self { fixed }
    }

    pub fn n_nodes(&self) -> usize {
        self.fixed.len()
    }

    pub fn is_fixed(&self, node: usize, component: usize) -> bool {
        self.fixed[node][component]
    }

    pub fn n_free(&self) -> usize {
        self.fixed.iter().flatten().filter(|f| !**f).count()
    }

    /// Zeroes the constrained components in place.
    pub fn apply(&self, field: &mut [Vec3]) {
        for (v, f) in field.iter_mut().zip(&self.fixed) {
            for k in 0..3 {
                if f[k] {
                    v[k] = 0.0;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub max_iterations: usize,
    /// Absolute residual tolerance in newtons.
    pub residual_tol_abs: f64,
    /// Residual tolerance relative to the norm of the external load.
    pub residual_tol_rel: f64,
    pub n_load_increments: usize,
    /// Maximum number of step halvings when a trial update inverts an element.
    pub max_backtracks: usize,
    /// Maximum number of load-increment halvings after a failed increment.
    pub max_cutbacks: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { max_iterations: 30, residual_tol_abs: 1e-6, residual_tol_rel: 1e-8, n_load_increments: 5, max_backtracks: 12, max_cutbacks: 4 }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<(), FemError> {
        if self.max_iterations == 0 || self.n_load_increments == 0 {
            return Err(FemError::InvalidInput("max_iterations and n_load_increments must be at least 1".into()));
        }
        if !(self.residual_tol_abs > 0.0 && self.residual_tol_rel > 0.0) {
            return Err(FemError::InvalidInput("residual tolerances must be positive".into()));
        }
        Ok(())
    }

    pub fn tolerance_for(&self, load_norm: f64) -> f64 {
        self.residual_tol_abs.max(self.residual_tol_rel * load_norm)
    }
}

/// Internal force and tangent of one mesh element at displacement `u`.
pub fn element_force_and_stiffness(
    mesh: &Mesh,
    element: usize,
    mat: &MaterialModel,
    u: &[Vec3],
) -> Result<(Vector12, Matrix12), FemError> {
    let ids = mesh.elements[element];
    let reference = ReferenceElement::new(ids.map(|i| mesh.nodes[i])).map_err(|e| e.at_element(element))?;
    let ws = evaluate_element(&reference, mat, &ids.map(|i| u[i])).map_err(|e| e.at_element(element))?;
    Ok((ws.internal_force, ws.stiffness()))
}
