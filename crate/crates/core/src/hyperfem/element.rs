use nalgebra::{Matrix3, SMatrix, SVector};

use super::material::{mooney_rivlin_response, MaterialModel};
use super::FemError;
use crate::meshgen::Mesh;
use crate::Vec3;

pub type Vector12 = SVector<f64, 12>;
pub type Matrix12 = SMatrix<f64, 12, 12>;
pub type StrainDisplacement = SMatrix<f64, 6, 12>;

/// Reference-configuration data of one Tet4 element.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceElement {
    /// Shape-function gradients with respect to reference coordinates.
    pub grads: [Vec3; 4],
    pub volume: f64,
}

impl ReferenceElement {
    pub fn new(x: [Vec3; 4]) -> Result<Self, FemError> {
        let jac = Matrix3::from_columns(&[x[1] - x[0], x[2] - x[0], x[3] - x[0]]);
        let volume = jac.determinant() / 6.0;
        if !(volume > 0.0) {
            return Err(FemError::DegenerateElement { element: None, volume });
        }
        let inv = jac.try_inverse().ok_or(FemError::DegenerateElement { element: None, volume })?;
        let g1 = inv.row(0).transpose();
        let g2 = inv.row(1).transpose();
        let g3 = inv.row(2).transpose();
        Ok(Self { grads: [-(g1 + g2 + g3), g1, g2, g3], volume })
    }

    pub fn of_mesh(mesh: &Mesh) -> Result<Vec<Self>, FemError> {
        mesh.elements
            .iter()
            .enumerate()
            .map(|(e, ids)| Self::new(ids.map(|i| mesh.nodes[i])).map_err(|err| err.at_element(e)))
            .collect()
    }

    /// `F = I + Σ_a u_a ⊗ ∇N_a`.
    pub fn deformation_gradient(&self, u: &[Vec3; 4]) -> Matrix3<f64> {
        let mut f = Matrix3::identity();
        for (ua, ga) in u.iter().zip(&self.grads) {
            f += ua * ga.transpose();
        }
        f
    }
}

/// Intermediate quantities of one element evaluation at the current displacement.
#[derive(Debug, Clone)]
pub struct ElementWorkspace {
    pub deformation_gradient: Matrix3<f64>,
    pub pk2_stress: Matrix3<f64>,
    /// Maps nodal displacement increments to Green–Lagrange strain increments (Voigt).
    pub strain_disp_linear: StrainDisplacement,
    /// `∫ Bᵀ ℂ B dV`.
    pub material_stiffness: Matrix12,
    /// `∫ ∇N_aᵀ S ∇N_b dV · I₃`, the stress-dependent part of the tangent.
    pub geometric_stiffness: Matrix12,
    /// `∫ Bᵀ S dV`.
    pub internal_force: Vector12,
}

impl ElementWorkspace {
    pub fn stiffness(&self) -> Matrix12 {
        self.material_stiffness + self.geometric_stiffness
    }
}

/// Total-Lagrangian evaluation of one Tet4 element with one-point quadrature.
pub fn evaluate_element(reference: &ReferenceElement, mat: &MaterialModel, u: &[Vec3; 4]) -> Result<ElementWorkspace, FemError> {
    let f = reference.deformation_gradient(u);
    let (s, d) = mooney_rivlin_response(&f, mat)?;

    let mut b = StrainDisplacement::zeros();
    for (a, g) in reference.grads.iter().enumerate() {
        for i in 0..3 {
            let col = 3 * a + i;
            b[(0, col)] = f[(i, 0)] * g[0];
            b[(1, col)] = f[(i, 1)] * g[1];
            b[(2, col)] = f[(i, 2)] * g[2];
            b[(3, col)] = f[(i, 0)] * g[1] + f[(i, 1)] * g[0];
            b[(4, col)] = f[(i, 1)] * g[2] + f[(i, 2)] * g[1];
            b[(5, col)] = f[(i, 0)] * g[2] + f[(i, 2)] * g[0];
        }
    }
    let v = reference.volume;
    let stress = SVector::<f64, 6>::new(s[(0, 0)], s[(1, 1)], s[(2, 2)], s[(0, 1)], s[(1, 2)], s[(0, 2)]);
    let internal_force = b.transpose() * stress * v;
    let material_stiffness = b.transpose() * d * b * v;

    let mut geometric_stiffness = Matrix12::zeros();
    for (a, ga) in reference.grads.iter().enumerate() {
        for (c, gc) in reference.grads.iter().enumerate() {
            let k = (ga.transpose() * s * gc)[0] * v;
            for i in 0..3 {
                geometric_stiffness[(3 * a + i, 3 * c + i)] = k;
            }
        }
    }
    Ok(ElementWorkspace {
        deformation_gradient: f,
        pk2_stress: s,
        strain_disp_linear: b,
        material_stiffness,
        geometric_stiffness,
        internal_force,
    })
}
