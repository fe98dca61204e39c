//! Nearly incompressible two-parameter Mooney–Rivlin law.
//!
//! Strain energy in terms of the right Cauchy–Green tensor `C = FᵀF`:
//!
//! ```text
//! W = c10 (Ī₁ − 3) + c01 (Ī₂ − 3) + κ/2 (J − 1)²
//! Ī₁ = I₁ I₃^(−1/3),  Ī₂ = I₂ I₃^(−2/3),  J = I₃^(1/2)
//! ```
//!
//! `S = 2 ∂W/∂C` and `ℂ = 4 ∂²W/∂C²` are evaluated through the invariant
//! derivatives `W_i = ∂W/∂I_i`, `W_ij = ∂²W/∂I_i∂I_j`.

use nalgebra::{Matrix3, Matrix6};

use super::FemError;
use crate::meshgen::Region;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialModel {
    pub c10: f64,
    pub c01: f64,
    /// Volumetric penalty modulus.
    pub bulk_kappa: f64,
}

impl MaterialModel {
    pub fn new(c10: f64, c01: f64, bulk_kappa: f64) -> Result<Self, FemError> {
        let m = Self { c10, c01, bulk_kappa };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), FemError> {
        if !(self.c10 > 0.0 && self.c01 > 0.0) {
            return Err(FemError::InvalidMaterial(format!("c10 = {}, c01 = {} must be positive", self.c10, self.c01)));
        }
        if !(self.bulk_kappa >= 100.0 * (self.c10 + self.c01)) {
            return Err(FemError::InvalidMaterial(format!(
                "bulk_kappa = {} must be at least 100 (c10 + c01) = {}",
                self.bulk_kappa,
                100.0 * (self.c10 + self.c01)
            )));
        }
        Ok(())
    }

    /// Normal breast tissue, C10 = 2000 Pa, C01 = 1333 Pa.
    pub fn normal_tissue() -> Self {
        Self { c10: 2000.0, c01: 1333.0, bulk_kappa: 1e6 }
    }

    /// Cancer tissue, C10 = 10000 Pa, C01 = 6667 Pa, with the same κ/μ ratio as normal tissue.
    pub fn cancer_tissue() -> Self {
        Self { c10: 10000.0, c01: 6667.0, bulk_kappa: 5e6 }
    }

    /// Small-strain shear modulus `2 (c10 + c01)`.
    pub fn shear_modulus(&self) -> f64 {
        2.0 * (self.c10 + self.c01)
    }

    /// Small-strain Lamé λ, from bulk modulus κ and shear modulus μ.
    pub fn lame_lambda(&self) -> f64 {
        self.bulk_kappa - 2.0 / 3.0 * self.shear_modulus()
    }
}

/// One material per element region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Materials {
    pub normal: MaterialModel,
    pub cancer: MaterialModel,
}

impl Materials {
    pub fn uniform(mat: MaterialModel) -> Self {
        Self { normal: mat, cancer: mat }
    }

    pub fn for_region(&self, region: Region) -> &MaterialModel {
        match region {
            Region::Normal => &self.normal,
            Region::Cancer => &self.cancer,
        }
    }
}

impl Default for Materials {
    fn default() -> Self {
        Self { normal: MaterialModel::normal_tissue(), cancer: MaterialModel::cancer_tissue() }
    }
}

/// Voigt ordering of symmetric tensor components: 11, 22, 33, 12, 23, 13.
pub const VOIGT: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (0, 2)];

/// Second Piola–Kirchhoff stress and material tangent (Voigt, engineering shear strains)
/// for deformation gradient `f`.
pub fn mooney_rivlin_response(f: &Matrix3<f64>, mat: &MaterialModel) -> Result<(Matrix3<f64>, Matrix6<f64>), FemError> {
    let j = f.determinant();
    if !(j > 0.0) || !j.is_finite() {
        return Err(FemError::SingularConfiguration { element: None, jacobian: j });
    }
    let c = f.transpose() * f;
    let c_inv = c.try_inverse().ok_or(FemError::SingularConfiguration { element: None, jacobian: j })?;
    let i1 = c.trace();
    let i2 = 0.5 * (i1 * i1 - (c * c).trace());
    let i3 = j * j;

    let (c10, c01, kappa) = (mat.c10, mat.c01, mat.bulk_kappa);
    let i3_m13 = i3.powf(-1.0 / 3.0);
    let i3_m23 = i3_m13 * i3_m13;
    let w1 = c10 * i3_m13;
    let w2 = c01 * i3_m23;
    let w3 = -c10 / 3.0 * i1 * i3_m13 / i3 - 2.0 / 3.0 * c01 * i2 * i3_m23 / i3 + 0.5 * kappa * (1.0 - 1.0 / j);
    let w13 = -c10 / 3.0 * i3_m13 / i3;
    let w23 = -2.0 / 3.0 * c01 * i3_m23 / i3;
    let w33 = 4.0 / 9.0 * c10 * i1 * i3_m13 / (i3 * i3)
        + 10.0 / 9.0 * c01 * i2 * i3_m23 / (i3 * i3)
        + 0.25 * kappa / (i3 * j);

    let identity = Matrix3::<f64>::identity();
    let d_i2 = identity * i1 - c;
    let d_i3 = c_inv * i3;
    let pk2 = (identity * w1 + d_i2 * w2 + d_i3 * w3) * 2.0;

    let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let component = |i: usize, j: usize, k: usize, l: usize| -> f64 {
        let sym_identity = 0.5 * (delta(i, k) * delta(j, l) + delta(i, l) * delta(j, k));
        let sym_inv = 0.5 * (c_inv[(i, k)] * c_inv[(j, l)] + c_inv[(i, l)] * c_inv[(j, k)]);
        let second_i2 = delta(i, j) * delta(k, l) - sym_identity;
        let second_i3 = i3 * (c_inv[(i, j)] * c_inv[(k, l)] - sym_inv);
        4.0 * (w13 * (delta(i, j) * d_i3[(k, l)] + d_i3[(i, j)] * delta(k, l))
            + w23 * (d_i2[(i, j)] * d_i3[(k, l)] + d_i3[(i, j)] * d_i2[(k, l)])
            + w33 * d_i3[(i, j)] * d_i3[(k, l)]
            + w2 * second_i2
            + w3 * second_i3)
    };
    let mut tangent = Matrix6::zeros();
    for (a, &(i, j)) in VOIGT.iter().enumerate() {
        for (b, &(k, l)) in VOIGT.iter().enumerate().skip(a) {
            let v = component(i, j, k, l);
            tangent[(a, b)] = v;
            tangent[(b, a)] = v;
        }
    }
    Ok((pk2, tangent))
}
