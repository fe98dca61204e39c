//! Learned surrogate for nonlinear soft-tissue deformation.
//!
//! The crate is organised as a pipeline:
//!
//! - [`meshgen`]: procedural hemispherical phantom with an embedded tumor, tagged Tet4 mesh.
//! - [`hyperfem`]: total-Lagrangian Mooney–Rivlin finite-element solver (Newton–Raphson).
//! - [`loadcase`]: randomized distributed surface loads and the `(U_s, U)` dataset.
//! - [`meshgraph`]: distance edges plus structured surface-to-tumor shortcut edges.
//! - [`sagenet`]: GraphSAGE(max) surrogate with exact gradients and AdamW training.
//! - [`evalkit`]: RMSE, winding-number voxelization, Dice coefficient, timing.
//! - [`pipeline`]: configuration, artifact store and the staged workflow driven by the CLI.

mod binio;
pub mod evalkit;
pub use binio::BinError;
pub mod hash;
pub mod hyperfem;
pub mod loadcase;
pub mod meshgen;
pub mod meshgraph;
pub mod pipeline;
pub mod sagenet;

/// Three-component vector in meters (positions, displacements) or newtons (forces).
pub type Vec3 = nalgebra::Vector3<f64>;

pub use hash::ContentHash;
