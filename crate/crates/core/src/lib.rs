#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Mesh-free quasi-static elasticity over point clouds.
//!
//! The crate builds six-neighbor stencils on a rest cloud, evaluates a
//! spatially varying Neo-Hookean energy, solves for equilibria under external
//! loads with a projected Newton method, and recovers per-point Lamé fields
//! from observed deformation sequences. A warp module turns simulated
//! correspondences into continuous backward-warp fields.

pub mod cli;
pub mod elasticity;
pub mod error;
pub mod fit;
pub mod forces;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod numeric;
pub mod solver;
pub mod warp;

pub use elasticity::MaterialField;
pub use error::{Error, Result};
pub use forces::{AirJet, ForceFrame, SdfShape};
pub use geometry::{build_reference, PointCloud, ReferenceModel};
pub use solver::{EquilibriumState, SolverConfig};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
