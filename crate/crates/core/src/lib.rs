//! Landmark-constrained quasi-conformal registration of disk-topology
//! triangle meshes.
//!
//! The crate is organised bottom-up:
//!
//! - [`mesh`]: validated triangle meshes, planar images, OFF/OBJ I/O.
//! - [`beltrami`]: Beltrami coefficients and the linear Beltrami solver.
//! - [`spectral`]: disk/square resampling, 2D DFT and low-pass compression.
//! - [`diffgeo`]: discrete mean curvature and curvature images.
//! - [`parameterization`]: conformal flattening onto the unit disk.
//! - [`landmark`]: curvature-guided landmark curves.
//! - [`registration`]: the alternating landmark registration.
//! - [`synth`], [`shapes`]: synthetic fields, distortions and test surfaces.
//! - [`report`], [`pipeline`]: JSON reports and the end-to-end runner.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod beltrami;
pub mod diffgeo;
pub mod error;
pub mod geometry;
pub mod landmark;
pub mod mesh;
pub mod parameterization;
pub mod pipeline;
pub mod registration;
pub mod report;
pub mod shapes;
pub mod sparse;
pub mod spectral;
pub mod synth;

pub use beltrami::{
    alpha_coefficients, assemble_lbs, boundary_energy, clamp_mu, compute_mu, jacobian, lbs_residual, lbs_solve,
    AlphaCoefficients, BeltramiField, BoundaryCondition, BoundaryMode, LandmarkConstraints, LbsSolver, StiffnessData,
};
pub use error::{Error, Result};
pub use geometry::{Point2, Point3};
pub use mesh::{boundary_loop, face_areas, face_derivatives, load_mesh, FaceDerivatives, PlanarMesh, TriMesh};
pub use num_complex::Complex64;

/// Version string recorded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
