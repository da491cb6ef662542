//! Deformable tetrahedral grids with differentiable marching tetrahedra,
//! used to fit static shapes and temporally coherent motion to full-mesh,
//! planar-slice and scalar-volume observations.
//!
//! The main pieces:
//!
//! - [`tetgrid`]: the grid (rest lattice, bounded offsets, per-vertex SDF).
//! - [`march`]: marching tetrahedra with analytic adjoints.
//! - [`geometry`]: distances, sampling, plane sections, volumes.
//! - [`diff`]: scalar tape, dense/GRU layers, optimizers, checkpoints.
//! - [`fit`]: shape and motion fitting pipelines.
//! - [`observe`]: synthetic sequences and observation extraction.
//! - [`eval`]: chamfer, endpoint error and accuracy reports.

pub mod config;
pub mod diff;
pub mod error;
pub mod eval;
pub mod fit;
pub mod geometry;
pub mod gradcheck;
pub mod march;
pub mod mesh;
pub mod observe;
pub mod tetgrid;

pub use error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
