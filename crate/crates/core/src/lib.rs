//! Patch-based implicit surface reconstruction from raw point clouds.
//!
//! The pipeline factorizes a signed distance function into a local absolute
//! distance estimated from a k-nearest-neighbor patch and a global sign
//! estimated from a distance-weighted subsample of the whole cloud. A small
//! network is trained end-to-end on both tasks; surfaces are extracted by
//! sparse truncated SDF evaluation, sign propagation into blank cells, and
//! Marching Cubes, then scored against ground truth with the Chamfer
//! distance.

pub mod autodiff;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod math;
pub mod extraction;
pub mod model;
pub mod rng;

pub mod sampling;
pub mod scansim;

pub use error::{Error, Result};
