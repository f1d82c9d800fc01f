//! Mesh loading, normalization, spatial indices and the exact signed
//! distance / inside-outside oracles that supervise training and drive
//! evaluation.

pub mod bvh;
pub mod dist;
pub mod kdtree;
pub mod mesh;
pub mod sample;
pub mod shapes;
pub mod winding;

pub use bvh::TriangleBvh;
pub use kdtree::KdTree;
pub use mesh::TriangleMesh;
pub use sample::{sample_surface, sample_surface_points, SurfaceSample};
pub use winding::{inside_outside, ray_parity_sign, winding_number, Sign};

use crate::math::Vec3;

/// A mesh bundled with its triangle BVH. All queries on a built index are
/// read-only and safe for concurrent use.
pub struct IndexedMesh {
    pub mesh: TriangleMesh,
    pub bvh: TriangleBvh,
}

impl IndexedMesh {
    pub fn build(mesh: TriangleMesh) -> Self {
        let bvh = TriangleBvh::build(&mesh);
        IndexedMesh { mesh, bvh }
    }

    /// Minimum distance from `x` to the surface (point-to-triangle,
    /// including edges and vertices).
    pub fn unsigned_distance(&self, x: Vec3) -> f64 {
        self.bvh.distance(x)
    }

    pub fn inside_outside(&self, x: Vec3) -> crate::error::Result<Sign> {
        winding::inside_outside(&self.mesh, x)
    }
}
