//! Triangle mesh type, validation and unit-cube normalization.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::math::{Aabb, Vec3};

/// An indexed triangle mesh.
///
/// After [`TriangleMesh::normalize_unit_cube`], vertices lie in
/// `[-0.5, 0.5]^3` with the bounding-box center at the origin, and
/// `bbox_longest_side` records the pre-normalization scale `L`.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    /// Longest side of the bounding box before normalization (world units).
    pub bbox_longest_side: f64,
    watertight: bool,
}

impl TriangleMesh {
    /// Build a mesh from raw arrays, validating indices and computing the
    /// watertightness flag.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        for (i, t) in triangles.iter().enumerate() {
            for &v in t {
                if v >= vertices.len() {
                    return Err(Error::Parse {
                        path: String::new(),
                        msg: format!(
                            "triangle {} references vertex {} but mesh has {} vertices",
                            i,
                            v,
                            vertices.len()
                        ),
                    });
                }
            }
        }
        let mut mesh = TriangleMesh {
            vertices,
            triangles,
            bbox_longest_side: 0.0,
            watertight: false,
        };
        mesh.bbox_longest_side = mesh.bbox().longest_side();
        mesh.watertight = mesh.check_watertight();
        Ok(mesh)
    }

    pub fn bbox(&self) -> Aabb {
        Aabb::from_points(self.vertices.iter().copied())
    }

    pub fn is_watertight(&self) -> bool {
        self.watertight
    }

    /// Every undirected edge must be used by exactly two triangles, once in
    /// each direction (closed, consistently oriented 2-manifold).
    fn check_watertight(&self) -> bool {
        if self.triangles.is_empty() {
            return false;
        }
        let mut counts: HashMap<(usize, usize), (u32, u32)> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let a = t[k];
                let b = t[(k + 1) % 3];
                if a == b {
                    return false;
                }
                let key = (a.min(b), a.max(b));
                let e = counts.entry(key).or_insert((0, 0));
                if a < b {
                    e.0 += 1;
                } else {
                    e.1 += 1;
                }
            }
        }
        counts.values().all(|&(f, r)| f == 1 && r == 1)
    }

    /// Edges not shared by exactly two triangles; useful for diagnostics.
    pub fn non_manifold_edges(&self) -> Vec<(usize, usize)> {
        let mut counts: HashMap<(usize, usize), u32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let a = t[k];
                let b = t[(k + 1) % 3];
                let key = (a.min(b), a.max(b));
                *counts.entry(key).or_insert(0) += 1;
            }
        }
        let mut bad: Vec<_> = counts
            .into_iter()
            .filter(|&(_, c)| c != 2)
            .map(|(e, _)| e)
            .collect();
        bad.sort_unstable();
        bad
    }

    pub fn triangle_vertices(&self, i: usize) -> [Vec3; 3] {
        let t = self.triangles[i];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangle_vertices(i);
        (b - a).cross(c - a).norm() * 0.5
    }

    pub fn triangle_normal(&self, i: usize) -> Vec3 {
        let [a, b, c] = self.triangle_vertices(i);
        (b - a).cross(c - a).normalized()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| self.triangle_area(i)).sum()
    }

    /// Center the bounding box at the origin and scale the longest side to 1,
    /// so all vertices end up in `[-0.5, 0.5]^3`. Records the original
    /// longest side as `L`. Idempotent on an already-normalized mesh.
    pub fn normalize_unit_cube(mut self) -> Result<Self> {
        if self.vertices.is_empty() {
            return Err(Error::DegenerateMesh("empty mesh".into()));
        }
        let bbox = self.bbox();
        let longest = bbox.longest_side();
        if longest <= 0.0 {
            return Err(Error::DegenerateMesh("zero extent".into()));
        }
        let center = bbox.center();
        let scale = 1.0 / longest;
        for v in &mut self.vertices {
            *v = (*v - center) * scale;
        }
        self.bbox_longest_side = longest;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes;

    #[test]
    fn cube_is_watertight() {
        let m = shapes::unit_cube();
        assert_eq!(m.vertices.len(), 8);
        assert_eq!(m.triangles.len(), 12);
        assert!(m.is_watertight());
        assert!(m.non_manifold_edges().is_empty());
    }

    #[test]
    fn single_triangle_is_open() {
        let m = TriangleMesh::new(
            vec![
                Vec3::ZERO,
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(!m.is_watertight());
        assert_eq!(m.non_manifold_edges().len(), 3);
    }

    #[test]
    fn tetrahedron_is_watertight() {
        let m = shapes::tetrahedron();
        assert_eq!(m.vertices.len(), 4);
        assert_eq!(m.triangles.len(), 4);
        assert!(m.is_watertight());
    }

    #[test]
    fn bad_index_rejected() {
        let r = TriangleMesh::new(vec![Vec3::ZERO], vec![[0, 0, 5]]);
        assert!(r.is_err());
    }

    #[test]
    fn normalize_centers_and_scales() {
        let m = shapes::cuboid(Vec3::new(5.0, 5.0, 5.0), Vec3::new(2.0, 2.0, 2.0));
        let m = m.normalize_unit_cube().unwrap();
        assert!((m.bbox_longest_side - 2.0).abs() < 1e-12);
        let b = m.bbox();
        assert!(b.center().norm() < 1e-12);
        assert!((b.longest_side() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_nonuniform_box() {
        let m = shapes::cuboid(Vec3::ZERO, Vec3::new(4.0, 2.0, 1.0));
        let m = m.normalize_unit_cube().unwrap();
        assert!((m.bbox_longest_side - 4.0).abs() < 1e-12);
        let e = m.bbox().extent();
        assert!((e.x - 1.0).abs() < 1e-12);
        assert!((e.y - 0.5).abs() < 1e-12);
        assert!((e.z - 0.25).abs() < 1e-12);
    }

    #[test]
    fn normalize_is_idempotent() {
        let m = shapes::unit_cube().normalize_unit_cube().unwrap();
        let verts = m.vertices.clone();
        let l = m.bbox_longest_side;
        let m2 = m.normalize_unit_cube().unwrap();
        assert_eq!(m2.vertices, verts);
        // L is re-measured on the already-normalized mesh.
        assert!((l - 1.0).abs() < 1e-12 || (m2.bbox_longest_side - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_rejected() {
        let m = TriangleMesh::new(vec![Vec3::ZERO, Vec3::ZERO, Vec3::ZERO], vec![[0, 1, 2]])
            .unwrap();
        assert!(m.normalize_unit_cube().is_err());
    }
}
