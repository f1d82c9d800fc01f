//! Marching Cubes over a fully-assigned cubic value grid, with vertex
//! welding on shared cube edges so the output is a closed mesh wherever
//! the sign field is watertight.

use std::collections::HashMap;

use crate::error::Result;
use crate::geometry::TriangleMesh;
use crate::math::Vec3;

use super::grid::GridSpec;
use super::tables::{EDGE_TABLE, TRIANGLE_TABLE};

/// Cube corner offsets in the table convention.
const CORNERS: [(usize, usize, usize); 8] = [
    (0, 0, 0),
    (1, 0, 0),
    (1, 1, 0),
    (0, 1, 0),
    (0, 0, 1),
    (1, 0, 1),
    (1, 1, 1),
    (0, 1, 1),
];

/// The two corners each of the 12 cube edges connects.
const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 0),
    (4, 5),
    (5, 6),
    (6, 7),
    (7, 4),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Extract the `iso` level set. `values` holds one value per grid sample
/// in the spec's index order; negative values are inside. Vertices on
/// shared cube edges are welded, so a watertight sign field yields a
/// closed, consistently oriented mesh. An all-one-sign grid yields an
/// empty mesh.
pub fn marching_cubes(spec: &GridSpec, values: &[f64], iso: f64) -> Result<TriangleMesh> {
    assert_eq!(values.len(), spec.total());
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();
    // weld key: (sample index of the edge's lower corner, sample index of
    // its upper corner)
    let mut edge_vertex: HashMap<(usize, usize), usize> = HashMap::new();

    let n = spec.res;
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            for k in 0..n - 1 {
                let corner_idx: [usize; 8] = std::array::from_fn(|c| {
                    let (dx, dy, dz) = CORNERS[c];
                    spec.index(i + dx, j + dy, k + dz)
                });
                let mut cube = 0usize;
                for (c, &ci) in corner_idx.iter().enumerate() {
                    if values[ci] < iso {
                        cube |= 1 << c;
                    }
                }
                if EDGE_TABLE[cube] == 0 {
                    continue;
                }
                let mut edge_to_mesh_vertex = [usize::MAX; 12];
                for (e, &(ca, cb)) in EDGES.iter().enumerate() {
                    if EDGE_TABLE[cube] & (1 << e) == 0 {
                        continue;
                    }
                    let (ia, ib) = (corner_idx[ca], corner_idx[cb]);
                    let key = (ia.min(ib), ia.max(ib));
                    let vid = *edge_vertex.entry(key).or_insert_with(|| {
                        let (va, vb) = (values[ia], values[ib]);
                        let t = if (vb - va).abs() < 1e-300 {
                            0.5
                        } else {
                            ((iso - va) / (vb - va)).clamp(0.0, 1.0)
                        };
                        let (ai, aj, ak) = spec.coords(ia);
                        let (bi, bj, bk) = spec.coords(ib);
                        let pa = spec.point(ai, aj, ak);
                        let pb = spec.point(bi, bj, bk);
                        vertices.push(pa + (pb - pa) * t);
                        vertices.len() - 1
                    });
                    edge_to_mesh_vertex[e] = vid;
                }
                let tri = &TRIANGLE_TABLE[cube];
                let mut t = 0;
                while tri[t] >= 0 {
                    let a = edge_to_mesh_vertex[tri[t] as usize];
                    let b = edge_to_mesh_vertex[tri[t + 1] as usize];
                    let c = edge_to_mesh_vertex[tri[t + 2] as usize];
                    if a != b && b != c && a != c {
                        // table order yields inward normals under the
                        // negative-inside convention; swap to outward
                        triangles.push([a, c, b]);
                    }
                    t += 3;
                }
            }
        }
    }
    TriangleMesh::new(vertices, triangles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TriangleBvh;

    fn sphere_grid(res: usize, radius: f64) -> (GridSpec, Vec<f64>) {
        let spec = GridSpec {
            res,
            origin: Vec3::new(-1.0, -1.0, -1.0),
            spacing: 2.0 / (res as f64 - 1.0),
        };
        let mut values = vec![0.0; spec.total()];
        for idx in 0..spec.total() {
            let (i, j, k) = spec.coords(idx);
            values[idx] = spec.point(i, j, k).norm() - radius;
        }
        (spec, values)
    }

    fn signed_volume(mesh: &TriangleMesh) -> f64 {
        (0..mesh.triangles.len())
            .map(|i| {
                let [a, b, c] = mesh.triangle_vertices(i);
                a.dot(b.cross(c)) / 6.0
            })
            .sum()
    }

    #[test]
    fn all_positive_grid_gives_empty_mesh() {
        let spec = GridSpec {
            res: 8,
            origin: Vec3::new(0.0, 0.0, 0.0),
            spacing: 1.0,
        };
        let mesh = marching_cubes(&spec, &vec![1.0; spec.total()], 0.0).unwrap();
        assert!(mesh.triangles.is_empty());
        assert!(mesh.vertices.is_empty());
    }

    #[test]
    fn sphere_mesh_is_closed_and_accurate() {
        let (spec, values) = sphere_grid(64, 0.7);
        let mesh = marching_cubes(&spec, &values, 0.0).unwrap();
        assert!(mesh.is_watertight(), "sphere level set must be closed");

        // every vertex within interpolation error of the analytic sphere
        for v in &mesh.vertices {
            assert!(
                (v.norm() - 0.7).abs() <= 2.0 * spec.spacing,
                "vertex off sphere by {}",
                (v.norm() - 0.7).abs()
            );
        }
        // two-sided: analytic samples near the mesh too
        let bvh = TriangleBvh::build(&mesh);
        let mut rng = crate::rng::seeded_rng(31);
        for _ in 0..200 {
            let p = crate::geometry::winding::random_unit(&mut rng) * 0.7;
            assert!(bvh.distance(p) <= 2.0 * spec.spacing);
        }
        // volume close to analytic and positive: outward orientation
        let vol = signed_volume(&mesh);
        let analytic = 4.0 / 3.0 * std::f64::consts::PI * 0.7f64.powi(3);
        assert!(vol > 0.0, "orientation flipped: signed volume {vol}");
        assert!((vol - analytic).abs() / analytic < 0.02);
    }

    #[test]
    fn flipping_signs_flips_orientation() {
        let (spec, values) = sphere_grid(24, 0.6);
        let flipped: Vec<f64> = values.iter().map(|v| -v).collect();
        let a = marching_cubes(&spec, &values, 0.0).unwrap();
        let b = marching_cubes(&spec, &flipped, 0.0).unwrap();
        assert_eq!(a.triangles.len(), b.triangles.len());
        assert!(signed_volume(&a) > 0.0);
        assert!(signed_volume(&b) < 0.0);
        assert!((signed_volume(&a) + signed_volume(&b)).abs() < 1e-9);
    }

    #[test]
    fn single_interior_negative_cell_makes_small_closed_surface() {
        let spec = GridSpec {
            res: 5,
            origin: Vec3::new(0.0, 0.0, 0.0),
            spacing: 1.0,
        };
        let mut values = vec![1.0; spec.total()];
        values[spec.index(2, 2, 2)] = -1.0;
        let mesh = marching_cubes(&spec, &values, 0.0).unwrap();
        assert!(!mesh.triangles.is_empty());
        assert!(mesh.is_watertight());
        // octahedron around the sample: 8 triangles, 6 welded vertices
        assert_eq!(mesh.triangles.len(), 8);
        assert_eq!(mesh.vertices.len(), 6);
    }
}
