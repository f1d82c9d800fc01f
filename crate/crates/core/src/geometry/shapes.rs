//! Procedural watertight test solids: spheres, boxes, tori and CSG-style
//! unions of disjoint parts. These stand in for large CAD datasets at desk
//! scale.

use crate::math::Vec3;

use super::mesh::TriangleMesh;

/// Axis-aligned box mesh (12 triangles, outward-facing).
pub fn cuboid(center: Vec3, size: Vec3) -> TriangleMesh {
    let h = size * 0.5;
    let v = |sx: f64, sy: f64, sz: f64| {
        Vec3::new(center.x + sx * h.x, center.y + sy * h.y, center.z + sz * h.z)
    };
    let vertices = vec![
        v(-1.0, -1.0, -1.0), // 0
        v(1.0, -1.0, -1.0),  // 1
        v(1.0, 1.0, -1.0),   // 2
        v(-1.0, 1.0, -1.0),  // 3
        v(-1.0, -1.0, 1.0),  // 4
        v(1.0, -1.0, 1.0),   // 5
        v(1.0, 1.0, 1.0),    // 6
        v(-1.0, 1.0, 1.0),   // 7
    ];
    let triangles = vec![
        [0, 2, 1], [0, 3, 2], // -z
        [4, 5, 6], [4, 6, 7], // +z
        [0, 1, 5], [0, 5, 4], // -y
        [3, 7, 6], [3, 6, 2], // +y
        [0, 4, 7], [0, 7, 3], // -x
        [1, 2, 6], [1, 6, 5], // +x
    ];
    TriangleMesh::new(vertices, triangles).expect("cuboid is valid")
}

/// Cube with side 1 centered at the origin.
pub fn unit_cube() -> TriangleMesh {
    cuboid(Vec3::ZERO, Vec3::splat(1.0))
}

/// Regular tetrahedron inscribed in a cube of the given half-extent.
pub fn tetrahedron() -> TriangleMesh {
    let vertices = vec![
        Vec3::new(1.0, 1.0, 1.0),
        Vec3::new(1.0, -1.0, -1.0),
        Vec3::new(-1.0, 1.0, -1.0),
        Vec3::new(-1.0, -1.0, 1.0),
    ];
    let triangles = vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
    TriangleMesh::new(vertices, triangles).expect("tetrahedron is valid")
}

/// UV sphere. `segments` is the longitude count, `rings` the latitude count.
pub fn uv_sphere(center: Vec3, radius: f64, segments: usize, rings: usize) -> TriangleMesh {
    assert!(segments >= 3 && rings >= 2);
    let mut vertices = Vec::new();
    vertices.push(center + Vec3::new(0.0, 0.0, radius)); // north pole
    for r in 1..rings {
        let phi = std::f64::consts::PI * r as f64 / rings as f64;
        for s in 0..segments {
            let theta = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
            vertices.push(
                center
                    + Vec3::new(
                        radius * phi.sin() * theta.cos(),
                        radius * phi.sin() * theta.sin(),
                        radius * phi.cos(),
                    ),
            );
        }
    }
    vertices.push(center + Vec3::new(0.0, 0.0, -radius)); // south pole
    let south = vertices.len() - 1;
    let ring = |r: usize, s: usize| 1 + (r - 1) * segments + (s % segments);

    let mut triangles = Vec::new();
    for s in 0..segments {
        triangles.push([0, ring(1, s), ring(1, s + 1)]);
    }
    for r in 1..rings - 1 {
        for s in 0..segments {
            let a = ring(r, s);
            let b = ring(r, s + 1);
            let c = ring(r + 1, s);
            let d = ring(r + 1, s + 1);
            triangles.push([a, c, d]);
            triangles.push([a, d, b]);
        }
    }
    for s in 0..segments {
        triangles.push([south, ring(rings - 1, s + 1), ring(rings - 1, s)]);
    }
    TriangleMesh::new(vertices, triangles).expect("sphere is valid")
}

/// Torus around the z axis: `major` is the center-circle radius, `minor`
/// the tube radius.
pub fn torus(center: Vec3, major: f64, minor: f64, segments: usize, sides: usize) -> TriangleMesh {
    assert!(segments >= 3 && sides >= 3);
    let mut vertices = Vec::new();
    for s in 0..segments {
        let u = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
        for t in 0..sides {
            let v = 2.0 * std::f64::consts::PI * t as f64 / sides as f64;
            let r = major + minor * v.cos();
            vertices.push(center + Vec3::new(r * u.cos(), r * u.sin(), minor * v.sin()));
        }
    }
    let idx = |s: usize, t: usize| (s % segments) * sides + (t % sides);
    let mut triangles = Vec::new();
    for s in 0..segments {
        for t in 0..sides {
            let a = idx(s, t);
            let b = idx(s + 1, t);
            let c = idx(s + 1, t + 1);
            let d = idx(s, t + 1);
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    TriangleMesh::new(vertices, triangles).expect("torus is valid")
}

/// Disjoint union of two meshes (no boolean; parts must not intersect for
/// the result to be watertight in the solid sense).
pub fn disjoint_union(a: &TriangleMesh, b: &TriangleMesh) -> TriangleMesh {
    let mut vertices = a.vertices.clone();
    let offset = vertices.len();
    vertices.extend(b.vertices.iter().copied());
    let mut triangles = a.triangles.clone();
    triangles.extend(
        b.triangles
            .iter()
            .map(|t| [t[0] + offset, t[1] + offset, t[2] + offset]),
    );
    TriangleMesh::new(vertices, triangles).expect("union of valid meshes is valid")
}

/// The default desk-scale procedural dataset: a named list of watertight
/// solids of mixed topology. `n` cycles through the family with varying
/// parameters.
pub fn procedural_dataset(n: usize) -> Vec<(String, TriangleMesh)> {
    let mut shapes = Vec::new();
    for i in 0..n {
        let (name, mesh) = match i % 5 {
            0 => (
                format!("sphere_{i:03}"),
                uv_sphere(Vec3::ZERO, 0.8 + 0.1 * (i / 5) as f64, 24, 16),
            ),
            1 => (
                format!("box_{i:03}"),
                cuboid(Vec3::ZERO, Vec3::new(1.6, 1.0 + 0.2 * (i / 5) as f64, 0.8)),
            ),
            2 => (
                format!("torus_{i:03}"),
                torus(Vec3::ZERO, 0.7, 0.25 + 0.02 * (i / 5) as f64, 28, 14),
            ),
            3 => {
                let a = uv_sphere(Vec3::new(-0.5, 0.0, 0.0), 0.45, 18, 12);
                let b = cuboid(Vec3::new(0.55, 0.0, 0.0), Vec3::splat(0.7));
                (format!("union_{i:03}"), disjoint_union(&a, &b))
            }
            _ => (
                format!("tet_{i:03}"),
                tetrahedron(),
            ),
        };
        shapes.push((name, mesh));
    }
    shapes
}
