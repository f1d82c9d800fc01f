//! Generalized winding number sign oracle with a ray-parity cross-check.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::Vec3;

use super::bvh::TriangleBvh;
use super::mesh::TriangleMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Inside,
    Outside,
}

impl Sign {
    pub fn as_f64(self) -> f64 {
        match self {
            Sign::Inside => -1.0,
            Sign::Outside => 1.0,
        }
    }

    pub fn from_i8(v: i8) -> Option<Sign> {
        match v {
            -1 => Some(Sign::Inside),
            1 => Some(Sign::Outside),
            _ => None,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Sign::Inside => -1,
            Sign::Outside => 1,
        }
    }
}

/// Generalized winding number of `x` with respect to the mesh.
///
/// Sums the signed solid angle each triangle subtends at `x`, divided by
/// 4π (van Oosterom & Strackee). ~0 outside, ~1 inside a watertight mesh.
pub fn winding_number(mesh: &TriangleMesh, x: Vec3) -> f64 {
    let mut total = 0.0;
    for t in &mesh.triangles {
        let a = mesh.vertices[t[0]] - x;
        let b = mesh.vertices[t[1]] - x;
        let c = mesh.vertices[t[2]] - x;
        let la = a.norm();
        let lb = b.norm();
        let lc = c.norm();
        let num = a.dot(b.cross(c));
        let den = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
        total += 2.0 * num.atan2(den);
    }
    total / (4.0 * std::f64::consts::PI)
}

/// Half-band around w = 0.5 inside which the label is considered ambiguous.
pub const WINDING_AMBIGUITY_TOL: f64 = 1e-3;

/// Inside/outside label by generalized winding number. Points with a
/// winding number within [`WINDING_AMBIGUITY_TOL`] of 0.5 are rejected so
/// the caller can resample instead of guessing.
pub fn inside_outside(mesh: &TriangleMesh, x: Vec3) -> Result<Sign> {
    let w = winding_number(mesh, x);
    if (w - 0.5).abs() < WINDING_AMBIGUITY_TOL {
        return Err(Error::AmbiguousSign { x: x.x, y: x.y, z: x.z, w });
    }
    Ok(if w > 0.5 { Sign::Inside } else { Sign::Outside })
}

/// Ray-parity sign oracle: casts a ray in a random direction and counts
/// crossings. Retries with fresh directions when a hit lies suspiciously
/// close to another (edge grazing).
pub fn ray_parity_sign(bvh: &TriangleBvh, x: Vec3, rng: &mut ChaCha8Rng) -> Sign {
    const MAX_TRIES: usize = 16;
    for _ in 0..MAX_TRIES {
        let dir = random_unit(rng);
        let hits = bvh.ray_all_hits(x, dir);
        let suspicious = hits
            .windows(2)
            .any(|w| (w[1] - w[0]).abs() < 1e-9)
            || hits.iter().any(|&t| t < 1e-9);
        if suspicious {
            continue;
        }
        return if hits.len() % 2 == 1 {
            Sign::Inside
        } else {
            Sign::Outside
        };
    }
    // fall back to the last parity even if grazing; extremely rare
    let hits = bvh.ray_all_hits(x, Vec3::new(0.577, 0.577, 0.578).normalized());
    if hits.len() % 2 == 1 {
        Sign::Inside
    } else {
        Sign::Outside
    }
}

pub fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm_sq();
        if n > 1e-6 && n <= 1.0 {
            return v / n.sqrt();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes;

    #[test]
    fn cube_center_is_inside() {
        let m = shapes::unit_cube();
        assert_eq!(inside_outside(&m, Vec3::ZERO).unwrap(), Sign::Inside);
    }

    #[test]
    fn far_point_is_outside() {
        let m = shapes::unit_cube();
        assert_eq!(
            inside_outside(&m, Vec3::new(10.0, 0.0, 0.0)).unwrap(),
            Sign::Outside
        );
    }

    #[test]
    fn torus_hole_is_outside() {
        let m = shapes::torus(Vec3::ZERO, 0.7, 0.2, 24, 12);
        assert_eq!(inside_outside(&m, Vec3::ZERO).unwrap(), Sign::Outside);
        // a point in the tube
        assert_eq!(
            inside_outside(&m, Vec3::new(0.7, 0.0, 0.0)).unwrap(),
            Sign::Inside
        );
    }

    #[test]
    fn winding_agrees_with_ray_parity_on_torus() {
        let m = shapes::torus(Vec3::ZERO, 0.6, 0.25, 20, 10);
        let bvh = TriangleBvh::build(&m);
        let mut rng = crate::rng::seeded_rng(7);
        let mut agree = 0;
        let mut total = 0;
        for _ in 0..2000 {
            let x = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let w = match inside_outside(&m, x) {
                Ok(s) => s,
                Err(_) => continue,
            };
            let r = ray_parity_sign(&bvh, x, &mut rng);
            total += 1;
            if w == r {
                agree += 1;
            }
        }
        assert!(total > 1900);
        assert!(
            agree as f64 >= total as f64 * 0.999,
            "agreement {agree}/{total}"
        );
    }

    #[test]
    fn invariant_under_rigid_transform() {
        use crate::math::{mat_apply, quat_to_matrix};
        let m = shapes::tetrahedron();
        let q = [0.8, 0.2, -0.5, 0.27];
        let n = (q.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let rot = quat_to_matrix([q[0] / n, q[1] / n, q[2] / n, q[3] / n]);
        let shift = Vec3::new(0.3, -1.1, 0.9);
        let mut rng = crate::rng::seeded_rng(9);
        for _ in 0..50 {
            let x = Vec3::new(
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
            );
            let s0 = match inside_outside(&m, x) {
                Ok(s) => s,
                Err(_) => continue,
            };
            let verts: Vec<Vec3> = m.vertices.iter().map(|&v| mat_apply(&rot, v) + shift).collect();
            let m2 = TriangleMesh::new(verts, m.triangles.clone()).unwrap();
            let s1 = inside_outside(&m2, mat_apply(&rot, x) + shift).unwrap();
            assert_eq!(s0, s1);
        }
    }
}
