//! Point-to-triangle closest point and ray-triangle intersection.

use crate::math::Vec3;

/// Closest point on triangle (a, b, c) to point p.
///
/// Ericson, Real-Time Collision Detection, 5.1.5.
pub fn closest_point_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;

    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }

    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }

    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }

    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

pub fn point_triangle_dist_sq(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> f64 {
    closest_point_on_triangle(p, a, b, c).dist_sq(p)
}

/// Möller–Trumbore ray-triangle intersection. Returns the ray parameter t
/// for hits with t > 0; grazing/parallel cases return None.
pub fn ray_triangle(origin: Vec3, dir: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Option<f64> {
    const EPS: f64 = 1e-12;
    let e1 = b - a;
    let e2 = c - a;
    let pvec = dir.cross(e2);
    let det = e1.dot(pvec);
    if det.abs() < EPS {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = origin - a;
    let u = tvec.dot(pvec) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(e1);
    let v = dir.dot(qvec) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(qvec) * inv_det;
    if t > EPS {
        Some(t)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };
    const B: Vec3 = Vec3 { x: 1.0, y: 0.0, z: 0.0 };
    const C: Vec3 = Vec3 { x: 0.0, y: 1.0, z: 0.0 };

    #[test]
    fn interior_projection() {
        let p = Vec3::new(0.25, 0.25, 1.0);
        let q = closest_point_on_triangle(p, A, B, C);
        assert!(q.dist(Vec3::new(0.25, 0.25, 0.0)) < 1e-15);
    }

    #[test]
    fn vertex_region() {
        let p = Vec3::new(-1.0, -1.0, 0.5);
        assert_eq!(closest_point_on_triangle(p, A, B, C), A);
    }

    #[test]
    fn edge_region() {
        let p = Vec3::new(0.5, -1.0, 0.0);
        let q = closest_point_on_triangle(p, A, B, C);
        assert!(q.dist(Vec3::new(0.5, 0.0, 0.0)) < 1e-15);
    }

    #[test]
    fn ray_hits_triangle() {
        let t = ray_triangle(Vec3::new(0.2, 0.2, -1.0), Vec3::new(0.0, 0.0, 1.0), A, B, C);
        assert!((t.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ray_misses_triangle() {
        let t = ray_triangle(Vec3::new(2.0, 2.0, -1.0), Vec3::new(0.0, 0.0, 1.0), A, B, C);
        assert!(t.is_none());
    }

    #[test]
    fn backward_hit_rejected() {
        let t = ray_triangle(Vec3::new(0.2, 0.2, 1.0), Vec3::new(0.0, 0.0, 1.0), A, B, C);
        assert!(t.is_none());
    }
}
