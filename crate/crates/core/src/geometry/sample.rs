//! Area-uniform surface sampling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::Vec3;

use super::mesh::TriangleMesh;

/// A surface sample with its source triangle (for normal lookup).
#[derive(Debug, Clone, Copy)]
pub struct SurfaceSample {
    pub point: Vec3,
    pub triangle: usize,
}

/// Draw `n` points distributed area-uniformly over the mesh surface:
/// triangle chosen proportionally to area, position barycentric-uniform.
pub fn sample_surface(
    mesh: &TriangleMesh,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SurfaceSample>> {
    assert!(n >= 1);
    let areas: Vec<f64> = (0..mesh.triangles.len())
        .map(|i| mesh.triangle_area(i))
        .collect();
    let total: f64 = areas.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateMesh("zero surface area".into()));
    }
    // cumulative distribution over triangles
    let mut cdf = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a;
        cdf.push(acc);
    }

    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.gen_range(0.0..total);
        let t = match cdf.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
            Ok(i) => i,
            Err(i) => i.min(cdf.len() - 1),
        };
        let [a, b, c] = mesh.triangle_vertices(t);
        // uniform barycentric via square-root trick
        let r1: f64 = rng.gen();
        let r2: f64 = rng.gen();
        let s = r1.sqrt();
        let p = a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2);
        out.push(SurfaceSample { point: p, triangle: t });
    }
    Ok(out)
}

pub fn sample_surface_points(
    mesh: &TriangleMesh,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec3>> {
    Ok(sample_surface(mesh, n, rng)?
        .into_iter()
        .map(|s| s.point)
        .collect())
}
