//! Query-point generation, local kNN patch extraction, the
//! distance-weighted global subsample, and per-query normalization.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{sample_surface, IndexedMesh, KdTree, Sign};
use crate::math::Vec3;

/// Where a query point came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryOrigin {
    NearSurface,
    Uniform,
}

/// A supervised query point: position, ground-truth absolute distance to
/// the surface, and inside/outside label.
#[derive(Debug, Clone, Copy)]
pub struct QuerySample {
    pub x: Vec3,
    pub gt_abs_distance: f64,
    pub gt_sign: Sign,
    pub origin: QueryOrigin,
}

/// Default query counts: 1000 near-surface + 1000 uniform.
pub const NEAR_SURFACE_COUNT: usize = 1000;
pub const UNIFORM_COUNT: usize = 1000;
/// Near-surface normal offset bound, in multiples of L.
pub const NEAR_SURFACE_OFFSET: f64 = 0.02;

const MAX_SIGN_RETRIES: usize = 100;

/// Generate the per-mesh query set: `near` samples offset from the surface
/// along the triangle normal by U[-0.02L, 0.02L], plus `uniform` samples in
/// the unit cube. Sign-ambiguous draws are resampled (bounded retries).
pub fn generate_query_set_sized(
    indexed: &IndexedMesh,
    near: usize,
    uniform: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<QuerySample>> {
    let mesh = &indexed.mesh;
    if !mesh.is_watertight() {
        return Err(Error::NotWatertight("query generation needs a closed mesh".into()));
    }
    let l = mesh.bbox_longest_side;
    let mut out = Vec::with_capacity(near + uniform);

    let mut made = 0;
    let mut tries = 0;
    while made < near {
        if tries > MAX_SIGN_RETRIES * near.max(1) {
            return Err(Error::Data("too many sign-ambiguous near-surface samples".into()));
        }
        tries += 1;
        let s = &sample_surface(mesh, 1, rng)?[0];
        let n = mesh.triangle_normal(s.triangle);
        let offset = rng.gen_range(-NEAR_SURFACE_OFFSET * l..=NEAR_SURFACE_OFFSET * l);
        let x = s.point + n * offset;
        let sign = match indexed.inside_outside(x) {
            Ok(s) => s,
            Err(Error::AmbiguousSign { .. }) => continue,
            Err(e) => return Err(e),
        };
        out.push(QuerySample {
            x,
            gt_abs_distance: indexed.unsigned_distance(x),
            gt_sign: sign,
            origin: QueryOrigin::NearSurface,
        });
        made += 1;
    }

    let mut made = 0;
    let mut tries = 0;
    while made < uniform {
        if tries > MAX_SIGN_RETRIES * uniform.max(1) {
            return Err(Error::Data("too many sign-ambiguous uniform samples".into()));
        }
        tries += 1;
        let x = Vec3::new(
            rng.gen_range(-0.5..=0.5),
            rng.gen_range(-0.5..=0.5),
            rng.gen_range(-0.5..=0.5),
        );
        let sign = match indexed.inside_outside(x) {
            Ok(s) => s,
            Err(Error::AmbiguousSign { .. }) => continue,
            Err(e) => return Err(e),
        };
        out.push(QuerySample {
            x,
            gt_abs_distance: indexed.unsigned_distance(x),
            gt_sign: sign,
            origin: QueryOrigin::Uniform,
        });
        made += 1;
    }
    Ok(out)
}

/// The standard 2000-point query set (1000 near-surface + 1000 uniform).
pub fn generate_query_set(indexed: &IndexedMesh, rng: &mut ChaCha8Rng) -> Result<Vec<QuerySample>> {
    generate_query_set_sized(indexed, NEAR_SURFACE_COUNT, UNIFORM_COUNT, rng)
}

/// Exactly the `n_d` nearest cloud points to `x`, nearest first, index
/// tie-break. Errors if the cloud is smaller than `n_d`.
pub fn knn_patch(tree: &KdTree, x: Vec3, n_d: usize) -> Result<Vec<Vec3>> {
    if tree.len() < n_d {
        return Err(Error::CloudTooSmall { have: tree.len(), need: n_d });
    }
    Ok(tree.knn(x, n_d).into_iter().map(|i| tree.points()[i]).collect())
}

/// Distance-falloff weight for the global subsample: clamp(1 - 1.5 d/dmax,
/// 0.05, 1). The upper clamp is inactive for this form but retained.
pub fn subsample_weight(dist: f64, dist_max: f64) -> f64 {
    if dist_max <= 0.0 {
        return 1.0;
    }
    (1.0 - 1.5 * dist / dist_max).clamp(0.05, 1.0)
}

/// Draw `n_s` points with probability proportional to
/// [`subsample_weight`] of their distance from `x`. Without replacement
/// when the cloud is large enough, with replacement otherwise.
pub fn gradient_subsample(
    points: &[Vec3],
    x: Vec3,
    n_s: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec3>> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet("gradient_subsample".into()));
    }
    let dist_max = points
        .iter()
        .map(|p| p.dist(x))
        .fold(0.0f64, f64::max);
    let weights: Vec<f64> = points
        .iter()
        .map(|p| subsample_weight(p.dist(x), dist_max))
        .collect();
    weighted_draw(points, &weights, n_s, rng)
}

/// Uniform subsample, without replacement when possible.
pub fn uniform_subsample(points: &[Vec3], n_s: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec3>> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet("uniform_subsample".into()));
    }
    let weights = vec![1.0; points.len()];
    weighted_draw(points, &weights, n_s, rng)
}

/// Weighted sampling; switches to with-replacement when n > |points|.
fn weighted_draw(
    points: &[Vec3],
    weights: &[f64],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec3>> {
    let mut out = Vec::with_capacity(n);
    if points.len() < n {
        // with replacement
        let total: f64 = weights.iter().sum();
        for _ in 0..n {
            let u = rng.gen_range(0.0..total);
            out.push(points[pick(weights, u)]);
        }
    } else {
        // without replacement: zero out the weight of taken points
        let mut w = weights.to_vec();
        let mut total: f64 = w.iter().sum();
        for _ in 0..n {
            let u = rng.gen_range(0.0..total);
            let i = pick(&w, u);
            out.push(points[i]);
            total -= w[i];
            w[i] = 0.0;
        }
    }
    Ok(out)
}

fn pick(weights: &[f64], mut u: f64) -> usize {
    for (i, &w) in weights.iter().enumerate() {
        if u < w && w > 0.0 {
            return i;
        }
        u -= w;
    }
    // rounding fell off the end: last positive weight
    weights
        .iter()
        .rposition(|&w| w > 0.0)
        .expect("at least one positive weight")
}

/// All points within radius `r` of `x`, padded by cycling (or subsampled
/// by truncation of the distance-ordered list) to exactly `n_d` points.
pub fn fixed_radius_patch(tree: &KdTree, x: Vec3, r: f64, n_d: usize) -> Result<Vec<Vec3>> {
    assert!(r > 0.0);
    let idx = tree.within_radius(x, r);
    if idx.is_empty() {
        return Err(Error::EmptyPointSet(format!(
            "no points within {r} of ({}, {}, {})",
            x.x, x.y, x.z
        )));
    }
    let ball: Vec<Vec3> = idx.into_iter().map(|i| tree.points()[i]).collect();
    let mut out = Vec::with_capacity(n_d);
    for k in 0..n_d {
        out.push(ball[k % ball.len()]);
    }
    Ok(out)
}

/// A normalized (local, global) point-set pair: both subsets centered at
/// the query point and scaled by the local patch radius so the local
/// patch has unit radius and the query sits at the origin.
#[derive(Debug, Clone)]
pub struct PatchPair {
    pub local_patch: Vec<Vec3>,
    pub global_sub: Vec<Vec3>,
    /// Local-patch radius used for scaling; multiply patch-frame distances
    /// by this to return to world units.
    pub scale_factor: f64,
}

pub fn normalize_pair(local: &[Vec3], global: &[Vec3], x: Vec3) -> Result<PatchPair> {
    if local.is_empty() {
        return Err(Error::EmptyPointSet("local patch".into()));
    }
    let r = local
        .iter()
        .map(|p| p.dist(x))
        .fold(0.0f64, f64::max);
    if r <= 0.0 {
        return Err(Error::DegeneratePatch);
    }
    // each subset is scaled to its own unit radius: the local radius is
    // meaningful for the distance output (and is recorded as the rescale
    // factor), while the global subset must appear at a stable scale
    // regardless of local point density for the sign decision to be
    // learnable
    let rg = global
        .iter()
        .map(|p| p.dist(x))
        .fold(0.0f64, f64::max);
    if rg <= 0.0 {
        return Err(Error::DegeneratePatch);
    }
    let inv = 1.0 / r;
    let inv_g = 1.0 / rg;
    Ok(PatchPair {
        local_patch: local.iter().map(|p| (*p - x) * inv).collect(),
        global_sub: global.iter().map(|p| (*p - x) * inv_g).collect(),
        scale_factor: r,
    })
}

// --- query-set file format -------------------------------------------------
//
// 16-byte header: 8-byte magic "SRQUERY\0", u32 version (LE), u32 record
// count (LE). Records: x, y, z, distance as little-endian f64, sign as i8
// (+1 outside, -1 inside), origin as u8 (0 near-surface, 1 uniform).

const QUERY_MAGIC: &[u8; 8] = b"SRQUERY\0";
const QUERY_VERSION: u32 = 1;

pub fn write_query_set(path: &Path, samples: &[QuerySample]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(QUERY_MAGIC)?;
    w.write_all(&QUERY_VERSION.to_le_bytes())?;
    w.write_all(&(samples.len() as u32).to_le_bytes())?;
    for s in samples {
        w.write_all(&s.x.x.to_le_bytes())?;
        w.write_all(&s.x.y.to_le_bytes())?;
        w.write_all(&s.x.z.to_le_bytes())?;
        w.write_all(&s.gt_abs_distance.to_le_bytes())?;
        w.write_all(&[s.gt_sign.as_i8() as u8])?;
        w.write_all(&[match s.origin {
            QueryOrigin::NearSurface => 0u8,
            QueryOrigin::Uniform => 1u8,
        }])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_query_set(path: &Path) -> Result<Vec<QuerySample>> {
    let mut file = std::fs::File::open(path)?;
    let mut header = [0u8; 16];
    file.read_exact(&mut header)?;
    if &header[..8] != QUERY_MAGIC {
        return Err(Error::Data(format!("{}: bad query-set magic", path.display())));
    }
    let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if version != QUERY_VERSION {
        return Err(Error::Data(format!("unsupported query-set version {version}")));
    }
    let count = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let mut out = Vec::with_capacity(count);
    let mut rec = [0u8; 34];
    for _ in 0..count {
        file.read_exact(&mut rec)?;
        let f = |o: usize| f64::from_le_bytes(rec[o..o + 8].try_into().unwrap());
        let sign = Sign::from_i8(rec[32] as i8)
            .ok_or_else(|| Error::Data(format!("bad sign byte {}", rec[32])))?;
        let origin = match rec[33] {
            0 => QueryOrigin::NearSurface,
            1 => QueryOrigin::Uniform,
            b => return Err(Error::Data(format!("bad origin byte {b}"))),
        };
        out.push(QuerySample {
            x: Vec3::new(f(0), f(8), f(16)),
            gt_abs_distance: f(24),
            gt_sign: sign,
            origin,
        });
    }
    Ok(out)
}
