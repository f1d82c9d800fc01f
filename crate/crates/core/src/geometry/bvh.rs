//! Bounding-volume hierarchy over mesh triangles for closest-point and
//! ray queries.

use crate::math::{Aabb, Vec3};

use super::dist::{point_triangle_dist_sq, ray_triangle};
use super::mesh::TriangleMesh;

struct Node {
    bbox: Aabb,
    // leaf: range into `order`; inner: child indices
    kind: NodeKind,
}

enum NodeKind {
    Leaf { start: usize, end: usize },
    Inner { left: usize, right: usize },
}

/// Median-split BVH. Construction is single-threaded; queries are read-only.
pub struct TriangleBvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
    tris: Vec<[Vec3; 3]>,
}

const LEAF_SIZE: usize = 8;

impl TriangleBvh {
    pub fn build(mesh: &TriangleMesh) -> Self {
        let tris: Vec<[Vec3; 3]> = (0..mesh.triangles.len())
            .map(|i| mesh.triangle_vertices(i))
            .collect();
        let centroids: Vec<Vec3> = tris
            .iter()
            .map(|t| (t[0] + t[1] + t[2]) / 3.0)
            .collect();
        let mut order: Vec<usize> = (0..tris.len()).collect();
        let mut bvh = TriangleBvh {
            nodes: Vec::new(),
            order: Vec::new(),
            tris,
        };
        if !order.is_empty() {
            bvh.build_node(&mut order, 0, centroids.len(), &centroids);
        }
        bvh.order = order;
        bvh
    }

    fn build_node(&mut self, order: &mut [usize], start: usize, end: usize, centroids: &[Vec3]) -> usize {
        let mut bbox = Aabb::empty();
        for &t in &order[start..end] {
            for v in &self.tris[t] {
                bbox.expand(*v);
            }
        }
        let idx = self.nodes.len();
        self.nodes.push(Node {
            bbox,
            kind: NodeKind::Leaf { start, end },
        });
        if end - start <= LEAF_SIZE {
            return idx;
        }
        let cbox = Aabb::from_points(order[start..end].iter().map(|&t| centroids[t]));
        let ext = cbox.extent();
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = (start + end) / 2;
        order[start..end].sort_unstable_by(|&a, &b| {
            centroids[a]
                .axis(axis)
                .partial_cmp(&centroids[b].axis(axis))
                .unwrap()
                .then(a.cmp(&b))
        });
        let left = self.build_node(order, start, mid, centroids);
        let right = self.build_node(order, mid, end, centroids);
        self.nodes[idx].kind = NodeKind::Inner { left, right };
        idx
    }

    /// Minimum distance from `p` to any triangle.
    pub fn distance(&self, p: Vec3) -> f64 {
        self.distance_sq(p).sqrt()
    }

    pub fn distance_sq(&self, p: Vec3) -> f64 {
        if self.nodes.is_empty() {
            return f64::INFINITY;
        }
        let mut best = f64::INFINITY;
        self.distance_rec(0, p, &mut best);
        best
    }

    fn distance_rec(&self, node: usize, p: Vec3, best: &mut f64) {
        let n = &self.nodes[node];
        if n.bbox.dist_sq(p) >= *best {
            return;
        }
        match n.kind {
            NodeKind::Leaf { start, end } => {
                for &t in &self.order[start..end] {
                    let [a, b, c] = self.tris[t];
                    let d = point_triangle_dist_sq(p, a, b, c);
                    if d < *best {
                        *best = d;
                    }
                }
            }
            NodeKind::Inner { left, right } => {
                // visit nearer child first for tighter pruning
                let dl = self.nodes[left].bbox.dist_sq(p);
                let dr = self.nodes[right].bbox.dist_sq(p);
                if dl <= dr {
                    self.distance_rec(left, p, best);
                    self.distance_rec(right, p, best);
                } else {
                    self.distance_rec(right, p, best);
                    self.distance_rec(left, p, best);
                }
            }
        }
    }

    /// Nearest ray hit: returns (t, triangle index).
    pub fn raycast(&self, origin: Vec3, dir: Vec3) -> Option<(f64, usize)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<(f64, usize)> = None;
        self.raycast_rec(0, origin, dir, &mut best);
        best
    }

    fn raycast_rec(&self, node: usize, origin: Vec3, dir: Vec3, best: &mut Option<(f64, usize)>) {
        let n = &self.nodes[node];
        match ray_aabb(origin, dir, &n.bbox) {
            Some(tmin) => {
                if let Some((tb, _)) = best {
                    if tmin > *tb {
                        return;
                    }
                }
            }
            None => return,
        }
        match n.kind {
            NodeKind::Leaf { start, end } => {
                for &t in &self.order[start..end] {
                    let [a, b, c] = self.tris[t];
                    if let Some(hit) = ray_triangle(origin, dir, a, b, c) {
                        if best.map_or(true, |(tb, _)| hit < tb) {
                            *best = Some((hit, t));
                        }
                    }
                }
            }
            NodeKind::Inner { left, right } => {
                self.raycast_rec(left, origin, dir, best);
                self.raycast_rec(right, origin, dir, best);
            }
        }
    }

    /// All ray-hit parameters along a ray, sorted ascending (used by the
    /// ray-parity sign oracle).
    pub fn ray_all_hits(&self, origin: Vec3, dir: Vec3) -> Vec<f64> {
        let mut hits = Vec::new();
        for t in &self.tris {
            if let Some(h) = ray_triangle(origin, dir, t[0], t[1], t[2]) {
                hits.push(h);
            }
        }
        hits.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        hits
    }
}

fn ray_aabb(origin: Vec3, dir: Vec3, bbox: &Aabb) -> Option<f64> {
    let mut tmin = 0.0f64;
    let mut tmax = f64::INFINITY;
    for i in 0..3 {
        let o = origin.axis(i);
        let d = dir.axis(i);
        let lo = bbox.min.axis(i);
        let hi = bbox.max.axis(i);
        if d.abs() < 1e-300 {
            if o < lo || o > hi {
                return None;
            }
        } else {
            let inv = 1.0 / d;
            let (t0, t1) = if inv >= 0.0 {
                ((lo - o) * inv, (hi - o) * inv)
            } else {
                ((hi - o) * inv, (lo - o) * inv)
            };
            tmin = tmin.max(t0);
            tmax = tmax.min(t1);
            if tmin > tmax {
                return None;
            }
        }
    }
    Some(tmin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes;
    use rand::Rng;

    #[test]
    fn distance_matches_brute_force() {
        let mesh = shapes::uv_sphere(Vec3::ZERO, 0.8, 16, 12);
        let bvh = TriangleBvh::build(&mesh);
        let mut rng = crate::rng::seeded_rng(1);
        for _ in 0..500 {
            let p = Vec3::new(
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
            );
            let brute = (0..mesh.triangles.len())
                .map(|i| {
                    let [a, b, c] = mesh.triangle_vertices(i);
                    point_triangle_dist_sq(p, a, b, c)
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt();
            let fast = bvh.distance(p);
            assert!(
                (fast - brute).abs() <= 1e-12 * brute.max(1.0),
                "bvh {fast} vs brute {brute}"
            );
        }
    }

    #[test]
    fn raycast_finds_nearest_hit() {
        let mesh = shapes::unit_cube();
        let bvh = TriangleBvh::build(&mesh);
        let (t, _) = bvh
            .raycast(Vec3::new(0.0, 0.0, 5.0), Vec3::new(0.0, 0.0, -1.0))
            .unwrap();
        assert!((t - 4.5).abs() < 1e-12);
    }

    #[test]
    fn ray_from_inside_cube() {
        let mesh = shapes::unit_cube();
        let bvh = TriangleBvh::build(&mesh);
        let hits = bvh.ray_all_hits(Vec3::new(0.0, 0.1, 0.2), Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(hits.len(), 1);
    }
}
