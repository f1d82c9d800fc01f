//! kd-tree over a point set for k-nearest-neighbor and radius queries.
//!
//! Ties in kNN are broken by ascending point index so query results are
//! independent of storage order and floating-point comparison quirks.

use crate::math::Vec3;

struct KdNode {
    axis: u8,
    split: f64,
    left: usize,
    right: usize,
    start: usize,
    end: usize,
}

pub struct KdTree {
    points: Vec<Vec3>,
    nodes: Vec<KdNode>,
    order: Vec<usize>,
}

const LEAF_SIZE: usize = 16;

impl KdTree {
    pub fn build(points: &[Vec3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut tree = KdTree {
            points: points.to_vec(),
            nodes: Vec::new(),
            order: Vec::new(),
        };
        if !points.is_empty() {
            tree.build_node(&mut order, 0, points.len());
        }
        tree.order = order;
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    fn build_node(&mut self, order: &mut [usize], start: usize, end: usize) -> usize {
        let idx = self.nodes.len();
        self.nodes.push(KdNode {
            axis: 0,
            split: 0.0,
            left: usize::MAX,
            right: usize::MAX,
            start,
            end,
        });
        if end - start <= LEAF_SIZE {
            return idx;
        }
        // split on the widest axis at the median
        let mut min = Vec3::splat(f64::INFINITY);
        let mut max = Vec3::splat(f64::NEG_INFINITY);
        for &i in &order[start..end] {
            min = min.min_elem(self.points[i]);
            max = max.max_elem(self.points[i]);
        }
        let ext = max - min;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = (start + end) / 2;
        order[start..end].sort_unstable_by(|&a, &b| {
            self.points[a]
                .axis(axis)
                .partial_cmp(&self.points[b].axis(axis))
                .unwrap()
                .then(a.cmp(&b))
        });
        let split = self.points[order[mid]].axis(axis);
        let left = self.build_node(order, start, mid);
        let right = self.build_node(order, mid, end);
        let n = &mut self.nodes[idx];
        n.axis = axis as u8;
        n.split = split;
        n.left = left;
        n.right = right;
        idx
    }

    /// Indices of the k nearest points to `q`, closest first. If fewer than
    /// k points exist, all are returned.
    pub fn knn(&self, q: Vec3, k: usize) -> Vec<usize> {
        if self.points.is_empty() || k == 0 {
            return Vec::new();
        }
        let k = k.min(self.points.len());
        // max-heap of (dist_sq, index); worst candidate at the top
        let mut heap: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        self.knn_rec(0, q, k, &mut heap);
        heap.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        heap.into_iter().map(|(_, i)| i).collect()
    }

    fn knn_rec(&self, node: usize, q: Vec3, k: usize, heap: &mut Vec<(f64, usize)>) {
        let n = &self.nodes[node];
        if n.left == usize::MAX {
            for &i in &self.order[n.start..n.end] {
                let d = self.points[i].dist_sq(q);
                push_candidate(heap, k, d, i);
            }
            return;
        }
        let axis = n.axis as usize;
        let delta = q.axis(axis) - n.split;
        let (near, far) = if delta <= 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.knn_rec(near, q, k, heap);
        if heap.len() < k || delta * delta <= worst(heap) {
            self.knn_rec(far, q, k, heap);
        }
    }

    /// Indices of all points within `r` of `q`, ordered by ascending
    /// distance (ties by index).
    pub fn within_radius(&self, q: Vec3, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.points.is_empty() {
            self.radius_rec(0, q, r * r, &mut out);
        }
        out.sort_unstable_by(|&a, &b| {
            self.points[a]
                .dist_sq(q)
                .partial_cmp(&self.points[b].dist_sq(q))
                .unwrap()
                .then(a.cmp(&b))
        });
        out
    }

    fn radius_rec(&self, node: usize, q: Vec3, r_sq: f64, out: &mut Vec<usize>) {
        let n = &self.nodes[node];
        if n.left == usize::MAX {
            for &i in &self.order[n.start..n.end] {
                if self.points[i].dist_sq(q) <= r_sq {
                    out.push(i);
                }
            }
            return;
        }
        let delta = q.axis(n.axis as usize) - n.split;
        let (near, far) = if delta <= 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.radius_rec(near, q, r_sq, out);
        if delta * delta <= r_sq {
            self.radius_rec(far, q, r_sq, out);
        }
    }

    /// Distance from `q` to the nearest point.
    pub fn nearest_dist(&self, q: Vec3) -> f64 {
        match self.knn(q, 1).first() {
            Some(&i) => self.points[i].dist(q),
            None => f64::INFINITY,
        }
    }
}

fn worst(heap: &[(f64, usize)]) -> f64 {
    heap.iter().map(|&(d, _)| d).fold(0.0, f64::max)
}

fn push_candidate(heap: &mut Vec<(f64, usize)>, k: usize, d: f64, i: usize) {
    if heap.len() < k {
        heap.push((d, i));
        return;
    }
    // replace the worst candidate; on equal distance keep the lower index
    let (wi, &(wd, widx)) = heap
        .iter()
        .enumerate()
        .max_by(|a, b| {
            a.1 .0
                .partial_cmp(&b.1 .0)
                .unwrap()
                .then(a.1 .1.cmp(&b.1 .1))
        })
        .unwrap();
    if d < wd || (d == wd && i < widx) {
        heap[wi] = (d, i);
    }
}
