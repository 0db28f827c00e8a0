//! Exact 3-D kd-tree over a fixed point set.
//!
//! Nearest-neighbour queries are exact. Ties in distance are broken by the
//! lowest original index, so results match a linear scan bit for bit.

use nalgebra::Vector3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Static kd-tree. Immutable after construction, safe to share across threads.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    // permutation of point indices, leaves reference contiguous ranges
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let mut tree = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // split along the axis of largest extent
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        if hi[axis] - lo[axis] <= 0.0 {
            // all points coincide
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis])
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// Index and squared distance of the nearest point; lowest index wins ties.
    /// Returns `None` on an empty tree.
    pub fn nearest(&self, query: &Vector3<f64>) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(0, query, &mut best);
        Some((best.0, best.1))
    }

    fn nearest_rec(&self, node: usize, query: &Vector3<f64>, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = (self.points[i] - query).norm_squared();
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.nearest_rec(near, query, best);
                // `<=` keeps equal-distance candidates with lower indices reachable
                if diff * diff <= best.1 {
                    self.nearest_rec(far, query, best);
                }
            }
        }
    }

    /// Indices of the `k` nearest points ordered by (distance, index).
    pub fn k_nearest(&self, query: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let mut heap: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        self.knn_rec(0, query, k, &mut heap);
        heap.into_iter().map(|(d, i)| (i, d)).collect()
    }

    fn knn_rec(&self, node: usize, query: &Vector3<f64>, k: usize, found: &mut Vec<(f64, usize)>) {
        let worst = |found: &Vec<(f64, usize)>| {
            if found.len() < k {
                f64::INFINITY
            } else {
                found[found.len() - 1].0
            }
        };
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = (self.points[i] - query).norm_squared();
                    if found.len() == k {
                        let last = found[k - 1];
                        if (d, i) >= last {
                            continue;
                        }
                    }
                    // sorted insert, small k keeps this cheap
                    let pos = found.partition_point(|&(fd, fi)| (fd, fi) < (d, i));
                    found.insert(pos, (d, i));
                    found.truncate(k);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.knn_rec(near, query, k, found);
                if diff * diff <= worst(found) {
                    self.knn_rec(far, query, k, found);
                }
            }
        }
    }

    /// Indices of all points with squared distance `<= radius_sq`, in ascending index order.
    pub fn within_radius(&self, query: &Vector3<f64>, radius_sq: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.points.is_empty() {
            self.radius_rec(0, query, radius_sq, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn radius_rec(&self, node: usize, query: &Vector3<f64>, radius_sq: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                out.extend(
                    self.order[start..end]
                        .iter()
                        .copied()
                        .filter(|&i| (self.points[i] - query).norm_squared() <= radius_sq),
                );
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                if diff < 0.0 || diff * diff <= radius_sq {
                    self.radius_rec(left, query, radius_sq, out);
                }
                if diff >= 0.0 || diff * diff <= radius_sq {
                    self.radius_rec(right, query, radius_sq, out);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_nearest(points: &[Vector3<f64>], q: &Vector3<f64>) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = (p - q).norm_squared();
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    #[test]
    fn matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<_> = (0..1000)
            .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let tree = KdTree::new(&pts);
        for _ in 0..50 {
            let q = Vector3::new(rng.random(), rng.random(), rng.random());
            assert_eq!(tree.nearest(&q).unwrap(), brute_nearest(&pts, &q));
        }
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        // many duplicates across leaves
        let mut pts = vec![Vector3::new(5.0, 5.0, 5.0); 40];
        pts[3] = Vector3::new(1.0, 0.0, 0.0);
        pts[7] = Vector3::new(-1.0, 0.0, 0.0);
        pts[20] = Vector3::new(0.0, 1.0, 0.0);
        let tree = KdTree::new(&pts);
        assert_eq!(tree.nearest(&Vector3::zeros()).unwrap().0, 3);
        let dup = vec![Vector3::new(1.0, 2.0, 3.0); 30];
        let tree = KdTree::new(&dup);
        assert_eq!(tree.nearest(&Vector3::zeros()).unwrap().0, 0);
    }

    #[test]
    fn knn_and_radius_agree_with_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<_> = (0..500)
            .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let tree = KdTree::new(&pts);
        let q = Vector3::new(0.4, 0.5, 0.6);
        let mut all: Vec<(f64, usize)> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| ((p - q).norm_squared(), i))
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let knn = tree.k_nearest(&q, 12);
        let expect: Vec<_> = all[..12].iter().map(|&(d, i)| (i, d)).collect();
        assert_eq!(knn, expect);

        let r2 = 0.04;
        let mut within: Vec<usize> = all.iter().filter(|(d, _)| *d <= r2).map(|&(_, i)| i).collect();
        within.sort_unstable();
        assert_eq!(tree.within_radius(&q, r2), within);
    }
}
