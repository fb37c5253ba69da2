//! Exact k-d tree over a point set.
//!
//! Results match a brute-force scan exactly: distances are computed from the
//! same squared-difference sum, and ties are broken by the lower point index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};

use crate::geom::{Point3, PointCloud};

const LEAF_SIZE: usize = 12;

#[derive(Debug)]
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

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

/// Immutable spatial index. Queries are safe to run concurrently.
#[derive(Debug)]
pub struct NeighborIndex {
    points: Vec<[f64; 3]>,
    ids: Vec<usize>,
    nodes: Vec<Node>,
    queries: AtomicU64,
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[derive(PartialEq)]
struct Candidate {
    d2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl NeighborIndex {
    pub fn new(cloud: &PointCloud) -> Self {
        Self::from_points(cloud.points())
    }

    pub fn from_points(points: &[Point3]) -> Self {
        let mut items: Vec<(usize, [f64; 3])> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, [p.x, p.y, p.z]))
            .collect();
        let mut nodes = Vec::new();
        if !items.is_empty() {
            let n = items.len();
            build(&mut items, 0, n, &mut nodes);
        }
        NeighborIndex {
            ids: items.iter().map(|(i, _)| *i).collect(),
            points: items.into_iter().map(|(_, p)| p).collect(),
            nodes,
            queries: AtomicU64::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of queries answered since construction.
    pub fn query_count(&self) -> u64 {
        self.queries.load(AtomicOrdering::Relaxed)
    }

    /// Closest indexed point; `None` only for an empty index.
    pub fn nearest(&self, query: &Point3) -> Option<Neighbor> {
        self.queries.fetch_add(1, AtomicOrdering::Relaxed);
        if self.points.is_empty() {
            return None;
        }
        let q = [query.x, query.y, query.z];
        let mut best = Candidate {
            d2: f64::INFINITY,
            index: usize::MAX,
        };
        self.nearest_in(0, &q, &mut best);
        Some(Neighbor {
            index: best.index,
            distance: best.d2.sqrt(),
        })
    }

    fn nearest_in(&self, node: usize, q: &[f64; 3], best: &mut Candidate) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start..end {
                    let cand = Candidate {
                        d2: dist2(&self.points[slot], q),
                        index: self.ids[slot],
                    };
                    if cand < *best {
                        *best = cand;
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_in(near, q, best);
                if diff * diff <= best.d2 {
                    self.nearest_in(far, q, best);
                }
            }
        }
    }

    /// The `k` closest points sorted by (distance, index).
    pub fn k_nearest(&self, query: &Point3, k: usize) -> Vec<Neighbor> {
        self.queries.fetch_add(1, AtomicOrdering::Relaxed);
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let q = [query.x, query.y, query.z];
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_in(0, &q, k, &mut heap);
        heap.into_sorted_vec()
            .into_iter()
            .map(|c| Neighbor {
                index: c.index,
                distance: c.d2.sqrt(),
            })
            .collect()
    }

    fn knn_in(&self, node: usize, q: &[f64; 3], k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start..end {
                    let cand = Candidate {
                        d2: dist2(&self.points[slot], q),
                        index: self.ids[slot],
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_in(near, q, k, heap);
                let bound = if heap.len() < k {
                    f64::INFINITY
                } else {
                    heap.peek().expect("heap is full").d2
                };
                if diff * diff <= bound {
                    self.knn_in(far, q, k, heap);
                }
            }
        }
    }

    /// Indices of all points within `radius` (inclusive), in ascending index order.
    pub fn within_radius(&self, query: &Point3, radius: f64) -> Vec<usize> {
        self.queries.fetch_add(1, AtomicOrdering::Relaxed);
        let mut out = Vec::new();
        if !self.points.is_empty() && radius >= 0.0 {
            let q = [query.x, query.y, query.z];
            self.radius_in(0, &q, radius * radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn radius_in(&self, node: usize, q: &[f64; 3], r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                out.extend(
                    (start..end)
                        .filter(|&slot| dist2(&self.points[slot], q) <= r2)
                        .map(|slot| self.ids[slot]),
                );
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.radius_in(near, q, r2, out);
                if diff * diff <= r2 {
                    self.radius_in(far, q, r2, out);
                }
            }
        }
    }
}

fn build(items: &mut [(usize, [f64; 3])], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    let slot = nodes.len();
    let slice = &mut items[start..end];
    if slice.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return slot;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for (_, p) in slice.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .expect("three axes");
    if hi[axis] - lo[axis] == 0.0 {
        // All points coincide.
        nodes.push(Node::Leaf { start, end });
        return slot;
    }
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |a, b| a.1[axis].total_cmp(&b.1[axis]));
    let value = slice[mid].1[axis];
    // Left holds coordinates <= value, right >= value; the split plane test
    // in queries is symmetric so either side may contain ties.
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let left = build(items, start, start + mid, nodes);
    let right = build(items, start + mid, end, nodes);
    nodes[slot] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    slot
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_nearest(points: &[Point3], q: &Point3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d2 = (p.x - q.x) * (p.x - q.x) + (p.y - q.y) * (p.y - q.y) + (p.z - q.z) * (p.z - q.z);
            if d2 < best.1 {
                best = (i, d2);
            }
        }
        (best.0, best.1.sqrt())
    }

    #[test]
    fn query_on_indexed_point() {
        let pts = vec![Point3::new(1.0, 2.0, 3.0), Point3::new(4.0, 5.0, 6.0)];
        let idx = NeighborIndex::from_points(&pts);
        let n = idx.nearest(&pts[1]).unwrap();
        assert_eq!((n.index, n.distance), (1, 0.0));
    }

    #[test]
    fn two_point_example() {
        let pts = vec![Point3::origin(), Point3::new(10.0, 0.0, 0.0)];
        let n = NeighborIndex::from_points(&pts)
            .nearest(&Point3::new(4.0, 0.0, 0.0))
            .unwrap();
        assert_eq!((n.index, n.distance), (0, 4.0));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let mut pts = vec![Point3::new(1.0, 0.0, 0.0); 40];
        pts.push(Point3::new(-1.0, 0.0, 0.0));
        pts[0] = Point3::new(5.0, 5.0, 5.0);
        let idx = NeighborIndex::from_points(&pts);
        assert_eq!(idx.nearest(&Point3::origin()).unwrap().index, 1);
        let knn = idx.k_nearest(&Point3::origin(), 3);
        assert_eq!(knn.iter().map(|n| n.index).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn matches_brute_force_on_random_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let pts: Vec<Point3> = (0..10_000)
            .map(|_| {
                Point3::new(
                    rng.random_range(-100.0..100.0),
                    rng.random_range(-100.0..100.0),
                    rng.random_range(-10.0..10.0),
                )
            })
            .collect();
        let idx = NeighborIndex::from_points(&pts);
        for _ in 0..1000 {
            let q = Point3::new(
                rng.random_range(-120.0..120.0),
                rng.random_range(-120.0..120.0),
                rng.random_range(-20.0..20.0),
            );
            let n = idx.nearest(&q).unwrap();
            assert_eq!((n.index, n.distance), brute_nearest(&pts, &q));
        }
        assert_eq!(idx.query_count(), 1000);
    }

    #[test]
    fn knn_and_radius_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // Coarse integer grid forces many exact distance ties.
        let pts: Vec<Point3> = (0..3000)
            .map(|_| {
                Point3::new(
                    rng.random_range(0..20) as f64,
                    rng.random_range(0..20) as f64,
                    rng.random_range(0..3) as f64,
                )
            })
            .collect();
        let idx = NeighborIndex::from_points(&pts);
        for _ in 0..200 {
            let q = Point3::new(
                rng.random_range(0..20) as f64 + 0.5,
                rng.random_range(0..20) as f64,
                1.0,
            );
            let mut all: Vec<(f64, usize)> = pts
                .iter()
                .enumerate()
                .map(|(i, p)| ((p - q).norm_squared(), i))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let got: Vec<usize> = idx.k_nearest(&q, 16).iter().map(|n| n.index).collect();
            let want: Vec<usize> = all.iter().take(16).map(|x| x.1).collect();
            assert_eq!(got, want);

            let mut within: Vec<usize> = all.iter().filter(|x| x.0 <= 4.0).map(|x| x.1).collect();
            within.sort_unstable();
            assert_eq!(idx.within_radius(&q, 2.0), within);
        }
    }

    #[test]
    fn empty_index() {
        let idx = NeighborIndex::from_points(&[]);
        assert!(idx.nearest(&Point3::origin()).is_none());
        assert!(idx.k_nearest(&Point3::origin(), 3).is_empty());
    }
}
