//! Static kd-tree for exact k-nearest-neighbour queries in 3-D.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::vec3::{dist2, Vec3};
use crate::error::{Result, TuvfError};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Exact KNN over a fixed point set. Ties in distance go to the lower index.
#[derive(Debug, Clone)]
pub struct KnnIndex {
    points: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
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

impl KnnIndex {
    pub fn new(points: &[Vec3]) -> Self {
        let mut index = KnnIndex {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            index.build(0, points.len());
        }
        index
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let slice = &self.order[start..end];
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in slice {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap();
        let mid = (end - start) / 2;
        let pts = &self.points;
        self.order[start..end].select_nth_unstable_by(mid, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]));
        let value = self.points[self.order[start + mid]][axis];
        self.nodes.push(Node::Split {
            axis,
            value,
            left: 0,
            right: 0,
        });
        let left = self.build(start, start + mid);
        let right = self.build(start + mid, end);
        if let Node::Split { left: l, right: r, .. } = &mut self.nodes[id] {
            *l = left;
            *r = right;
        }
        id
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

    /// The `k` nearest points to `q`, sorted by ascending distance (ties by index).
    pub fn knn(&self, q: Vec3, k: usize) -> Result<Vec<(usize, f64)>> {
        if self.points.is_empty() {
            return Err(TuvfError::invalid("knn query on an empty index"));
        }
        if k > self.points.len() {
            return Err(TuvfError::invalid(format!("k = {k} exceeds point count {}", self.points.len())));
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, q, k, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        Ok(out.into_iter().map(|c| (c.index, c.d2.sqrt())).collect())
    }

    pub fn nearest(&self, q: Vec3) -> Result<(usize, f64)> {
        Ok(self.knn(q, 1)?[0])
    }

    fn search(&self, node: usize, q: Vec3, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let c = Candidate {
                        d2: dist2(q, self.points[i]),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, heap);
                // Equal distances must still be visited: they may carry a lower index.
                if heap.len() < k || diff * diff <= heap.peek().unwrap().d2 {
                    self.search(far, q, k, heap);
                }
            }
        }
    }
}

/// Linear-scan KNN, used as the reference in tests and for tiny point sets.
pub fn brute_force_knn(points: &[Vec3], q: Vec3, k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<Candidate> = points
        .iter()
        .enumerate()
        .map(|(index, p)| Candidate { d2: dist2(q, *p), index })
        .collect();
    all.sort();
    all.truncate(k);
    all.into_iter().map(|c| (c.index, c.d2.sqrt())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_point_example() {
        let idx = KnnIndex::new(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let r = idx.knn([0.1, 0.0, 0.0], 1).unwrap();
        assert_eq!(r[0].0, 0);
        assert!((r[0].1 - 0.1).abs() < 1e-15);
    }

    #[test]
    fn k_equals_count_returns_everything_sorted() {
        let pts = [[3.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let r = KnnIndex::new(&pts).knn([0.0; 3], 3).unwrap();
        assert_eq!(r.iter().map(|x| x.0).collect::<Vec<_>>(), vec![1, 2, 0]);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let pts: Vec<Vec3> = (0..40).map(|i| if i % 2 == 0 { [1.0, 0.0, 0.0] } else { [-1.0, 0.0, 0.0] }).collect();
        let r = KnnIndex::new(&pts).knn([0.0; 3], 5).unwrap();
        assert_eq!(r.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn errors() {
        assert!(KnnIndex::new(&[]).knn([0.0; 3], 1).is_err());
        assert!(KnnIndex::new(&[[0.0; 3]]).knn([0.0; 3], 2).is_err());
    }

    #[test]
    fn matches_brute_force_on_random_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let pts: Vec<Vec3> = (0..1000)
                .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                .collect();
            let idx = KnnIndex::new(&pts);
            for _ in 0..50 {
                let q = [rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2)];
                assert_eq!(idx.knn(q, 4).unwrap(), brute_force_knn(&pts, q, 4));
            }
        }
    }
}
