//! Static kd-tree over 3D points for exact nearest-neighbour queries.
//!
//! The tree is implicit: points are permuted so that the median of every
//! index range splits it, and the split axis is stored at the median slot.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::Vec3;

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    index: Vec<usize>,
    axis: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    idx: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            index: (0..points.len()).collect(),
            axis: vec![0; points.len()],
        };
        tree.build(0, points.len());
        tree
    }

    fn build(&mut self, lo: usize, hi: usize) {
        if hi - lo <= 1 {
            return;
        }
        let mut mn = Vec3::repeat(f64::INFINITY);
        let mut mx = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &self.index[lo..hi] {
            mn = mn.inf(&self.points[i]);
            mx = mx.sup(&self.points[i]);
        }
        let spread = mx - mn;
        let axis = spread.imax();
        let mid = (lo + hi) / 2;
        let pts = &self.points;
        self.index[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]));
        self.axis[mid] = axis as u8;
        self.build(lo, mid);
        self.build(mid + 1, hi);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &Vec3 {
        &self.points[i]
    }

    /// Index and squared distance of the nearest point.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = Candidate {
            d2: f64::INFINITY,
            idx: usize::MAX,
        };
        self.nearest_in(q, 0, self.points.len(), &mut best);
        Some((best.idx, best.d2))
    }

    fn nearest_in(&self, q: &Vec3, lo: usize, hi: usize, best: &mut Candidate) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let i = self.index[mid];
        let p = &self.points[i];
        let d2 = (p - q).norm_squared();
        let cand = Candidate { d2, idx: i };
        if cand < *best {
            *best = cand;
        }
        if hi - lo == 1 {
            return;
        }
        let axis = self.axis[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.nearest_in(q, near.0, near.1, best);
        if diff * diff <= best.d2 {
            self.nearest_in(q, far.0, far.1, best);
        }
    }

    /// The `k` nearest points as `(index, squared distance)`, closest first.
    pub fn knn(&self, q: &Vec3, k: usize) -> Vec<(usize, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_in(q, k, 0, self.points.len(), &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.idx, c.d2)).collect()
    }

    fn knn_in(&self, q: &Vec3, k: usize, lo: usize, hi: usize, heap: &mut BinaryHeap<Candidate>) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let i = self.index[mid];
        let p = &self.points[i];
        let cand = Candidate {
            d2: (p - q).norm_squared(),
            idx: i,
        };
        if heap.len() < k {
            heap.push(cand);
        } else if cand < *heap.peek().unwrap() {
            heap.pop();
            heap.push(cand);
        }
        if hi - lo == 1 {
            return;
        }
        let axis = self.axis[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.knn_in(q, k, near.0, near.1, heap);
        let bound = if heap.len() < k { f64::INFINITY } else { heap.peek().unwrap().d2 };
        if diff * diff <= bound {
            self.knn_in(q, k, far.0, far.1, heap);
        }
    }

    /// Indices of all points within distance `r` (inclusive), ascending.
    pub fn within(&self, q: &Vec3, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.within_in(q, r * r, 0, self.points.len(), &mut out);
        out.sort_unstable();
        out
    }

    fn within_in(&self, q: &Vec3, r2: f64, lo: usize, hi: usize, out: &mut Vec<usize>) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let i = self.index[mid];
        let p = &self.points[i];
        if (p - q).norm_squared() <= r2 {
            out.push(i);
        }
        if hi - lo == 1 {
            return;
        }
        let axis = self.axis[mid] as usize;
        let diff = q[axis] - p[axis];
        if diff < 0.0 || diff * diff <= r2 {
            self.within_in(q, r2, lo, mid, out);
        }
        if diff >= 0.0 || diff * diff <= r2 {
            self.within_in(q, r2, mid + 1, hi, out);
        }
    }
}
