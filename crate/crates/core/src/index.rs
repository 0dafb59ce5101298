//! Static kd-trees answering exact radius and nearest-neighbour queries.
//!
//! Two query modes exist: [`QueryMode::Ball3D`] measures full 3D distance,
//! [`QueryMode::Disc2D`] measures planimetric (xy) distance and ignores z. The
//! radius boundary is inclusive (`d <= r`) and distance ties in nearest
//! neighbour queries resolve to the lowest point index, so results are
//! identical to a brute-force scan evaluating `dx*dx + dy*dy (+ dz*dz)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::OnceLock;

use crate::cloud::{Point3, PointCloud};
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QueryMode {
    Ball3D,
    Disc2D,
}

#[derive(Debug, Clone, Copy)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { left: u32, right: u32 },
}

/// Balanced kd-tree over `K`-dimensional coordinates with bucket leaves.
#[derive(Debug)]
struct KdTree<const K: usize> {
    coords: Vec<[f64; K]>,
    ids: Vec<u32>,
    nodes: Vec<Node>,
    /// Tight bounding box of the points below each node.
    bounds: Vec<([f64; K], [f64; K])>,
}

/// Squared distance from `q` to an axis-aligned box.
#[inline]
fn box_dist2<const K: usize>(q: &[f64; K], b: &([f64; K], [f64; K])) -> f64 {
    let mut s = 0.0;
    for k in 0..K {
        let d = if q[k] < b.0[k] {
            b.0[k] - q[k]
        } else if q[k] > b.1[k] {
            q[k] - b.1[k]
        } else {
            0.0
        };
        s += d * d;
    }
    s
}

#[inline]
fn dist2<const K: usize>(a: &[f64; K], b: &[f64; K]) -> f64 {
    let mut s = 0.0;
    for k in 0..K {
        let d = a[k] - b[k];
        s += d * d;
    }
    s
}

/// Lexicographic (distance, index) key used for deterministic tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    id: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<const K: usize> KdTree<K> {
    fn build(points: impl Iterator<Item = [f64; K]>) -> Self {
        let mut items: Vec<([f64; K], u32)> =
            points.enumerate().map(|(i, c)| (c, i as u32)).collect();
        let mut nodes = Vec::with_capacity(2 * items.len() / LEAF_SIZE + 1);
        let mut bounds = Vec::with_capacity(nodes.capacity());
        if !items.is_empty() {
            let n = items.len();
            Self::build_rec(&mut items, 0, n, &mut nodes, &mut bounds);
        }
        let (coords, ids) = items.into_iter().unzip();
        Self {
            coords,
            ids,
            nodes,
            bounds,
        }
    }

    fn build_rec(
        items: &mut [([f64; K], u32)],
        start: usize,
        end: usize,
        nodes: &mut Vec<Node>,
        bounds: &mut Vec<([f64; K], [f64; K])>,
    ) -> u32 {
        let me = nodes.len() as u32;
        let slice = &mut items[start..end];
        let mut lo = [f64::INFINITY; K];
        let mut hi = [f64::NEG_INFINITY; K];
        for (c, _) in slice.iter() {
            for k in 0..K {
                lo[k] = lo[k].min(c[k]);
                hi[k] = hi[k].max(c[k]);
            }
        }
        bounds.push((lo, hi));
        let leaf = Node::Leaf {
            start: start as u32,
            end: end as u32,
        };
        if slice.len() <= LEAF_SIZE {
            nodes.push(leaf);
            return me;
        }
        // widest axis
        let axis = (0..K)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[axis] - lo[axis] == 0.0 {
            // every point coincides
            nodes.push(leaf);
            return me;
        }
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |a, b| a.0[axis].total_cmp(&b.0[axis]));
        nodes.push(Node::Split { left: 0, right: 0 });
        let left = Self::build_rec(items, start, start + mid, nodes, bounds);
        let right = Self::build_rec(items, start + mid, end, nodes, bounds);
        nodes[me as usize] = Node::Split { left, right };
        me
    }

    fn radius(&self, q: &[f64; K], r2: f64, out: &mut Vec<usize>) {
        if self.nodes.is_empty() {
            return;
        }
        // median splits keep the depth near log2(n / LEAF_SIZE), far below 64
        let mut stack = [0u32; 64];
        let mut top = 1;
        while top > 0 {
            top -= 1;
            let n = stack[top];
            match self.nodes[n as usize] {
                Node::Leaf { start, end } => {
                    for i in start as usize..end as usize {
                        if dist2(&self.coords[i], q) <= r2 {
                            out.push(self.ids[i] as usize);
                        }
                    }
                }
                Node::Split { left, right, .. } => {
                    for child in [left, right] {
                        if box_dist2(q, &self.bounds[child as usize]) <= r2 {
                            stack[top] = child;
                            top += 1;
                        }
                    }
                }
            }
        }
    }

    fn nearest(&self, q: &[f64; K]) -> Option<Candidate> {
        let mut best: Option<Candidate> = None;
        if !self.nodes.is_empty() {
            self.nearest_rec(0, q, &mut best);
        }
        best
    }

    fn nearest_rec(&self, n: u32, q: &[f64; K], best: &mut Option<Candidate>) {
        match self.nodes[n as usize] {
            Node::Leaf { start, end } => {
                for i in start as usize..end as usize {
                    let c = Candidate {
                        d2: dist2(&self.coords[i], q),
                        id: self.ids[i],
                    };
                    if best.is_none_or(|b| c < b) {
                        *best = Some(c);
                    }
                }
            }
            Node::Split { left, right, .. } => {
                let dl = box_dist2(q, &self.bounds[left as usize]);
                let dr = box_dist2(q, &self.bounds[right as usize]);
                let ((near, dn), (far, df)) = if dl <= dr {
                    ((left, dl), (right, dr))
                } else {
                    ((right, dr), (left, dl))
                };
                if best.is_none_or(|b| dn <= b.d2) {
                    self.nearest_rec(near, q, best);
                }
                if best.is_none_or(|b| df <= b.d2) {
                    self.nearest_rec(far, q, best);
                }
            }
        }
    }

    fn k_nearest(&self, q: &[f64; K], k: usize) -> Vec<Candidate> {
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        if k > 0 && !self.nodes.is_empty() {
            self.knn_rec(0, q, k, &mut heap);
        }
        heap.into_sorted_vec()
    }

    fn knn_rec(&self, n: u32, q: &[f64; K], k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[n as usize] {
            Node::Leaf { start, end } => {
                for i in start as usize..end as usize {
                    let c = Candidate {
                        d2: dist2(&self.coords[i], q),
                        id: self.ids[i],
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split { left, right, .. } => {
                let dl = box_dist2(q, &self.bounds[left as usize]);
                let dr = box_dist2(q, &self.bounds[right as usize]);
                let order = if dl <= dr {
                    [(left, dl), (right, dr)]
                } else {
                    [(right, dr), (left, dl)]
                };
                for (child, d) in order {
                    if heap.len() < k || d <= heap.peek().map_or(f64::INFINITY, |c| c.d2) {
                        self.knn_rec(child, q, k, heap);
                    }
                }
            }
        }
    }
}

/// Immutable spatial index over the points of one cloud.
///
/// The planimetric tree is built lazily on the first [`QueryMode::Disc2D`]
/// query. The index is `Sync`; concurrent readers are fine.
#[derive(Debug)]
pub struct SpatialIndex {
    tree3: KdTree<3>,
    tree2: OnceLock<KdTree<2>>,
    xy: Vec<[f64; 2]>,
}

impl SpatialIndex {
    pub fn build(cloud: &PointCloud) -> Result<Self> {
        if cloud.is_empty() {
            return Err(Error::EmptyCloud);
        }
        Ok(Self::from_points(cloud.points()))
    }

    pub(crate) fn from_points(points: &[Point3]) -> Self {
        Self {
            tree3: KdTree::build(points.iter().map(|p| [p.x, p.y, p.z])),
            tree2: OnceLock::new(),
            xy: points.iter().map(|p| [p.x, p.y]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tree3.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree3.ids.is_empty()
    }

    /// Number of leaf buckets in the 3D tree.
    pub fn leaf_count(&self) -> usize {
        self.tree3
            .nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    fn tree2(&self) -> &KdTree<2> {
        self.tree2
            .get_or_init(|| KdTree::build(self.xy.iter().copied()))
    }

    /// Indices (ascending) of all points within distance `r` of `q`, boundary inclusive.
    pub fn radius_query(&self, q: &Point3, r: f64, mode: QueryMode) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        self.radius_query_into(q, r, mode, &mut out)?;
        Ok(out)
    }

    /// Like [`radius_query`](Self::radius_query) but reuses `out` (cleared first).
    pub fn radius_query_into(
        &self,
        q: &Point3,
        r: f64,
        mode: QueryMode,
        out: &mut Vec<usize>,
    ) -> Result<()> {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(Error::InvalidRadius(r));
        }
        out.clear();
        let r2 = r * r;
        match mode {
            QueryMode::Ball3D => self.tree3.radius(&[q.x, q.y, q.z], r2, out),
            QueryMode::Disc2D => self.tree2().radius(&[q.x, q.y], r2, out),
        }
        out.sort_unstable();
        Ok(())
    }

    /// Radius query in traversal order. The order is fixed for a given index
    /// but unrelated to point indices.
    pub(crate) fn radius_query_unsorted(
        &self,
        q: &Point3,
        r: f64,
        mode: QueryMode,
        out: &mut Vec<usize>,
    ) {
        out.clear();
        let r2 = r * r;
        match mode {
            QueryMode::Ball3D => self.tree3.radius(&[q.x, q.y, q.z], r2, out),
            QueryMode::Disc2D => self.tree2().radius(&[q.x, q.y], r2, out),
        }
    }

    /// Closest point and its distance. Ties resolve to the lowest index.
    pub fn nearest_neighbor(&self, q: &Point3, mode: QueryMode) -> (usize, f64) {
        let c = match mode {
            QueryMode::Ball3D => self.tree3.nearest(&[q.x, q.y, q.z]),
            QueryMode::Disc2D => self.tree2().nearest(&[q.x, q.y]),
        }
        .expect("index is never empty");
        (c.id as usize, c.d2.sqrt())
    }

    /// The `k` closest points ordered by (distance, index).
    pub fn k_nearest(&self, q: &Point3, k: usize, mode: QueryMode) -> Vec<(usize, f64)> {
        let found = match mode {
            QueryMode::Ball3D => self.tree3.k_nearest(&[q.x, q.y, q.z], k),
            QueryMode::Disc2D => self.tree2().k_nearest(&[q.x, q.y], k),
        };
        found
            .into_iter()
            .map(|c| (c.id as usize, c.d2.sqrt()))
            .collect()
    }
}
