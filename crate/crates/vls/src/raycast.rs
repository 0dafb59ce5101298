//! Watertight ray–triangle intersection and a SAH bounding-volume hierarchy.

use damagescan_core::Point3;

use crate::mesh::{Aabb, Part, TriangleMesh, Vector3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3,
    /// Unit length.
    pub dir: Vector3,
}

impl Ray {
    pub fn new(origin: Point3, dir: Vector3) -> Self {
        Self { origin, dir }
    }

    pub fn at(&self, t: f64) -> Point3 {
        self.origin + self.dir * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleHit {
    pub t: f64,
    pub point: Point3,
    /// Barycentric weights of the three corners.
    pub bary: [f64; 3],
}

/// First intersection with `t ≥ 0`, or `None` for misses and rays parallel to
/// the triangle plane.
///
/// Vertices are sheared into a ray-aligned frame before the edge tests, so
/// two triangles sharing an edge evaluate that edge with exactly negated
/// results and no ray slips between them.
pub fn ray_triangle_intersect(ray: &Ray, tri: &[Point3; 3]) -> Option<TriangleHit> {
    let d = ray.dir;
    let kz = d.iamax();
    let mut kx = (kz + 1) % 3;
    let mut ky = (kx + 1) % 3;
    if d[kz] < 0.0 {
        std::mem::swap(&mut kx, &mut ky);
    }
    let sx = d[kx] / d[kz];
    let sy = d[ky] / d[kz];
    let sz = 1.0 / d[kz];

    let a = tri[0] - ray.origin;
    let b = tri[1] - ray.origin;
    let c = tri[2] - ray.origin;
    let (ax, ay) = (a[kx] - sx * a[kz], a[ky] - sy * a[kz]);
    let (bx, by) = (b[kx] - sx * b[kz], b[ky] - sy * b[kz]);
    let (cx, cy) = (c[kx] - sx * c[kz], c[ky] - sy * c[kz]);

    let u = cx * by - cy * bx;
    let v = ax * cy - ay * cx;
    let w = bx * ay - by * ax;
    if (u < 0.0 || v < 0.0 || w < 0.0) && (u > 0.0 || v > 0.0 || w > 0.0) {
        return None;
    }
    let det = u + v + w;
    if det == 0.0 {
        return None;
    }
    let t_scaled = u * (sz * a[kz]) + v * (sz * b[kz]) + w * (sz * c[kz]);
    let t = t_scaled / det;
    if !(t >= 0.0) {
        return None;
    }
    let bary = [u / det, v / det, w / det];
    Some(TriangleHit {
        t,
        point: ray.at(t),
        bary,
    })
}

/// Slab test; returns the entry distance when the box is hit before `t_max`.
#[inline]
fn hit_box(b: &Aabb, origin: &Point3, inv: &Vector3, t_max: f64) -> Option<f64> {
    let mut t0 = 0.0f64;
    let mut t1 = t_max;
    for k in 0..3 {
        let mut near = (b.min[k] - origin[k]) * inv[k];
        let mut far = (b.max[k] - origin[k]) * inv[k];
        if near > far {
            std::mem::swap(&mut near, &mut far);
        }
        // NaN from 0 * inf keeps the previous bound
        if near > t0 {
            t0 = near;
        }
        if far < t1 {
            t1 = far;
        }
        if t0 > t1 {
            return None;
        }
    }
    Some(t0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Payload {
    pub building_id: u32,
    pub part: Part,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneHit {
    pub t: f64,
    pub point: Point3,
    pub payload: Payload,
}

#[derive(Debug, Clone)]
struct BvhNode {
    bounds: Aabb,
    /// Leaf: first triangle; inner: index of the right child (left is next).
    start_or_right: u32,
    /// Zero for inner nodes.
    count: u32,
}

/// Static BVH over a set of tagged triangles.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<BvhNode>,
    tris: Vec<[Point3; 3]>,
    payloads: Vec<Payload>,
}

const LEAF_MAX: usize = 4;
const BINS: usize = 12;

impl Bvh {
    pub fn build(meshes: &[(u32, &TriangleMesh)]) -> Bvh {
        let mut tris = Vec::new();
        let mut payloads = Vec::new();
        for (id, m) in meshes {
            for i in 0..m.len() {
                tris.push(m.triangle(i));
                payloads.push(Payload {
                    building_id: *id,
                    part: m.parts[i],
                });
            }
        }
        let mut bvh = Bvh {
            nodes: Vec::new(),
            tris,
            payloads,
        };
        if bvh.tris.is_empty() {
            return bvh;
        }
        let bounds: Vec<Aabb> = bvh.tris.iter().map(tri_bounds).collect();
        let centroids: Vec<Point3> = bounds.iter().map(Aabb::center).collect();
        let mut order: Vec<usize> = (0..bvh.tris.len()).collect();
        bvh.nodes.reserve(2 * order.len() / LEAF_MAX + 1);
        let n = order.len();
        bvh.split(&mut order, 0, n, &bounds, &centroids);
        bvh.tris = order.iter().map(|&i| bvh.tris[i]).collect();
        bvh.payloads = order.iter().map(|&i| bvh.payloads[i]).collect();
        bvh
    }

    pub fn is_empty(&self) -> bool {
        self.tris.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tris.len()
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes.first().map_or_else(Aabb::empty, |n| n.bounds)
    }

    fn split(
        &mut self,
        order: &mut [usize],
        lo: usize,
        hi: usize,
        bounds: &[Aabb],
        cent: &[Point3],
    ) -> usize {
        let mut bb = Aabb::empty();
        let mut cb = Aabb::empty();
        for &i in &order[lo..hi] {
            bb = bb.union(&bounds[i]);
            cb.grow(&cent[i]);
        }
        let id = self.nodes.len();
        self.nodes.push(BvhNode {
            bounds: bb,
            start_or_right: lo as u32,
            count: (hi - lo) as u32,
        });
        if hi - lo <= LEAF_MAX {
            return id;
        }
        let ext = cb.extent();
        let axis = ext.iamax();
        if ext[axis] <= 0.0 {
            return id;
        }
        // binned SAH along the widest centroid axis
        let scale = BINS as f64 / ext[axis];
        let bin_of = |i: usize| (((cent[i][axis] - cb.min[axis]) * scale) as usize).min(BINS - 1);
        let mut bin_box = [Aabb::empty(); BINS];
        let mut bin_n = [0usize; BINS];
        for &i in &order[lo..hi] {
            let b = bin_of(i);
            bin_box[b] = bin_box[b].union(&bounds[i]);
            bin_n[b] += 1;
        }
        let mut best = (f64::INFINITY, 0);
        let mut right_area = [0.0; BINS];
        let mut right_n = [0usize; BINS];
        let (mut acc, mut accn) = (Aabb::empty(), 0);
        for b in (1..BINS).rev() {
            acc = acc.union(&bin_box[b]);
            accn += bin_n[b];
            right_area[b] = acc.surface_area();
            right_n[b] = accn;
        }
        let (mut acc, mut accn) = (Aabb::empty(), 0);
        for b in 0..BINS - 1 {
            acc = acc.union(&bin_box[b]);
            accn += bin_n[b];
            if accn == 0 || right_n[b + 1] == 0 {
                continue;
            }
            let cost = acc.surface_area() * accn as f64 + right_area[b + 1] * right_n[b + 1] as f64;
            if cost < best.0 {
                best = (cost, b);
            }
        }
        let leaf_cost = bb.surface_area() * (hi - lo) as f64;
        if !best.0.is_finite() || (best.0 >= leaf_cost && hi - lo <= 4 * LEAF_MAX) {
            return id;
        }
        let slice = &mut order[lo..hi];
        let mut m = 0;
        for k in 0..slice.len() {
            if bin_of(slice[k]) <= best.1 {
                slice.swap(k, m);
                m += 1;
            }
        }
        let mid = lo + m;
        self.split(order, lo, mid, bounds, cent);
        let right = self.split(order, mid, hi, bounds, cent);
        self.nodes[id].start_or_right = right as u32;
        self.nodes[id].count = 0;
        id
    }

    /// Nearest hit with `t ≤ t_max`. Ties in `t` go to the lower triangle slot.
    pub fn intersect(&self, ray: &Ray, t_max: f64) -> Option<SceneHit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = Vector3::new(1.0 / ray.dir.x, 1.0 / ray.dir.y, 1.0 / ray.dir.z);
        let mut best: Option<(f64, usize, TriangleHit)> = None;
        let mut limit = t_max;
        if hit_box(&self.nodes[0].bounds, &ray.origin, &inv, limit).is_none() {
            return None;
        }
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(idx) = stack.pop() {
            let idx = idx as usize;
            let node = &self.nodes[idx];
            if hit_box(&node.bounds, &ray.origin, &inv, limit).is_none() {
                continue;
            }
            if node.count > 0 {
                let s = node.start_or_right as usize;
                for k in s..s + node.count as usize {
                    if let Some(h) = ray_triangle_intersect(ray, &self.tris[k]) {
                        let better = match &best {
                            None => h.t <= limit,
                            Some((bt, bk, _)) => h.t < *bt || (h.t == *bt && k < *bk),
                        };
                        if better {
                            limit = h.t;
                            best = Some((h.t, k, h));
                        }
                    }
                }
                continue;
            }
            let l = idx + 1;
            let r = node.start_or_right as usize;
            let tl = hit_box(&self.nodes[l].bounds, &ray.origin, &inv, limit);
            let tr = hit_box(&self.nodes[r].bounds, &ray.origin, &inv, limit);
            // push the farther child first so the nearer one is visited next
            match (tl, tr) {
                (Some(a), Some(b)) => {
                    let (near, far) = if a <= b { (l, r) } else { (r, l) };
                    stack.push(far as u32);
                    stack.push(near as u32);
                }
                (Some(_), None) => stack.push(l as u32),
                (None, Some(_)) => stack.push(r as u32),
                (None, None) => {}
            }
        }
        best.map(|(t, k, h)| SceneHit {
            t,
            point: h.point,
            payload: self.payloads[k],
        })
    }
}

fn tri_bounds(t: &[Point3; 3]) -> Aabb {
    let mut b = Aabb::empty();
    for p in t {
        b.grow(p);
    }
    b
}
