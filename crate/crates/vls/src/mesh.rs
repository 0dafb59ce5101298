//! Triangle meshes with a per-triangle building-part tag.

use damagescan_core::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vector3 = nalgebra::Vector3<f64>;

/// Smallest triangle area kept by [`TriangleMesh::cleanup`], m².
pub const MIN_AREA: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Roof,
    Facade,
    /// Interior floor slabs.
    Slab,
    Debris,
}

impl Part {
    pub const ALL: [Part; 4] = [Part::Roof, Part::Facade, Part::Slab, Part::Debris];

    pub fn name(self) -> &'static str {
        match self {
            Part::Roof => "roof",
            Part::Facade => "facade",
            Part::Slab => "slab",
            Part::Debris => "debris",
        }
    }

    pub fn from_name(s: &str) -> Option<Part> {
        Part::ALL.into_iter().find(|p| p.name() == s)
    }

    /// Upward faces are roofs, steep faces façades, downward faces slabs.
    pub fn from_normal(n: &Vector3) -> Part {
        if n.z.abs() < 0.3 {
            Part::Facade
        } else if n.z > 0.0 {
            Part::Roof
        } else {
            Part::Slab
        }
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x
    }

    pub fn grow(&mut self, p: &Point3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, o: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&o.min),
            max: self.max.sup(&o.max),
        }
    }

    pub fn extent(&self) -> Vector3 {
        self.max - self.min
    }

    pub fn center(&self) -> Point3 {
        nalgebra_center(&self.min, &self.max)
    }

    pub fn surface_area(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let e = self.extent();
        2.0 * (e.x * e.y + e.y * e.z + e.z * e.x)
    }
}

fn nalgebra_center(a: &Point3, b: &Point3) -> Point3 {
    Point3::new((a.x + b.x) / 2.0, (a.y + b.y) / 2.0, (a.z + b.z) / 2.0)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[u32; 3]>,
    pub parts: Vec<Part>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3>, triangles: Vec<[u32; 3]>, parts: Vec<Part>) -> Result<Self> {
        if parts.len() != triangles.len() {
            return Err(Error::InvalidMesh(format!(
                "{} part tags for {} triangles",
                parts.len(),
                triangles.len()
            )));
        }
        let n = vertices.len() as u64;
        if let Some(t) = triangles
            .iter()
            .find(|t| t.iter().any(|&i| u64::from(i) >= n))
        {
            return Err(Error::InvalidMesh(format!(
                "triangle {t:?} indexes past {n} vertices"
            )));
        }
        if vertices
            .iter()
            .any(|v| !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite()))
        {
            return Err(Error::InvalidMesh("non-finite vertex".into()));
        }
        Ok(Self {
            vertices,
            triangles,
            parts,
        })
    }

    /// Tags every triangle from its normal.
    pub fn with_inferred_parts(vertices: Vec<Point3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let placeholder = vec![Part::Roof; triangles.len()];
        let mut m = Self::new(vertices, triangles, placeholder)?;
        m.parts = (0..m.triangles.len())
            .map(|i| Part::from_normal(&m.normal(i)))
            .collect();
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, i: usize) -> [Point3; 3] {
        let t = self.triangles[i];
        [
            self.vertices[t[0] as usize],
            self.vertices[t[1] as usize],
            self.vertices[t[2] as usize],
        ]
    }

    fn cross(&self, i: usize) -> Vector3 {
        let [a, b, c] = self.triangle(i);
        (b - a).cross(&(c - a))
    }

    /// Unit normal following the right-hand rule; zero for degenerate triangles.
    pub fn normal(&self, i: usize) -> Vector3 {
        let c = self.cross(i);
        let n = c.norm();
        if n > 0.0 {
            c / n
        } else {
            Vector3::zeros()
        }
    }

    pub fn area(&self, i: usize) -> f64 {
        self.cross(i).norm() / 2.0
    }

    pub fn centroid(&self, i: usize) -> Point3 {
        let [a, b, c] = self.triangle(i);
        Point3::from((a.coords + b.coords + c.coords) / 3.0)
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.len()).map(|i| self.area(i)).sum()
    }

    pub fn part_area(&self, part: Part) -> f64 {
        (0..self.len())
            .filter(|&i| self.parts[i] == part)
            .map(|i| self.area(i))
            .sum()
    }

    pub fn bbox(&self) -> Aabb {
        let mut b = Aabb::empty();
        for t in &self.triangles {
            for &i in t {
                b.grow(&self.vertices[i as usize]);
            }
        }
        b
    }

    pub fn max_height(&self) -> f64 {
        let b = self.bbox();
        if b.is_empty() {
            0.0
        } else {
            b.max.z
        }
    }

    pub fn append(&mut self, other: &TriangleMesh) {
        let off = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles.extend(
            other
                .triangles
                .iter()
                .map(|t| [t[0] + off, t[1] + off, t[2] + off]),
        );
        self.parts.extend_from_slice(&other.parts);
    }

    /// Adds a triangle by its corner positions.
    pub fn push_triangle(&mut self, a: Point3, b: Point3, c: Point3, part: Part) {
        let i = self.vertices.len() as u32;
        self.vertices.extend([a, b, c]);
        self.triangles.push([i, i + 1, i + 2]);
        self.parts.push(part);
    }

    /// Adds a planar quad `a b c d` (counter-clockwise seen from the front).
    pub fn push_quad(&mut self, a: Point3, b: Point3, c: Point3, d: Point3, part: Part) {
        let i = self.vertices.len() as u32;
        self.vertices.extend([a, b, c, d]);
        self.triangles.push([i, i + 1, i + 2]);
        self.triangles.push([i, i + 2, i + 3]);
        self.parts.extend([part, part]);
    }

    pub fn map_vertices(&mut self, f: impl Fn(&Point3) -> Point3) {
        for v in &mut self.vertices {
            *v = f(v);
        }
    }

    /// Keeps triangles whose flag is true and drops unused vertices.
    pub fn retain_triangles(&mut self, keep: &[bool]) {
        let mut tris = Vec::with_capacity(self.triangles.len());
        let mut parts = Vec::with_capacity(self.triangles.len());
        for (i, k) in keep.iter().enumerate() {
            if *k {
                tris.push(self.triangles[i]);
                parts.push(self.parts[i]);
            }
        }
        self.triangles = tris;
        self.parts = parts;
        self.compact();
    }

    /// Drops vertices no triangle references.
    pub fn compact(&mut self) {
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut verts = Vec::new();
        for t in &mut self.triangles {
            for i in t.iter_mut() {
                let r = &mut remap[*i as usize];
                if *r == u32::MAX {
                    *r = verts.len() as u32;
                    verts.push(self.vertices[*i as usize]);
                }
                *i = *r;
            }
        }
        self.vertices = verts;
    }

    /// Removes zero-area triangles and unused vertices.
    pub fn cleanup(&mut self) {
        let keep: Vec<bool> = (0..self.len()).map(|i| self.area(i) > MIN_AREA).collect();
        self.retain_triangles(&keep);
    }

    /// Splits every triangle selected by `filter` into `n²` congruent pieces,
    /// with `n` chosen so no edge exceeds `max_edge`.
    pub fn refine_where(&mut self, max_edge: f64, filter: impl Fn(&[Point3; 3]) -> bool) {
        let mut out = TriangleMesh::default();
        let mut kept = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            let tri = self.triangle(i);
            let longest = (0..3)
                .map(|k| (tri[(k + 1) % 3] - tri[k]).norm())
                .fold(0.0, f64::max);
            let n = (longest / max_edge).ceil() as usize;
            if n <= 1 || !filter(&tri) {
                kept.push(i);
                continue;
            }
            subdivide(&mut out, &tri, n, self.parts[i]);
        }
        let mut base = TriangleMesh {
            vertices: self.vertices.clone(),
            triangles: kept.iter().map(|&i| self.triangles[i]).collect(),
            parts: kept.iter().map(|&i| self.parts[i]).collect(),
        };
        base.append(&out);
        base.compact();
        *self = base;
    }

    pub fn refine(&mut self, max_edge: f64) {
        self.refine_where(max_edge, |_| true);
    }
}

fn subdivide(out: &mut TriangleMesh, tri: &[Point3; 3], n: usize, part: Part) {
    let [a, b, c] = *tri;
    let off = out.vertices.len() as u32;
    // vertex (i, j) with i + j <= n sits at a + i/n (b - a) + j/n (c - a)
    let idx = |i: usize, j: usize| -> u32 { off + (i * (2 * n + 3 - i) / 2 + j) as u32 };
    for i in 0..=n {
        for j in 0..=(n - i) {
            let (u, v) = (i as f64 / n as f64, j as f64 / n as f64);
            out.vertices.push(a + (b - a) * u + (c - a) * v);
        }
    }
    for i in 0..n {
        for j in 0..(n - i) {
            out.triangles
                .push([idx(i, j), idx(i + 1, j), idx(i, j + 1)]);
            out.parts.push(part);
            if i + j + 1 < n {
                out.triangles
                    .push([idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)]);
                out.parts.push(part);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_quad() -> TriangleMesh {
        let mut m = TriangleMesh::default();
        m.push_quad(
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(1.0, 1.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Part::Roof,
        );
        m
    }

    #[test]
    fn refine_preserves_area_and_orientation() {
        let mut m = unit_quad();
        m.refine(0.1);
        assert!((m.surface_area() - 1.0).abs() < 1e-12);
        for i in 0..m.len() {
            assert!(m.normal(i).z > 0.999);
            let [a, b, c] = m.triangle(i);
            for e in [b - a, c - b, a - c] {
                assert!(e.norm() <= 0.1 + 1e-12);
            }
        }
        assert_eq!(m.len(), 2 * 15 * 15);
    }

    #[test]
    fn bad_indices() {
        let r = TriangleMesh::new(vec![Point3::origin()], vec![[0, 0, 1]], vec![Part::Roof]);
        assert!(matches!(r, Err(Error::InvalidMesh(_))));
    }

    #[test]
    fn cleanup_drops_degenerate() {
        let mut m = unit_quad();
        m.push_triangle(
            Point3::origin(),
            Point3::origin(),
            Point3::new(1.0, 0.0, 0.0),
            Part::Roof,
        );
        m.cleanup();
        assert_eq!(m.len(), 2);
        assert_eq!(m.vertices.len(), 4);
    }

    #[test]
    fn parts_from_normals() {
        assert_eq!(Part::from_normal(&Vector3::new(0.0, 0.0, 1.0)), Part::Roof);
        assert_eq!(
            Part::from_normal(&Vector3::new(1.0, 0.0, 0.0)),
            Part::Facade
        );
        assert_eq!(Part::from_normal(&Vector3::new(0.0, 0.0, -1.0)), Part::Slab);
    }
}
