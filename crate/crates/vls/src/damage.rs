//! Damage operators turning an intact building mesh into one of the grades.
//!
//! * heavy: holes punched through roof and façades,
//! * extreme: partial collapse of an upper corner with a fallen slab and debris,
//! * destruction: a rubble heap over the footprint.

use damagescan_core::{DamageGrade, Point3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Part, TriangleMesh, Vector3};
use damagescan_core::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeavyParams {
    pub holes_min: u32,
    pub holes_max: u32,
    /// Hole diameter range, meters.
    pub diameter_min: f64,
    pub diameter_max: f64,
}

impl Default for HeavyParams {
    fn default() -> Self {
        Self {
            holes_min: 4,
            holes_max: 10,
            diameter_min: 0.5,
            diameter_max: 2.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtremeParams {
    /// Share of the building surface removed by the collapse.
    pub fraction_min: f64,
    pub fraction_max: f64,
    pub debris_min: u32,
    pub debris_max: u32,
    /// Mesh resolution before cutting, meters.
    pub refine_edge: f64,
}

impl Default for ExtremeParams {
    fn default() -> Self {
        Self {
            fraction_min: 0.2,
            fraction_max: 0.6,
            debris_min: 4,
            debris_max: 10,
            refine_edge: 0.75,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DestructionParams {
    /// Heap height as a share of the original building height.
    pub height_min: f64,
    pub height_max: f64,
    /// Height-field cell size, meters.
    pub cell: f64,
    /// Spread of the heap beyond the footprint, meters.
    pub spread: f64,
}

impl Default for DestructionParams {
    fn default() -> Self {
        Self {
            height_min: 0.1,
            height_max: 0.3,
            cell: 0.5,
            spread: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DamageParams {
    pub heavy: HeavyParams,
    pub extreme: ExtremeParams,
    pub destruction: DestructionParams,
}

fn range_ok(name: &str, lo: f64, hi: f64, min: f64, max: f64) -> Result<()> {
    if lo.is_finite() && hi.is_finite() && min <= lo && lo <= hi && hi <= max {
        Ok(())
    } else {
        Err(Error::InvalidDamageParams(format!(
            "{name} range [{lo}, {hi}] outside [{min}, {max}]"
        )))
    }
}

impl DamageParams {
    pub fn validate(&self) -> Result<()> {
        let h = &self.heavy;
        range_ok(
            "heavy.holes",
            f64::from(h.holes_min),
            f64::from(h.holes_max),
            1.0,
            1000.0,
        )?;
        range_ok("heavy.diameter", h.diameter_min, h.diameter_max, 0.05, 20.0)?;
        let e = &self.extreme;
        range_ok(
            "extreme.fraction",
            e.fraction_min,
            e.fraction_max,
            0.01,
            0.99,
        )?;
        range_ok(
            "extreme.debris",
            f64::from(e.debris_min),
            f64::from(e.debris_max),
            0.0,
            1000.0,
        )?;
        range_ok(
            "extreme.refine_edge",
            e.refine_edge,
            e.refine_edge,
            0.05,
            10.0,
        )?;
        let d = &self.destruction;
        range_ok("destruction.height", d.height_min, d.height_max, 0.0, 0.3)?;
        range_ok("destruction.cell", d.cell, d.cell, 0.05, 10.0)?;
        range_ok("destruction.spread", d.spread, d.spread, 0.0, 50.0)?;
        Ok(())
    }
}

/// Applies the operator for `grade`. Deterministic per seed; `NoDamage`
/// returns the input unchanged.
pub fn apply_damage(
    mesh: &TriangleMesh,
    grade: DamageGrade,
    params: &DamageParams,
    seed: u64,
) -> Result<TriangleMesh> {
    params.validate()?;
    let mut rng = stream_rng(seed, &[0xda, grade.index() as u64]);
    let out = match grade {
        DamageGrade::NoDamage => return Ok(mesh.clone()),
        DamageGrade::Heavy => punch_holes(mesh, &params.heavy, &mut rng),
        DamageGrade::Extreme => collapse(mesh, &params.extreme, &mut rng),
        DamageGrade::Destruction => rubble(mesh, &params.destruction, &mut rng),
    };
    let mut out = out;
    out.cleanup();
    Ok(out)
}

fn envelope_triangles(mesh: &TriangleMesh) -> Vec<usize> {
    (0..mesh.len())
        .filter(|&i| matches!(mesh.parts[i], Part::Roof | Part::Facade))
        .collect()
}

/// Area-weighted random point on the given triangles.
fn sample_surface(mesh: &TriangleMesh, tris: &[usize], rng: &mut ChaCha8Rng) -> Option<Point3> {
    let areas: Vec<f64> = tris.iter().map(|&i| mesh.area(i)).collect();
    let total: f64 = areas.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let mut target = rng.random::<f64>() * total;
    let mut pick = *tris.last()?;
    for (k, a) in areas.iter().enumerate() {
        if target < *a {
            pick = tris[k];
            break;
        }
        target -= a;
    }
    let [a, b, c] = mesh.triangle(pick);
    let (mut u, mut v) = (rng.random::<f64>(), rng.random::<f64>());
    if u + v > 1.0 {
        u = 1.0 - u;
        v = 1.0 - v;
    }
    Some(a + (b - a) * u + (c - a) * v)
}

fn punch_holes(mesh: &TriangleMesh, p: &HeavyParams, rng: &mut ChaCha8Rng) -> TriangleMesh {
    let mut m = mesh.clone();
    let n = rng.random_range(p.holes_min..=p.holes_max);
    for _ in 0..n {
        let tris = envelope_triangles(&m);
        let Some(c) = sample_surface(&m, &tris, rng) else {
            break;
        };
        let r = rng.random_range(p.diameter_min..=p.diameter_max) / 2.0;
        // refine only near the hole so its rim follows the circle closely
        m.refine_where(r / 3.0, |t| {
            let (lo, hi) = tri_box(t);
            (0..3).all(|k| c[k] >= lo[k] - r && c[k] <= hi[k] + r)
        });
        let keep: Vec<bool> = (0..m.len())
            .map(|i| {
                !(matches!(m.parts[i], Part::Roof | Part::Facade) && (m.centroid(i) - c).norm() < r)
            })
            .collect();
        m.retain_triangles(&keep);
    }
    m
}

fn tri_box(t: &[Point3; 3]) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for q in t {
        for k in 0..3 {
            lo[k] = lo[k].min(q[k]);
            hi[k] = hi[k].max(q[k]);
        }
    }
    (lo, hi)
}

/// Closed box with outward faces, rotated by `yaw` and tilted by `tilt`
/// about its local x axis, resting with its centre at `center`.
fn debris_box(size: Vector3, center: Point3, yaw: f64, tilt: f64) -> TriangleMesh {
    let (hx, hy, hz) = (size.x / 2.0, size.y / 2.0, size.z / 2.0);
    let c = |x: f64, y: f64, z: f64| Point3::new(x, y, z);
    let v = [
        c(-hx, -hy, -hz),
        c(hx, -hy, -hz),
        c(hx, hy, -hz),
        c(-hx, hy, -hz),
        c(-hx, -hy, hz),
        c(hx, -hy, hz),
        c(hx, hy, hz),
        c(-hx, hy, hz),
    ];
    let faces = [
        [4, 5, 6, 7],
        [0, 3, 2, 1],
        [0, 1, 5, 4],
        [1, 2, 6, 5],
        [2, 3, 7, 6],
        [3, 0, 4, 7],
    ];
    let mut m = TriangleMesh::default();
    for f in faces {
        m.push_quad(v[f[0]], v[f[1]], v[f[2]], v[f[3]], Part::Debris);
    }
    let (st, ct) = tilt.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    m.map_vertices(|q| {
        let (y1, z1) = (q.y * ct - q.z * st, q.y * st + q.z * ct);
        let (x2, y2) = (q.x * cy - y1 * sy, q.x * sy + y1 * cy);
        Point3::new(x2 + center.x, y2 + center.y, z1 + center.z)
    });
    m
}

fn collapse(mesh: &TriangleMesh, p: &ExtremeParams, rng: &mut ChaCha8Rng) -> TriangleMesh {
    let mut m = mesh.clone();
    m.refine(p.refine_edge);
    let bb = m.bbox();
    if bb.is_empty() {
        return m;
    }
    let center = bb.center();
    let ext = bb.extent();
    let reach = ext.x.hypot(ext.y) / 2.0;
    let height = bb.max.z.max(1e-6);
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let dir = Vector3::new(phi.cos(), phi.sin(), 0.0);
    // collapse score: upper parts on the side facing `dir` go first
    let score = |q: &Point3| dir.dot(&(q - center)) / reach + q.z / height;
    let mut order: Vec<usize> = (0..m.len())
        .filter(|&i| m.parts[i] != Part::Debris)
        .collect();
    order.sort_by(|&a, &b| {
        score(&m.centroid(b))
            .total_cmp(&score(&m.centroid(a)))
            .then(a.cmp(&b))
    });
    let total: f64 = order.iter().map(|&i| m.area(i)).sum();
    let fraction = rng.random_range(p.fraction_min..=p.fraction_max);
    let mut removed = 0.0;
    let mut keep = vec![true; m.len()];
    let mut cut_height = height;
    let mut cut_xy = Vector3::zeros();
    let mut cut_n = 0.0;
    for &i in &order {
        if removed >= fraction * total {
            break;
        }
        keep[i] = false;
        removed += m.area(i);
        let c = m.centroid(i);
        cut_height = cut_height.min(c.z);
        cut_xy += Vector3::new(c.x, c.y, 0.0);
        cut_n += 1.0;
    }
    m.retain_triangles(&keep);

    // fallen roof or floor slab leaning from the cut down to the ground
    let focus = if cut_n > 0.0 {
        cut_xy / cut_n
    } else {
        center.coords
    };
    let slab_len = (reach * rng.random_range(0.5..0.9)).max(1.0);
    let slab_w = (reach * rng.random_range(0.5..1.0)).max(1.0);
    let drop = cut_height.clamp(0.5, height) * rng.random_range(0.5..1.0);
    let tilt = (drop / slab_len).clamp(-1.0, 1.0).asin();
    let slab_center = Point3::new(focus.x, focus.y, drop / 2.0 + 0.15);
    m.append(&debris_box(
        Vector3::new(slab_w, slab_len, 0.3),
        slab_center,
        phi - std::f64::consts::FRAC_PI_2,
        tilt,
    ));

    let n = rng.random_range(p.debris_min..=p.debris_max);
    for _ in 0..n {
        let s = Vector3::new(
            rng.random_range(0.5..2.0),
            rng.random_range(0.5..2.0),
            rng.random_range(0.3..1.2),
        );
        let along = rng.random_range(0.2..1.2) * reach;
        let side = rng.random_range(-0.6..0.6) * reach;
        let off = dir * along + Vector3::new(-dir.y, dir.x, 0.0) * side;
        let at = Point3::new(center.x + off.x, center.y + off.y, s.z / 2.0);
        m.append(&debris_box(
            s,
            at,
            rng.random_range(0.0..std::f64::consts::PI),
            rng.random_range(-0.3..0.3),
        ));
    }
    m
}

fn rubble(mesh: &TriangleMesh, p: &DestructionParams, rng: &mut ChaCha8Rng) -> TriangleMesh {
    let bb = mesh.bbox();
    if bb.is_empty() {
        return TriangleMesh::default();
    }
    let cap = bb.max.z * rng.random_range(p.height_min..=p.height_max);
    let (x0, y0) = (bb.min.x - p.spread, bb.min.y - p.spread);
    let (x1, y1) = (bb.max.x + p.spread, bb.max.y + p.spread);
    let nx = ((x1 - x0) / p.cell).ceil().max(1.0) as usize;
    let ny = ((y1 - y0) / p.cell).ceil().max(1.0) as usize;
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let (ax, ay) = ((x1 - x0) / 2.0, (y1 - y0) / 2.0);
    let bumps: Vec<(f64, f64, f64, f64)> = (0..8)
        .map(|_| {
            (
                rng.random_range(x0..x1),
                rng.random_range(y0..y1),
                rng.random_range(1.0..4.0),
                rng.random_range(0.2..0.6),
            )
        })
        .collect();
    let raw = |x: f64, y: f64| -> f64 {
        let rho2 = ((x - cx) / ax).powi(2) + ((y - cy) / ay).powi(2);
        let dome = (1.0 - rho2).max(0.0);
        let noise: f64 = bumps
            .iter()
            .map(|(bx, by, s, a)| {
                a * (-((x - bx).powi(2) + (y - by).powi(2)) / (2.0 * s * s)).exp()
            })
            .sum();
        dome * (0.6 + noise)
    };
    let mut h = vec![0.0; (nx + 1) * (ny + 1)];
    for j in 0..=ny {
        for i in 0..=nx {
            let x = x0 + (x1 - x0) * i as f64 / nx as f64;
            let y = y0 + (y1 - y0) * j as f64 / ny as f64;
            h[j * (nx + 1) + i] = raw(x, y);
        }
    }
    let peak = h.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        for v in &mut h {
            *v = *v / peak * cap;
        }
    }
    let mut m = TriangleMesh::default();
    let at = |i: usize, j: usize| {
        Point3::new(
            x0 + (x1 - x0) * i as f64 / nx as f64,
            y0 + (y1 - y0) * j as f64 / ny as f64,
            h[j * (nx + 1) + i],
        )
    };
    for j in 0..ny {
        for i in 0..nx {
            let q = [at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)];
            // cells lying flat on the ground add nothing to the terrain
            if q.iter().all(|v| v.z < 1e-3) {
                continue;
            }
            m.push_quad(q[0], q[1], q[2], q[3], Part::Debris);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::templates::{BuildingSpec, Footprint, RoofKind};

    fn box10() -> TriangleMesh {
        BuildingSpec {
            footprint: Footprint::Rect {
                width: 12.0,
                depth: 9.0,
            },
            stories: 3,
            story_height: 10.0 / 3.0,
            roof: RoofKind::Flat,
            roof_height: 0.0,
        }
        .to_mesh()
    }

    #[test]
    fn no_damage_is_identity() {
        let m = box10();
        assert_eq!(
            apply_damage(&m, DamageGrade::NoDamage, &DamageParams::default(), 3).unwrap(),
            m
        );
    }

    #[test]
    fn destruction_height_cap() {
        let m = box10();
        assert!((m.max_height() - 10.0).abs() < 1e-9);
        for seed in 0..10 {
            let d =
                apply_damage(&m, DamageGrade::Destruction, &DamageParams::default(), seed).unwrap();
            assert!(!d.is_empty());
            assert!(d.max_height() <= 3.0 + 1e-9, "{}", d.max_height());
        }
    }

    #[test]
    fn heavy_removes_small_share() {
        let m = box10();
        let d = apply_damage(&m, DamageGrade::Heavy, &DamageParams::default(), 1).unwrap();
        let before = m.part_area(Part::Roof) + m.part_area(Part::Facade);
        let after = d.part_area(Part::Roof) + d.part_area(Part::Facade);
        assert!(after < before);
        assert!(after > 0.9 * before);
        assert!((d.part_area(Part::Slab) - m.part_area(Part::Slab)).abs() < 1e-6);
    }

    #[test]
    fn extreme_removes_requested_share() {
        let m = box10();
        let p = DamageParams::default();
        for seed in 0..5 {
            let d = apply_damage(&m, DamageGrade::Extreme, &p, seed).unwrap();
            let intact: f64 = Part::ALL[..3].iter().map(|&q| m.part_area(q)).sum();
            let left: f64 = Part::ALL[..3].iter().map(|&q| d.part_area(q)).sum();
            let removed = 1.0 - left / intact;
            assert!((0.19..=0.62).contains(&removed), "seed {seed}: {removed}");
            assert!(d.part_area(Part::Debris) > 0.0);
        }
    }

    #[test]
    fn deterministic() {
        let m = box10();
        for g in DamageGrade::ALL {
            let p = DamageParams::default();
            assert_eq!(
                apply_damage(&m, g, &p, 5).unwrap(),
                apply_damage(&m, g, &p, 5).unwrap()
            );
        }
    }

    #[test]
    fn invalid_params() {
        let mut p = DamageParams::default();
        p.destruction.height_max = 0.5;
        assert!(matches!(
            apply_damage(&box10(), DamageGrade::Destruction, &p, 0),
            Err(Error::InvalidDamageParams(_))
        ));
    }
}
