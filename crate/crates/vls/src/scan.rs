//! Airborne line-scan simulation.
//!
//! Each strip is flown at constant speed; the scanner sweeps one line
//! perpendicular to the flight direction per scan period, alternating the
//! sweep direction. The platform position is held fixed for the duration of a
//! line, so every pulse of line `k` starts at the same origin. Ground is the
//! plane `z = 0` inside the scene extent.
//!
//! Range noise is drawn per pulse from a generator keyed by
//! `(seed, strip, line, pulse)`, which makes [`simulate_scan_region`] return
//! exactly the points of a full scan that fall inside the region.

use std::collections::HashMap;

use damagescan_core::rng::derive_seed;
use damagescan_core::{Epoch, Point3, PointCloud};
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::Result;
use crate::flight::{plan_strips, Extent2, FlightStrip, ScannerConfig};
use crate::mesh::Vector3;
use crate::raycast::{Bvh, Ray};
use crate::scene::Scene;

/// Attribute holding the ground-truth grade index, `-1` for ground returns.
pub const GRADE_ATTRIBUTE: &str = "grade";
pub const GPS_TIME_ATTRIBUTE: &str = "gps_time";

/// Pause between strips added to the time stamps, seconds.
const TURN_TIME_S: f64 = 30.0;

/// A scene prepared for ray casting.
#[derive(Debug, Clone)]
pub struct ScanTarget {
    bvh: Bvh,
    extent: Extent2,
    z_max: f64,
    grades: HashMap<u32, f64>,
}

impl ScanTarget {
    pub fn new(scene: &Scene) -> ScanTarget {
        let meshes: Vec<(u32, &_)> = scene.buildings.iter().map(|b| (b.id, &b.mesh)).collect();
        let bvh = Bvh::build(&meshes);
        let z_max = if bvh.is_empty() {
            0.0
        } else {
            bvh.bounds().max.z.max(0.0)
        };
        ScanTarget {
            bvh,
            extent: scene.extent,
            z_max,
            grades: scene
                .buildings
                .iter()
                .map(|b| (b.id, b.grade.index() as f64))
                .collect(),
        }
    }

    pub fn extent(&self) -> &Extent2 {
        &self.extent
    }
}

struct Return {
    point: Point3,
    building: Option<u32>,
    grade: f64,
    time: f64,
}

/// Scans the whole scene with strips planned over its extent.
pub fn simulate_scan(
    scene: &Scene,
    cfg: &ScannerConfig,
    epoch: Epoch,
    seed: u64,
) -> Result<PointCloud> {
    let strips = plan_strips(&scene.extent, cfg)?;
    let target = ScanTarget::new(scene);
    scan_strips(&target, &strips, cfg, epoch, seed, None)
}

/// Returns the points of the full scan along `strips` that land inside `region`.
pub fn simulate_scan_region(
    target: &ScanTarget,
    strips: &[FlightStrip],
    cfg: &ScannerConfig,
    epoch: Epoch,
    seed: u64,
    region: &Extent2,
) -> Result<PointCloud> {
    scan_strips(target, strips, cfg, epoch, seed, Some(region))
}

/// Scans along explicit strips.
pub fn scan_strips(
    target: &ScanTarget,
    strips: &[FlightStrip],
    cfg: &ScannerConfig,
    epoch: Epoch,
    seed: u64,
    region: Option<&Extent2>,
) -> Result<PointCloud> {
    cfg.validate()?;
    let ls = cfg.line_spacing();
    let pulses = cfg.pulses_per_line();
    let half_fov = cfg.fov_deg.to_radians() / 2.0;
    let dtheta = 2.0 * half_fov / (pulses - 1) as f64;

    let mut out = Vec::new();
    let mut t_strip = 0.0;
    for strip in strips {
        let len = strip.length();
        let n_lines = (len / ls).floor() as usize + 1;
        let along = if len > 0.0 {
            (strip.end - strip.start) / len
        } else {
            Vector3::y()
        };
        // right-hand across-track direction in the horizontal plane
        let across = Vector3::new(along.y, -along.x, 0.0).normalize();
        let h = strip.start.z;

        let (lines, pulse_range) = match region {
            None => (0..n_lines, 0..pulses),
            Some(r) => (
                line_range(strip, along, ls, n_lines, r),
                pulse_range(strip, across, h, target.z_max, half_fov, dtheta, pulses, r),
            ),
        };

        let returns: Vec<Vec<Return>> = lines
            .into_par_iter()
            .map(|k| {
                let origin = strip.start + along * (k as f64 * ls);
                let t_line = t_strip + k as f64 / cfg.scan_rate_hz;
                let mut v = Vec::new();
                // sweep direction alternates between lines; output stays in time order
                let order: Box<dyn Iterator<Item = usize>> = if k % 2 == 0 {
                    Box::new(pulse_range.clone())
                } else {
                    Box::new(pulse_range.clone().rev())
                };
                for j in order {
                    let theta = -half_fov + j as f64 * dtheta;
                    let slot = if k % 2 == 0 { j } else { pulses - 1 - j };
                    let dir = across * theta.sin() - Vector3::z() * theta.cos();
                    let ray = Ray::new(origin, dir);
                    let Some((t, building)) = cast(target, &ray) else {
                        continue;
                    };
                    let noise = if cfg.range_noise_sigma_m > 0.0 {
                        let mut rng = SmallRng::seed_from_u64(derive_seed(
                            seed,
                            &[strip.index as u64, k as u64, j as u64],
                        ));
                        let z: f64 = rng.sample(StandardNormal);
                        z * cfg.range_noise_sigma_m
                    } else {
                        0.0
                    };
                    let point = ray.at(t + noise);
                    if let Some(r) = region {
                        if !r.contains(point.x, point.y) {
                            continue;
                        }
                    }
                    let grade = building
                        .and_then(|b| target.grades.get(&b).copied())
                        .unwrap_or(-1.0);
                    v.push(Return {
                        point,
                        building,
                        grade,
                        time: t_line + slot as f64 / cfg.pulse_rate_hz,
                    });
                }
                v
            })
            .collect();
        out.extend(returns.into_iter().flatten());
        t_strip += (n_lines as f64) / cfg.scan_rate_hz + TURN_TIME_S;
    }

    let mut cloud = PointCloud::from_points(out.iter().map(|r| r.point).collect(), epoch)?;
    cloud.set_building_ids(out.iter().map(|r| r.building).collect())?;
    cloud.set_attribute(GRADE_ATTRIBUTE, out.iter().map(|r| r.grade).collect())?;
    cloud.set_attribute(GPS_TIME_ATTRIBUTE, out.iter().map(|r| r.time).collect())?;
    log::debug!(
        "scanned {} points over {} strips",
        cloud.len(),
        strips.len()
    );
    Ok(cloud)
}

/// Nearest return: building surface or the ground plane inside the extent.
fn cast(target: &ScanTarget, ray: &Ray) -> Option<(f64, Option<u32>)> {
    let ground_t = if ray.dir.z < 0.0 {
        -ray.origin.z / ray.dir.z
    } else {
        f64::INFINITY
    };
    let ground = ground_t.is_finite() && ground_t > 0.0 && {
        let g = ray.at(ground_t);
        target.extent.contains(g.x, g.y)
    };
    let t_max = if ground { ground_t } else { f64::INFINITY };
    match target.bvh.intersect(ray, t_max) {
        Some(hit) => Some((hit.t, Some(hit.payload.building_id))),
        None if ground => Some((ground_t, None)),
        None => None,
    }
}

/// Lines whose scan plane crosses the region. Scan planes are perpendicular
/// to the flight direction, so only the along-track coordinate matters.
fn line_range(
    strip: &FlightStrip,
    along: Vector3,
    ls: f64,
    n_lines: usize,
    r: &Extent2,
) -> std::ops::Range<usize> {
    let corners = [
        [r.min[0], r.min[1]],
        [r.max[0], r.min[1]],
        [r.min[0], r.max[1]],
        [r.max[0], r.max[1]],
    ];
    let s: Vec<f64> = corners
        .iter()
        .map(|c| (c[0] - strip.start.x) * along.x + (c[1] - strip.start.y) * along.y)
        .collect();
    let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first = ((lo / ls).floor() - 1.0).max(0.0) as usize;
    let last = ((hi / ls).ceil() + 1.0).max(0.0) as usize;
    first.min(n_lines)..(last + 1).min(n_lines)
}

/// Conservative pulse index range whose rays can land in the region at any
/// height between the ground and the top of the scene.
#[allow(clippy::too_many_arguments)]
fn pulse_range(
    strip: &FlightStrip,
    across: Vector3,
    h: f64,
    z_max: f64,
    half_fov: f64,
    dtheta: f64,
    pulses: usize,
    r: &Extent2,
) -> std::ops::Range<usize> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for x in [r.min[0], r.max[0]] {
        for y in [r.min[1], r.max[1]] {
            let d = (x - strip.start.x) * across.x + (y - strip.start.y) * across.y;
            for z in [-1.0, z_max + 1.0] {
                let depth = h - z;
                if depth <= 0.0 {
                    return 0..pulses;
                }
                let a = (d / depth).atan();
                lo = lo.min(a);
                hi = hi.max(a);
            }
        }
    }
    let first = (((lo + half_fov) / dtheta).floor() - 2.0).max(0.0) as usize;
    let last = (((hi + half_fov) / dtheta).ceil() + 2.0).max(0.0) as usize;
    first.min(pulses)..(last + 1).min(pulses)
}
