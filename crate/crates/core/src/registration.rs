//! Rigid pre/post alignment on stable areas and an alignment-quality measure.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::cloud::{Point3, PointCloud};
use crate::error::{Error, Result};
use crate::index::{QueryMode, SpatialIndex};

/// Proper rigid motion `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation by `angle` radians about the z axis followed by translation `t`.
    pub fn from_z_rotation(angle: f64, t: Vector3<f64>) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            rotation: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            translation: t,
        }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn determinant(&self) -> f64 {
        self.rotation.determinant()
    }

    pub fn transform_cloud(&self, cloud: &PointCloud) -> PointCloud {
        let mut out = cloud.clone();
        out.map_points(|p| self.apply(p));
        out
    }
}

/// Least-squares rigid fit of `src[i] -> dst[i]` (SVD of the cross-covariance).
pub fn fit_rigid(src: &[Point3], dst: &[Point3]) -> Result<RigidTransform> {
    if src.len() != dst.len() {
        return Err(Error::LengthMismatch {
            left: src.len(),
            right: dst.len(),
        });
    }
    if src.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "{} correspondences",
            src.len()
        )));
    }
    let n = src.len() as f64;
    let cs = src.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let cd = dst.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s.coords - cs) * (d.coords - cd).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd
        .u
        .ok_or_else(|| Error::DegenerateGeometry("SVD failed".into()))?;
    let v = svd
        .v_t
        .ok_or_else(|| Error::DegenerateGeometry("SVD failed".into()))?
        .transpose();
    let mut fix = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let rotation = v * fix * u.transpose();
    Ok(RigidTransform {
        rotation,
        translation: cd - rotation * cs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpParams {
    pub max_iter: usize,
    /// Convergence threshold on the change of the mean residual, meters.
    pub tol: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpResult {
    pub transform: RigidTransform,
    pub iterations: usize,
    pub mean_residual: f64,
}

fn masked_points(cloud: &PointCloud, mask: &[bool]) -> Result<Vec<Point3>> {
    if mask.len() != cloud.len() {
        return Err(Error::LengthMismatch {
            left: mask.len(),
            right: cloud.len(),
        });
    }
    Ok(cloud
        .points()
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(p, _)| *p)
        .collect())
}

fn check_non_collinear(points: &[Point3], which: &str) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "{which} has {} stable points, need at least 3",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let c = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords - c;
        cov += d * d.transpose();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(cov / n)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[1] <= 1e-12 * ev[0].max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateGeometry(format!(
            "{which} stable points are collinear"
        )));
    }
    Ok(())
}

/// Point-to-point ICP of the stable part of `moving` onto the stable part of
/// `fixed`. Returns the transform mapping moving coordinates into the fixed frame.
pub fn align_icp(
    moving: &PointCloud,
    moving_stable: &[bool],
    fixed: &PointCloud,
    fixed_stable: &[bool],
    params: IcpParams,
) -> Result<IcpResult> {
    let src = masked_points(moving, moving_stable)?;
    let dst = masked_points(fixed, fixed_stable)?;
    check_non_collinear(&src, "moving cloud")?;
    check_non_collinear(&dst, "fixed cloud")?;
    let index = SpatialIndex::from_points(&dst);

    let mut transform = RigidTransform::identity();
    let mut current = src.clone();
    let mut prev_residual = f64::INFINITY;
    let mut iterations = 0;
    let mut mean_residual = f64::INFINITY;
    let mut matched = Vec::with_capacity(src.len());
    while iterations < params.max_iter {
        iterations += 1;
        matched.clear();
        let mut total = 0.0;
        for p in &current {
            let (j, d) = index.nearest_neighbor(p, QueryMode::Ball3D);
            matched.push(dst[j]);
            total += d;
        }
        mean_residual = total / current.len() as f64;
        if (prev_residual - mean_residual).abs() < params.tol || mean_residual == 0.0 {
            break;
        }
        prev_residual = mean_residual;
        let step = fit_rigid(&current, &matched)?;
        transform = step.compose(&transform);
        for (c, s) in current.iter_mut().zip(&src) {
            *c = transform.apply(s);
        }
    }
    log::debug!("icp: {iterations} iterations, mean residual {mean_residual:.6} m");
    Ok(IcpResult {
        transform,
        iterations,
        mean_residual,
    })
}

/// Distribution of signed pre→post closest-point distances on stable areas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentQuality {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Neighbour count used for the local pre-epoch normal.
const QUALITY_NORMAL_K: usize = 12;

/// For every stable pre point, projects the offset to its closest stable post
/// point onto the local pre-cloud normal (oriented upward) and summarises the
/// signed distances. A cheap stand-in for multiscale cloud-to-cloud distances.
pub fn alignment_quality(
    pre: &PointCloud,
    pre_stable: &[bool],
    post: &PointCloud,
    post_stable: &[bool],
) -> Result<AlignmentQuality> {
    let a = masked_points(pre, pre_stable)?;
    let b = masked_points(post, post_stable)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyStableArea);
    }
    let pre_index = SpatialIndex::from_points(&a);
    let post_index = SpatialIndex::from_points(&b);
    let mut distances = Vec::with_capacity(a.len());
    for p in &a {
        let nb: Vec<Point3> = pre_index
            .k_nearest(p, QUALITY_NORMAL_K, QueryMode::Ball3D)
            .into_iter()
            .map(|(i, _)| a[i])
            .collect();
        let normal = crate::features::fit_normal(&nb).unwrap_or_else(Vector3::z);
        let (j, _) = post_index.nearest_neighbor(p, QueryMode::Ball3D);
        distances.push((b[j] - p).dot(&normal));
    }
    let n = distances.len() as f64;
    let mean = distances.iter().sum::<f64>() / n;
    let var = distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    Ok(AlignmentQuality {
        mean,
        std: var.sqrt(),
        count: distances.len(),
    })
}
