//! Per-point geometric features over radius neighbourhoods.
//!
//! With the covariance eigenvalues `λ1 ≥ λ2 ≥ λ3 ≥ 0` of a neighbourhood and
//! `e_i = λ_i / Σλ`:
//!
//! | feature            | value                                         |
//! |--------------------|-----------------------------------------------|
//! | linearity          | (λ1 − λ2) / λ1                                |
//! | planarity          | (λ2 − λ3) / λ1                                |
//! | sphericity         | λ3 / λ1                                       |
//! | anisotropy         | (λ1 − λ3) / λ1                                |
//! | omnivariance       | (λ1 λ2 λ3)^(1/3)                              |
//! | eigenentropy       | −Σ e_i ln e_i (0 ln 0 = 0)                    |
//! | surface variation  | λ3 / Σλ                                       |
//! | curvature          | \|a + c\| of `z = ax² + bxy + cy² + dx + ey + f` fitted in the local eigen frame |
//! | verticality        | 1 − \|n_z\|                                   |
//! | roughness          | distance of the point to the best-fit plane   |
//! | num neighbours     | Ball3D count, the point itself excluded       |
//! | point density 2D   | Disc2D count (self excluded) / πr²            |
//! | surface density    | num neighbours / πr²                          |
//! | volume density     | num neighbours / (4/3 πr³)                    |
//! | z rank             | (z − z_min) / (z_max − z_min), 0.5 if flat    |
//! | z range            | z_max − z_min                                 |
//!
//! The neighbourhood always includes the feature point. Eigen-derived values
//! need at least three neighbourhood points; otherwise they hold [`MISSING`].

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cloud::{Point3, PointCloud};
use crate::error::{Error, Result};
use crate::index::{QueryMode, SpatialIndex};

/// Marker for values that could not be computed. Excluded from every aggregate.
pub const MISSING: f64 = f64::NAN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureId {
    Linearity,
    Planarity,
    Sphericity,
    Omnivariance,
    Anisotropy,
    Eigenentropy,
    SurfaceVariation,
    Curvature,
    Verticality,
    Roughness,
    NumNeighbors,
    PointDensity2D,
    SurfaceDensity,
    VolumeDensity,
    ZRank,
    ZRange,
    Lambda1,
    Lambda2,
    Lambda3,
    SumLambda,
    NormalVector,
}

impl FeatureId {
    pub const ALL: [FeatureId; 21] = [
        FeatureId::Linearity,
        FeatureId::Planarity,
        FeatureId::Sphericity,
        FeatureId::Omnivariance,
        FeatureId::Anisotropy,
        FeatureId::Eigenentropy,
        FeatureId::SurfaceVariation,
        FeatureId::Curvature,
        FeatureId::Verticality,
        FeatureId::Roughness,
        FeatureId::NumNeighbors,
        FeatureId::PointDensity2D,
        FeatureId::SurfaceDensity,
        FeatureId::VolumeDensity,
        FeatureId::ZRank,
        FeatureId::ZRange,
        FeatureId::Lambda1,
        FeatureId::Lambda2,
        FeatureId::Lambda3,
        FeatureId::SumLambda,
        FeatureId::NormalVector,
    ];

    /// Robust change features reported for cross-sensor use; the default selection.
    pub const ROBUST_DEFAULT: [FeatureId; 10] = [
        FeatureId::Planarity,
        FeatureId::SurfaceVariation,
        FeatureId::PointDensity2D,
        FeatureId::NumNeighbors,
        FeatureId::SurfaceDensity,
        FeatureId::VolumeDensity,
        FeatureId::Roughness,
        FeatureId::ZRank,
        FeatureId::ZRange,
        FeatureId::NormalVector,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureId::Linearity => "linearity",
            FeatureId::Planarity => "planarity",
            FeatureId::Sphericity => "sphericity",
            FeatureId::Omnivariance => "omnivariance",
            FeatureId::Anisotropy => "anisotropy",
            FeatureId::Eigenentropy => "eigenentropy",
            FeatureId::SurfaceVariation => "surface_variation",
            FeatureId::Curvature => "curvature",
            FeatureId::Verticality => "verticality",
            FeatureId::Roughness => "roughness",
            FeatureId::NumNeighbors => "num_neighbors",
            FeatureId::PointDensity2D => "point_density_2d",
            FeatureId::SurfaceDensity => "surface_density",
            FeatureId::VolumeDensity => "volume_density",
            FeatureId::ZRank => "z_rank",
            FeatureId::ZRange => "z_range",
            FeatureId::Lambda1 => "lambda1",
            FeatureId::Lambda2 => "lambda2",
            FeatureId::Lambda3 => "lambda3",
            FeatureId::SumLambda => "sum_lambda",
            FeatureId::NormalVector => "normal_vector",
        }
    }

    /// True for features that need the covariance eigen-decomposition.
    pub fn is_eigen(self) -> bool {
        !matches!(
            self,
            FeatureId::NumNeighbors
                | FeatureId::PointDensity2D
                | FeatureId::SurfaceDensity
                | FeatureId::VolumeDensity
                | FeatureId::ZRank
                | FeatureId::ZRange
        )
    }

    /// True if the value is unchanged by any rigid motion of the cloud. The
    /// others depend on the vertical axis and survive only translations and
    /// rotations about z.
    pub fn is_rigid_invariant(self) -> bool {
        !matches!(
            self,
            FeatureId::Verticality
                | FeatureId::NormalVector
                | FeatureId::ZRank
                | FeatureId::ZRange
                | FeatureId::PointDensity2D
        )
    }

    /// Parses a comma-separated list such as `planarity,z_rank`.
    pub fn parse_list(s: &str) -> Result<Vec<FeatureId>> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(FeatureId::from_str)
            .collect()
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureId::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::UnknownFeature(s.to_string()))
    }
}

impl Serialize for FeatureId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for FeatureId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Covariance eigen-structure of one neighbourhood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenStructure {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Eigenvector of `lambda3`, unit length, `n_z >= 0` (ties: `n_x >= 0`, then `n_y >= 0`).
    pub normal: Vector3<f64>,
    /// Eigenvectors of `lambda1` and `lambda2`.
    pub major: Vector3<f64>,
    pub minor: Vector3<f64>,
    pub centroid: Point3,
}

impl EigenStructure {
    pub fn sum(&self) -> f64 {
        self.lambda1 + self.lambda2 + self.lambda3
    }
}

fn orient_up(mut n: Vector3<f64>) -> Vector3<f64> {
    let flip = n.z < 0.0 || (n.z == 0.0 && (n.x < 0.0 || (n.x == 0.0 && n.y < 0.0)));
    if flip {
        n = -n;
    }
    n
}

/// Eigen-decomposition of the population covariance of `points`.
pub fn eigenstructure_of(points: &[Point3]) -> Result<EigenStructure> {
    if points.len() < 3 {
        return Err(Error::InsufficientNeighbors {
            found: points.len(),
        });
    }
    let n = points.len() as f64;
    let c = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords - c;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let ev = |k: usize| eig.eigenvalues[order[k]].max(0.0);
    let vec = |k: usize| eig.eigenvectors.column(order[k]).normalize();
    Ok(EigenStructure {
        lambda1: ev(0),
        lambda2: ev(1),
        lambda3: ev(2),
        normal: orient_up(vec(2)),
        major: vec(0),
        minor: vec(1),
        centroid: Point3::from(c),
    })
}

/// Upward-oriented best-fit plane normal, `None` for fewer than three points.
pub fn fit_normal(points: &[Point3]) -> Option<Vector3<f64>> {
    eigenstructure_of(points).ok().map(|e| e.normal)
}

/// Eigen-structure of the Ball3D neighbourhood (radius `r`, point included) of row `p`.
pub fn local_eigenstructure(
    index: &SpatialIndex,
    cloud: &PointCloud,
    p: usize,
    r: f64,
) -> Result<EigenStructure> {
    let rows = index.radius_query(&cloud.point(p), r, QueryMode::Ball3D)?;
    let pts: Vec<Point3> = rows.iter().map(|&i| cloud.point(i)).collect();
    eigenstructure_of(&pts)
}

/// `|a + c|` of a least-squares quadric in the eigen frame of the neighbourhood.
pub fn quadric_curvature(points: &[Point3], eig: &EigenStructure) -> f64 {
    // normal equations, upper triangle accumulated by hand
    let mut upper = [0.0f64; 21];
    let mut atz = Vector6::<f64>::zeros();
    for p in points {
        let d = p - eig.centroid;
        let x = d.dot(&eig.major);
        let y = d.dot(&eig.minor);
        let z = d.dot(&eig.normal);
        let row = [x * x, x * y, y * y, x, y, 1.0];
        let mut k = 0;
        for i in 0..6 {
            for j in i..6 {
                upper[k] += row[i] * row[j];
                k += 1;
            }
            atz[i] += row[i] * z;
        }
    }
    let mut ata = Matrix6::<f64>::zeros();
    let mut k = 0;
    for i in 0..6 {
        for j in i..6 {
            ata[(i, j)] = upper[k];
            ata[(j, i)] = upper[k];
            k += 1;
        }
    }
    let coef = match ata.cholesky() {
        Some(ch) => ch.solve(&atz),
        None => {
            let svd = ata.svd(true, true);
            match svd.solve(
                &atz,
                1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE),
            ) {
                Ok(c) => c,
                Err(_) => return MISSING,
            }
        }
    };
    (coef[0] + coef[2]).abs()
}

/// Feature values of one radius for every point of a cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    radius: f64,
    ids: Vec<FeatureId>,
    columns: IndexMap<FeatureId, Vec<f64>>,
    normals: Option<Vec<[f64; 3]>>,
}

impl FeatureTable {
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn ids(&self) -> &[FeatureId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        match &self.normals {
            Some(n) => n.len(),
            None => self.columns.values().next().map_or(0, Vec::len),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Scalar column of a feature. `None` for [`FeatureId::NormalVector`] and absent ids.
    pub fn column(&self, id: FeatureId) -> Option<&[f64]> {
        self.columns.get(&id).map(Vec::as_slice)
    }

    pub fn normals(&self) -> Option<&[[f64; 3]]> {
        self.normals.as_deref()
    }

    pub fn has(&self, id: FeatureId) -> bool {
        self.ids.contains(&id)
    }

    /// Property name used when persisting a column.
    pub fn property_name(id: FeatureId, radius: f64) -> String {
        format!("f_{}_{}", id.name(), (radius * 100.0).round() as i64)
    }

    /// Writes every column into `cloud` as `f_<feature>_<radius_cm>` attributes.
    /// Normal vectors become three columns with `_x`, `_y`, `_z` suffixes.
    pub fn attach_to(&self, cloud: &mut PointCloud) -> Result<()> {
        for id in &self.ids {
            let name = Self::property_name(*id, self.radius);
            if let Some(col) = self.columns.get(id) {
                cloud.set_attribute(name, col.clone())?;
            } else if let Some(normals) = &self.normals {
                for (k, axis) in ["x", "y", "z"].iter().enumerate() {
                    cloud.set_attribute(
                        format!("{name}_{axis}"),
                        normals.iter().map(|n| n[k]).collect(),
                    )?;
                }
            }
        }
        Ok(())
    }

    /// Reads back a table written with [`attach_to`](Self::attach_to).
    pub fn from_cloud(cloud: &PointCloud, radius: f64, ids: &[FeatureId]) -> Result<FeatureTable> {
        let mut columns = IndexMap::new();
        let mut normals = None;
        for &id in ids {
            let name = Self::property_name(id, radius);
            if id == FeatureId::NormalVector {
                let get = |axis: &str| {
                    cloud.attribute(&format!("{name}_{axis}")).ok_or_else(|| {
                        Error::FeatureMismatch(format!("cloud has no `{name}_{axis}` column"))
                    })
                };
                let (x, y, z) = (get("x")?, get("y")?, get("z")?);
                normals = Some((0..cloud.len()).map(|i| [x[i], y[i], z[i]]).collect());
            } else {
                let col = cloud.attribute(&name).ok_or_else(|| {
                    Error::FeatureMismatch(format!("cloud has no `{name}` column"))
                })?;
                columns.insert(id, col.to_vec());
            }
        }
        Ok(FeatureTable {
            radius,
            ids: ids.to_vec(),
            columns,
            normals,
        })
    }
}

/// All per-point values; unused slots stay at `MISSING`.
#[derive(Debug, Clone, Copy)]
struct PointValues {
    scalars: [f64; 20],
    normal: [f64; 3],
}

fn scalar_slot(id: FeatureId) -> Option<usize> {
    FeatureId::ALL[..20].iter().position(|&f| f == id)
}

struct Needs {
    eigen: bool,
    curvature: bool,
    disc: bool,
}

fn point_values(
    cloud: &PointCloud,
    index: &SpatialIndex,
    row: usize,
    r: f64,
    needs: &Needs,
    buf: &mut Vec<usize>,
    pts: &mut Vec<Point3>,
) -> Result<PointValues> {
    let mut v = PointValues {
        scalars: [MISSING; 20],
        normal: [MISSING; 3],
    };
    let p = cloud.point(row);
    let set = |v: &mut PointValues, id: FeatureId, x: f64| {
        v.scalars[scalar_slot(id).expect("scalar feature")] = x
    };

    index.radius_query_unsorted(&p, r, QueryMode::Ball3D, buf);
    pts.clear();
    pts.extend(buf.iter().map(|&i| cloud.point(i)));

    let count = (pts.len() - 1) as f64;
    let area = std::f64::consts::PI * r * r;
    let volume = 4.0 / 3.0 * std::f64::consts::PI * r * r * r;
    set(&mut v, FeatureId::NumNeighbors, count);
    set(&mut v, FeatureId::SurfaceDensity, count / area);
    set(&mut v, FeatureId::VolumeDensity, count / volume);
    let (zmin, zmax) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), q| {
            (lo.min(q.z), hi.max(q.z))
        });
    set(&mut v, FeatureId::ZRange, zmax - zmin);
    set(
        &mut v,
        FeatureId::ZRank,
        if zmax > zmin {
            (p.z - zmin) / (zmax - zmin)
        } else {
            0.5
        },
    );
    if needs.disc {
        index.radius_query_unsorted(&p, r, QueryMode::Disc2D, buf);
        set(
            &mut v,
            FeatureId::PointDensity2D,
            (buf.len() - 1) as f64 / area,
        );
    }

    if needs.eigen && pts.len() >= 3 {
        let e = eigenstructure_of(pts)?;
        let (l1, l2, l3) = (e.lambda1, e.lambda2, e.lambda3);
        let sum = e.sum();
        set(&mut v, FeatureId::Lambda1, l1);
        set(&mut v, FeatureId::Lambda2, l2);
        set(&mut v, FeatureId::Lambda3, l3);
        set(&mut v, FeatureId::SumLambda, sum);
        set(&mut v, FeatureId::Omnivariance, (l1 * l2 * l3).cbrt());
        if l1 > 0.0 {
            set(&mut v, FeatureId::Linearity, (l1 - l2) / l1);
            set(&mut v, FeatureId::Planarity, (l2 - l3) / l1);
            set(&mut v, FeatureId::Sphericity, l3 / l1);
            set(&mut v, FeatureId::Anisotropy, (l1 - l3) / l1);
        }
        if sum > 0.0 {
            set(&mut v, FeatureId::SurfaceVariation, l3 / sum);
            let entropy = [l1, l2, l3]
                .iter()
                .map(|l| l / sum)
                .filter(|e| *e > 0.0)
                .map(|e| -e * e.ln())
                .sum();
            set(&mut v, FeatureId::Eigenentropy, entropy);
        }
        set(&mut v, FeatureId::Verticality, 1.0 - e.normal.z.abs());
        set(
            &mut v,
            FeatureId::Roughness,
            (p - e.centroid).dot(&e.normal).abs(),
        );
        if needs.curvature {
            set(&mut v, FeatureId::Curvature, quadric_curvature(pts, &e));
        }
        v.normal = [e.normal.x, e.normal.y, e.normal.z];
    }
    Ok(v)
}

/// Computes the requested features for every point of `cloud` at radius `r`.
///
/// `index` must have been built over `cloud`. Rows are evaluated in parallel;
/// the result does not depend on the worker count.
pub fn compute_features(
    cloud: &PointCloud,
    index: &SpatialIndex,
    r: f64,
    ids: &[FeatureId],
) -> Result<FeatureTable> {
    let rows: Vec<usize> = (0..cloud.len()).collect();
    compute_features_at(cloud, index, r, ids, &rows)
}

/// Like [`compute_features`] but only for the given rows; the table has one
/// entry per requested row, neighbourhoods still come from the whole cloud.
pub fn compute_features_at(
    cloud: &PointCloud,
    index: &SpatialIndex,
    r: f64,
    ids: &[FeatureId],
    rows: &[usize],
) -> Result<FeatureTable> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::InvalidRadius(r));
    }
    if index.len() != cloud.len() {
        return Err(Error::LengthMismatch {
            left: index.len(),
            right: cloud.len(),
        });
    }
    if let Some(&bad) = rows.iter().find(|&&i| i >= cloud.len()) {
        return Err(Error::LengthMismatch {
            left: bad,
            right: cloud.len(),
        });
    }
    let mut ids_dedup: Vec<FeatureId> = Vec::with_capacity(ids.len());
    for id in ids {
        if !ids_dedup.contains(id) {
            ids_dedup.push(*id);
        }
    }
    let needs = Needs {
        eigen: ids_dedup.iter().any(|f| f.is_eigen()),
        curvature: ids_dedup.contains(&FeatureId::Curvature),
        disc: ids_dedup.contains(&FeatureId::PointDensity2D),
    };
    let values: Vec<PointValues> = rows
        .par_iter()
        .map_init(
            || (Vec::new(), Vec::new()),
            |(buf, pts), &row| point_values(cloud, index, row, r, &needs, buf, pts),
        )
        .collect::<Result<_>>()?;

    let mut columns = IndexMap::new();
    let mut normals = None;
    for &id in &ids_dedup {
        match scalar_slot(id) {
            Some(slot) => {
                columns.insert(id, values.iter().map(|v| v.scalars[slot]).collect());
            }
            None => normals = Some(values.iter().map(|v| v.normal).collect()),
        }
    }
    Ok(FeatureTable {
        radius: r,
        ids: ids_dedup,
        columns,
        normals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Epoch;

    fn cloud(points: Vec<Point3>) -> PointCloud {
        PointCloud::from_points(points, Epoch::PreEvent).unwrap()
    }

    fn plane_grid(n: usize, step: f64) -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push(Point3::new(i as f64 * step, j as f64 * step, 0.0));
            }
        }
        cloud(pts)
    }

    #[test]
    fn names_round_trip() {
        for f in FeatureId::ALL {
            assert_eq!(f.name().parse::<FeatureId>().unwrap(), f);
        }
        assert!(matches!(
            "echo_ratio".parse::<FeatureId>(),
            Err(Error::UnknownFeature(_))
        ));
        assert_eq!(
            FeatureId::parse_list("planarity, z_rank").unwrap(),
            vec![FeatureId::Planarity, FeatureId::ZRank]
        );
    }

    #[test]
    fn planar_neighbourhood() {
        let c = plane_grid(11, 0.1);
        let idx = SpatialIndex::build(&c).unwrap();
        let e = local_eigenstructure(&idx, &c, 60, 0.35).unwrap();
        assert!(e.lambda3.abs() < 1e-15);
        assert!((e.normal - Vector3::z()).norm() < 1e-12);
    }

    #[test]
    fn collinear_neighbourhood() {
        let c = cloud(
            (0..10)
                .map(|i| Point3::new(i as f64 * 0.1, 0.0, 0.0))
                .collect(),
        );
        let idx = SpatialIndex::build(&c).unwrap();
        let e = local_eigenstructure(&idx, &c, 5, 1.0).unwrap();
        assert!(e.lambda1 > 0.0);
        assert!(e.lambda2.abs() < 1e-15 && e.lambda3.abs() < 1e-15);
    }

    #[test]
    fn insufficient_neighbours() {
        let c = cloud(vec![
            Point3::origin(),
            Point3::new(5.0, 0.0, 0.0),
            Point3::new(0.1, 0.0, 0.0),
        ]);
        let idx = SpatialIndex::build(&c).unwrap();
        assert!(matches!(
            local_eigenstructure(&idx, &c, 1, 1.0),
            Err(Error::InsufficientNeighbors { found: 1 })
        ));
        let t = compute_features(
            &c,
            &idx,
            1.0,
            &[FeatureId::Planarity, FeatureId::NumNeighbors],
        )
        .unwrap();
        assert!(t.column(FeatureId::Planarity).unwrap()[1].is_nan());
        assert_eq!(t.column(FeatureId::NumNeighbors).unwrap()[1], 0.0);
        assert_eq!(t.column(FeatureId::NumNeighbors).unwrap()[0], 1.0);
    }

    #[test]
    fn flat_plane_features() {
        let c = plane_grid(41, 0.1);
        let idx = SpatialIndex::build(&c).unwrap();
        let ids = [
            FeatureId::Planarity,
            FeatureId::SurfaceVariation,
            FeatureId::Roughness,
            FeatureId::Verticality,
            FeatureId::Curvature,
        ];
        let t = compute_features(&c, &idx, 1.0, &ids).unwrap();
        let centre = 20 * 41 + 20;
        assert!(t.column(FeatureId::Planarity).unwrap()[centre] > 0.99);
        for id in &ids[1..] {
            assert!(t.column(*id).unwrap()[centre].abs() < 1e-9, "{id}");
        }
    }

    #[test]
    fn vertical_wall_is_vertical() {
        let mut pts = Vec::new();
        for i in 0..30 {
            for j in 0..30 {
                pts.push(Point3::new(i as f64 * 0.1, 2.0, j as f64 * 0.1));
            }
        }
        let c = cloud(pts);
        let idx = SpatialIndex::build(&c).unwrap();
        let t = compute_features(
            &c,
            &idx,
            0.5,
            &[FeatureId::Verticality, FeatureId::NormalVector],
        )
        .unwrap();
        let i = 15 * 30 + 15;
        assert!((t.column(FeatureId::Verticality).unwrap()[i] - 1.0).abs() < 1e-9);
        let n = t.normals().unwrap()[i];
        assert!((n[1].abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sphere_curvature_is_inverse_radius() {
        // z = R - sqrt(R² - x² - y²) sampled densely around the apex
        let radius = 5.0;
        let mut pts = Vec::new();
        for i in -20..=20 {
            for j in -20..=20 {
                let (x, y) = (i as f64 * 0.05, j as f64 * 0.05);
                pts.push(Point3::new(
                    x,
                    y,
                    radius - (radius * radius - x * x - y * y).sqrt(),
                ));
            }
        }
        let c = cloud(pts);
        let idx = SpatialIndex::build(&c).unwrap();
        let t = compute_features(&c, &idx, 0.5, &[FeatureId::Curvature]).unwrap();
        let apex = 20 * 41 + 20;
        let k = t.column(FeatureId::Curvature).unwrap()[apex];
        assert!((k - 1.0 / radius).abs() < 0.01, "curvature {k}");
    }

    #[test]
    fn densities_follow_counts() {
        let c = plane_grid(21, 0.1);
        let idx = SpatialIndex::build(&c).unwrap();
        let r = 0.55;
        let t = compute_features(
            &c,
            &idx,
            r,
            &[
                FeatureId::NumNeighbors,
                FeatureId::SurfaceDensity,
                FeatureId::VolumeDensity,
                FeatureId::PointDensity2D,
            ],
        )
        .unwrap();
        let pi = std::f64::consts::PI;
        for i in 0..c.len() {
            let n = t.column(FeatureId::NumNeighbors).unwrap()[i];
            assert_eq!(
                t.column(FeatureId::SurfaceDensity).unwrap()[i],
                n / (pi * r * r)
            );
            assert_eq!(
                t.column(FeatureId::VolumeDensity).unwrap()[i],
                n / (4.0 / 3.0 * pi * r * r * r)
            );
            // planar cloud: 2D and 3D neighbourhoods coincide
            assert_eq!(
                t.column(FeatureId::PointDensity2D).unwrap()[i],
                n / (pi * r * r)
            );
        }
    }

    #[test]
    fn z_rank_and_range() {
        let c = cloud(vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.1, 0.0, 1.0),
            Point3::new(0.0, 0.1, 0.25),
        ]);
        let idx = SpatialIndex::build(&c).unwrap();
        let t = compute_features(&c, &idx, 5.0, &[FeatureId::ZRank, FeatureId::ZRange]).unwrap();
        assert_eq!(t.column(FeatureId::ZRank).unwrap(), &[0.0, 1.0, 0.25]);
        assert_eq!(t.column(FeatureId::ZRange).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn table_round_trips_through_cloud_columns() {
        let c = plane_grid(8, 0.1);
        let idx = SpatialIndex::build(&c).unwrap();
        let ids = [FeatureId::Planarity, FeatureId::NormalVector];
        let t = compute_features(&c, &idx, 0.25, &ids).unwrap();
        let mut c2 = c.clone();
        t.attach_to(&mut c2).unwrap();
        assert!(c2.attribute("f_planarity_25").is_some());
        assert!(c2.attribute("f_normal_vector_25_z").is_some());
        assert_eq!(
            FeatureTable::from_cloud(&c2, 0.25, &ids).unwrap(),
            t.clone()
        );
        assert!(matches!(
            FeatureTable::from_cloud(&c2, 0.5, &ids),
            Err(Error::FeatureMismatch(_))
        ));
    }

    #[test]
    fn invalid_radius() {
        let c = plane_grid(3, 0.1);
        let idx = SpatialIndex::build(&c).unwrap();
        assert!(matches!(
            compute_features(&c, &idx, 0.0, &[FeatureId::Planarity]),
            Err(Error::InvalidRadius(_))
        ));
    }
}
