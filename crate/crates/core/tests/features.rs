use std::f64::consts::PI;

use damagescan_core::features::eigenstructure_of;
use damagescan_core::registration::RigidTransform;
use damagescan_core::rng::stream_rng;
use damagescan_core::{
    compute_features, compute_features_at, Epoch, FeatureId, Point3, PointCloud, SpatialIndex,
};
use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;
use rand::Rng;

/// Cyclic Jacobi sweeps on a symmetric 3×3 matrix; eigenvalues descending.
fn jacobi_eigenvalues(mut a: [[f64; 3]; 3]) -> [f64; 3] {
    for _ in 0..100 {
        let off = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
        if off < 1e-30 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q].abs() < 1e-300 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut b = a;
            for k in 0..3 {
                b[k][p] = c * a[k][p] - s * a[k][q];
                b[k][q] = s * a[k][p] + c * a[k][q];
            }
            let mut d = b;
            for k in 0..3 {
                d[p][k] = c * b[p][k] - s * b[q][k];
                d[q][k] = s * b[p][k] + c * b[q][k];
            }
            a = d;
        }
    }
    let mut ev = [a[0][0], a[1][1], a[2][2]];
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

fn covariance(pts: &[Point3]) -> ([[f64; 3]; 3], Point3) {
    let n = pts.len() as f64;
    let mut c = [0.0; 3];
    for p in pts {
        for k in 0..3 {
            c[k] += p[k] / n;
        }
    }
    let mut m = [[0.0; 3]; 3];
    for p in pts {
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += (p[i] - c[i]) * (p[j] - c[j]) / n;
            }
        }
    }
    (m, Point3::new(c[0], c[1], c[2]))
}

#[test]
fn five_point_eigenvalues_match_jacobi() {
    let pts = [
        Point3::new(0.0, 0.0, 0.0),
        Point3::new(1.0, 0.0, 0.0),
        Point3::new(0.0, 1.0, 0.0),
        Point3::new(1.0, 1.0, 0.0),
        Point3::new(0.5, 0.5, 0.5),
    ];
    let e = eigenstructure_of(&pts).unwrap();
    let want = jacobi_eigenvalues(covariance(&pts).0);
    for (got, want) in [e.lambda1, e.lambda2, e.lambda3].iter().zip(want) {
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
    assert!((e.normal.norm() - 1.0).abs() < 1e-9);
    assert!(e.normal.z >= 0.0);
}

fn uniform_ball(n: usize, radius: f64, seed: u64) -> Vec<Point3> {
    let mut rng = stream_rng(seed, &[]);
    let mut v = Vec::with_capacity(n);
    while v.len() < n {
        let p = Vector3::new(
            rng.random_range(-radius..radius),
            rng.random_range(-radius..radius),
            rng.random_range(-radius..radius),
        );
        if p.norm() <= radius {
            v.push(Point3::from(p));
        }
    }
    v
}

/// Formula-table recomputation for one point from a brute-force neighbourhood.
fn oracle(pts: &[Point3], row: usize, r: f64) -> Vec<(FeatureId, f64)> {
    let p = pts[row];
    let nb: Vec<Point3> = pts
        .iter()
        .copied()
        .filter(|q| (q - p).norm() <= r)
        .collect();
    let disc = pts
        .iter()
        .filter(|q| (q.x - p.x).hypot(q.y - p.y) <= r)
        .count();
    let (cov, centroid) = covariance(&nb);
    let [l1, l2, l3] = jacobi_eigenvalues(cov).map(|l| l.max(0.0));
    let sum = l1 + l2 + l3;
    // normal from the inverse-iteration-free route: cross product of two rows of (C − λ3 I)
    let m = nalgebra::Matrix3::from_fn(|i, j| cov[i][j] - if i == j { l3 } else { 0.0 });
    let rows = [
        m.row(0).transpose(),
        m.row(1).transpose(),
        m.row(2).transpose(),
    ];
    let n = [
        rows[0].cross(&rows[1]),
        rows[0].cross(&rows[2]),
        rows[1].cross(&rows[2]),
    ]
    .into_iter()
    .max_by(|a, b| a.norm().total_cmp(&b.norm()))
    .unwrap()
    .normalize();
    let zmin = nb.iter().map(|q| q.z).fold(f64::INFINITY, f64::min);
    let zmax = nb.iter().map(|q| q.z).fold(f64::NEG_INFINITY, f64::max);
    let count = (nb.len() - 1) as f64;
    let entropy: f64 = [l1, l2, l3]
        .iter()
        .map(|l| l / sum)
        .filter(|e| *e > 0.0)
        .map(|e| -e * e.ln())
        .sum();
    vec![
        (FeatureId::Linearity, (l1 - l2) / l1),
        (FeatureId::Planarity, (l2 - l3) / l1),
        (FeatureId::Sphericity, l3 / l1),
        (FeatureId::Anisotropy, (l1 - l3) / l1),
        (FeatureId::Omnivariance, (l1 * l2 * l3).cbrt()),
        (FeatureId::Eigenentropy, entropy),
        (FeatureId::SurfaceVariation, l3 / sum),
        (FeatureId::SumLambda, sum),
        (FeatureId::Lambda1, l1),
        (FeatureId::Lambda2, l2),
        (FeatureId::Lambda3, l3),
        (FeatureId::Verticality, 1.0 - n.z.abs()),
        (FeatureId::Roughness, (p - centroid).dot(&n).abs()),
        (FeatureId::NumNeighbors, count),
        (FeatureId::SurfaceDensity, count / (PI * r * r)),
        (
            FeatureId::VolumeDensity,
            count / (4.0 / 3.0 * PI * r.powi(3)),
        ),
        (FeatureId::PointDensity2D, (disc - 1) as f64 / (PI * r * r)),
        (FeatureId::ZRange, zmax - zmin),
        (FeatureId::ZRank, (p.z - zmin) / (zmax - zmin)),
    ]
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

#[test]
fn uniform_ball_matches_brute_force_formulas() {
    let pts = uniform_ball(10_000, 1.0, 3);
    let cloud = PointCloud::from_points(pts.clone(), Epoch::PreEvent).unwrap();
    let index = SpatialIndex::build(&cloud).unwrap();
    let rows: Vec<usize> = (0..10_000).step_by(97).collect();
    // radius 2.0 covers the whole ball from every point
    for r in [2.0, 0.35] {
        let table = compute_features_at(&cloud, &index, r, &FeatureId::ALL, &rows).unwrap();
        for (k, &row) in rows.iter().enumerate() {
            for (id, want) in oracle(&pts, row, r) {
                let got = table.column(id).unwrap()[k];
                assert!(
                    close(got, want, 1e-9),
                    "{id} at row {row}, r {r}: {got} vs {want}"
                );
            }
        }
        if r == 2.0 {
            let lin = table.column(FeatureId::Linearity).unwrap();
            let sph = table.column(FeatureId::Sphericity).unwrap();
            assert!(lin.iter().all(|l| *l < 0.05), "isotropic cloud");
            assert!(sph.iter().all(|s| *s > 0.9));
        }
    }
}

#[test]
fn subset_rows_equal_full_table_rows() {
    let pts = uniform_ball(1500, 2.0, 4);
    let cloud = PointCloud::from_points(pts, Epoch::PreEvent).unwrap();
    let index = SpatialIndex::build(&cloud).unwrap();
    let full = compute_features(&cloud, &index, 0.6, &FeatureId::ALL).unwrap();
    let rows = vec![7, 3, 1499, 0, 640, 7];
    let part = compute_features_at(&cloud, &index, 0.6, &FeatureId::ALL, &rows).unwrap();
    for id in FeatureId::ALL {
        if let Some(col) = full.column(id) {
            let sub = part.column(id).unwrap();
            for (k, &row) in rows.iter().enumerate() {
                assert!(col[row].to_bits() == sub[k].to_bits(), "{id} row {row}");
            }
        }
    }
    for (k, &row) in rows.iter().enumerate() {
        assert_eq!(full.normals().unwrap()[row], part.normals().unwrap()[k]);
    }
}

fn random_cloud(seed: u64, n: usize) -> Vec<Point3> {
    let mut rng = stream_rng(seed, &[]);
    (0..n)
        .map(|_| {
            Point3::new(
                rng.random_range(0.0..3.0),
                rng.random_range(0.0..3.0),
                rng.random_range(0.0..1.5),
            )
        })
        .collect()
}

fn features_of(pts: &[Point3], r: f64) -> damagescan_core::FeatureTable {
    let cloud = PointCloud::from_points(pts.to_vec(), Epoch::PreEvent).unwrap();
    let index = SpatialIndex::build(&cloud).unwrap();
    compute_features(&cloud, &index, r, &FeatureId::ALL).unwrap()
}

fn assert_same(
    a: &damagescan_core::FeatureTable,
    b: &damagescan_core::FeatureTable,
    ids: &[FeatureId],
) {
    for &id in ids {
        let (x, y) = (a.column(id).unwrap(), b.column(id).unwrap());
        for i in 0..x.len() {
            assert!(
                (x[i].is_nan() && y[i].is_nan()) || close(x[i], y[i], 1e-6),
                "{id} row {i}: {} vs {}",
                x[i],
                y[i]
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn eigen_features_survive_rigid_motion(
        seed in any::<u64>(),
        axis in (-1.0f64..1.0, -1.0f64..1.0, 0.1f64..1.0),
        angle in -3.0f64..3.0,
        shift in (-50.0f64..50.0, -50.0f64..50.0, -10.0f64..10.0),
    ) {
        let pts = random_cloud(seed, 500);
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(Vector3::new(axis.0, axis.1, axis.2)), angle);
        let t = Vector3::new(shift.0, shift.1, shift.2);
        let moved: Vec<Point3> = pts.iter().map(|p| rot * p + t).collect();
        let ids: Vec<FeatureId> = FeatureId::ALL.into_iter().filter(|f| f.is_rigid_invariant()).collect();
        assert_same(&features_of(&pts, 1.0), &features_of(&moved, 1.0), &ids);
    }

    #[test]
    fn all_scalars_survive_z_rotation(seed in any::<u64>(), angle in -3.0f64..3.0, dx in -50.0f64..50.0, dz in -5.0f64..5.0) {
        let pts = random_cloud(seed, 400);
        let tf = RigidTransform::from_z_rotation(angle, Vector3::new(dx, -dx / 2.0, dz));
        let moved: Vec<Point3> = pts.iter().map(|p| tf.apply(p)).collect();
        let ids: Vec<FeatureId> = FeatureId::ALL.into_iter().filter(|f| *f != FeatureId::NormalVector).collect();
        assert_same(&features_of(&pts, 1.0), &features_of(&moved, 1.0), &ids);
    }

    #[test]
    fn eigen_ordering_and_partition_of_unity(seed in any::<u64>(), r in 0.3f64..2.0) {
        let pts = random_cloud(seed, 300);
        let t = features_of(&pts, r);
        let (l1, l2, l3) = (
            t.column(FeatureId::Lambda1).unwrap(),
            t.column(FeatureId::Lambda2).unwrap(),
            t.column(FeatureId::Lambda3).unwrap(),
        );
        let lin = t.column(FeatureId::Linearity).unwrap();
        let pla = t.column(FeatureId::Planarity).unwrap();
        let sph = t.column(FeatureId::Sphericity).unwrap();
        let zr = t.column(FeatureId::ZRank).unwrap();
        let nn = t.column(FeatureId::NumNeighbors).unwrap();
        for i in 0..pts.len() {
            prop_assert!((0.0..=1.0).contains(&zr[i]));
            for id in [FeatureId::PointDensity2D, FeatureId::SurfaceDensity, FeatureId::VolumeDensity] {
                prop_assert!(t.column(id).unwrap()[i] >= 0.0);
            }
            if nn[i] >= 2.0 {
                prop_assert!(l1[i] >= l2[i] && l2[i] >= l3[i] && l3[i] >= 0.0);
                let n = t.normals().unwrap()[i];
                prop_assert!(((n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt() - 1.0).abs() < 1e-9);
                if l1[i] > 0.0 {
                    prop_assert!((lin[i] + pla[i] + sph[i] - 1.0).abs() < 1e-9);
                }
            } else {
                prop_assert!(l1[i].is_nan());
            }
        }
    }

    #[test]
    fn neighbour_count_grows_with_radius(seed in any::<u64>(), r1 in 0.1f64..2.0, r2 in 0.1f64..2.0) {
        let pts = random_cloud(seed, 300);
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let a = features_of(&pts, lo);
        let b = features_of(&pts, hi);
        let (na, nb) = (a.column(FeatureId::NumNeighbors).unwrap(), b.column(FeatureId::NumNeighbors).unwrap());
        for i in 0..pts.len() {
            prop_assert!(na[i] <= nb[i]);
            let sd = b.column(FeatureId::SurfaceDensity).unwrap()[i];
            let vd = b.column(FeatureId::VolumeDensity).unwrap()[i];
            prop_assert!((sd - nb[i] / (PI * hi * hi)).abs() <= 1e-12 * sd.max(1.0));
            prop_assert!((vd - nb[i] / (4.0 / 3.0 * PI * hi * hi * hi)).abs() <= 1e-12 * vd.max(1.0));
        }
    }
}
