//! Voxel-grid subsampling to a target point spacing.

use std::collections::HashMap;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::rng::mix64;

/// Keeps, per occupied voxel of edge `spacing`, the point closest to the
/// voxel centre. Exact distance ties are resolved by a hash of `seed` and
/// the point index. Kept rows retain their original relative order and all
/// columns.
pub fn subsample_to_spacing(cloud: &PointCloud, spacing: f64, seed: u64) -> Result<PointCloud> {
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(Error::InvalidSpacing(spacing));
    }
    let inv = 1.0 / spacing;
    // voxel -> (distance², tie key, row)
    let mut best: HashMap<(i64, i64, i64), (f64, u64, usize)> =
        HashMap::with_capacity(cloud.len() / 2 + 1);
    for (i, p) in cloud.points().iter().enumerate() {
        let key = (
            (p.x * inv).floor() as i64,
            (p.y * inv).floor() as i64,
            (p.z * inv).floor() as i64,
        );
        let cx = (key.0 as f64 + 0.5) * spacing;
        let cy = (key.1 as f64 + 0.5) * spacing;
        let cz = (key.2 as f64 + 0.5) * spacing;
        let d2 = (p.x - cx).powi(2) + (p.y - cy).powi(2) + (p.z - cz).powi(2);
        let tie = mix64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        best.entry(key)
            .and_modify(|b| {
                if d2 < b.0 || (d2 == b.0 && tie < b.1) {
                    *b = (d2, tie, i);
                }
            })
            .or_insert((d2, tie, i));
    }
    let mut rows: Vec<usize> = best.into_values().map(|b| b.2).collect();
    rows.sort_unstable();
    Ok(cloud.select(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{Epoch, Point3};

    fn grid(step: f64, n: usize) -> PointCloud {
        let mut pts = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                pts.push(Point3::new(i as f64 * step, j as f64 * step, 0.0));
            }
        }
        PointCloud::from_points(pts, Epoch::PreEvent).unwrap()
    }

    #[test]
    fn invalid_spacing() {
        let c = grid(1.0, 2);
        assert!(matches!(
            subsample_to_spacing(&c, 0.0, 1),
            Err(Error::InvalidSpacing(_))
        ));
        assert!(matches!(
            subsample_to_spacing(&c, -0.5, 1),
            Err(Error::InvalidSpacing(_))
        ));
    }

    #[test]
    fn fine_spacing_is_a_no_op() {
        let mut c = grid(0.1, 10);
        c.set_attribute("a", (0..100).map(f64::from).collect())
            .unwrap();
        let s = subsample_to_spacing(&c, 0.05, 3).unwrap();
        assert_eq!(s, c);
    }

    #[test]
    fn dense_plane_to_decimetre_spacing() {
        let c = grid(0.01, 301);
        let s = subsample_to_spacing(&c, 0.1, 11).unwrap();
        let spacing = s.mean_point_spacing().unwrap();
        assert!((0.08..=0.12).contains(&spacing), "spacing {spacing}");
    }

    #[test]
    fn deterministic_and_monotone() {
        let c = grid(0.013, 120);
        let a = subsample_to_spacing(&c, 0.1, 5).unwrap();
        assert_eq!(a, subsample_to_spacing(&c, 0.1, 5).unwrap());
        let mut last = c.len();
        for s in [0.025, 0.05, 0.1, 0.2, 0.4] {
            let n = subsample_to_spacing(&c, s, 5).unwrap().len();
            assert!(n <= last);
            last = n;
        }
    }
}
