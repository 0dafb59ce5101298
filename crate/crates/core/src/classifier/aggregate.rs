use serde::{Deserialize, Serialize};

use crate::change::ChangeTable;
use crate::cluster::{ChangeLabel, ClusterResult};
use crate::error::{Error, Result};
use crate::features::FeatureId;

pub const STATISTICS: [&str; 5] = ["mean", "median", "std", "p10", "p90"];
pub const DAMAGED_SHARE: &str = "damaged_share";

/// Per-building input row of the classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingFeatureVector {
    pub building_id: u32,
    pub values: Vec<f64>,
}

/// Outcome of aggregation: either a vector or the signal that the building
/// has no changed points and is graded undamaged without classification.
#[derive(Debug, Clone, PartialEq)]
pub enum Aggregate {
    Vector(BuildingFeatureVector),
    BypassNoDamage,
}

/// Column names matching [`aggregate_building_vector`] output.
pub fn vector_names(selected: &[FeatureId]) -> Vec<String> {
    let mut names = Vec::with_capacity(STATISTICS.len() * selected.len() + 1);
    for f in selected {
        let base = if *f == FeatureId::NormalVector {
            "normal_angle"
        } else {
            f.name()
        };
        for s in STATISTICS {
            names.push(format!("{base}_{s}"));
        }
    }
    names.push(DAMAGED_SHARE.to_string());
    names
}

/// Percentile with linear interpolation between closest ranks, `p` in `[0, 1]`.
/// `sorted` must be ascending and non-empty.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// `[mean, median, std, p10, p90]` of the finite values; zeros if none.
pub fn summary_statistics(values: &[f64]) -> [f64; 5] {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return [0.0; 5];
    }
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    // offset by the minimum so a constant column has an exact mean and zero spread
    let mean = v[0] + v.iter().map(|x| x - v[0]).sum::<f64>() / n;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    [
        mean,
        percentile_sorted(&v, 0.5),
        std,
        percentile_sorted(&v, 0.1),
        percentile_sorted(&v, 0.9),
    ]
}

pub fn aggregate_building_vector(
    building_id: u32,
    result: &ClusterResult,
    changes: &ChangeTable,
    selected: &[FeatureId],
) -> Result<Aggregate> {
    if result.labels.len() != changes.len() {
        return Err(Error::LengthMismatch {
            left: result.labels.len(),
            right: changes.len(),
        });
    }
    if result.changed_count == 0 {
        return Ok(Aggregate::BypassNoDamage);
    }
    let rows: Vec<usize> = result
        .labels
        .iter()
        .enumerate()
        .filter(|(_, l)| **l == ChangeLabel::Changed)
        .map(|(i, _)| i)
        .collect();
    let mut values = Vec::with_capacity(STATISTICS.len() * selected.len() + 1);
    let mut buf = Vec::with_capacity(rows.len());
    for &f in selected {
        let col = changes
            .delta(f)
            .ok_or_else(|| Error::FeatureMismatch(format!("change table lacks `{f}`")))?;
        buf.clear();
        buf.extend(rows.iter().map(|&i| col[i]));
        values.extend(summary_statistics(&buf));
    }
    values.push(result.damaged_share);
    Ok(Aggregate::Vector(BuildingFeatureVector {
        building_id,
        values,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_to_five() {
        let s = summary_statistics(&[5.0, 1.0, 4.0, 2.0, 3.0]);
        assert_eq!(s[0], 3.0);
        assert_eq!(s[1], 3.0);
        assert!((s[2] - 2f64.sqrt()).abs() < 1e-12);
        assert!((s[3] - 1.4).abs() < 1e-12);
        assert!((s[4] - 4.6).abs() < 1e-12);
    }

    #[test]
    fn constant_column() {
        let s = summary_statistics(&[0.7; 9]);
        assert_eq!(s, [0.7, 0.7, 0.0, 0.7, 0.7]);
    }

    #[test]
    fn missing_values_ignored() {
        let s = summary_statistics(&[f64::NAN, 2.0, f64::NAN]);
        assert_eq!(s, [2.0, 2.0, 0.0, 2.0, 2.0]);
        assert_eq!(summary_statistics(&[f64::NAN]), [0.0; 5]);
    }

    #[test]
    fn names() {
        let n = vector_names(&[FeatureId::Planarity, FeatureId::NormalVector]);
        assert_eq!(n.len(), 11);
        assert_eq!(n[0], "planarity_mean");
        assert_eq!(n[9], "normal_angle_p90");
        assert_eq!(n[10], "damaged_share");
    }
}
