//! Cross-source robustness of change features and neighbourhood-radius selection.
//!
//! Two sources (say laser scanning and image matching) observe the same pair
//! of scene states. A change feature is robust when its mean absolute change
//! agrees between the sources: `rel_diff = |m_A − m_B| / max(|m_A|, ε) · 100`.

use serde::{Deserialize, Serialize};

use crate::change::{compute_change, ChangeTable};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::features::{compute_features, FeatureId};
use crate::index::SpatialIndex;

pub const DEFAULT_THRESHOLD_PERCENT: f64 = 10.0;
pub const DEFAULT_RADII: [f64; 7] = [1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0];
const EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCell {
    pub feature: FeatureId,
    pub radius: f64,
    pub rel_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub threshold: f64,
    pub radii: Vec<f64>,
    pub table: Vec<RobustnessCell>,
    pub selected_features: Vec<FeatureId>,
    pub selected_radius: Option<f64>,
    /// Provenance of the two sources, e.g. a note that they are simulated surrogates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// A pre/post pair of clouds from one acquisition source.
#[derive(Debug, Clone, Copy)]
pub struct EpochPair<'a> {
    pub pre: &'a PointCloud,
    pub post: &'a PointCloud,
}

/// Mean `|Δf|` over rows with a finite value.
pub fn mean_abs_change(table: &ChangeTable, id: FeatureId) -> Option<f64> {
    let col = table.delta(id)?;
    let (sum, n) = col
        .iter()
        .filter(|v| v.is_finite())
        .fold((0.0, 0usize), |(s, n), v| (s + v.abs(), n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn relative_difference(m_a: f64, m_b: f64) -> f64 {
    (m_a - m_b).abs() / m_a.abs().max(EPS) * 100.0
}

/// Percent difference of mean absolute change per feature between two change tables.
pub fn rel_diff_from_changes(
    a: &ChangeTable,
    b: &ChangeTable,
    features: &[FeatureId],
) -> Result<Vec<(FeatureId, f64)>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("change table has no rows".into()));
    }
    features
        .iter()
        .map(|&f| {
            if a.delta(f).is_none() || b.delta(f).is_none() {
                return Err(Error::FeatureMismatch(format!(
                    "feature `{f}` missing from change table"
                )));
            }
            // all-missing columns give NaN, which is never selected
            let rel = match (mean_abs_change(a, f), mean_abs_change(b, f)) {
                (Some(ma), Some(mb)) => relative_difference(ma, mb),
                _ => f64::NAN,
            };
            Ok((f, rel))
        })
        .collect()
}

fn change_at(pair: EpochPair<'_>, r: f64, features: &[FeatureId]) -> Result<ChangeTable> {
    let ia = SpatialIndex::build(pair.pre)?;
    let ib = SpatialIndex::build(pair.post)?;
    let fa = compute_features(pair.pre, &ia, r, features)?;
    let fb = compute_features(pair.post, &ib, r, features)?;
    compute_change(pair.pre, &fa, pair.post, &fb, &ib)
}

/// Evaluates every (feature, radius) cell. Selection fields are left empty;
/// see [`select_robust_features`].
pub fn relative_change_difference(
    pair_a: EpochPair<'_>,
    pair_b: EpochPair<'_>,
    radii: &[f64],
    features: &[FeatureId],
) -> Result<RobustnessReport> {
    if radii.is_empty() || features.is_empty() {
        return Err(Error::EmptyInput("no radii or features to evaluate".into()));
    }
    let mut table = Vec::with_capacity(radii.len() * features.len());
    for &r in radii {
        let ca = change_at(pair_a, r, features)?;
        let cb = change_at(pair_b, r, features)?;
        for (feature, rel_diff) in rel_diff_from_changes(&ca, &cb, features)? {
            table.push(RobustnessCell {
                feature,
                radius: r,
                rel_diff,
            });
        }
        log::info!("robustness: radius {r} m evaluated");
    }
    Ok(RobustnessReport {
        threshold: DEFAULT_THRESHOLD_PERCENT,
        radii: radii.to_vec(),
        table,
        selected_features: Vec::new(),
        selected_radius: None,
        label: None,
    })
}

/// Picks the radius with the lowest summed relative difference (ties: smaller
/// radius) and keeps the features whose difference at that radius is within
/// `threshold_percent`.
pub fn select_robust_features(
    report: &RobustnessReport,
    threshold_percent: f64,
) -> Result<(Vec<FeatureId>, f64)> {
    if report.table.is_empty() {
        return Err(Error::EmptyInput("robustness report has no cells".into()));
    }
    let mut radii: Vec<f64> = report.table.iter().map(|c| c.radius).collect();
    radii.sort_by(f64::total_cmp);
    radii.dedup();
    let total = |r: f64| -> f64 {
        report
            .table
            .iter()
            .filter(|c| c.radius == r && c.rel_diff.is_finite())
            .map(|c| c.rel_diff)
            .sum()
    };
    let radius = radii
        .iter()
        .copied()
        .min_by(|a, b| total(*a).total_cmp(&total(*b)))
        .expect("non-empty");
    let mut features: Vec<FeatureId> = report
        .table
        .iter()
        .filter(|c| c.radius == radius && c.rel_diff <= threshold_percent)
        .map(|c| c.feature)
        .collect();
    features.dedup();
    if features.is_empty() {
        log::warn!("no feature within {threshold_percent}% relative change difference at radius {radius} m");
    }
    Ok((features, radius))
}

impl RobustnessReport {
    /// Copy of the report with the selection for `threshold_percent` filled in.
    pub fn with_selection(&self, threshold_percent: f64) -> Result<RobustnessReport> {
        let (features, radius) = select_robust_features(self, threshold_percent)?;
        Ok(RobustnessReport {
            threshold: threshold_percent,
            selected_features: features,
            selected_radius: Some(radius),
            ..self.clone()
        })
    }

    pub fn rel_diff(&self, feature: FeatureId, radius: f64) -> Option<f64> {
        self.table
            .iter()
            .find(|c| c.feature == feature && c.radius == radius)
            .map(|c| c.rel_diff)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(cells: &[(FeatureId, f64, f64)]) -> RobustnessReport {
        RobustnessReport {
            threshold: 10.0,
            radii: vec![],
            table: cells
                .iter()
                .map(|&(feature, radius, rel_diff)| RobustnessCell {
                    feature,
                    radius,
                    rel_diff,
                })
                .collect(),
            selected_features: vec![],
            selected_radius: None,
            label: None,
        }
    }

    #[test]
    fn five_and_twenty_percent() {
        let r = report(&[
            (FeatureId::Planarity, 1.0, 5.0),
            (FeatureId::Roughness, 1.0, 20.0),
        ]);
        let (sel, radius) = select_robust_features(&r, 10.0).unwrap();
        assert_eq!(sel, vec![FeatureId::Planarity]);
        assert_eq!(radius, 1.0);
    }

    #[test]
    fn zero_threshold_selects_nothing() {
        let r = report(&[
            (FeatureId::Planarity, 1.0, 0.5),
            (FeatureId::Roughness, 1.0, 2.0),
        ]);
        assert!(select_robust_features(&r, 0.0).unwrap().0.is_empty());
    }

    #[test]
    fn radius_with_lowest_total_wins() {
        let r = report(&[
            (FeatureId::Planarity, 1.0, 5.0),
            (FeatureId::Roughness, 1.0, 30.0),
            (FeatureId::Planarity, 2.0, 9.0),
            (FeatureId::Roughness, 2.0, 12.0),
        ]);
        let (sel, radius) = select_robust_features(&r, 10.0).unwrap();
        assert_eq!(radius, 2.0);
        assert_eq!(sel, vec![FeatureId::Planarity]);
    }

    #[test]
    fn empty_report() {
        assert!(matches!(
            select_robust_features(&report(&[]), 10.0),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn relative_difference_normalises_by_first_source() {
        assert!((relative_difference(2.0, 2.1) - 5.0).abs() < 1e-9);
        assert!((relative_difference(2.0, 2.4) - 20.0).abs() < 1e-9);
        assert_eq!(relative_difference(0.0, 0.0), 0.0);
    }

    #[test]
    fn json_shape() {
        let r = report(&[(FeatureId::ZRank, 1.5, 3.0)])
            .with_selection(10.0)
            .unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["table"][0]["feature"], "z_rank");
        assert_eq!(v["selected_radius"], 1.5);
        assert_eq!(v["selected_features"][0], "z_rank");
        assert_eq!(v["threshold"], 10.0);
    }
}
