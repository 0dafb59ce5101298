//! Changed/unchanged split of a building's anchor points.
//!
//! Each building is clustered on its own in the (Δcurvature, Δz) plane after
//! z-score standardisation, with two-centre k-means. The cluster whose members
//! lie farther from the origin of the standardised plane is the changed one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::change::ChangeTable;
use crate::error::{Error, Result};
use crate::features::FeatureId;
use crate::rng::stream_rng;

pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans2 {
    /// Cluster index (0 or 1) per sample.
    pub labels: Vec<u8>,
    pub centroids: [[f64; 2]; 2],
    pub iterations: usize,
}

#[inline]
fn d2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Lloyd's algorithm with k = 2 and k-means++ seeding.
///
/// Stops when no assignment changes or after `max_iter` rounds. Fails with
/// [`Error::Degenerate`] when all samples coincide (or fewer than two exist).
pub fn kmeans2(samples: &[[f64; 2]], seed: u64, max_iter: usize) -> Result<KMeans2> {
    if samples.len() < 2 {
        return Err(Error::Degenerate);
    }
    let mut rng = stream_rng(seed, &[0x6b6d]);
    let first = samples[rng.random_range(0..samples.len())];
    let weights: Vec<f64> = samples.iter().map(|s| d2(s, &first)).collect();
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return Err(Error::Degenerate);
    }
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut second = None;
    for (s, w) in samples.iter().zip(&weights) {
        acc += w;
        if *w > 0.0 && acc >= target {
            second = Some(*s);
            break;
        }
    }
    // rounding can leave `acc` a hair below `target`; fall back to the farthest sample
    let second = second.unwrap_or_else(|| {
        let i = (0..samples.len())
            .max_by(|&a, &b| weights[a].total_cmp(&weights[b]).then(b.cmp(&a)))
            .expect("non-empty");
        samples[i]
    });

    let mut centroids = [first, second];
    let mut labels = vec![u8::MAX; samples.len()];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut changed = false;
        for (l, s) in labels.iter_mut().zip(samples) {
            let new = u8::from(d2(s, &centroids[1]) < d2(s, &centroids[0]));
            if *l != new {
                *l = new;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sum = [[0.0f64; 2]; 2];
        let mut count = [0usize; 2];
        for (l, s) in labels.iter().zip(samples) {
            let k = *l as usize;
            sum[k][0] += s[0];
            sum[k][1] += s[1];
            count[k] += 1;
        }
        for k in 0..2 {
            if count[k] > 0 {
                centroids[k] = [sum[k][0] / count[k] as f64, sum[k][1] / count[k] as f64];
            } else {
                // re-seed an empty cluster at the sample farthest from the other centre
                let other = centroids[1 - k];
                let far = (0..samples.len())
                    .max_by(|&a, &b| {
                        d2(&samples[a], &other)
                            .total_cmp(&d2(&samples[b], &other))
                            .then(b.cmp(&a))
                    })
                    .expect("non-empty");
                centroids[k] = samples[far];
            }
        }
    }
    Ok(KMeans2 {
        labels,
        centroids,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeLabel {
    Unchanged,
    Changed,
}

/// Noise floor below which a building is treated as unchanged without clustering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseThreshold {
    /// Height change, meters.
    pub dz: f64,
    /// Curvature change, 1/m.
    pub curvature: f64,
}

impl Default for NoiseThreshold {
    fn default() -> Self {
        Self {
            dz: 0.05,
            curvature: 0.05,
        }
    }
}

impl NoiseThreshold {
    /// Three times the alignment noise for heights, default for curvature.
    pub fn from_alignment_std(std: f64) -> Self {
        Self {
            dz: 3.0 * std,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub labels: Vec<ChangeLabel>,
    /// Centres in standardised (Δcurvature, Δz) space, changed cluster first.
    pub centroids: Option<[[f64; 2]; 2]>,
    pub changed_count: usize,
    pub damaged_share: f64,
    /// True when the building stayed below the noise floor and was not clustered.
    pub below_noise: bool,
}

impl ClusterResult {
    fn all_unchanged(n: usize, below_noise: bool) -> Self {
        Self {
            labels: vec![ChangeLabel::Unchanged; n],
            centroids: None,
            changed_count: 0,
            damaged_share: 0.0,
            below_noise,
        }
    }

    pub fn changed_rows(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == ChangeLabel::Changed)
            .map(|(i, _)| i)
            .collect()
    }

    /// Buildings without changed points skip the classifier and are graded undamaged.
    pub fn bypasses_classifier(&self) -> bool {
        self.changed_count == 0
    }
}

fn finite_mean_std(values: impl Iterator<Item = f64>) -> (f64, f64, usize) {
    let v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return (0.0, 0.0, 0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt(), v.len())
}

/// Splits the anchors of one building into changed and unchanged points.
///
/// `changes` holds the building's rows only and must include curvature.
/// Rows whose curvature change is missing are labelled from their height
/// change alone against the fitted centres.
pub fn extract_changed_points(
    building_id: u32,
    changes: &ChangeTable,
    noise: NoiseThreshold,
    seed: u64,
) -> Result<ClusterResult> {
    if changes.is_empty() {
        return Err(Error::EmptyBuilding(building_id));
    }
    let dc = changes
        .delta(FeatureId::Curvature)
        .ok_or_else(|| Error::FeatureMismatch("change table lacks curvature".into()))?;
    let dz = changes.dz();
    let n = dz.len();

    let (mc, sc, _) = finite_mean_std(dc.iter().copied());
    let (mz, sz, _) = finite_mean_std(dz.iter().copied());
    if sc < noise.curvature && sz < noise.dz {
        return Ok(ClusterResult::all_unchanged(n, true));
    }
    let sc_div = if sc > 0.0 { sc } else { 1.0 };
    let sz_div = if sz > 0.0 { sz } else { 1.0 };

    let mut rows = Vec::with_capacity(n);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        if dc[i].is_finite() && dz[i].is_finite() {
            rows.push(i);
            samples.push([(dc[i] - mc) / sc_div, (dz[i] - mz) / sz_div]);
        }
    }
    let km = match kmeans2(&samples, seed ^ u64::from(building_id), DEFAULT_MAX_ITER) {
        Ok(km) => km,
        Err(Error::Degenerate) => return Ok(ClusterResult::all_unchanged(n, false)),
        Err(e) => return Err(e),
    };

    // Pick the changed cluster by its mean absolute raw change in noise units.
    // In standardised units the bulk of a fully collapsed building sits at the
    // origin and would be mistaken for the unchanged part.
    let mut sum = [[0.0f64; 2]; 2];
    let mut count = [0usize; 2];
    for (l, &i) in km.labels.iter().zip(&rows) {
        sum[*l as usize][0] += dc[i].abs();
        sum[*l as usize][1] += dz[i].abs();
        count[*l as usize] += 1;
    }
    let magnitude = |k: usize| {
        if count[k] == 0 {
            return 0.0;
        }
        let c = count[k] as f64;
        (sum[k][0] / c / noise.curvature.max(f64::MIN_POSITIVE))
            .hypot(sum[k][1] / c / noise.dz.max(f64::MIN_POSITIVE))
    };
    let changed_cluster: u8 = if magnitude(1) > magnitude(0) { 1 } else { 0 };

    let mut labels = vec![ChangeLabel::Unchanged; n];
    for (&i, l) in rows.iter().zip(&km.labels) {
        if *l == changed_cluster {
            labels[i] = ChangeLabel::Changed;
        }
    }
    let cz = [km.centroids[0][1], km.centroids[1][1]];
    for i in 0..n {
        if !dc[i].is_finite() && dz[i].is_finite() {
            let z = (dz[i] - mz) / sz_div;
            let nearest: u8 = u8::from((z - cz[1]).abs() < (z - cz[0]).abs());
            if nearest == changed_cluster {
                labels[i] = ChangeLabel::Changed;
            }
        }
    }
    let changed_count = labels
        .iter()
        .filter(|l| **l == ChangeLabel::Changed)
        .count();
    let c = changed_cluster as usize;
    Ok(ClusterResult {
        labels,
        centroids: Some([km.centroids[c], km.centroids[1 - c]]),
        changed_count,
        damaged_share: changed_count as f64 / n as f64,
        below_noise: false,
    })
}
