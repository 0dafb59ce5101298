//! Per-point feature change between a pre-event and a post-event epoch.
//!
//! Rows are anchored on pre-event points. Scalar deltas are `post − pre`
//! where the post value is taken at the 3D nearest post point; the height
//! change uses the planimetric (xy) nearest post point instead, so that a
//! collapsed roof reads as a negative height change rather than as the
//! distance to a surviving wall.

use indexmap::IndexMap;
use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::features::{FeatureId, FeatureTable, MISSING};
use crate::index::{QueryMode, SpatialIndex};

pub const NORMAL_ANGLE_PROPERTY: &str = "d_normal_angle";
pub const DZ_PROPERTY: &str = "d_z";
pub const NN_DISTANCE_PROPERTY: &str = "nn_distance";

#[derive(Debug, Clone, PartialEq)]
pub struct ChangeTable {
    radius: f64,
    ids: Vec<FeatureId>,
    deltas: IndexMap<FeatureId, Vec<f64>>,
    normal_angle: Option<Vec<f64>>,
    dz: Vec<f64>,
    nn_distance: Vec<f64>,
}

impl ChangeTable {
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn ids(&self) -> &[FeatureId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.dz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dz.is_empty()
    }

    /// Change column of a feature. For [`FeatureId::NormalVector`] this is the
    /// angle between the two normals in degrees, in `[0, 90]`.
    pub fn delta(&self, id: FeatureId) -> Option<&[f64]> {
        if id == FeatureId::NormalVector {
            self.normal_angle.as_deref()
        } else {
            self.deltas.get(&id).map(Vec::as_slice)
        }
    }

    pub fn normal_angle(&self) -> Option<&[f64]> {
        self.normal_angle.as_deref()
    }

    /// Vertical displacement to the planimetric nearest post point, meters.
    pub fn dz(&self) -> &[f64] {
        &self.dz
    }

    pub fn nn_distance(&self) -> &[f64] {
        &self.nn_distance
    }

    pub fn property_name(id: FeatureId) -> String {
        if id == FeatureId::NormalVector {
            NORMAL_ANGLE_PROPERTY.to_string()
        } else {
            format!("d_{}", id.name())
        }
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> ChangeTable {
        let pick = |v: &Vec<f64>| indices.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        ChangeTable {
            radius: self.radius,
            ids: self.ids.clone(),
            deltas: self.deltas.iter().map(|(k, v)| (*k, pick(v))).collect(),
            normal_angle: self.normal_angle.as_ref().map(pick),
            dz: pick(&self.dz),
            nn_distance: pick(&self.nn_distance),
        }
    }

    /// Appends `other`'s rows. Both tables must carry the same features.
    pub fn extend_from(&mut self, other: &ChangeTable) -> Result<()> {
        if self.ids != other.ids || self.radius != other.radius {
            return Err(Error::FeatureMismatch(
                "cannot concatenate change tables".into(),
            ));
        }
        for (k, v) in self.deltas.iter_mut() {
            v.extend_from_slice(&other.deltas[k]);
        }
        if let (Some(a), Some(b)) = (&mut self.normal_angle, &other.normal_angle) {
            a.extend_from_slice(b);
        }
        self.dz.extend_from_slice(&other.dz);
        self.nn_distance.extend_from_slice(&other.nn_distance);
        Ok(())
    }

    /// Writes `d_<feature>`, `d_normal_angle`, `d_z` and `nn_distance` columns.
    pub fn attach_to(&self, cloud: &mut PointCloud) -> Result<()> {
        for id in &self.ids {
            if let Some(col) = self.delta(*id) {
                cloud.set_attribute(Self::property_name(*id), col.to_vec())?;
            }
        }
        cloud.set_attribute(DZ_PROPERTY, self.dz.clone())?;
        cloud.set_attribute(NN_DISTANCE_PROPERTY, self.nn_distance.clone())?;
        Ok(())
    }

    pub fn from_cloud(cloud: &PointCloud, radius: f64, ids: &[FeatureId]) -> Result<ChangeTable> {
        let get = |name: &str| {
            cloud
                .attribute(name)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::FeatureMismatch(format!("cloud has no `{name}` column")))
        };
        let mut deltas = IndexMap::new();
        let mut normal_angle = None;
        for &id in ids {
            let col = get(&Self::property_name(id))?;
            if id == FeatureId::NormalVector {
                normal_angle = Some(col);
            } else {
                deltas.insert(id, col);
            }
        }
        Ok(ChangeTable {
            radius,
            ids: ids.to_vec(),
            deltas,
            normal_angle,
            dz: get(DZ_PROPERTY)?,
            nn_distance: get(NN_DISTANCE_PROPERTY)?,
        })
    }
}

fn same_feature_set(a: &[FeatureId], b: &[FeatureId]) -> bool {
    a.len() == b.len() && a.iter().all(|f| b.contains(f))
}

/// Feature change for every pre-event point. `post_index` must index `post`.
pub fn compute_change(
    pre: &PointCloud,
    pre_features: &FeatureTable,
    post: &PointCloud,
    post_features: &FeatureTable,
    post_index: &SpatialIndex,
) -> Result<ChangeTable> {
    if pre_features.radius() != post_features.radius() {
        return Err(Error::FeatureMismatch(format!(
            "radius {} vs {}",
            pre_features.radius(),
            post_features.radius()
        )));
    }
    if !same_feature_set(pre_features.ids(), post_features.ids()) {
        return Err(Error::FeatureMismatch(
            "pre and post feature sets differ".into(),
        ));
    }
    if pre_features.len() != pre.len()
        || post_features.len() != post.len()
        || post_index.len() != post.len()
    {
        return Err(Error::FeatureMismatch(
            "feature tables do not match their clouds".into(),
        ));
    }
    let ids = pre_features.ids().to_vec();

    let pairs: Vec<(usize, f64, usize)> = pre
        .points()
        .par_iter()
        .map(|p| {
            let (j3, d3) = post_index.nearest_neighbor(p, QueryMode::Ball3D);
            let (j2, _) = post_index.nearest_neighbor(p, QueryMode::Disc2D);
            (j3, d3, j2)
        })
        .collect();

    let mut deltas = IndexMap::new();
    let mut normal_angle = None;
    for &id in &ids {
        if id == FeatureId::NormalVector {
            let (a, b) = (
                pre_features.normals().expect("normals present"),
                post_features.normals().expect("normals present"),
            );
            normal_angle = Some(
                pairs
                    .iter()
                    .enumerate()
                    .map(|(i, &(j, _, _))| normal_angle_deg(&a[i], &b[j]))
                    .collect(),
            );
        } else {
            let (a, b) = (
                pre_features.column(id).expect("column present"),
                post_features.column(id).expect("column present"),
            );
            deltas.insert(
                id,
                pairs
                    .iter()
                    .enumerate()
                    .map(|(i, &(j, _, _))| b[j] - a[i])
                    .collect(),
            );
        }
    }
    let dz = pairs
        .iter()
        .enumerate()
        .map(|(i, &(_, _, j2))| post.point(j2).z - pre.point(i).z)
        .collect();
    let nn_distance = pairs.iter().map(|&(_, d, _)| d).collect();
    Ok(ChangeTable {
        radius: pre_features.radius(),
        ids,
        deltas,
        normal_angle,
        dz,
        nn_distance,
    })
}

/// Unsigned angle between two normal directions, degrees in `[0, 90]`.
pub fn normal_angle_deg(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return MISSING;
    }
    let dot = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).abs().min(1.0);
    dot.acos().to_degrees()
}
