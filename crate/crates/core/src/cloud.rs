//! Epoch-tagged point clouds with named per-point scalar columns.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in a projected coordinate system, meters.
pub type Point3 = nalgebra::Point3<f64>;

/// Acquisition epoch of a cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Epoch {
    PreEvent,
    PostEvent,
}

impl Epoch {
    pub fn tag(self) -> &'static str {
        match self {
            Epoch::PreEvent => "pre",
            Epoch::PostEvent => "post",
        }
    }
}

impl fmt::Display for Epoch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Epoch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pre" => Ok(Epoch::PreEvent),
            "post" => Ok(Epoch::PostEvent),
            other => Err(Error::Parse(format!("unknown epoch `{other}`"))),
        }
    }
}

/// Ordered 3D points plus optional per-point columns.
///
/// Attribute columns always hold exactly one value per point. Building ids
/// are optional per point: `None` marks points that belong to no building
/// (ground, vegetation).
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    attributes: IndexMap<String, Vec<f64>>,
    building_ids: Option<Vec<Option<u32>>>,
    epoch: Epoch,
}

impl PointCloud {
    pub fn new(epoch: Epoch) -> Self {
        Self {
            points: Vec::new(),
            attributes: IndexMap::new(),
            building_ids: None,
            epoch,
        }
    }

    /// Builds a cloud from bare coordinates. Fails on non-finite coordinates.
    pub fn from_points(points: Vec<Point3>, epoch: Epoch) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !is_finite(p)) {
            return Err(Error::InvalidCloud(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        Ok(Self {
            points,
            attributes: IndexMap::new(),
            building_ids: None,
            epoch,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn epoch(&self) -> Epoch {
        self.epoch
    }

    pub fn set_epoch(&mut self, epoch: Epoch) {
        self.epoch = epoch;
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Point3 {
        self.points[i]
    }

    /// Appends a point; every attribute column receives `NaN` and the
    /// building id column (if present) receives `None`.
    pub fn push(&mut self, p: Point3) -> Result<()> {
        if !is_finite(&p) {
            return Err(Error::InvalidCloud("non-finite coordinate".into()));
        }
        self.points.push(p);
        for column in self.attributes.values_mut() {
            column.push(f64::NAN);
        }
        if let Some(ids) = &mut self.building_ids {
            ids.push(None);
        }
        Ok(())
    }

    pub fn attribute(&self, name: &str) -> Option<&[f64]> {
        self.attributes.get(name).map(Vec::as_slice)
    }

    pub fn attribute_names(&self) -> impl Iterator<Item = &str> {
        self.attributes.keys().map(String::as_str)
    }

    pub fn attributes(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.attributes
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Inserts or replaces a column. The column must have one value per point.
    pub fn set_attribute(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if values.len() != self.points.len() {
            return Err(Error::InvalidCloud(format!(
                "attribute `{name}` has {} values for {} points",
                values.len(),
                self.points.len()
            )));
        }
        self.attributes.insert(name, values);
        Ok(())
    }

    pub fn remove_attribute(&mut self, name: &str) -> Option<Vec<f64>> {
        self.attributes.shift_remove(name)
    }

    pub fn building_ids(&self) -> Option<&[Option<u32>]> {
        self.building_ids.as_deref()
    }

    pub fn building_id(&self, i: usize) -> Option<u32> {
        self.building_ids.as_ref().and_then(|ids| ids[i])
    }

    pub fn set_building_ids(&mut self, ids: Vec<Option<u32>>) -> Result<()> {
        if ids.len() != self.points.len() {
            return Err(Error::InvalidCloud(format!(
                "{} building ids for {} points",
                ids.len(),
                self.points.len()
            )));
        }
        self.building_ids = Some(ids);
        Ok(())
    }

    pub fn clear_building_ids(&mut self) {
        self.building_ids = None;
    }

    /// New cloud holding the rows at `indices` (in that order), all columns carried over.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            attributes: self
                .attributes
                .iter()
                .map(|(k, v)| (k.clone(), indices.iter().map(|&i| v[i]).collect()))
                .collect(),
            building_ids: self
                .building_ids
                .as_ref()
                .map(|ids| indices.iter().map(|&i| ids[i]).collect()),
            epoch: self.epoch,
        }
    }

    /// Row indices per building id, in ascending id order. Unlabelled points are skipped.
    pub fn building_rows(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut out: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        if let Some(ids) = &self.building_ids {
            for (i, id) in ids.iter().enumerate() {
                if let Some(id) = id {
                    out.entry(*id).or_default().push(i);
                }
            }
        }
        out
    }

    /// Row indices of points without a building id.
    pub fn unlabeled_rows(&self) -> Vec<usize> {
        match &self.building_ids {
            Some(ids) => (0..ids.len()).filter(|&i| ids[i].is_none()).collect(),
            None => (0..self.points.len()).collect(),
        }
    }

    /// Appends all rows of `other`. Column sets must agree.
    pub fn extend_from(&mut self, other: &PointCloud) -> Result<()> {
        if self.is_empty() && self.attributes.is_empty() && self.building_ids.is_none() {
            let epoch = self.epoch;
            *self = other.clone();
            self.epoch = epoch;
            return Ok(());
        }
        let same_columns = self.attributes.len() == other.attributes.len()
            && self
                .attributes
                .keys()
                .all(|k| other.attributes.contains_key(k));
        if !same_columns || self.building_ids.is_some() != other.building_ids.is_some() {
            return Err(Error::InvalidCloud(
                "cannot merge clouds with different columns".into(),
            ));
        }
        self.points.extend_from_slice(&other.points);
        for (k, v) in self.attributes.iter_mut() {
            v.extend_from_slice(&other.attributes[k]);
        }
        if let (Some(a), Some(b)) = (&mut self.building_ids, &other.building_ids) {
            a.extend_from_slice(b);
        }
        Ok(())
    }

    /// Applies `f` to every coordinate.
    pub fn map_points(&mut self, mut f: impl FnMut(&Point3) -> Point3) {
        for p in &mut self.points {
            *p = f(p);
        }
    }

    /// Mean distance from each point to its nearest other point (brute force
    /// through a spatial index). `None` for clouds with fewer than two points.
    pub fn mean_point_spacing(&self) -> Option<f64> {
        if self.points.len() < 2 {
            return None;
        }
        let index = crate::index::SpatialIndex::build(self).ok()?;
        let total: f64 = self
            .points
            .iter()
            .map(|p| {
                let nn = index.k_nearest(p, 2, crate::index::QueryMode::Ball3D);
                nn[1].1
            })
            .sum();
        Some(total / self.points.len() as f64)
    }
}

fn is_finite(p: &Point3) -> bool {
    p.x.is_finite() && p.y.is_finite() && p.z.is_finite()
}
