//! Labelled pre/post scenes and their on-disk form.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use damagescan_core::rng::stream_rng;
use damagescan_core::{DamageGrade, Point3};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::damage::{apply_damage, DamageParams};
use crate::error::{Error, Result};
use crate::flight::Extent2;
use crate::mesh::TriangleMesh;
use crate::obj::{read_obj, write_obj};
use crate::templates::{generic_base_models, region_base_models, BuildingSpec};

/// Ground margin around the outermost buildings, meters.
pub const GROUND_MARGIN_M: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Building {
    pub id: u32,
    pub mesh: TriangleMesh,
    pub grade: DamageGrade,
    pub base_model_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub buildings: Vec<Building>,
    /// Extent of the ground plane at `z = 0`.
    pub extent: Extent2,
}

impl Scene {
    /// Scene whose ground covers all buildings plus [`GROUND_MARGIN_M`].
    pub fn new(buildings: Vec<Building>) -> Result<Scene> {
        let mut seen = BTreeSet::new();
        for b in &buildings {
            if !seen.insert(b.id) {
                return Err(Error::InvalidScene(format!(
                    "duplicate building id {}",
                    b.id
                )));
            }
        }
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for b in &buildings {
            let bb = b.mesh.bbox();
            if bb.is_empty() {
                continue;
            }
            min = [min[0].min(bb.min.x), min[1].min(bb.min.y)];
            max = [max[0].max(bb.max.x), max[1].max(bb.max.y)];
        }
        let extent = if min[0].is_finite() {
            Extent2::new(min, max).expanded(GROUND_MARGIN_M)
        } else {
            Extent2::new([0.0; 2], [0.0; 2])
        };
        Ok(Scene { buildings, extent })
    }

    pub fn is_empty(&self) -> bool {
        self.buildings.is_empty()
    }

    pub fn len(&self) -> usize {
        self.buildings.len()
    }

    pub fn building(&self, id: u32) -> Option<&Building> {
        self.buildings.iter().find(|b| b.id == id)
    }

    pub fn max_height(&self) -> f64 {
        self.buildings
            .iter()
            .map(|b| b.mesh.max_height())
            .fold(0.0, f64::max)
    }
}

/// The same buildings before and after the event.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    pub pre: Scene,
    pub post: Scene,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenePreset {
    /// Mixed building stock, not tied to a region.
    Generic,
    /// Historic-centre stock with heavier collapse patterns.
    RegionSpecific,
}

impl ScenePreset {
    pub fn base_models(self, n: usize, seed: u64) -> Vec<BuildingSpec> {
        let mut rng = stream_rng(seed, &[0xba5e]);
        match self {
            ScenePreset::Generic => generic_base_models(n, &mut rng),
            ScenePreset::RegionSpecific => region_base_models(n, &mut rng),
        }
    }

    pub fn damage_params(self) -> DamageParams {
        let mut p = DamageParams::default();
        if self == ScenePreset::RegionSpecific {
            p.heavy.holes_min = 6;
            p.heavy.holes_max = 12;
            p.extreme.fraction_min = 0.3;
            p.destruction.height_min = 0.15;
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentParams {
    /// Per-axis scale range.
    pub scale_min: f64,
    pub scale_max: f64,
    /// Chance of each part modification (stories, roof form; wing at half rate).
    pub part_probability: f64,
    /// Clear gap between neighbouring grid cells, meters.
    pub gap_m: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            scale_min: 0.8,
            scale_max: 1.3,
            part_probability: 0.3,
            gap_m: 8.0,
        }
    }
}

/// A building template: parametric, or a fixed mesh loaded from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseModel {
    Parametric(BuildingSpec),
    Mesh(TriangleMesh),
}

impl BaseModel {
    fn instantiate<R: Rng>(&self, rng: &mut R, p: &AugmentParams) -> TriangleMesh {
        let mut mesh = match self {
            BaseModel::Parametric(spec) => spec.modified(rng, p.part_probability).to_mesh(),
            BaseModel::Mesh(m) => m.clone(),
        };
        let s = [
            rng.random_range(p.scale_min..=p.scale_max),
            rng.random_range(p.scale_min..=p.scale_max),
            rng.random_range(p.scale_min..=p.scale_max),
        ];
        mesh.map_vertices(|v| Point3::new(v.x * s[0], v.y * s[1], v.z * s[2]));
        mesh
    }
}

/// Builds `4 · per_grade_count` buildings from the base models, a quarter per
/// grade. Every base model appears equally often in each grade. The pre scene
/// holds the intact buildings, the post scene the damaged ones at identical
/// positions.
pub fn augment_buildings(
    base_models: &[BaseModel],
    per_grade_count: usize,
    augment: &AugmentParams,
    damage: &DamageParams,
    seed: u64,
) -> Result<ScenePair> {
    if base_models.is_empty() {
        return Err(Error::InvalidScene("no base models".into()));
    }
    if !(augment.scale_min > 0.0 && augment.scale_min <= augment.scale_max) {
        return Err(Error::InvalidScene(
            "scale range must be positive and ordered".into(),
        ));
    }
    damage.validate()?;
    let n = DamageGrade::COUNT * per_grade_count;
    let local = (0..n)
        .into_par_iter()
        .map(|b| {
            let grade = DamageGrade::ALL[b % DamageGrade::COUNT];
            let base = (b / DamageGrade::COUNT) % base_models.len();
            let mut rng = stream_rng(seed, &[0xa6, b as u64]);
            let mesh = base_models[base].instantiate(&mut rng, augment);
            let damaged = apply_damage(&mesh, grade, damage, rng.random())?;
            Ok((base as u32, grade, mesh, damaged))
        })
        .collect::<Result<Vec<_>>>()?;

    // grid layout with shuffled cells and random yaw
    let cell = local
        .iter()
        .map(|(_, _, m, _)| {
            let e = m.bbox().extent();
            e.x.hypot(e.y)
        })
        .fold(0.0, f64::max)
        + augment.gap_m;
    let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
    let mut slots: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, &[0x1a7]);
    slots.shuffle(&mut rng);
    let mut pre = Vec::with_capacity(n);
    let mut post = Vec::with_capacity(n);
    for (b, (base, grade, mesh, damaged)) in local.into_iter().enumerate() {
        let slot = slots[b];
        let (cx, cy) = ((slot % cols) as f64 * cell, (slot / cols) as f64 * cell);
        let yaw: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let (s, c) = yaw.sin_cos();
        let place = |v: &Point3| Point3::new(cx + v.x * c - v.y * s, cy + v.x * s + v.y * c, v.z);
        let (mut mesh, mut damaged) = (mesh, damaged);
        mesh.map_vertices(place);
        damaged.map_vertices(place);
        let id = b as u32 + 1;
        pre.push(Building {
            id,
            mesh,
            grade: DamageGrade::NoDamage,
            base_model_id: base,
        });
        post.push(Building {
            id,
            mesh: damaged,
            grade,
            base_model_id: base,
        });
    }
    let pre = Scene::new(pre)?;
    let mut post = Scene::new(post)?;
    // both epochs share one ground plane
    post.extent = pre.extent;
    Ok(ScenePair { pre, post })
}

/// Preset scene with `n_base` procedural base models.
pub fn generate_scene(
    preset: ScenePreset,
    n_base: usize,
    per_grade_count: usize,
    seed: u64,
) -> Result<ScenePair> {
    generate_scene_with(
        preset,
        n_base,
        per_grade_count,
        &preset.damage_params(),
        seed,
    )
}

/// Like [`generate_scene`] with explicit damage operator ranges.
pub fn generate_scene_with(
    preset: ScenePreset,
    n_base: usize,
    per_grade_count: usize,
    damage: &DamageParams,
    seed: u64,
) -> Result<ScenePair> {
    let bases: Vec<BaseModel> = preset
        .base_models(n_base, seed)
        .into_iter()
        .map(BaseModel::Parametric)
        .collect();
    augment_buildings(
        &bases,
        per_grade_count,
        &AugmentParams::default(),
        damage,
        seed,
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: u32,
    pub file: String,
    pub grade: DamageGrade,
    pub base_model_id: u32,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `building_<id>.obj` per building and `manifest.json` into `dir`.
pub fn write_scene(dir: &Path, scene: &Scene) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(scene.len());
    for b in &scene.buildings {
        let file = format!("building_{}.obj", b.id);
        write_obj(&dir.join(&file), &b.mesh, &format!("building_{}", b.id))?;
        entries.push(ManifestEntry {
            id: b.id,
            file,
            grade: b.grade,
            base_model_id: b.base_model_id,
        });
    }
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&entries).expect("manifest serialises");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Reads a scene from a manifest; OBJ paths are relative to the manifest.
pub fn read_scene(manifest: &Path) -> Result<Scene> {
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let buildings = read_manifest(manifest)?
        .into_iter()
        .map(|e| {
            Ok(Building {
                id: e.id,
                mesh: read_obj(&dir.join(&e.file))?,
                grade: e.grade,
                base_model_id: e.base_model_id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Scene::new(buildings)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_per_grade() {
        let pair = generate_scene(ScenePreset::Generic, 3, 2, 7).unwrap();
        assert_eq!(pair.post.len(), 8);
        for g in DamageGrade::ALL {
            assert_eq!(
                pair.post.buildings.iter().filter(|b| b.grade == g).count(),
                2
            );
        }
        assert!(pair
            .pre
            .buildings
            .iter()
            .all(|b| b.grade == DamageGrade::NoDamage));
        for (a, b) in pair.pre.buildings.iter().zip(&pair.post.buildings) {
            assert_eq!(a.id, b.id);
            if b.grade == DamageGrade::NoDamage {
                assert_eq!(a.mesh, b.mesh);
            }
        }
    }

    #[test]
    fn single_base_single_per_grade() {
        let pair = generate_scene(ScenePreset::RegionSpecific, 1, 1, 0).unwrap();
        assert_eq!(pair.pre.len(), 4);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let b = Building {
            id: 1,
            mesh: TriangleMesh::default(),
            grade: DamageGrade::NoDamage,
            base_model_id: 0,
        };
        assert!(Scene::new(vec![b.clone(), b]).is_err());
    }

    #[test]
    fn disk_round_trip() {
        let pair = generate_scene(ScenePreset::Generic, 2, 1, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_scene(dir.path(), &pair.post).unwrap();
        let back = read_scene(&manifest).unwrap();
        assert_eq!(back.len(), pair.post.len());
        for (a, b) in back.buildings.iter().zip(&pair.post.buildings) {
            assert_eq!(
                (a.id, a.grade, a.base_model_id),
                (b.id, b.grade, b.base_model_id)
            );
            assert_eq!(a.mesh.vertices, b.mesh.vertices);
            for part in crate::mesh::Part::ALL {
                assert!((a.mesh.part_area(part) - b.mesh.part_area(part)).abs() < 1e-9);
            }
        }
    }
}
