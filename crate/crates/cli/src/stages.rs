//! File-based stages. Each stage reads the artifacts of earlier stages from
//! the output directory and writes its own; `full_run` chains them.
//!
//! ```text
//! scenes/<set>/scene.json                                     simulate
//! scenes/<set>/{pre,post}/manifest.json + building_<id>.obj   simulate
//! scans/<set>/building_<id>_{pre,post}.ply, alignment.json    simulate
//! robustness.json                                             robust-select
//! features/<set>/building_<id>_{pre,post}.ply                 features
//! change/<set>/building_<id>.ply                              change
//! cluster/<set>/building_<id>.ply, buildings.json             cluster
//! model.json, split.json                                      train
//! predictions.json                                            classify
//! report.{json,csv,md}                                        evaluate
//! ```
//!
//! `<set>` is `train`, plus `eval` when an evaluation scene is configured.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use damagescan_core::classifier::ForestModel;
use damagescan_core::metrics::{emit_report, Report};
use damagescan_core::ply::{read_ply, write_ply, PlyDocument};
use damagescan_core::registration::AlignmentQuality;
use damagescan_core::robustness::{rel_diff_from_changes, RobustnessCell, RobustnessReport};
use damagescan_core::{
    ChangeTable, DamageGrade, Epoch, FeatureId, FeatureTable, NoiseThreshold, PointCloud,
};
use damagescan_vls::scene::{read_manifest, read_scene, write_scene, MANIFEST_FILE};
use damagescan_vls::{ScenePair, ScenePreset};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, Seeds, FALLBACK_RADIUS_M};
use crate::error::{Error, Result};
use crate::pipeline::{
    build_report, classify_records, train_on_records, DataSet, PredictionRecord, TrainingOutcome,
};
use crate::process::{
    building_change_sparse, cluster_building, scene_alignment, sparse_change, sparse_features,
    BuildingRecord, FeatureSettings, PairScanner, SparseFeatures,
};

/// Point attribute marking anchors of the changed cluster.
pub const CHANGED_ATTRIBUTE: &str = "changed";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    RobustSelect,
    Features,
    Change,
    Cluster,
    Train,
    Classify,
    Evaluate,
}

impl Stage {
    /// Order used by `full-run`.
    pub const ALL: [Stage; 8] = [
        Stage::Simulate,
        Stage::RobustSelect,
        Stage::Features,
        Stage::Change,
        Stage::Cluster,
        Stage::Train,
        Stage::Classify,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::RobustSelect => "robust-select",
            Stage::Features => "features",
            Stage::Change => "change",
            Stage::Cluster => "cluster",
            Stage::Train => "train",
            Stage::Classify => "classify",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Config identity stamped into every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seeds: Seeds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub provenance: Provenance,
    #[serde(flatten)]
    pub body: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub set: DataSet,
    pub preset: ScenePreset,
    pub buildings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentFile {
    pub set: DataSet,
    /// Signed distances between the epochs over a building-free ground patch.
    pub ground: AlignmentQuality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingsFile {
    pub set: DataSet,
    pub noise: NoiseThreshold,
    pub buildings: Vec<BuildingRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionsFile {
    pub set: DataSet,
    pub model_config: String,
    pub predictions: Vec<PredictionRecord>,
}

/// An output directory bound to one resolved config.
pub struct Workspace {
    cfg: PipelineConfig,
    out: PathBuf,
    provenance: Provenance,
}

impl Workspace {
    pub fn new(cfg: PipelineConfig) -> Workspace {
        let provenance = Provenance {
            config_hash: cfg.hash(),
            seeds: cfg.seeds(),
        };
        Workspace {
            out: cfg.paths.out_dir.clone(),
            cfg,
            provenance,
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn run(&self, stage: Stage) -> Result<()> {
        log::info!("stage {stage}");
        match stage {
            Stage::Simulate => self.simulate(),
            Stage::RobustSelect => self.robust_select(),
            Stage::Features => self.features(),
            Stage::Change => self.change(),
            Stage::Cluster => self.cluster(),
            Stage::Train => self.train(),
            Stage::Classify => self.classify(),
            Stage::Evaluate => self.evaluate().map(|_| ()),
        }
    }

    pub fn full_run(&self) -> Result<()> {
        Stage::ALL.iter().try_for_each(|s| self.run(*s))
    }

    // ---- paths

    pub fn scene_manifest(&self, set: DataSet, epoch: Epoch) -> PathBuf {
        self.out
            .join("scenes")
            .join(set.name())
            .join(epoch.tag())
            .join(MANIFEST_FILE)
    }

    pub fn scan_path(&self, set: DataSet, id: u32, epoch: Epoch) -> PathBuf {
        self.out
            .join("scans")
            .join(set.name())
            .join(format!("building_{id}_{}.ply", epoch.tag()))
    }

    pub fn scene_path(&self, set: DataSet) -> PathBuf {
        self.out.join("scenes").join(set.name()).join("scene.json")
    }

    pub fn alignment_path(&self, set: DataSet) -> PathBuf {
        self.out
            .join("scans")
            .join(set.name())
            .join("alignment.json")
    }

    pub fn features_path(&self, set: DataSet, id: u32, epoch: Epoch) -> PathBuf {
        self.out
            .join("features")
            .join(set.name())
            .join(format!("building_{id}_{}.ply", epoch.tag()))
    }

    pub fn change_path(&self, set: DataSet, id: u32) -> PathBuf {
        self.out
            .join("change")
            .join(set.name())
            .join(format!("building_{id}.ply"))
    }

    pub fn cluster_path(&self, set: DataSet, id: u32) -> PathBuf {
        self.out
            .join("cluster")
            .join(set.name())
            .join(format!("building_{id}.ply"))
    }

    pub fn buildings_path(&self, set: DataSet) -> PathBuf {
        self.out
            .join("cluster")
            .join(set.name())
            .join("buildings.json")
    }

    pub fn robustness_path(&self) -> PathBuf {
        self.out.join("robustness.json")
    }

    pub fn model_path(&self) -> PathBuf {
        self.out.join("model.json")
    }

    pub fn split_path(&self) -> PathBuf {
        self.out.join("split.json")
    }

    pub fn predictions_path(&self) -> PathBuf {
        self.out.join("predictions.json")
    }

    pub fn report_path(&self) -> PathBuf {
        self.out.join("report.json")
    }

    // ---- I/O helpers

    fn ply_comments(&self, stage: Stage, extra: &[(&str, String)]) -> Vec<String> {
        let mut c = vec![
            format!("stage={stage}"),
            format!("config_hash={}", self.provenance.config_hash),
            format!(
                "seeds={}",
                serde_json::to_string(&self.provenance.seeds).expect("seeds serialise")
            ),
        ];
        c.extend(extra.iter().map(|(k, v)| format!("{k}={v}")));
        c
    }

    fn write_cloud(
        &self,
        path: &Path,
        cloud: &PointCloud,
        stage: Stage,
        extra: &[(&str, String)],
    ) -> Result<()> {
        create_parent(path)?;
        write_ply(path, cloud, &self.ply_comments(stage, extra))?;
        Ok(())
    }

    fn read_cloud(&self, path: &Path, owner: Stage) -> Result<PlyDocument> {
        require(path, owner)?;
        let doc = read_ply(path)?;
        match comment_value(&doc, "config_hash") {
            Some(h) if h == self.provenance.config_hash => {}
            _ => warn_stale(path),
        }
        Ok(doc)
    }

    fn write_json<T: Serialize>(&self, path: &Path, body: T) -> Result<()> {
        create_parent(path)?;
        let stamped = Stamped {
            provenance: self.provenance.clone(),
            body,
        };
        let mut json = serde_json::to_string_pretty(&stamped).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        json.push('\n');
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    fn read_json<T: DeserializeOwned>(&self, path: &Path, owner: Stage) -> Result<T> {
        require(path, owner)?;
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let stamped: Stamped<T> = serde_json::from_str(&s).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        if stamped.provenance.config_hash != self.provenance.config_hash {
            warn_stale(path);
        }
        Ok(stamped.body)
    }

    /// Building ids and ground-truth grades of a set, from the post-event manifest.
    fn manifest(&self, set: DataSet) -> Result<Vec<(u32, DamageGrade)>> {
        let path = self.scene_manifest(set, Epoch::PostEvent);
        require(&path, Stage::Simulate)?;
        Ok(read_manifest(&path)?
            .into_iter()
            .map(|e| (e.id, e.grade))
            .collect())
    }

    fn read_pair(&self, set: DataSet) -> Result<ScenePair> {
        let pre_path = self.scene_manifest(set, Epoch::PreEvent);
        let post_path = self.scene_manifest(set, Epoch::PostEvent);
        require(&pre_path, Stage::Simulate)?;
        require(&post_path, Stage::Simulate)?;
        let pre = read_scene(&pre_path)?;
        let mut post = read_scene(&post_path)?;
        // both epochs share the ground plane and the flight plan
        post.extent = pre.extent;
        Ok(ScenePair { pre, post })
    }

    /// Configured radius, else the one selected by `robust-select`, else the fallback.
    pub fn resolve_radius(&self) -> Result<f64> {
        if let Some(r) = self.cfg.features.radius_m {
            return Ok(r);
        }
        let path = self.robustness_path();
        if path.exists() {
            let report: RobustnessReport = self.read_json(&path, Stage::RobustSelect)?;
            if let Some(r) = report.selected_radius {
                log::info!("using radius {r} m selected by robust-select");
                return Ok(r);
            }
        }
        log::warn!("no radius configured or selected; using {FALLBACK_RADIUS_M} m");
        Ok(FALLBACK_RADIUS_M)
    }

    // ---- stages

    pub fn simulate(&self) -> Result<()> {
        for set in self.cfg.data_sets() {
            let pair = self.cfg.scene(set)?;
            for (scene, epoch) in [(&pair.pre, Epoch::PreEvent), (&pair.post, Epoch::PostEvent)] {
                let manifest = self.scene_manifest(set, epoch);
                write_scene(manifest.parent().expect("manifest has a directory"), scene)?;
            }
            let scene = SceneFile {
                set,
                preset: self.cfg.scene_preset(set),
                buildings: pair.post.len(),
            };
            self.write_json(&self.scene_path(set), scene)?;
            let scanner = PairScanner::new(&pair, &self.cfg.scanner, self.cfg.scan_seed(set))?;
            let ground = scene_alignment(&scanner)?;
            self.write_json(&self.alignment_path(set), AlignmentFile { set, ground })?;
            for b in &pair.post.buildings {
                let region =
                    PairScanner::building_region(&pair, b.id, self.cfg.scan.building_margin_m)
                        .ok_or_else(|| {
                            Error::config("scene", format!("building {} has no geometry", b.id))
                        })?;
                let (pre, post) = scanner.scan_region(&region)?;
                for cloud in [&pre, &post] {
                    let path = self.scan_path(set, b.id, cloud.epoch());
                    self.write_cloud(&path, cloud, Stage::Simulate, &[("set", set.name().into())])?;
                }
            }
            log::info!("{}: scanned {} buildings", set.name(), pair.post.len());
        }
        Ok(())
    }

    pub fn robust_select(&self) -> Result<()> {
        let rc = &self.cfg.robustness;
        let pair = self.read_pair(DataSet::Train)?;
        let ids = robustness_buildings(&pair, rc.buildings);
        let a = PairScanner::new(&pair, &self.cfg.scanner, self.cfg.scan_seed(DataSet::Train))?;
        let b = PairScanner::new(&pair, &rc.surrogate_scanner, rc.surrogate_seed)?;
        let mut scans = Vec::with_capacity(ids.len());
        for &id in &ids {
            let region = PairScanner::building_region(&pair, id, self.cfg.scan.building_margin_m)
                .ok_or_else(|| {
                Error::config("scene", format!("building {id} has no geometry"))
            })?;
            scans.push((id, a.scan_region(&region)?, b.scan_region(&region)?));
        }
        let features = FeatureId::ALL.to_vec();
        let mut table = Vec::new();
        for &r in &rc.radii_m {
            let settings = FeatureSettings {
                radius: r,
                spacing: rc.spacing_m,
                features: features.clone(),
                subsample_seed: self.cfg.features.subsample_seed,
            };
            let mut ca: Option<ChangeTable> = None;
            let mut cb: Option<ChangeTable> = None;
            for (id, (pre_a, post_a), (pre_b, post_b)) in &scans {
                let ta = building_change_sparse(*id, pre_a, post_a, &settings)?;
                let tb = building_change_sparse(*id, pre_b, post_b, &settings)?;
                append(&mut ca, ta)?;
                append(&mut cb, tb)?;
            }
            let (ca, cb) = (
                ca.expect("at least one building"),
                cb.expect("at least one building"),
            );
            for (feature, rel_diff) in rel_diff_from_changes(&ca, &cb, &features)? {
                table.push(RobustnessCell {
                    feature,
                    radius: r,
                    rel_diff,
                });
            }
            log::info!("robust-select: radius {r} m evaluated");
        }
        let report = RobustnessReport {
            threshold: rc.threshold_percent,
            radii: rc.radii_m.clone(),
            table,
            selected_features: Vec::new(),
            selected_radius: None,
            label: Some(format!(
                "source A: configured scanner; source B: surrogate scanner settings; buildings {ids:?}"
            )),
        }
        .with_selection(rc.threshold_percent)?;
        log::info!(
            "robust-select: radius {} m, {} features within {}%",
            report.selected_radius.unwrap_or(f64::NAN),
            report.selected_features.len(),
            rc.threshold_percent
        );
        self.write_json(&self.robustness_path(), report)
    }

    pub fn features(&self) -> Result<()> {
        let settings = self.cfg.features.settings(self.resolve_radius()?);
        let extra = |set: DataSet| {
            [
                ("set", set.name().to_string()),
                ("radius_m", settings.radius.to_string()),
            ]
        };
        for set in self.cfg.data_sets() {
            for (id, _) in self.manifest(set)? {
                let pre =
                    self.read_cloud(&self.scan_path(set, id, Epoch::PreEvent), Stage::Simulate)?;
                let post =
                    self.read_cloud(&self.scan_path(set, id, Epoch::PostEvent), Stage::Simulate)?;
                let f = sparse_features(id, &pre.cloud, &post.cloud, &settings)?;
                let mut pre = f.pre;
                let mut post = f.post;
                f.pre_features.attach_to(&mut pre)?;
                f.post_features.attach_to(&mut post)?;
                self.write_cloud(
                    &self.features_path(set, id, Epoch::PreEvent),
                    &pre,
                    Stage::Features,
                    &extra(set),
                )?;
                self.write_cloud(
                    &self.features_path(set, id, Epoch::PostEvent),
                    &post,
                    Stage::Features,
                    &extra(set),
                )?;
            }
        }
        Ok(())
    }

    pub fn change(&self) -> Result<()> {
        let ids = self.feature_ids();
        for set in self.cfg.data_sets() {
            for (id, _) in self.manifest(set)? {
                let pre_path = self.features_path(set, id, Epoch::PreEvent);
                let pre = self.read_cloud(&pre_path, Stage::Features)?;
                let post = self.read_cloud(
                    &self.features_path(set, id, Epoch::PostEvent),
                    Stage::Features,
                )?;
                let radius = radius_comment(&pre, &pre_path)?;
                let f = SparseFeatures {
                    pre_features: FeatureTable::from_cloud(&pre.cloud, radius, &ids)?,
                    post_features: FeatureTable::from_cloud(&post.cloud, radius, &ids)?,
                    pre: pre.cloud,
                    post: post.cloud,
                };
                let changes = sparse_change(&f)?;
                let mut cloud = bare(&f.pre);
                changes.attach_to(&mut cloud)?;
                let extra = [
                    ("set", set.name().to_string()),
                    ("radius_m", radius.to_string()),
                ];
                self.write_cloud(&self.change_path(set, id), &cloud, Stage::Change, &extra)?;
            }
        }
        Ok(())
    }

    pub fn cluster(&self) -> Result<()> {
        let ids = self.feature_ids();
        for set in self.cfg.data_sets() {
            let alignment: AlignmentFile =
                self.read_json(&self.alignment_path(set), Stage::Simulate)?;
            let noise = self.cfg.noise(Some(&alignment.ground));
            let mut records = Vec::new();
            for (id, grade) in self.manifest(set)? {
                let path = self.change_path(set, id);
                let doc = self.read_cloud(&path, Stage::Change)?;
                let radius = radius_comment(&doc, &path)?;
                let changes = ChangeTable::from_cloud(&doc.cloud, radius, &ids)?;
                let (cluster, record) = cluster_building(
                    id,
                    grade,
                    &changes,
                    &self.cfg.features.selected,
                    noise,
                    self.cfg.clustering.seed,
                )?;
                let mut cloud = doc.cloud;
                let changed = cluster
                    .labels
                    .iter()
                    .map(|l| f64::from(u8::from(*l == damagescan_core::ChangeLabel::Changed)))
                    .collect();
                cloud.set_attribute(CHANGED_ATTRIBUTE, changed)?;
                let extra = [
                    ("set", set.name().to_string()),
                    ("radius_m", radius.to_string()),
                    ("damaged_share", record.damaged_share.to_string()),
                ];
                self.write_cloud(&self.cluster_path(set, id), &cloud, Stage::Cluster, &extra)?;
                records.push(record);
            }
            let file = BuildingsFile {
                set,
                noise,
                buildings: records,
            };
            self.write_json(&self.buildings_path(set), file)?;
        }
        Ok(())
    }

    pub fn train(&self) -> Result<()> {
        let file: BuildingsFile =
            self.read_json(&self.buildings_path(DataSet::Train), Stage::Cluster)?;
        let settings = self.cfg.features.settings(FALLBACK_RADIUS_M);
        let (model, outcome) = train_on_records(&self.cfg, &file.buildings, &settings)?;
        self.write_json(&self.model_path(), model)?;
        self.write_json(&self.split_path(), outcome)
    }

    /// Set graded by `classify` and `evaluate`, with its records.
    fn evaluation_records(&self) -> Result<(DataSet, Vec<BuildingRecord>)> {
        if self.cfg.evaluation_scene.is_some() {
            let file: BuildingsFile =
                self.read_json(&self.buildings_path(DataSet::Eval), Stage::Cluster)?;
            return Ok((DataSet::Eval, file.buildings));
        }
        let file: BuildingsFile =
            self.read_json(&self.buildings_path(DataSet::Train), Stage::Cluster)?;
        let split: TrainingOutcome = self.read_json(&self.split_path(), Stage::Train)?;
        let held_out = file
            .buildings
            .into_iter()
            .filter(|r| split.test_ids.contains(&r.building_id))
            .collect();
        Ok((DataSet::Train, held_out))
    }

    pub fn classify(&self) -> Result<()> {
        let model: ForestModel = self.read_json(&self.model_path(), Stage::Train)?;
        let (set, records) = self.evaluation_records()?;
        let predictions = classify_records(&model, &records)?;
        let file = PredictionsFile {
            set,
            model_config: model.training_config.name().to_string(),
            predictions,
        };
        self.write_json(&self.predictions_path(), file)
    }

    pub fn evaluate(&self) -> Result<Report> {
        let file: PredictionsFile = self.read_json(&self.predictions_path(), Stage::Classify)?;
        let (set, truth) = self.evaluation_records()?;
        let split: TrainingOutcome = self.read_json(&self.split_path(), Stage::Train)?;
        let alignment = self
            .cfg
            .data_sets()
            .into_iter()
            .map(|s| {
                let a: AlignmentFile = self.read_json(&self.alignment_path(s), Stage::Simulate)?;
                Ok((s.name().to_string(), a.ground))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        let meta = serde_json::json!({
            "config_hash": self.provenance.config_hash,
            "seeds": self.provenance.seeds,
            "evaluated_set": if set == DataSet::Eval { "eval" } else { "train-held-out" },
            "buildings": file.predictions.len(),
            "bypassed": file.predictions.iter().filter(|p| p.bypass).count(),
            "alignment": alignment,
            "held_out_accuracy": split.test_accuracy,
            "clustering": "z-scored (Δcurvature, Δz) k-means",
        });
        let report = build_report(&self.cfg, &file.predictions, &truth, meta)?;
        emit_report(&report, &self.out)?;
        Ok(report)
    }

    fn feature_ids(&self) -> Vec<FeatureId> {
        self.cfg.features.settings(FALLBACK_RADIUS_M).computed()
    }
}

fn append(acc: &mut Option<ChangeTable>, t: ChangeTable) -> Result<()> {
    match acc {
        Some(a) => a.extend_from(&t)?,
        None => *acc = Some(t),
    }
    Ok(())
}

/// Up to `n` buildings taken in turn from each grade, lowest ids first.
fn robustness_buildings(pair: &ScenePair, n: usize) -> Vec<u32> {
    let mut by_grade: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    for b in &pair.post.buildings {
        by_grade.entry(b.grade.index()).or_default().push(b.id);
    }
    for ids in by_grade.values_mut() {
        ids.sort_unstable();
    }
    let mut out = Vec::with_capacity(n);
    let mut round = 0;
    while out.len() < n {
        let before = out.len();
        for ids in by_grade.values() {
            if let Some(&id) = ids.get(round) {
                if out.len() < n {
                    out.push(id);
                }
            }
        }
        if out.len() == before {
            break;
        }
        round += 1;
    }
    out
}

/// Points and building labels of a cloud without its attribute columns.
fn bare(cloud: &PointCloud) -> PointCloud {
    let mut c = cloud.clone();
    let names: Vec<String> = c.attribute_names().map(str::to_string).collect();
    for n in names {
        c.remove_attribute(&n);
    }
    c
}

fn comment_value<'a>(doc: &'a PlyDocument, key: &str) -> Option<&'a str> {
    doc.comments
        .iter()
        .find_map(|c| c.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
}

fn radius_comment(doc: &PlyDocument, path: &Path) -> Result<f64> {
    comment_value(doc, "radius_m")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            msg: "no `radius_m` comment".into(),
        })
}

fn require(path: &Path, owner: Stage) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            stage: owner.name(),
        })
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

fn warn_stale(path: &Path) {
    log::warn!("{} was produced with a different config", path.display());
}
