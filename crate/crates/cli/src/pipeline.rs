//! Stage logic independent of where intermediate results are stored.

use damagescan_core::classifier::{split_train_test, train_forest, vector_names, ForestModel};
use damagescan_core::metrics::{confusion_matrix, Report};
use damagescan_core::registration::AlignmentQuality;
use damagescan_core::rng::derive_seed;
use damagescan_core::{DamageGrade, NoiseThreshold};
use damagescan_vls::{generate_scene_with, ScenePair, ScenePreset};
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, FALLBACK_RADIUS_M};
use crate::error::Result;
use crate::process::{
    noise_threshold, process_building, scene_alignment, BuildingRecord, FeatureSettings,
    PairScanner,
};

/// The two scenes a run works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSet {
    Train,
    Eval,
}

impl DataSet {
    pub fn name(self) -> &'static str {
        match self {
            DataSet::Train => "train",
            DataSet::Eval => "eval",
        }
    }

    fn stream(self) -> u64 {
        match self {
            DataSet::Train => 0,
            DataSet::Eval => 1,
        }
    }
}

impl PipelineConfig {
    pub fn data_sets(&self) -> Vec<DataSet> {
        let mut v = vec![DataSet::Train];
        if self.evaluation_scene.is_some() {
            v.push(DataSet::Eval);
        }
        v
    }

    /// Generates the scene pair of a data set.
    pub fn scene(&self, set: DataSet) -> Result<ScenePair> {
        let (preset, n_base, per_grade, damage, seed) = match set {
            DataSet::Train => {
                let s = &self.training_scene;
                (
                    self.training_preset(),
                    s.base_models,
                    s.buildings_per_grade,
                    s.damage,
                    s.seed,
                )
            }
            DataSet::Eval => {
                let s = self
                    .evaluation_scene
                    .as_ref()
                    .expect("no evaluation scene configured");
                (
                    s.preset,
                    s.base_models,
                    s.buildings_per_grade,
                    s.damage,
                    s.seed,
                )
            }
        };
        let damage = damage.unwrap_or_else(|| preset.damage_params());
        Ok(generate_scene_with(
            preset, n_base, per_grade, &damage, seed,
        )?)
    }

    pub fn scene_preset(&self, set: DataSet) -> ScenePreset {
        match set {
            DataSet::Train => self.training_preset(),
            DataSet::Eval => {
                self.evaluation_scene
                    .as_ref()
                    .expect("no evaluation scene configured")
                    .preset
            }
        }
    }

    /// Range-noise seed of a data set; each set is flown independently.
    pub fn scan_seed(&self, set: DataSet) -> u64 {
        derive_seed(self.scan.seed, &[set.stream()])
    }

    pub fn noise(&self, alignment: Option<&AlignmentQuality>) -> NoiseThreshold {
        noise_threshold(
            self.clustering.epsilon_dz,
            self.clustering.epsilon_curvature,
            alignment,
        )
    }
}

/// Records of every building of a scene, processed in memory.
pub fn scene_records(
    cfg: &PipelineConfig,
    set: DataSet,
    pair: &ScenePair,
    settings: &FeatureSettings,
) -> Result<(Vec<BuildingRecord>, AlignmentQuality)> {
    let scanner = PairScanner::new(pair, &cfg.scanner, cfg.scan_seed(set))?;
    let alignment = scene_alignment(&scanner)?;
    let noise = cfg.noise(Some(&alignment));
    log::info!(
        "{}: {} buildings, noise floor dz {:.4} m, curvature {:.4}",
        set.name(),
        pair.post.len(),
        noise.dz,
        noise.curvature
    );
    let records = pair
        .post
        .buildings
        .iter()
        .map(|b| {
            let r = process_building(
                pair,
                &scanner,
                b.id,
                cfg.scan.building_margin_m,
                settings,
                noise,
                cfg.clustering.seed,
            );
            log::debug!("building {} done", b.id);
            r
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((records, alignment))
}

/// Stratified split, forest trained on the training part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingOutcome {
    pub train_ids: Vec<u32>,
    pub test_ids: Vec<u32>,
    /// Percent of held-out buildings graded correctly, if any were held out.
    pub test_accuracy: Option<f64>,
    /// Training buildings that bypassed the classifier and were left out.
    pub bypassed: usize,
}

pub fn train_on_records(
    cfg: &PipelineConfig,
    records: &[BuildingRecord],
    settings: &FeatureSettings,
) -> Result<(ForestModel, TrainingOutcome)> {
    let labels: Vec<DamageGrade> = records.iter().map(|r| r.grade).collect();
    let (train, test) = split_train_test(&labels, cfg.split.ratio, cfg.split.seed)?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut bypassed = 0;
    for &i in &train {
        match &records[i].vector {
            Some(v) => {
                x.push(v.clone());
                y.push(records[i].grade);
            }
            None => bypassed += 1,
        }
    }
    let model = train_forest(
        &x,
        &y,
        &vector_names(&settings.features),
        cfg.forest.params(),
        cfg.training_config,
        cfg.forest.seed,
    )?;
    let held_out: Vec<BuildingRecord> = test.iter().map(|&i| records[i].clone()).collect();
    let test_accuracy = if held_out.is_empty() {
        None
    } else {
        let preds = classify_records(&model, &held_out)?;
        let hits = preds
            .iter()
            .zip(&held_out)
            .filter(|(p, r)| p.grade == r.grade)
            .count();
        Some(100.0 * hits as f64 / held_out.len() as f64)
    };
    if let Some(a) = test_accuracy {
        log::info!("held-out accuracy {a:.2}% on {} buildings", held_out.len());
    }
    Ok((
        model,
        TrainingOutcome {
            train_ids: train.iter().map(|&i| records[i].building_id).collect(),
            test_ids: test.iter().map(|&i| records[i].building_id).collect(),
            test_accuracy,
            bypassed,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub building_id: u32,
    pub grade: DamageGrade,
    /// Class probabilities in grade order; absent for bypassed buildings.
    pub probabilities: Option<[f64; 4]>,
    pub bypass: bool,
}

/// Grades every building; buildings without changed points are undamaged.
pub fn classify_records(
    model: &ForestModel,
    records: &[BuildingRecord],
) -> Result<Vec<PredictionRecord>> {
    records
        .iter()
        .map(|r| {
            Ok(match &r.vector {
                Some(v) => {
                    let p = model.predict(v)?;
                    PredictionRecord {
                        building_id: r.building_id,
                        grade: p.grade,
                        probabilities: Some(p.probabilities),
                        bypass: false,
                    }
                }
                None => PredictionRecord {
                    building_id: r.building_id,
                    grade: DamageGrade::NoDamage,
                    probabilities: None,
                    bypass: true,
                },
            })
        })
        .collect()
}

/// Report of predictions against the records' ground truth, matched by id.
pub fn build_report(
    cfg: &PipelineConfig,
    predictions: &[PredictionRecord],
    truth: &[BuildingRecord],
    meta: serde_json::Value,
) -> Result<Report> {
    let mut t = Vec::with_capacity(predictions.len());
    let mut p = Vec::with_capacity(predictions.len());
    for pred in predictions {
        let Some(r) = truth.iter().find(|r| r.building_id == pred.building_id) else {
            return Err(crate::error::Error::Parse {
                path: "predictions".into(),
                msg: format!("building {} has no ground truth", pred.building_id),
            });
        };
        t.push(r.grade);
        p.push(pred.grade);
    }
    let cm = confusion_matrix(&t, &p)?;
    Ok(Report::new(
        vec![(cfg.training_config.label().to_string(), cm)],
        meta,
    )?)
}

/// Outcome of a whole run held in memory.
#[derive(Debug, Clone)]
pub struct MemoryRun {
    pub model: ForestModel,
    pub training: TrainingOutcome,
    pub predictions: Vec<PredictionRecord>,
    pub report: Report,
    pub train_records: Vec<BuildingRecord>,
    pub eval_records: Vec<BuildingRecord>,
}

/// Runs simulation through evaluation without writing intermediate files.
/// Uses the configured radius, or [`FALLBACK_RADIUS_M`] when none is set.
pub fn run_in_memory(cfg: &PipelineConfig) -> Result<MemoryRun> {
    let settings = cfg
        .features
        .settings(cfg.features.radius_m.unwrap_or(FALLBACK_RADIUS_M));
    let train_pair = cfg.scene(DataSet::Train)?;
    let (train_records, train_alignment) =
        scene_records(cfg, DataSet::Train, &train_pair, &settings)?;
    drop(train_pair);
    let (model, training) = train_on_records(cfg, &train_records, &settings)?;
    let (eval_records, eval_alignment) = if cfg.evaluation_scene.is_some() {
        let pair = cfg.scene(DataSet::Eval)?;
        let (r, a) = scene_records(cfg, DataSet::Eval, &pair, &settings)?;
        (r, Some(a))
    } else {
        let held_out = train_records
            .iter()
            .filter(|r| training.test_ids.contains(&r.building_id))
            .cloned()
            .collect();
        (held_out, None)
    };
    let predictions = classify_records(&model, &eval_records)?;
    let meta = serde_json::json!({
        "config_hash": cfg.hash(),
        "seeds": cfg.seeds(),
        "evaluated_set": if cfg.evaluation_scene.is_some() { "eval" } else { "train-held-out" },
        "buildings": eval_records.len(),
        "bypassed": predictions.iter().filter(|p| p.bypass).count(),
        "alignment": { "train": train_alignment, "eval": eval_alignment },
        "held_out_accuracy": training.test_accuracy,
        "clustering": "z-scored (Δcurvature, Δz) k-means",
    });
    let report = build_report(cfg, &predictions, &eval_records, meta)?;
    Ok(MemoryRun {
        model,
        training,
        predictions,
        report,
        train_records,
        eval_records,
    })
}
