//! Pipeline configuration. Every tunable number of the pipeline lives here;
//! `--print-config` shows the fully resolved values.

use std::path::{Path, PathBuf};

use damagescan_core::classifier::{ForestParams, TrainingConfig, DEFAULT_TRAIN_RATIO};
use damagescan_core::robustness::{DEFAULT_RADII, DEFAULT_THRESHOLD_PERCENT};
use damagescan_core::FeatureId;
use damagescan_vls::{DamageParams, ScannerConfig, ScenePreset};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::process::FeatureSettings;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Which simulated or real data the classifier learns from.
    pub training_config: TrainingConfig,
    /// Scene the classifier is trained on; its preset follows `training_config`.
    pub training_scene: SceneConfig,
    /// Disjoint scene used by `classify` and `evaluate`. When absent the
    /// held-out split of the training scene is evaluated instead.
    pub evaluation_scene: Option<EvaluationSceneConfig>,
    pub scanner: ScannerConfig,
    pub scan: ScanConfig,
    pub features: FeaturesConfig,
    pub clustering: ClusteringConfig,
    pub forest: ForestConfig,
    pub split: SplitConfig,
    pub robustness: RobustnessConfig,
    pub paths: PathsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            training_config: TrainingConfig::VlsGeneric,
            training_scene: SceneConfig::default(),
            evaluation_scene: None,
            scanner: ScannerConfig::default(),
            scan: ScanConfig::default(),
            features: FeaturesConfig::default(),
            clustering: ClusteringConfig::default(),
            forest: ForestConfig::default(),
            split: SplitConfig::default(),
            robustness: RobustnessConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub seed: u64,
    pub base_models: usize,
    pub buildings_per_grade: usize,
    /// Damage operator ranges; the preset's values when absent.
    pub damage: Option<DamageParams>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            base_models: 28,
            buildings_per_grade: 112,
            damage: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSceneConfig {
    pub preset: ScenePreset,
    pub seed: u64,
    pub base_models: usize,
    pub buildings_per_grade: usize,
    pub damage: Option<DamageParams>,
}

impl Default for EvaluationSceneConfig {
    fn default() -> Self {
        Self {
            preset: ScenePreset::RegionSpecific,
            seed: 2,
            base_models: 12,
            buildings_per_grade: 25,
            damage: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    /// Seed of the range noise; each epoch uses its own stream.
    pub seed: u64,
    /// Ground margin scanned around each building, meters.
    pub building_margin_m: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            seed: 3,
            building_margin_m: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesConfig {
    /// Neighbourhood radius in meters. When absent, the radius chosen by
    /// `robust-select` is used, or [`FALLBACK_RADIUS_M`] if it has not run.
    pub radius_m: Option<f64>,
    /// Common point spacing both epochs are subsampled to.
    pub spacing_m: f64,
    pub subsample_seed: u64,
    pub selected: Vec<FeatureId>,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        Self {
            radius_m: None,
            spacing_m: 0.1,
            subsample_seed: 4,
            selected: FeatureId::ROBUST_DEFAULT.to_vec(),
        }
    }
}

/// Radius used when neither the config nor a robustness report names one.
pub const FALLBACK_RADIUS_M: f64 = 1.0;

impl FeaturesConfig {
    pub fn settings(&self, radius: f64) -> FeatureSettings {
        FeatureSettings {
            radius,
            spacing: self.spacing_m,
            features: self.selected.clone(),
            subsample_seed: self.subsample_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringConfig {
    pub seed: u64,
    /// Height noise floor in meters; three times the measured ground
    /// alignment spread when absent.
    pub epsilon_dz: Option<f64>,
    pub epsilon_curvature: f64,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            seed: 5,
            epsilon_dz: None,
            epsilon_curvature: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        let p = ForestParams::default();
        Self {
            n_trees: p.n_trees,
            max_depth: p.max_depth,
            seed: 6,
        }
    }
}

impl ForestConfig {
    pub fn params(&self) -> ForestParams {
        ForestParams {
            n_trees: self.n_trees,
            max_depth: self.max_depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub ratio: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratio: DEFAULT_TRAIN_RATIO,
            seed: 7,
        }
    }
}

/// Feature-robustness experiment. Without a second real sensor, source B is
/// the same scene scanned with a different scanner setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustnessConfig {
    pub radii_m: Vec<f64>,
    pub threshold_percent: f64,
    /// Number of buildings of the training scene used.
    pub buildings: usize,
    /// Spacing both sources are subsampled to before the radius sweep.
    pub spacing_m: f64,
    pub surrogate_scanner: ScannerConfig,
    pub surrogate_seed: u64,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            radii_m: DEFAULT_RADII.to_vec(),
            threshold_percent: DEFAULT_THRESHOLD_PERCENT,
            buildings: 4,
            spacing_m: 0.2,
            surrogate_scanner: ScannerConfig {
                pulse_rate_hz: 200_000.0,
                range_noise_sigma_m: 0.04,
                ..ScannerConfig::default()
            },
            surrogate_seed: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Relative paths resolve against the config file's directory.
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Named seeds recorded with every artifact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub training_scene: u64,
    pub evaluation_scene: Option<u64>,
    pub scan: u64,
    pub subsample: u64,
    pub clustering: u64,
    pub forest: u64,
    pub split: u64,
}

impl PipelineConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let de = toml::Deserializer::new(s);
        let cfg: PipelineConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let field = if field == "." {
                "<root>".to_string()
            } else {
                field
            };
            Error::config(field, e.into_inner().message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&s)?;
        if cfg.paths.out_dir.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.paths.out_dir = dir.join(&cfg.paths.out_dir);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises to TOML")
    }

    /// Checks every value, reporting the first offending field.
    pub fn validate(&self) -> Result<()> {
        if self.training_config.preset().is_none() {
            return Err(Error::config(
                "training_config",
                format!(
                    "`{}` trains on real-world point clouds, which this build cannot simulate",
                    self.training_config
                ),
            ));
        }
        positive(
            "training_scene.base_models",
            self.training_scene.base_models as f64,
        )?;
        positive(
            "training_scene.buildings_per_grade",
            self.training_scene.buildings_per_grade as f64,
        )?;
        if let Some(d) = &self.training_scene.damage {
            d.validate()
                .map_err(|e| Error::config("training_scene.damage", e.to_string()))?;
        }
        if let Some(e) = &self.evaluation_scene {
            positive("evaluation_scene.base_models", e.base_models as f64)?;
            positive(
                "evaluation_scene.buildings_per_grade",
                e.buildings_per_grade as f64,
            )?;
            if let Some(d) = &e.damage {
                d.validate()
                    .map_err(|err| Error::config("evaluation_scene.damage", err.to_string()))?;
            }
        }
        self.scanner
            .validate()
            .map_err(|e| Error::config("scanner", e.to_string()))?;
        non_negative("scan.building_margin_m", self.scan.building_margin_m)?;
        if let Some(r) = self.features.radius_m {
            positive("features.radius_m", r)?;
        }
        positive("features.spacing_m", self.features.spacing_m)?;
        if self.features.selected.is_empty() {
            return Err(Error::config(
                "features.selected",
                "select at least one feature",
            ));
        }
        if let Some(e) = self.clustering.epsilon_dz {
            non_negative("clustering.epsilon_dz", e)?;
        }
        non_negative(
            "clustering.epsilon_curvature",
            self.clustering.epsilon_curvature,
        )?;
        positive("forest.n_trees", self.forest.n_trees as f64)?;
        positive("forest.max_depth", self.forest.max_depth as f64)?;
        if !(self.split.ratio > 0.0 && self.split.ratio <= 1.0) {
            return Err(Error::config(
                "split.ratio",
                format!("must lie in (0, 1], got {}", self.split.ratio),
            ));
        }
        if self.robustness.radii_m.is_empty() {
            return Err(Error::config(
                "robustness.radii_m",
                "list at least one radius",
            ));
        }
        for (i, r) in self.robustness.radii_m.iter().enumerate() {
            positive(&format!("robustness.radii_m[{i}]"), *r)?;
        }
        non_negative(
            "robustness.threshold_percent",
            self.robustness.threshold_percent,
        )?;
        positive("robustness.buildings", self.robustness.buildings as f64)?;
        positive("robustness.spacing_m", self.robustness.spacing_m)?;
        self.robustness
            .surrogate_scanner
            .validate()
            .map_err(|e| Error::config("robustness.surrogate_scanner", e.to_string()))?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the resolved config, output
    /// directory excluded so relocated runs share a hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths = PathsConfig::default();
        let json = serde_json::to_vec(&c).expect("config serialises to JSON");
        hex::encode(Sha256::digest(json))
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            training_scene: self.training_scene.seed,
            evaluation_scene: self.evaluation_scene.as_ref().map(|e| e.seed),
            scan: self.scan.seed,
            subsample: self.features.subsample_seed,
            clustering: self.clustering.seed,
            forest: self.forest.seed,
            split: self.split.seed,
        }
    }

    /// Shifts every seed by `k` so a whole run can be repeated independently.
    pub fn override_seeds(&mut self, k: u64) {
        let shift = |s: &mut u64| *s = s.wrapping_add(k);
        shift(&mut self.training_scene.seed);
        if let Some(e) = &mut self.evaluation_scene {
            shift(&mut e.seed);
        }
        shift(&mut self.scan.seed);
        shift(&mut self.features.subsample_seed);
        shift(&mut self.clustering.seed);
        shift(&mut self.forest.seed);
        shift(&mut self.split.seed);
        shift(&mut self.robustness.surrogate_seed);
    }

    pub fn training_preset(&self) -> ScenePreset {
        self.training_config.preset().expect("validated")
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be positive, got {v}")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(
            field,
            format!("must be non-negative, got {v}"),
        ))
    }
}

/// Simulated scene preset behind a training configuration.
pub trait TrainingPreset {
    fn preset(&self) -> Option<ScenePreset>;
}

impl TrainingPreset for TrainingConfig {
    fn preset(&self) -> Option<ScenePreset> {
        match self {
            TrainingConfig::VlsGeneric => Some(ScenePreset::Generic),
            TrainingConfig::VlsRegionSpecific => Some(ScenePreset::RegionSpecific),
            TrainingConfig::VlsGenericPlusRealDim | TrainingConfig::RealDim => None,
        }
    }
}
