use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use damagescan::config::PipelineConfig;
use damagescan::stages::{Stage, Workspace};
use damagescan::Error;
use damagescan_core::classifier::TrainingConfig;
use damagescan_core::metrics::Report;
use damagescan_core::FeatureId;

fn demo(out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::from_toml(include_str!("../../../configs/demo.toml")).unwrap();
    cfg.robustness.radii_m = vec![1.0];
    cfg.robustness.buildings = 1;
    cfg.paths.out_dir = out.to_path_buf();
    cfg
}

fn field_of(err: Error) -> String {
    match err {
        Error::Config { field, .. } => field,
        other => panic!("expected a config error, got {other}"),
    }
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

#[test]
fn defaults_carry_the_stated_values() {
    let c = PipelineConfig::default();
    assert_eq!((c.forest.n_trees, c.forest.max_depth), (100, 5));
    assert_eq!(c.split.ratio, 0.7);
    assert_eq!(c.training_scene.buildings_per_grade * 4, 448);
    assert!(c.training_scene.base_models >= 28);
    let s = c.scanner;
    assert_eq!(
        (
            s.scan_rate_hz,
            s.pulse_rate_hz,
            s.strip_overlap,
            s.fov_deg,
            s.altitude_m,
            s.speed_mps
        ),
        (89.0, 300_000.0, 0.6, 120.0, 100.0, 8.0)
    );
    assert_eq!(
        c.robustness.radii_m,
        vec![1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0]
    );
    assert_eq!(c.robustness.threshold_percent, 10.0);
    assert_eq!(c.features.selected, FeatureId::ROBUST_DEFAULT.to_vec());
    assert_eq!(c.training_config, TrainingConfig::VlsGeneric);
}

#[test]
fn printed_config_parses_back() {
    let c = demo(Path::new("/tmp/x"));
    let back = PipelineConfig::from_toml(&c.to_toml()).unwrap();
    assert_eq!(back, c);
    let d = PipelineConfig::default();
    assert_eq!(PipelineConfig::from_toml(&d.to_toml()).unwrap(), d);
}

#[test]
fn config_errors_name_the_field() {
    let f = field_of(PipelineConfig::from_toml("[features]\nradius_m = -1.0\n").unwrap_err());
    assert_eq!(f, "features.radius_m");
    let f = field_of(PipelineConfig::from_toml("[forest]\nn_trees = \"many\"\n").unwrap_err());
    assert_eq!(f, "forest.n_trees");
    let f = field_of(PipelineConfig::from_toml("[features]\nradius = 2.0\n").unwrap_err());
    assert!(f.starts_with("features"), "{f}");
    let f = field_of(PipelineConfig::from_toml("[split]\nratio = 1.5\n").unwrap_err());
    assert_eq!(f, "split.ratio");
    let f =
        field_of(PipelineConfig::from_toml("[robustness]\nradii_m = [1.0, 0.0]\n").unwrap_err());
    assert_eq!(f, "robustness.radii_m[1]");
    let f = field_of(PipelineConfig::from_toml("[scanner]\nstrip_overlap = 0.99\n").unwrap_err());
    assert_eq!(f, "scanner");
}

#[test]
fn real_world_training_data_is_rejected() {
    let f = field_of(PipelineConfig::from_toml("training_config = \"real-dim\"\n").unwrap_err());
    assert_eq!(f, "training_config");
}

#[test]
fn hash_follows_content_not_location() {
    let a = demo(Path::new("/tmp/a"));
    let b = demo(Path::new("/tmp/b"));
    assert_eq!(a.hash(), b.hash());
    let mut c = a.clone();
    c.override_seeds(1);
    assert_ne!(c.hash(), a.hash());
    assert_eq!(c.seeds().forest, a.seeds().forest + 1);
    assert_eq!(c.seeds().scan, a.seeds().scan + 1);
}

#[test]
fn missing_inputs_name_path_and_owner() {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::new(demo(dir.path()));
    for (stage, file, owner) in [
        (Stage::Features, "manifest.json", "simulate"),
        (Stage::RobustSelect, "manifest.json", "simulate"),
        (Stage::Train, "buildings.json", "cluster"),
        (Stage::Classify, "model.json", "train"),
        (Stage::Evaluate, "predictions.json", "classify"),
    ] {
        match ws.run(stage) {
            Err(Error::MissingArtifact { path, stage: s }) => {
                assert!(path.ends_with(file), "{stage}: {}", path.display());
                assert!(path.starts_with(dir.path()));
                assert_eq!(s, owner, "{stage}");
            }
            other => panic!("{stage}: expected a missing artifact, got {other:?}"),
        }
    }
}

#[test]
fn binary_prints_config_and_reports_errors() {
    let bin = env!("CARGO_BIN_EXE_damagescan");
    let out = Command::new(bin).arg("--print-config").output().unwrap();
    assert!(out.status.success());
    let printed = String::from_utf8(out.stdout).unwrap();
    assert!(PipelineConfig::from_toml(&printed).is_ok());

    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(bin)
        .args(["--out-dir", dir.path().to_str().unwrap(), "change"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(
        err.contains("manifest.json") && err.contains("`simulate`"),
        "{err}"
    );

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[clustering]\nepsilon_curvature = -1.0\n").unwrap();
    let out = Command::new(bin)
        .arg("--config")
        .arg(&cfg)
        .arg("simulate")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .contains("clustering.epsilon_curvature"));
}

#[test]
fn staged_run_is_reproducible_stage_by_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo(dir.path());
    let ws = Workspace::new(cfg.clone());
    ws.full_run().unwrap();

    let report = Report::from_json(&std::fs::read_to_string(ws.report_path()).unwrap()).unwrap();
    assert_eq!(report.configs.len(), 1);
    assert_eq!(report.configs[0].confusion.total(), 4);
    assert_eq!(report.pipeline_meta["config_hash"], cfg.hash());
    assert!(dir.path().join("report.csv").exists() && dir.path().join("report.md").exists());

    let robustness: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws.robustness_path()).unwrap()).unwrap();
    assert_eq!(robustness["selected_radius"], 1.0);
    assert!(robustness["label"].as_str().unwrap().contains("surrogate"));

    // every artifact is stamped with the config
    for (path, bytes) in files_under(dir.path()) {
        let text = String::from_utf8(bytes).unwrap();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if matches!(ext, "ply" | "json") && !path.ends_with("manifest.json") {
            assert!(
                text.contains(&cfg.hash()),
                "{} lacks the config hash",
                path.display()
            );
        }
    }

    // deleting a stage's outputs and rerunning it reproduces them; inputs stay untouched
    let before = files_under(dir.path());
    for (stage, sub) in [
        (Stage::Change, "change"),
        (Stage::Cluster, "cluster"),
        (Stage::Features, "features"),
    ] {
        std::fs::remove_dir_all(dir.path().join(sub)).unwrap();
        ws.run(stage).unwrap();
        assert_eq!(files_under(dir.path()), before, "after rerunning {stage}");
    }
    for f in [
        "model.json",
        "split.json",
        "predictions.json",
        "report.json",
    ] {
        std::fs::remove_file(dir.path().join(f)).unwrap();
    }
    for stage in [Stage::Train, Stage::Classify, Stage::Evaluate] {
        ws.run(stage).unwrap();
    }
    assert_eq!(files_under(dir.path()), before);
}

#[test]
fn train_then_classify_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = demo(dir.path());
    cfg.features.radius_m = Some(1.0);
    let ws = Workspace::new(cfg.clone());
    for stage in [
        Stage::Simulate,
        Stage::Features,
        Stage::Change,
        Stage::Cluster,
    ] {
        ws.run(stage).unwrap();
    }
    let config = dir.path().join("run.toml");
    std::fs::write(&config, cfg.to_toml()).unwrap();
    let bin = env!("CARGO_BIN_EXE_damagescan");
    for args in [
        &["--training-config", "vls-generic", "train"][..],
        &["classify"][..],
    ] {
        let out = Command::new(bin)
            .arg("--config")
            .arg(&config)
            .args(args)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let preds: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws.predictions_path()).unwrap()).unwrap();
    assert_eq!(preds["set"], "eval");
    assert_eq!(preds["model_config"], "vls-generic");
    let ids: Vec<u64> = preds["predictions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["building_id"].as_u64().unwrap())
        .collect();
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("scenes/eval/post/manifest.json")).unwrap(),
    )
    .unwrap();
    let expected: Vec<u64> = manifest
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["id"].as_u64().unwrap())
        .collect();
    assert_eq!(ids, expected);
    for p in preds["predictions"].as_array().unwrap() {
        assert!(["no_damage", "heavy", "extreme", "destruction"]
            .contains(&p["grade"].as_str().unwrap()));
    }
}
