use std::fs;
use std::path::Path;

use seedkit::classifier::FeatureMode;
use seedkit::config::{GlobalConfig, SourceSpec};
use seedkit::eval::parse_report_csv;
use seedkit::fixtures;
use seedkit::imaging::load_rgb;
use seedkit::label::ClassLabel;
use seedkit::manifest::{read_manifest, DatasetManifest, Split};
use seedkit::pipeline::{run_pipeline, PipelineError, RunOptions, SUMMARY_FILE};
use seedkit::pool::read_pool_tree;
use seedkit::softmax::read_softmax;
use seedkit::synth::{PoolSet, SceneAssets};

fn small_config(root: &Path) -> GlobalConfig {
    let classes = vec![ClassLabel::new("canola").unwrap(), ClassLabel::new("wheat").unwrap()];
    let frames = fixtures::write_frames(&root.join("frames"), &classes).unwrap();
    let mut cfg = GlobalConfig {
        master_seed: 11,
        runs_dir: root.join("runs"),
        ..GlobalConfig::default()
    };
    cfg.sources = frames
        .into_iter()
        .map(|(class_label, height_m, dir)| SourceSpec {
            class_label,
            height_m,
            frames_dir: Some(dir),
            video: None,
        })
        .collect();
    cfg.synthesis.images_per_class = 15;
    cfg.synthesis.test_images_per_class = 6;
    cfg.synthesis.seeds_per_image = [5, 10];
    cfg.training.nodes_per_layer = 16;
    cfg.training.epochs = 3;
    cfg.training.features = FeatureMode::LumaQuantiles;
    cfg
}

#[test]
fn invalid_fraction_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = GlobalConfig {
        runs_dir: dir.path().join("runs"),
        ..GlobalConfig::default()
    };
    cfg.split.train_fraction = 1.5;
    let err = run_pipeline(&cfg, &RunOptions::default()).unwrap_err();
    assert!(matches!(err, PipelineError::Config(_)));
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn end_to_end_run_writes_artifacts_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let summary = run_pipeline(&cfg, &RunOptions::default()).unwrap();
    let run = &summary.run_dir;
    assert!(run.file_name().unwrap().to_str().unwrap().ends_with("_seed11"));
    for f in [
        "config.json",
        "model.bin",
        "history.json",
        "preds_test.jsonl",
        "report.csv",
        "report.txt",
        SUMMARY_FILE,
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    assert_eq!(summary.eval_split, Split::Test);
    assert_eq!(summary.manifest_totals.total, 42);

    let manifest = read_manifest(&run.join("dataset/manifest.csv")).unwrap();
    assert_eq!(manifest.count(Split::Train), 24);
    assert_eq!(manifest.count(Split::Val), 6);
    assert_eq!(manifest.count(Split::Test), 12);

    let preds = read_softmax(&run.join("preds_test.jsonl")).unwrap();
    assert_eq!(preds.records.len(), 12);
    assert!(preds.max_normalization_error() < 1e-9);
    let rows = parse_report_csv(&fs::read_to_string(run.join("report.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 3);

    replay(&manifest, &run.join("pools"), &run.join("dataset"), &cfg);

    let again = run_pipeline(
        &cfg,
        &RunOptions {
            jobs: 2,
            runs_dir: None,
        },
    )
    .unwrap();
    assert_ne!(again.run_dir, summary.run_dir);
    for name in ["dataset/manifest.csv", "model.bin", "preds_test.jsonl", "report.csv"] {
        assert_eq!(
            fs::read(run.join(name)).unwrap(),
            fs::read(again.run_dir.join(name)).unwrap(),
            "{name}"
        );
    }
}

fn replay(manifest: &DatasetManifest, pools_dir: &Path, dataset: &Path, cfg: &GlobalConfig) {
    let pools = PoolSet::from_cutouts(read_pool_tree(pools_dir).unwrap()).unwrap();
    let canvases = fixtures::canvases(4, 320);
    let assets = SceneAssets {
        pools: &pools,
        canvases: &canvases,
        ranges: &cfg.augmentation,
        cfg: &cfg.synthesis,
    };
    for r in manifest.records.iter().step_by(5) {
        let img = assets.render_record(r).unwrap();
        assert_eq!(img, load_rgb(&dataset.join(&r.image_path)).unwrap(), "{}", r.image_path);
    }
}
