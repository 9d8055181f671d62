//! End-to-end run: ingest, extract, synthesize, split, train, predict, and
//! evaluate, with every artifact written under one fresh run directory.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::classifier::{self, save_model, SavedModel};
use crate::config::{ConfigError, GlobalConfig};
use crate::eval::{self, ensemble_predict, MetricsReport};
use crate::extract::{segment_frame, SeedCutout};
use crate::ingest::{decode_video, load_frames, select_frame};
use crate::manifest::{split_dataset, write_manifest, DatasetManifest, Split};
use crate::pool::{read_pool_tree, write_cutout_pool};
use crate::softmax::{read_softmax, write_softmax};
use crate::synth::{generate_dataset, load_canvases, PoolSet, SceneAssets};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Setup,
    Ingest,
    Extract,
    Synth,
    Split,
    TrainBaseline,
    Predict,
    Eval,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Setup => "setup",
            Stage::Ingest => "ingest",
            Stage::Extract => "extract",
            Stage::Synth => "synth",
            Stage::Split => "split",
            Stage::TrainBaseline => "train-baseline",
            Stage::Predict => "predict",
            Stage::Eval => "eval",
        })
    }
}

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: BoxError,
    },
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<BoxError>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::Stage {
            stage,
            source: e.into(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Worker threads for synthesis, featurization and inference.
    pub jobs: usize,
    /// Overrides the config's `runs_dir`.
    pub runs_dir: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            jobs: 1,
            runs_dir: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestTotals {
    pub total: usize,
    pub per_class: BTreeMap<String, usize>,
    pub per_split: BTreeMap<String, usize>,
}

impl ManifestTotals {
    pub fn of(manifest: &DatasetManifest) -> Self {
        let mut per_class = BTreeMap::new();
        let mut per_split = BTreeMap::new();
        for r in &manifest.records {
            *per_class.entry(r.class_label.to_string()).or_insert(0) += 1;
            *per_split.entry(r.split.as_str().to_string()).or_insert(0) += 1;
        }
        Self {
            total: manifest.records.len(),
            per_class,
            per_split,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub master_seed: u64,
    pub artifacts: BTreeMap<String, PathBuf>,
    pub manifest_totals: ManifestTotals,
    pub warnings: Vec<String>,
    pub eval_split: Split,
    pub final_val_accuracy: Option<f64>,
    pub metrics: MetricsReport,
}

pub const SUMMARY_FILE: &str = "summary.json";

/// Creates `<parent>/<UTC timestamp>_seed<seed>`, adding `-1`, `-2`, ... when
/// the name is taken. Existing directories are never reused.
pub fn create_run_dir(parent: &Path, master_seed: u64) -> std::io::Result<PathBuf> {
    fs::create_dir_all(parent)?;
    let base = format!("{}_seed{master_seed}", chrono::Utc::now().format("%Y%m%dT%H%M%SZ"));
    for n in 0.. {
        let name = if n == 0 { base.clone() } else { format!("{base}-{n}") };
        let dir = parent.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
    unreachable!()
}

fn collect_cutouts(
    cfg: &GlobalConfig,
    run_dir: &Path,
    artifacts: &mut BTreeMap<String, PathBuf>,
) -> Result<Vec<SeedCutout>, PipelineError> {
    if cfg.sources.is_empty() {
        let dir = cfg.synthesis.pools_dir.as_ref().ok_or_else(|| ConfigError::Invalid {
            section: "sources",
            reason: "no sources given and synthesis.pools_dir is unset".into(),
        })?;
        log::info!("reading cutout pools from {}", dir.display());
        return read_pool_tree(dir).at(Stage::Extract);
    }

    let mut selected = Vec::new();
    for (i, src) in cfg.sources.iter().enumerate() {
        let h = src.height_m.meters();
        let frames = match (&src.frames_dir, &src.video) {
            (Some(dir), _) => load_frames(dir, Some(h)).at(Stage::Ingest)?,
            (None, Some(video)) => {
                let out = run_dir
                    .join("frames")
                    .join(format!("{i:02}_{}_{}", src.class_label, src.height_m));
                let template = cfg.ingest.decoder_cmd.as_deref().unwrap_or_default();
                decode_video(video, template, &out, cfg.ingest.sample_every, Some(h)).at(Stage::Ingest)?
            }
            (None, None) => unreachable!("validated"),
        };
        let best = select_frame(&frames, cfg.ingest.top_k).at(Stage::Ingest)?;
        log::info!(
            "{}@{}m: kept {} of {} frames",
            src.class_label,
            src.height_m,
            best.len(),
            frames.len()
        );
        selected.push((src, best));
    }

    let mut all = Vec::new();
    let pools_root = run_dir.join("pools");
    for (i, (src, frames)) in selected.iter().enumerate() {
        let cutouts: Vec<SeedCutout> = frames
            .iter()
            .flat_map(|f| segment_frame(f, &cfg.segmentation, &src.class_label, src.height_m.meters()))
            .collect();
        if cutouts.is_empty() {
            return Err(PipelineError::Stage {
                stage: Stage::Extract,
                source: format!("no seeds found for {}@{}m", src.class_label, src.height_m).into(),
            });
        }
        let dir = pools_root
            .join(src.class_label.as_str())
            .join(format!("{}_{i:02}", src.height_m));
        write_cutout_pool(&cutouts, &dir).at(Stage::Extract)?;
        all.extend(cutouts);
    }
    artifacts.insert("pools".into(), pools_root);
    Ok(all)
}

/// Runs every stage. The config is validated before anything is written; a
/// stage failure leaves earlier artifacts in place.
pub fn run_pipeline(cfg: &GlobalConfig, opts: &RunOptions) -> Result<RunSummary, PipelineError> {
    cfg.validate()?;
    let jobs = opts.jobs.max(1);
    let parent = opts.runs_dir.clone().unwrap_or_else(|| cfg.runs_dir.clone());
    let run_dir = create_run_dir(&parent, cfg.master_seed).at(Stage::Setup)?;
    log::info!("run directory {}", run_dir.display());
    let mut artifacts = BTreeMap::new();
    let config_path = run_dir.join("config.json");
    fs::write(
        &config_path,
        serde_json::to_string_pretty(cfg).expect("config serializes"),
    )
    .at(Stage::Setup)?;
    artifacts.insert("config".into(), config_path);

    let cutouts = collect_cutouts(cfg, &run_dir, &mut artifacts)?;
    let pools = PoolSet::from_cutouts(cutouts).at(Stage::Synth)?;
    let canvases = match &cfg.synthesis.canvases_dir {
        Some(dir) => load_canvases(dir).at(Stage::Synth)?,
        None => {
            log::warn!("synthesis.canvases_dir unset; using generated lightbox canvases");
            crate::fixtures::canvases(4, 320)
        }
    };
    let assets = SceneAssets {
        pools: &pools,
        canvases: &canvases,
        ranges: &cfg.augmentation,
        cfg: &cfg.synthesis,
    };
    let dataset_dir = run_dir.join("dataset");
    let manifest = generate_dataset(assets, cfg.master_seed, &dataset_dir, jobs).at(Stage::Synth)?;
    artifacts.insert("dataset".into(), dataset_dir.clone());

    let manifest = split_dataset(&manifest, cfg.split.train_fraction, cfg.split_seed()).at(Stage::Split)?;
    let manifest_path = dataset_dir.join("manifest.csv");
    write_manifest(&manifest, &manifest_path).at(Stage::Split)?;
    artifacts.insert("manifest".into(), manifest_path);
    for w in &manifest.warnings {
        log::warn!("{w}");
    }

    let thread_pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .at(Stage::TrainBaseline)?;
    let (model, history) = thread_pool
        .install(|| {
            let train = classifier::featurize_split(&manifest, &dataset_dir, Split::Train, cfg.training.features)?;
            let val = classifier::featurize_split(&manifest, &dataset_dir, Split::Val, cfg.training.features)?;
            let mut head = cfg.training.clone();
            head.num_classes.get_or_insert(manifest.class_list.len());
            classifier::train(&train, &val, &head)
        })
        .at(Stage::TrainBaseline)?;
    let model_path = run_dir.join("model.bin");
    let saved = SavedModel {
        config: cfg.training.clone(),
        class_list: manifest.class_list.clone(),
        model,
        history: history.clone(),
    };
    save_model(&saved, &model_path).at(Stage::TrainBaseline)?;
    let history_path = run_dir.join("history.json");
    fs::write(
        &history_path,
        serde_json::to_string_pretty(&history).expect("history serializes"),
    )
    .at(Stage::TrainBaseline)?;
    artifacts.insert("model".into(), model_path);
    artifacts.insert("history".into(), history_path);

    let eval_split = if manifest.count(Split::Test) > 0 {
        Split::Test
    } else {
        Split::Val
    };
    let preds = thread_pool
        .install(|| classifier::predict_split(&saved.model, cfg.training.features, &manifest, &dataset_dir, eval_split))
        .at(Stage::Predict)?;
    let preds_path = run_dir.join(format!("preds_{}.jsonl", eval_split.as_str()));
    write_softmax(&preds, &preds_path).at(Stage::Predict)?;
    artifacts.insert("predictions".into(), preds_path);

    let mut members = vec![preds];
    for p in &cfg.ensemble.inputs {
        members.push(read_softmax(p).at(Stage::Eval)?);
    }
    let ensemble = ensemble_predict(&members, cfg.ensemble.weights.as_deref()).at(Stage::Eval)?;
    if members.len() > 1 {
        let combined_path = run_dir.join("combined.jsonl");
        write_softmax(&ensemble.combined, &combined_path).at(Stage::Eval)?;
        artifacts.insert("combined".into(), combined_path);
    }
    let cm = eval::confusion(&ensemble.predictions, &manifest, eval_split).at(Stage::Eval)?;
    let metrics = eval::report(&cm).at(Stage::Eval)?;
    let report_csv = run_dir.join("report.csv");
    fs::write(&report_csv, metrics.to_csv()).at(Stage::Eval)?;
    let report_txt = run_dir.join("report.txt");
    fs::write(&report_txt, metrics.render_text()).at(Stage::Eval)?;
    artifacts.insert("report_csv".into(), report_csv);
    artifacts.insert("report_text".into(), report_txt);

    let summary_path = run_dir.join(SUMMARY_FILE);
    artifacts.insert("summary".into(), summary_path.clone());
    let summary = RunSummary {
        run_dir: run_dir.clone(),
        master_seed: cfg.master_seed,
        artifacts,
        manifest_totals: ManifestTotals::of(&manifest),
        warnings: manifest.warnings.clone(),
        eval_split,
        final_val_accuracy: history.last().map(|h| h.val_accuracy),
        metrics,
    };
    fs::write(
        &summary_path,
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )
    .at(Stage::Eval)?;
    Ok(summary)
}
