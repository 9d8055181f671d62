use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use seedkit::augment::{augment, sample_params};
use seedkit::classifier::{self, load_model, save_model, FeatureMode, HeadConfig, HeadPreset, SavedModel};
use seedkit::config::{GlobalConfig, SourceSpec};
use seedkit::eval::{self, ensemble_predict, predictions_of};
use seedkit::extract::{segment_frame, ThresholdMode};
use seedkit::imaging::{save_png_rgb, save_png_rgba};
use seedkit::ingest::{decode_video, focus_score, load_frames, select_frame};
use seedkit::label::{ClassLabel, HeightBucket};
use seedkit::manifest::{read_manifest, split_dataset, write_manifest, DatasetManifest, Split};
use seedkit::pipeline::{run_pipeline, PipelineError, RunOptions};
use seedkit::pool::{read_pool_tree, write_cutout_pool};
use seedkit::seed::{hash64, SeedPart};
use seedkit::softmax::{read_softmax, write_softmax};
use seedkit::synth::{generate_dataset, load_canvases, PoolSet, SceneAssets};

use crate::{Cli, Command, ConfigArg, SplitArg, ThresholdArg};

pub struct CmdError {
    pub code: u8,
    pub error: anyhow::Error,
}

type CmdResult<T = ()> = Result<T, CmdError>;

trait ExitClass<T> {
    /// Runtime failure, exit status 1.
    fn runtime(self) -> CmdResult<T>;
    /// Usage or configuration error, exit status 2.
    fn usage(self) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> ExitClass<T> for Result<T, E> {
    fn runtime(self) -> CmdResult<T> {
        self.map_err(|e| CmdError {
            code: 1,
            error: e.into(),
        })
    }
    fn usage(self) -> CmdResult<T> {
        self.map_err(|e| CmdError {
            code: 2,
            error: e.into(),
        })
    }
}

fn load_config(arg: &ConfigArg) -> CmdResult<GlobalConfig> {
    match &arg.config {
        Some(p) => GlobalConfig::load(p).usage(),
        None => Ok(GlobalConfig::default()),
    }
}

fn validated(cfg: GlobalConfig) -> CmdResult<GlobalConfig> {
    cfg.validate().usage()?;
    Ok(cfg)
}

fn split_of(s: SplitArg) -> Split {
    match s {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
        SplitArg::Test => Split::Test,
    }
}

fn manifest_root(manifest: &Path, root: &Option<PathBuf>) -> PathBuf {
    root.clone()
        .unwrap_or_else(|| manifest.parent().map(Path::to_path_buf).unwrap_or_default())
}

fn create_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .runtime()
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CmdResult {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n")
        .with_context(|| format!("writing {}", path.display()))
        .runtime()
}

pub fn dispatch(cli: &Cli) -> CmdResult {
    let jobs = cli.jobs as usize;
    rayon_pool(jobs)?.install(|| match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Extract(a) => extract(a),
        Command::AugmentPreview(a) => augment_preview(a),
        Command::Synth(a) => synth(a, jobs),
        Command::Split(a) => split(a),
        Command::TrainBaseline(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Ensemble(a) => ensemble(a),
        Command::Eval(a) => evaluate(a),
        Command::Run(a) => run(a, jobs),
        Command::MakeFixtures(a) => make_fixtures(a),
    })
}

fn rayon_pool(jobs: usize) -> CmdResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().runtime()
}

fn ingest(a: &crate::IngestArgs) -> CmdResult {
    let mut cfg = load_config(&a.config)?;
    if let Some(c) = &a.decoder_cmd {
        cfg.ingest.decoder_cmd = Some(c.clone());
    }
    if let Some(n) = a.every {
        cfg.ingest.sample_every = n;
    }
    if let Some(k) = a.top_k {
        cfg.ingest.top_k = k;
    }
    let cfg = validated(cfg)?;
    let frames = if let Some(video) = &a.video {
        let template = cfg
            .ingest
            .decoder_cmd
            .as_deref()
            .ok_or_else(|| anyhow!("decoding a video needs --decoder-cmd or ingest.decoder_cmd"))
            .usage()?;
        decode_video(
            video,
            template,
            &a.out.join("decoded"),
            cfg.ingest.sample_every,
            a.height,
        )
        .runtime()?
    } else {
        let dir = a.frames.as_ref().expect("clap enforces one input");
        load_frames(dir, a.height).runtime()?
    };
    let best = select_frame(&frames, cfg.ingest.top_k).runtime()?;
    let selected_dir = a.out.join("selected");
    create_dir(&selected_dir)?;
    let mut kept = Vec::new();
    for f in &best {
        let path = selected_dir.join(format!("{}.png", f.id));
        save_png_rgb(&f.pixels, &path)
            .with_context(|| format!("writing {}", path.display()))
            .runtime()?;
        kept.push(serde_json::json!({
            "id": f.id,
            "source": f.source,
            "focus_score": focus_score(&f.pixels),
            "path": path,
        }));
    }
    write_json(
        &a.out.join("frames.json"),
        &serde_json::json!({ "metadata": frames.metadata, "frames_seen": frames.len(), "selected": kept }),
    )?;
    println!(
        "kept {} of {} frames in {}",
        best.len(),
        frames.len(),
        selected_dir.display()
    );
    Ok(())
}

fn extract(a: &crate::ExtractArgs) -> CmdResult {
    let mut cfg = load_config(&a.config)?;
    let seg = &mut cfg.segmentation;
    if let Some(t) = a.threshold {
        seg.threshold_mode = match t {
            ThresholdArg::Otsu => ThresholdMode::Otsu,
            ThresholdArg::Fixed => ThresholdMode::Fixed,
        };
    }
    if let Some(t) = a.fixed_threshold {
        seg.fixed_threshold = t;
    }
    if let Some(v) = a.min_area {
        seg.min_area_px = v;
    }
    if let Some(v) = a.max_area {
        seg.max_area_px = v;
    }
    if let Some(v) = a.padding {
        seg.padding_px = v;
    }
    if a.light_foreground {
        seg.invert = false;
    }
    let cfg = validated(cfg)?;
    let class = ClassLabel::new(a.class_label.as_str()).usage()?;
    let height = HeightBucket::from_meters(a.height).usage()?;
    let frames = load_frames(&a.frames, Some(height.meters())).runtime()?;
    let cutouts: Vec<_> = frames
        .frames
        .iter()
        .flat_map(|f| segment_frame(f, &cfg.segmentation, &class, height.meters()))
        .collect();
    if cutouts.is_empty() {
        return Err(anyhow!("no seeds found in {}", a.frames.display())).runtime();
    }
    let index = write_cutout_pool(&cutouts, &a.out).runtime()?;
    println!(
        "{} cutouts from {} frames -> {}",
        cutouts.len(),
        frames.len(),
        index.display()
    );
    Ok(())
}

fn augment_preview(a: &crate::AugmentPreviewArgs) -> CmdResult {
    let cfg = validated(load_config(&a.config)?)?;
    let seed = a.seed.unwrap_or(cfg.master_seed);
    let cutouts = read_pool_tree(&a.pool).runtime()?;
    create_dir(&a.out)?;
    let mut log_lines = Vec::new();
    for c in cutouts.iter().take(a.limit) {
        for j in 0..a.count {
            let params = sample_params(
                hash64(&[SeedPart::U64(seed), SeedPart::Str(&c.id), SeedPart::U64(j as u64)]),
                &cfg.augmentation,
            );
            let file = format!("{}_{j:02}.png", c.id);
            match augment(c, &params) {
                Ok(out) => save_png_rgba(&out.pixels, &a.out.join(&file))
                    .with_context(|| format!("writing {file}"))
                    .runtime()?,
                Err(e) => log::warn!("{}: {e}", c.id),
            }
            log_lines.push(serde_json::json!({ "cutout": c.id, "file": file, "params": params }));
        }
    }
    write_json(&a.out.join("params.json"), &log_lines)?;
    println!("{} previews in {}", log_lines.len(), a.out.display());
    Ok(())
}

fn synth(a: &crate::SynthArgs, jobs: usize) -> CmdResult {
    let mut cfg = load_config(&a.config)?;
    if let Some(p) = &a.pools {
        cfg.synthesis.pools_dir = Some(p.clone());
    }
    if let Some(p) = &a.canvases {
        cfg.synthesis.canvases_dir = Some(p.clone());
    }
    if let Some(n) = a.images_per_class {
        cfg.synthesis.images_per_class = n;
    }
    if let Some(n) = a.test_images_per_class {
        cfg.synthesis.test_images_per_class = n;
    }
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    let cfg = validated(cfg)?;
    let pools_dir = cfg
        .synthesis
        .pools_dir
        .as_ref()
        .ok_or_else(|| anyhow!("synth needs --pools or synthesis.pools_dir"))
        .usage()?;
    let pools = PoolSet::from_cutouts(read_pool_tree(pools_dir).runtime()?).runtime()?;
    let canvases = match &cfg.synthesis.canvases_dir {
        Some(d) => load_canvases(d).runtime()?,
        None => seedkit::fixtures::canvases(4, 320),
    };
    let assets = SceneAssets {
        pools: &pools,
        canvases: &canvases,
        ranges: &cfg.augmentation,
        cfg: &cfg.synthesis,
    };
    create_dir(&a.out)?;
    let manifest = generate_dataset(assets, cfg.master_seed, &a.out, jobs).runtime()?;
    let path = a.out.join("manifest.csv");
    write_manifest(&manifest, &path).runtime()?;
    println!("{} images -> {}", manifest.records.len(), path.display());
    Ok(())
}

fn split_counts(m: &DatasetManifest) -> String {
    let mut counts: BTreeMap<(String, &str), usize> = BTreeMap::new();
    for r in &m.records {
        *counts.entry((r.class_label.to_string(), r.split.as_str())).or_default() += 1;
    }
    counts
        .iter()
        .map(|((c, s), n)| format!("{c}\t{s}\t{n}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn split(a: &crate::SplitArgs) -> CmdResult {
    let mut cfg = load_config(&a.config)?;
    if let Some(f) = a.train_fraction {
        cfg.split.train_fraction = f;
    }
    if let Some(s) = a.seed {
        cfg.split.seed = Some(s);
    }
    let cfg = validated(cfg)?;
    let manifest = read_manifest(&a.manifest).runtime()?;
    let out = split_dataset(&manifest, cfg.split.train_fraction, cfg.split_seed()).runtime()?;
    for w in &out.warnings {
        log::warn!("{w}");
    }
    write_manifest(&out, &a.out).runtime()?;
    println!("{}", split_counts(&out));
    Ok(())
}

fn head_config(a: &crate::TrainArgs) -> CmdResult<HeadConfig> {
    let mut head = match &a.config {
        None => HeadConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))
                .usage()?;
            match serde_json::from_str::<GlobalConfig>(&text) {
                Ok(g) => g.training,
                Err(global_err) => serde_json::from_str::<HeadConfig>(&text)
                    .map_err(|head_err| {
                        anyhow!(
                            "{} is neither a global config ({global_err}) nor a head config ({head_err})",
                            p.display()
                        )
                    })
                    .usage()?,
            }
        }
    };
    if let Some(p) = &a.preset {
        let p: HeadPreset = p.parse().map_err(|e: String| anyhow!(e)).usage()?;
        head = HeadConfig::preset(p);
    }
    if let Some(e) = a.epochs {
        head.epochs = e;
    }
    if let Some(s) = a.seed {
        head.init_seed = s;
    }
    if let Some(n) = a.nodes {
        head.nodes_per_layer = n;
        head.layer_widths = None;
    }
    if let Some(f) = &a.features {
        head.features = serde_json::from_value(serde_json::Value::String(f.clone()))
            .map_err(|_| anyhow!("unknown feature mode {f:?} (grid, sorted_grid, luma_quantiles)"))
            .usage()?;
    }
    head.validate().usage()?;
    Ok(head)
}

fn train(a: &crate::TrainArgs) -> CmdResult {
    let mut head = head_config(a)?;
    let manifest = read_manifest(&a.manifest).runtime()?;
    let root = manifest_root(&a.manifest, &a.root);
    let k = manifest.class_list.len();
    if head.num_classes.is_some_and(|n| n != k) {
        return Err(anyhow!(
            "training.num_classes does not match the manifest's {k} classes"
        ))
        .usage();
    }
    head.num_classes = Some(k);
    let train = classifier::featurize_split(&manifest, &root, Split::Train, head.features).runtime()?;
    let val = classifier::featurize_split(&manifest, &root, Split::Val, head.features).runtime()?;
    let (model, history) = classifier::train(&train, &val, &head).runtime()?;
    if let Some(last) = history.last() {
        println!(
            "epoch {}: train loss {:.4} acc {:.4}, val loss {:.4} acc {:.4}",
            last.epoch, last.train_loss, last.train_accuracy, last.val_loss, last.val_accuracy
        );
    }
    let saved = SavedModel {
        config: head,
        class_list: manifest.class_list.clone(),
        model,
        history,
    };
    save_model(&saved, &a.out).runtime()?;
    println!("model -> {}", a.out.display());
    Ok(())
}

fn predict(a: &crate::PredictArgs) -> CmdResult {
    let saved = load_model(&a.model).runtime()?;
    let manifest = read_manifest(&a.manifest).runtime()?;
    if saved.class_list != manifest.class_list {
        return Err(anyhow!(
            "model classes {:?} differ from manifest classes {:?}",
            saved.class_list,
            manifest.class_list
        ))
        .usage();
    }
    let root = manifest_root(&a.manifest, &a.root);
    let file = classifier::predict_split(&saved.model, saved.config.features, &manifest, &root, split_of(a.split))
        .runtime()?;
    write_softmax(&file, &a.out).runtime()?;
    println!("{} records -> {}", file.records.len(), a.out.display());
    Ok(())
}

fn ensemble(a: &crate::EnsembleArgs) -> CmdResult {
    if let Some(w) = &a.weights {
        if w.len() != a.inputs.len() {
            return Err(anyhow::anyhow!("{} weights for {} inputs", w.len(), a.inputs.len())).usage();
        }
        if let Some(bad) = w.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(anyhow::anyhow!("weight {bad} is not a positive number")).usage();
        }
    }
    let files = a
        .inputs
        .iter()
        .map(|p| read_softmax(p))
        .collect::<Result<Vec<_>, _>>()
        .runtime()?;
    for (p, f) in a.inputs.iter().zip(&files) {
        if let Err(e) = f.validate_normalized(1e-6) {
            log::warn!("{}: {e}", p.display());
        }
    }
    let e = ensemble_predict(&files, a.weights.as_deref()).runtime()?;
    write_softmax(&e.combined, &a.out).runtime()?;
    println!(
        "{} combined records from {} models -> {}",
        e.combined.records.len(),
        files.len(),
        a.out.display()
    );
    Ok(())
}

fn evaluate(a: &crate::EvalArgs) -> CmdResult {
    let preds = read_softmax(&a.preds).runtime()?;
    let manifest = read_manifest(&a.manifest).runtime()?;
    if preds.class_list != manifest.class_list {
        return Err(eval::EvalError::ClassListMismatch {
            expected: manifest.class_list.clone(),
            found: preds.class_list.clone(),
        })
        .runtime();
    }
    let cm = eval::confusion(&predictions_of(&preds).runtime()?, &manifest, split_of(a.split)).runtime()?;
    let report = eval::report(&cm).runtime()?;
    print!("{}", report.render_text());
    if let Some(path) = &a.report {
        fs::write(path, report.to_csv())
            .with_context(|| format!("writing {}", path.display()))
            .runtime()?;
    }
    Ok(())
}

fn run(a: &crate::RunArgs, jobs: usize) -> CmdResult {
    let mut cfg = GlobalConfig::load(&a.config).usage()?;
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    let opts = RunOptions {
        jobs,
        runs_dir: a.runs_dir.clone(),
    };
    match run_pipeline(&cfg, &opts) {
        Ok(summary) => {
            print!("{}", summary.metrics.render_text());
            println!(
                "run summary -> {}",
                summary.run_dir.join(seedkit::pipeline::SUMMARY_FILE).display()
            );
            Ok(())
        }
        Err(e @ PipelineError::Config(_)) => Err(e).usage(),
        Err(e) => Err(e).runtime(),
    }
}

fn make_fixtures(a: &crate::FixtureArgs) -> CmdResult {
    let classes = if a.classes.is_empty() {
        ClassLabel::builtin()
    } else {
        a.classes
            .iter()
            .map(|c| ClassLabel::new(c.as_str()))
            .collect::<Result<_, _>>()
            .usage()?
    };
    let frames_root = a.out.join("frames");
    let dirs = seedkit::fixtures::write_frames(&frames_root, &classes).runtime()?;
    let canvases = a.out.join("canvases");
    seedkit::fixtures::write_canvases(&canvases, 4, 320).runtime()?;
    let mut cfg = GlobalConfig {
        runs_dir: a.out.join("runs"),
        sources: dirs
            .into_iter()
            .map(|(class_label, height_m, dir)| SourceSpec {
                class_label,
                height_m,
                frames_dir: Some(dir),
                video: None,
            })
            .collect(),
        ..GlobalConfig::default()
    };
    cfg.synthesis.canvases_dir = Some(canvases);
    cfg.training.features = FeatureMode::LumaQuantiles;
    cfg.validate().runtime()?;
    let path = a.out.join("config.json");
    write_json(&path, &cfg)?;
    println!("fixtures and example config -> {}", path.display());
    Ok(())
}
