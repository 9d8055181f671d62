//! Scene planning, compositing, and whole-dataset generation.
//!
//! A [`SceneSpec`] is a complete recipe for one 224×224 image: given the same
//! pools and canvases, [`compose_scene`] reproduces the image bit-exactly.
//! Scene seeds are derived per image as `hash64(master_seed, class, index)`,
//! so rendering order and parallelism never influence the output.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{augment_raster, augmented_dims, sample_params, AugmentationParams, AugmentationRanges};
use crate::extract::SeedCutout;
use crate::imaging::{load_rgb, save_png_rgb};
use crate::label::{ClassLabel, HeightBucket};
use crate::manifest::{partition_counts, DatasetManifest, ManifestRecord, Split};
use crate::seed::{hash64, SeedRng};

pub const OUTPUT_SIZE: u32 = 224;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("cutout pool is empty")]
    EmptyPool,
    #[error("no canvases supplied")]
    NoCanvas,
    #[error("pool mixes classes or heights: {0}")]
    MixedPool(String),
    #[error("missing pool for class {class} at {height} m")]
    MissingPool { class: ClassLabel, height: HeightBucket },
    #[error("missing asset {0}")]
    MissingAsset(String),
    #[error("canvas {id} is {width}x{height}; at least 224x224 required")]
    CanvasTooSmall { id: String, width: u32, height: u32 },
    #[error("cutout {id} has unsupported capture height {height} m")]
    UnknownHeight { id: String, height: f64 },
    #[error("invalid synthesis config: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

/// A lightbox background image.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundCanvas {
    pub id: String,
    pub pixels: RgbImage,
}

impl BackgroundCanvas {
    pub fn new(id: impl Into<String>, pixels: RgbImage) -> Result<Self, SynthError> {
        let id = id.into();
        let (width, height) = pixels.dimensions();
        if width < OUTPUT_SIZE || height < OUTPUT_SIZE {
            return Err(SynthError::CanvasTooSmall { id, width, height });
        }
        Ok(Self { id, pixels })
    }
}

/// Loads every PNG in `dir` (lexicographic order) as a canvas named by file stem.
pub fn load_canvases(dir: &Path) -> Result<Vec<BackgroundCanvas>, SynthError> {
    let io = |source| SynthError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(SynthError::NoCanvas);
    }
    files
        .iter()
        .map(|p| {
            let pixels = load_rgb(p).map_err(|source| SynthError::Image {
                path: p.clone(),
                source,
            })?;
            let id = p.file_stem().unwrap().to_string_lossy().into_owned();
            BackgroundCanvas::new(id, pixels)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub cutout_id: String,
    pub params: AugmentationParams,
    /// Top-left of the augmented cutout on the output image; may be negative.
    pub x: i64,
    pub y: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scene_seed: u64,
    pub canvas_id: String,
    /// Top-left of the 224×224 window cropped from the canvas.
    pub crop_origin: (u32, u32),
    pub class_label: ClassLabel,
    pub height_bucket: HeightBucket,
    pub placements: Vec<Placement>,
    pub output_size: (u32, u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub images_per_class: usize,
    /// Relative share of images per height bucket (0.3, 0.5, 0.7 m).
    pub height_weights: [u64; 3],
    /// Inclusive range of seeds per image.
    pub seeds_per_image: [usize; 2],
    /// When set, each placement is redrawn (up to a fixed number of attempts)
    /// until its box overlaps every earlier box by at most this IoU.
    pub max_overlap_iou: Option<f64>,
    /// Class order of the manifest; defaults to the sorted labels found in the pools.
    pub classes: Option<Vec<ClassLabel>>,
    pub pools_dir: Option<PathBuf>,
    pub canvases_dir: Option<PathBuf>,
    /// Extra images per class rendered under a separate seed and marked `test`.
    pub test_images_per_class: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            images_per_class: 1000,
            height_weights: [333, 333, 334],
            seeds_per_image: [20, 50],
            max_overlap_iou: None,
            classes: None,
            pools_dir: None,
            canvases_dir: None,
            test_images_per_class: 0,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<(), String> {
        let [lo, hi] = self.seeds_per_image;
        if lo == 0 || lo > hi {
            return Err(format!(
                "synthesis.seeds_per_image must satisfy 1 <= lo <= hi, got [{lo}, {hi}]"
            ));
        }
        if self.height_weights.iter().sum::<u64>() == 0 {
            return Err("synthesis.height_weights must not all be zero".into());
        }
        if let Some(iou) = self.max_overlap_iou {
            if !(0.0..=1.0).contains(&iou) {
                return Err(format!("synthesis.max_overlap_iou must lie in [0, 1], got {iou}"));
            }
        }
        if let Some(classes) = &self.classes {
            let mut sorted = classes.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != classes.len() {
                return Err("synthesis.classes contains duplicates".into());
            }
        }
        Ok(())
    }
}

const OVERLAP_ATTEMPTS: usize = 32;

fn box_iou(a: (i64, i64, u32, u32), b: (i64, i64, u32, u32)) -> f64 {
    let ix = (a.0 + a.2 as i64).min(b.0 + b.2 as i64) - a.0.max(b.0);
    let iy = (a.1 + a.3 as i64).min(b.1 + b.3 as i64) - a.1.max(b.1);
    if ix <= 0 || iy <= 0 {
        return 0.0;
    }
    let inter = (ix * iy) as f64;
    let union = (a.2 as f64 * a.3 as f64) + (b.2 as f64 * b.3 as f64) - inter;
    inter / union
}

/// Plans one scene from a single-class, single-height pool.
///
/// Draw order from `SeedRng(scene_seed)`: canvas index, crop origin, seed
/// count, then per placement the cutout index and the raster centre. Each
/// placement's augmentation parameters come from their own generator seeded
/// with `hash64(scene_seed, placement_index)`.
pub fn plan_scene(
    scene_seed: u64,
    pool: &[SeedCutout],
    canvases: &[BackgroundCanvas],
    ranges: &AugmentationRanges,
    cfg: &SynthesisConfig,
) -> Result<SceneSpec, SynthError> {
    let first = pool.first().ok_or(SynthError::EmptyPool)?;
    if canvases.is_empty() {
        return Err(SynthError::NoCanvas);
    }
    let height_bucket = HeightBucket::from_meters(first.capture_height_m).map_err(|_| SynthError::UnknownHeight {
        id: first.id.clone(),
        height: first.capture_height_m,
    })?;
    if let Some(odd) = pool
        .iter()
        .find(|c| c.class_label != first.class_label || (c.capture_height_m - first.capture_height_m).abs() > 1e-9)
    {
        return Err(SynthError::MixedPool(format!(
            "{} is {}@{} but pool is {}@{}",
            odd.id, odd.class_label, odd.capture_height_m, first.class_label, first.capture_height_m
        )));
    }

    let mut rng = SeedRng::new(scene_seed);
    let canvas = &canvases[rng.below(canvases.len() as u64) as usize];
    let (cw, ch) = canvas.pixels.dimensions();
    let crop_origin = (
        rng.below((cw - OUTPUT_SIZE + 1) as u64) as u32,
        rng.below((ch - OUTPUT_SIZE + 1) as u64) as u32,
    );
    let [lo, hi] = cfg.seeds_per_image;
    let count = rng.range_inclusive(lo as i64, hi as i64) as usize;

    let mut placements: Vec<Placement> = Vec::with_capacity(count);
    let mut boxes: Vec<(i64, i64, u32, u32)> = Vec::with_capacity(count);
    for index in 0..count {
        let cutout = &pool[rng.below(pool.len() as u64) as usize];
        let params = sample_params(hash64(&[scene_seed.into(), index.into()]), ranges);
        let (w, h) = augmented_dims(cutout.pixels.width(), cutout.pixels.height(), &params);
        let draw = |rng: &mut SeedRng| {
            let cx = rng.below(OUTPUT_SIZE as u64) as i64;
            let cy = rng.below(OUTPUT_SIZE as u64) as i64;
            (cx - (w / 2) as i64, cy - (h / 2) as i64, w, h)
        };
        let mut bbox = draw(&mut rng);
        if let Some(limit) = cfg.max_overlap_iou {
            let mut attempts = 1;
            while attempts < OVERLAP_ATTEMPTS && boxes.iter().any(|&b| box_iou(b, bbox) > limit) {
                bbox = draw(&mut rng);
                attempts += 1;
            }
        }
        boxes.push(bbox);
        placements.push(Placement {
            cutout_id: cutout.id.clone(),
            params,
            x: bbox.0,
            y: bbox.1,
        });
    }

    Ok(SceneSpec {
        scene_seed,
        canvas_id: canvas.id.clone(),
        crop_origin,
        class_label: first.class_label.clone(),
        height_bucket,
        placements,
        output_size: (OUTPUT_SIZE, OUTPUT_SIZE),
    })
}

/// Source-over blend of an RGBA raster onto an opaque RGB image, in integers.
fn blend_onto(dst: &mut RgbImage, src: &image::RgbaImage, x: i64, y: i64) {
    let (dw, dh) = (dst.width() as i64, dst.height() as i64);
    for (sx, sy, p) in src.enumerate_pixels() {
        let a = p[3] as u32;
        if a == 0 {
            continue;
        }
        let tx = x + sx as i64;
        let ty = y + sy as i64;
        if tx < 0 || ty < 0 || tx >= dw || ty >= dh {
            continue;
        }
        let d = dst.get_pixel_mut(tx as u32, ty as u32);
        for c in 0..3 {
            d[c] = ((p[c] as u32 * a + d[c] as u32 * (255 - a) + 127) / 255) as u8;
        }
    }
}

/// Renders a scene. Placements whose augmented raster ends up fully
/// transparent contribute nothing.
pub fn compose_scene(
    spec: &SceneSpec,
    pool: &[SeedCutout],
    canvases: &[BackgroundCanvas],
) -> Result<RgbImage, SynthError> {
    let canvas = canvases
        .iter()
        .find(|c| c.id == spec.canvas_id)
        .ok_or_else(|| SynthError::MissingAsset(format!("canvas {}", spec.canvas_id)))?;
    let (ox, oy) = spec.crop_origin;
    let (w, h) = spec.output_size;
    if ox + w > canvas.pixels.width() || oy + h > canvas.pixels.height() {
        return Err(SynthError::MissingAsset(format!(
            "canvas {} has no {w}x{h} window at ({ox}, {oy})",
            canvas.id
        )));
    }
    let mut out = RgbImage::from_fn(w, h, |x, y| *canvas.pixels.get_pixel(ox + x, oy + y));
    let by_id: HashMap<&str, &SeedCutout> = pool.iter().map(|c| (c.id.as_str(), c)).collect();
    for p in &spec.placements {
        let cutout = by_id
            .get(p.cutout_id.as_str())
            .ok_or_else(|| SynthError::MissingAsset(format!("cutout {}", p.cutout_id)))?;
        let raster = augment_raster(&cutout.pixels, &p.params);
        blend_onto(&mut out, &raster, p.x, p.y);
    }
    Ok(out)
}

/// Cutouts grouped by class and capture height.
#[derive(Debug, Clone, Default)]
pub struct PoolSet {
    pools: BTreeMap<(ClassLabel, HeightBucket), Vec<SeedCutout>>,
}

impl PoolSet {
    pub fn from_cutouts(cutouts: impl IntoIterator<Item = SeedCutout>) -> Result<Self, SynthError> {
        let mut pools: BTreeMap<_, Vec<SeedCutout>> = BTreeMap::new();
        for c in cutouts {
            let h = HeightBucket::from_meters(c.capture_height_m).map_err(|_| SynthError::UnknownHeight {
                id: c.id.clone(),
                height: c.capture_height_m,
            })?;
            pools.entry((c.class_label.clone(), h)).or_default().push(c);
        }
        Ok(Self { pools })
    }

    pub fn get(&self, class: &ClassLabel, height: HeightBucket) -> Option<&[SeedCutout]> {
        self.pools.get(&(class.clone(), height)).map(Vec::as_slice)
    }

    /// Sorted, deduplicated class labels present in any pool.
    pub fn classes(&self) -> Vec<ClassLabel> {
        let mut v: Vec<ClassLabel> = self.pools.keys().map(|(c, _)| c.clone()).collect();
        v.dedup();
        v
    }

    pub fn len(&self) -> usize {
        self.pools.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Everything needed to render any scene of a dataset.
#[derive(Debug, Clone, Copy)]
pub struct SceneAssets<'a> {
    pub pools: &'a PoolSet,
    pub canvases: &'a [BackgroundCanvas],
    pub ranges: &'a AugmentationRanges,
    pub cfg: &'a SynthesisConfig,
}

impl SceneAssets<'_> {
    pub fn plan(&self, scene_seed: u64, class: &ClassLabel, height: HeightBucket) -> Result<SceneSpec, SynthError> {
        let pool = self.pools.get(class, height).ok_or_else(|| SynthError::MissingPool {
            class: class.clone(),
            height,
        })?;
        plan_scene(scene_seed, pool, self.canvases, self.ranges, self.cfg)
    }

    /// Plans and composes the scene for `scene_seed`.
    pub fn render(&self, scene_seed: u64, class: &ClassLabel, height: HeightBucket) -> Result<RgbImage, SynthError> {
        let spec = self.plan(scene_seed, class, height)?;
        let pool = self.pools.get(class, height).expect("checked by plan");
        compose_scene(&spec, pool, self.canvases)
    }

    pub fn render_record(&self, record: &ManifestRecord) -> Result<RgbImage, SynthError> {
        self.render(record.scene_seed, &record.class_label, record.height_bucket)
    }
}

pub fn scene_seed(master_seed: u64, class: &ClassLabel, index: usize) -> u64 {
    hash64(&[master_seed.into(), class.as_str().into(), index.into()])
}

/// Resolves the class list: configured order if set, else sorted pool labels.
pub fn class_list(pools: &PoolSet, cfg: &SynthesisConfig) -> Vec<ClassLabel> {
    cfg.classes.clone().unwrap_or_else(|| pools.classes())
}

/// Renders `images_per_class` images for every class into
/// `out_dir/<class>/`, returning a manifest with all records unassigned.
///
/// Image `i` of a class takes its height from a contiguous block: the first
/// share of indices is 0.3 m, then 0.5 m, then 0.7 m, with block sizes from
/// the largest-remainder partition of `height_weights`. With
/// `test_images_per_class` set, a further block per class is rendered into
/// `out_dir/<class>/test/` from seeds under `hash64(master_seed, "test")` and
/// marked `test`. `jobs` caps the
/// rendering threads; the output is identical for every value.
pub fn generate_dataset(
    assets: SceneAssets<'_>,
    master_seed: u64,
    out_dir: &Path,
    jobs: usize,
) -> Result<DatasetManifest, SynthError> {
    assets.cfg.validate().map_err(SynthError::Config)?;
    if assets.canvases.is_empty() {
        return Err(SynthError::NoCanvas);
    }
    let classes = class_list(assets.pools, assets.cfg);
    for class in &classes {
        for h in HeightBucket::ALL {
            if assets.pools.get(class, h).is_none_or(|p| p.is_empty()) {
                return Err(SynthError::MissingPool {
                    class: class.clone(),
                    height: h,
                });
            }
        }
    }

    let n = assets.cfg.images_per_class;
    let n_test = assets.cfg.test_images_per_class;
    let test_seed = hash64(&[master_seed.into(), "test".into()]);
    let mut jobs_list = Vec::with_capacity(classes.len() * (n + n_test));
    for class in &classes {
        let dir = out_dir.join(class.as_str());
        fs::create_dir_all(&dir).map_err(|source| SynthError::Io {
            path: dir.clone(),
            source,
        })?;
        for (i, h) in height_blocks(n, &assets.cfg.height_weights).into_iter().enumerate() {
            jobs_list.push(ManifestRecord {
                image_path: format!("{class}/{class}_{i:0w$}.png", w = index_width(n)),
                class_label: class.clone(),
                height_bucket: h,
                split: Split::Unassigned,
                scene_seed: scene_seed(master_seed, class, i),
            });
        }
        if n_test > 0 {
            let dir = dir.join("test");
            fs::create_dir_all(&dir).map_err(|source| SynthError::Io {
                path: dir.clone(),
                source,
            })?;
        }
        for (i, h) in height_blocks(n_test, &assets.cfg.height_weights)
            .into_iter()
            .enumerate()
        {
            jobs_list.push(ManifestRecord {
                image_path: format!("{class}/test/{class}_{i:0w$}.png", w = index_width(n_test)),
                class_label: class.clone(),
                height_bucket: h,
                split: Split::Test,
                scene_seed: scene_seed(test_seed, class, i),
            });
        }
    }

    let render_one = |record: &ManifestRecord| -> Result<(), SynthError> {
        let img = assets.render_record(record)?;
        let path = out_dir.join(&record.image_path);
        save_png_rgb(&img, &path).map_err(|source| SynthError::Image { path, source })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| jobs_list.par_iter().try_for_each(render_one))?;

    Ok(DatasetManifest {
        class_list: classes,
        records: jobs_list,
        warnings: Vec::new(),
    })
}

fn height_blocks(n: usize, weights: &[u64; 3]) -> Vec<HeightBucket> {
    HeightBucket::ALL
        .iter()
        .zip(partition_counts(n, weights))
        .flat_map(|(&h, k)| std::iter::repeat_n(h, k))
        .collect()
}

fn index_width(n: usize) -> usize {
    n.saturating_sub(1).to_string().len().max(4)
}

/// Solid-colour helper for tests and previews.
pub fn uniform_canvas(id: &str, w: u32, h: u32, rgb: [u8; 3]) -> BackgroundCanvas {
    BackgroundCanvas::new(id, RgbImage::from_pixel(w, h, Rgb(rgb))).expect("canvas large enough")
}
