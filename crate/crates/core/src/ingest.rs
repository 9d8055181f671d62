//! Frame ingestion: external video decoding, PNG frame directories, and
//! sharpness-based frame selection.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::luma_milli;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("decoder template must contain {{input}} and {{output_pattern}}: {0:?}")]
    InvalidTemplate(String),
    #[error("video not found: {0}")]
    VideoNotFound(PathBuf),
    #[error("sample_every must be positive")]
    InvalidSampling,
    #[error("decoder failed ({status}): {diagnostic}")]
    DecodeFailed { status: String, diagnostic: String },
    #[error("decoder emitted no frames")]
    EmptyVideo,
    #[error("no PNG files in {0}")]
    EmptyDirectory(PathBuf),
    #[error("no frames to select from")]
    EmptyInput,
    #[error("top_k must be positive")]
    InvalidTopK,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub id: String,
    pub pixels: RgbImage,
    pub source: PathBuf,
    pub capture_height_m: Option<f64>,
}

impl Frame {
    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }
}

#[derive(Debug, Clone, Default)]
pub struct FrameSet {
    pub frames: Vec<Frame>,
    pub metadata: BTreeMap<String, String>,
}

impl FrameSet {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Ingestion settings as they appear in the global config.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    /// Command template with `{input}` and `{output_pattern}` placeholders.
    pub decoder_cmd: Option<String>,
    pub sample_every: usize,
    /// Number of sharpest frames kept per source.
    pub top_k: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            decoder_cmd: None,
            sample_every: 1,
            top_k: 1,
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.sample_every == 0 {
            return Err("ingest.sample_every must be positive".into());
        }
        if self.top_k == 0 {
            return Err("ingest.top_k must be positive".into());
        }
        if let Some(t) = &self.decoder_cmd {
            check_template(t).map_err(|e| e.to_string())?;
        }
        Ok(())
    }
}

const FRAME_PATTERN: &str = "frame_%06d.png";

fn check_template(template: &str) -> Result<(), IngestError> {
    if template.contains("{input}") && template.contains("{output_pattern}") {
        Ok(())
    } else {
        Err(IngestError::InvalidTemplate(template.to_string()))
    }
}

/// Splits the template shell-style and substitutes placeholders per token, so
/// paths containing spaces stay single arguments.
fn render_command(template: &str, input: &Path, pattern: &Path) -> Result<Vec<String>, IngestError> {
    let tokens = shlex::split(template).ok_or_else(|| IngestError::InvalidTemplate(template.to_string()))?;
    if tokens.is_empty() {
        return Err(IngestError::InvalidTemplate(template.to_string()));
    }
    let input = input.to_string_lossy();
    let pattern = pattern.to_string_lossy();
    Ok(tokens
        .into_iter()
        .map(|t| t.replace("{input}", &input).replace("{output_pattern}", &pattern))
        .collect())
}

fn png_files_sorted(dir: &Path) -> Result<Vec<PathBuf>, IngestError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn load_frame(path: &Path, id: String, capture_height_m: Option<f64>) -> Result<Frame, IngestError> {
    let pixels = crate::imaging::load_rgb(path).map_err(|source| IngestError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(Frame {
        id,
        pixels,
        source: path.to_path_buf(),
        capture_height_m,
    })
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Runs the configured external decoder on `video_path` and keeps every
/// `sample_every`-th emitted frame.
///
/// The decoder writes into a staging directory under `out_dir`; retained
/// frames are moved to `out_dir/frame_NNNNNN.png`, where `NNNNNN` is the
/// 0-based index of the frame in decoder output order.
pub fn decode_video(
    video_path: &Path,
    decoder_command_template: &str,
    out_dir: &Path,
    sample_every: usize,
    capture_height_m: Option<f64>,
) -> Result<FrameSet, IngestError> {
    check_template(decoder_command_template)?;
    if sample_every == 0 {
        return Err(IngestError::InvalidSampling);
    }
    if !video_path.exists() {
        return Err(IngestError::VideoNotFound(video_path.to_path_buf()));
    }
    fs::create_dir_all(out_dir)?;
    let staging = out_dir.join(".decode-staging");
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(&staging)?;

    let argv = render_command(decoder_command_template, video_path, &staging.join(FRAME_PATTERN))?;
    log::info!(
        "running decoder: {}",
        shlex::try_join(argv.iter().map(String::as_str)).unwrap_or_default()
    );
    let output = Command::new(&argv[0]).args(&argv[1..]).output()?;
    if !output.status.success() {
        let mut diagnostic = String::from_utf8_lossy(&output.stderr).into_owned();
        if diagnostic.trim().is_empty() {
            diagnostic = String::from_utf8_lossy(&output.stdout).into_owned();
        }
        let _ = fs::remove_dir_all(&staging);
        return Err(IngestError::DecodeFailed {
            status: output.status.to_string(),
            diagnostic,
        });
    }

    let emitted = png_files_sorted(&staging)?;
    if emitted.is_empty() {
        let _ = fs::remove_dir_all(&staging);
        return Err(IngestError::EmptyVideo);
    }

    let mut frames = Vec::new();
    for (index, path) in emitted.iter().enumerate() {
        if index % sample_every != 0 {
            continue;
        }
        let id = format!("frame_{index:06}");
        let dest = out_dir.join(format!("{id}.png"));
        fs::rename(path, &dest)?;
        frames.push(load_frame(&dest, id, capture_height_m)?);
    }
    fs::remove_dir_all(&staging)?;

    let mut metadata = BTreeMap::new();
    metadata.insert(
        "command".to_string(),
        shlex::try_join(argv.iter().map(String::as_str)).unwrap_or_else(|_| argv.join(" ")),
    );
    metadata.insert("sample_every".to_string(), sample_every.to_string());
    metadata.insert("emitted".to_string(), emitted.len().to_string());
    metadata.insert("retained".to_string(), frames.len().to_string());
    Ok(FrameSet { frames, metadata })
}

/// Loads every PNG in `dir` in lexicographic file-name order. Unreadable files
/// are skipped and counted under the `skipped` metadata key.
pub fn load_frames(dir: &Path, capture_height_m: Option<f64>) -> Result<FrameSet, IngestError> {
    let files = png_files_sorted(dir)?;
    if files.is_empty() {
        return Err(IngestError::EmptyDirectory(dir.to_path_buf()));
    }
    let mut frames = Vec::with_capacity(files.len());
    let mut skipped = 0usize;
    for path in &files {
        match load_frame(path, stem(path), capture_height_m) {
            Ok(f) => frames.push(f),
            Err(e) => {
                log::warn!("skipping unreadable frame: {e}");
                skipped += 1;
            }
        }
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("source_dir".to_string(), dir.display().to_string());
    metadata.insert("skipped".to_string(), skipped.to_string());
    Ok(FrameSet { frames, metadata })
}

/// Variance of the 4-neighbour Laplacian of the luma image over interior
/// pixels, in squared 8-bit luma units. Frames smaller than 3×3 score 0.
///
/// Computed on integer luma ×1000 so a constant frame scores exactly zero.
pub fn focus_score(img: &RgbImage) -> f64 {
    let (w, h) = img.dimensions();
    if w < 3 || h < 3 {
        return 0.0;
    }
    let (w, h) = (w as usize, h as usize);
    let gray: Vec<i64> = img.pixels().map(|p| luma_milli(p[0], p[1], p[2])).collect();
    let mut sum: i128 = 0;
    let mut sum_sq: i128 = 0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let c = gray[y * w + x];
            let lap = gray[y * w + x - 1] + gray[y * w + x + 1] + gray[(y - 1) * w + x] + gray[(y + 1) * w + x] - 4 * c;
            sum += lap as i128;
            sum_sq += (lap as i128) * (lap as i128);
        }
    }
    let n = ((w - 2) * (h - 2)) as i128;
    let numerator = n * sum_sq - sum * sum;
    numerator as f64 / (n * n) as f64 / 1e6
}

/// Returns the `top_k` sharpest frames, best first; equal scores keep frame order.
pub fn select_frame(frames: &FrameSet, top_k: usize) -> Result<Vec<Frame>, IngestError> {
    if frames.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    if top_k == 0 {
        return Err(IngestError::InvalidTopK);
    }
    let scores: Vec<f64> = frames.frames.par_iter().map(|f| focus_score(&f.pixels)).collect();
    let mut order: Vec<usize> = (0..frames.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(order
        .into_iter()
        .take(top_k)
        .map(|i| frames.frames[i].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn checkerboard(size: u32, cell: u32) -> RgbImage {
        RgbImage::from_fn(size, size, |x, y| {
            if ((x / cell) + (y / cell)).is_multiple_of(2) {
                Rgb([255, 255, 255])
            } else {
                Rgb([0, 0, 0])
            }
        })
    }

    fn box_blur5(img: &RgbImage) -> RgbImage {
        let (w, h) = img.dimensions();
        RgbImage::from_fn(w, h, |x, y| {
            let mut acc = [0u32; 3];
            let mut n = 0;
            for dy in -2i32..=2 {
                for dx in -2i32..=2 {
                    let sx = x as i32 + dx;
                    let sy = y as i32 + dy;
                    if sx >= 0 && sy >= 0 && (sx as u32) < w && (sy as u32) < h {
                        let p = img.get_pixel(sx as u32, sy as u32);
                        for c in 0..3 {
                            acc[c] += p[c] as u32;
                        }
                        n += 1;
                    }
                }
            }
            Rgb([(acc[0] / n) as u8, (acc[1] / n) as u8, (acc[2] / n) as u8])
        })
    }

    /// Independent two-pass variance over a float Laplacian.
    fn brute_force_focus(img: &RgbImage) -> f64 {
        let (w, h) = img.dimensions();
        let g = |x: u32, y: u32| {
            let p = img.get_pixel(x, y);
            0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
        };
        let mut vals = Vec::new();
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                vals.push(g(x - 1, y) + g(x + 1, y) + g(x, y - 1) + g(x, y + 1) - 4.0 * g(x, y));
            }
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64
    }

    fn frame(id: &str, pixels: RgbImage) -> Frame {
        Frame {
            id: id.into(),
            pixels,
            source: PathBuf::from(format!("{id}.png")),
            capture_height_m: None,
        }
    }

    #[test]
    fn constant_frame_scores_zero() {
        let img = RgbImage::from_pixel(20, 10, Rgb([13, 200, 77]));
        assert_eq!(focus_score(&img), 0.0);
    }

    #[test]
    fn focus_matches_brute_force() {
        let sharp = checkerboard(40, 4);
        let blurred = box_blur5(&sharp);
        for img in [&sharp, &blurred] {
            let a = focus_score(img);
            let b = brute_force_focus(img);
            assert!((a - b).abs() <= 1e-9 * b.max(1.0), "{a} vs {b}");
        }
        assert!(brute_force_focus(&blurred) < brute_force_focus(&sharp));
    }

    #[test]
    fn selects_unblurred_frame() {
        let sharp = checkerboard(40, 4);
        let blurred = box_blur5(&sharp);
        let set = FrameSet {
            frames: vec![frame("blurred", blurred), frame("sharp", sharp)],
            metadata: BTreeMap::new(),
        };
        let top = select_frame(&set, 1).unwrap();
        assert_eq!(top[0].id, "sharp");
    }

    #[test]
    fn single_frame_and_ties() {
        let img = checkerboard(16, 2);
        let set = FrameSet {
            frames: vec![frame("a", img.clone())],
            metadata: BTreeMap::new(),
        };
        assert_eq!(select_frame(&set, 1).unwrap()[0].id, "a");

        let set = FrameSet {
            frames: vec![frame("first", img.clone()), frame("second", img)],
            metadata: BTreeMap::new(),
        };
        assert_eq!(select_frame(&set, 1).unwrap()[0].id, "first");
        let both = select_frame(&set, 5).unwrap();
        assert_eq!(both.len(), 2);
    }

    #[test]
    fn empty_set_is_rejected() {
        assert!(matches!(
            select_frame(&FrameSet::default(), 1),
            Err(IngestError::EmptyInput)
        ));
    }

    #[test]
    fn template_placeholders_required() {
        assert!(check_template("ffmpeg -i {input} {output_pattern}").is_ok());
        assert!(check_template("ffmpeg -i {input}").is_err());
        let argv = render_command(
            "ffmpeg -i {input} -vsync 0 '{output_pattern}'",
            Path::new("/tmp/my clip.h264"),
            Path::new("/tmp/out/frame_%06d.png"),
        )
        .unwrap();
        assert_eq!(argv[2], "/tmp/my clip.h264");
        assert_eq!(argv[5], "/tmp/out/frame_%06d.png");
    }
}
