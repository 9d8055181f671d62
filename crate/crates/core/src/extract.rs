//! Foreground extraction: threshold a frame, label 8-connected seed blobs, and
//! cut each one out as an RGBA raster with a binary alpha mask.

use image::{Rgba, RgbaImage};
use serde::{Deserialize, Serialize};

use crate::imaging::{gray_levels, opaque_count};
use crate::ingest::Frame;
use crate::label::ClassLabel;

/// One extracted seed foreground.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedCutout {
    pub id: String,
    pub pixels: RgbaImage,
    pub class_label: ClassLabel,
    pub capture_height_m: f64,
    pub source_frame: String,
    /// Pixels with alpha above 127.
    pub area_px: u64,
}

impl SeedCutout {
    pub fn recompute_area(&self) -> u64 {
        opaque_count(&self.pixels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    Otsu,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    pub threshold_mode: ThresholdMode,
    pub fixed_threshold: u8,
    pub min_area_px: u64,
    pub max_area_px: u64,
    pub padding_px: u32,
    /// Foreground is darker than the background (seeds on a lightbox).
    pub invert: bool,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            threshold_mode: ThresholdMode::Otsu,
            fixed_threshold: 128,
            min_area_px: 10,
            max_area_px: 20_000,
            padding_px: 1,
            invert: true,
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_area_px > self.max_area_px {
            return Err(format!(
                "segmentation.min_area_px ({}) exceeds max_area_px ({})",
                self.min_area_px, self.max_area_px
            ));
        }
        if self.padding_px > 64 {
            return Err("segmentation.padding_px must be at most 64".into());
        }
        Ok(())
    }
}

/// Otsu's threshold over an 8-bit histogram.
///
/// Returns the level `t` maximizing the between-class variance of the split
/// `{<= t} | {> t}` (first maximum wins), or `None` when fewer than two
/// distinct levels occur and no split exists.
pub fn otsu_threshold(levels: &[u8]) -> Option<u8> {
    let mut hist = [0u64; 256];
    for &v in levels {
        hist[v as usize] += 1;
    }
    let total = levels.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();

    let mut best: Option<(u8, f64)> = None;
    let mut weight_bg = 0.0;
    let mut sum_bg = 0.0;
    for t in 0..255usize {
        weight_bg += hist[t] as f64;
        if weight_bg == 0.0 {
            continue;
        }
        let weight_fg = total - weight_bg;
        if weight_fg == 0.0 {
            break;
        }
        sum_bg += t as f64 * hist[t] as f64;
        let mean_bg = sum_bg / weight_bg;
        let mean_fg = (sum_all - sum_bg) / weight_fg;
        let between = weight_bg * weight_fg * (mean_bg - mean_fg).powi(2);
        if best.is_none_or(|(_, b)| between > b) {
            best = Some((t as u8, between));
        }
    }
    best.map(|(t, _)| t)
}

/// Binary foreground mask of the frame under `cfg`, row-major.
pub fn foreground_mask(frame: &Frame, cfg: &SegmentationConfig) -> Vec<bool> {
    let gray = gray_levels(&frame.pixels);
    let threshold = match cfg.threshold_mode {
        ThresholdMode::Fixed => Some(cfg.fixed_threshold),
        ThresholdMode::Otsu => otsu_threshold(&gray),
    };
    match threshold {
        None => vec![false; gray.len()],
        Some(t) if cfg.invert => gray.iter().map(|&g| g <= t).collect(),
        Some(t) => gray.iter().map(|&g| g > t).collect(),
    }
}

/// A labeled 8-connected region.
#[derive(Debug, Clone)]
pub struct Component {
    /// Pixel indices in discovery order.
    pub pixels: Vec<usize>,
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

/// Labels 8-connected components of `mask`, ordered by the raster position
/// of their first pixel.
pub fn connected_components(mask: &[bool], width: u32, height: u32) -> Vec<Component> {
    let (w, h) = (width as usize, height as usize);
    let mut visited = vec![false; mask.len()];
    let mut components = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let mut comp = Component {
            pixels: Vec::new(),
            x0: u32::MAX,
            y0: u32::MAX,
            x1: 0,
            y1: 0,
        };
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            comp.pixels.push(i);
            comp.x0 = comp.x0.min(x as u32);
            comp.y0 = comp.y0.min(y as u32);
            comp.x1 = comp.x1.max(x as u32 + 1);
            comp.y1 = comp.y1.max(y as u32 + 1);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask[j] && !visited[j] {
                        visited[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        components.push(comp);
    }
    components
}

/// Extracts every qualifying seed blob of `frame` as a cutout.
///
/// The crop is the component's tight bounding box grown by `padding_px` on
/// each side. RGB is copied from the frame wherever the crop overlaps it;
/// alpha is 255 on the component and 0 elsewhere, so neighbouring blobs that
/// fall inside the crop stay transparent.
pub fn segment_frame(
    frame: &Frame,
    cfg: &SegmentationConfig,
    class_label: &ClassLabel,
    capture_height_m: f64,
) -> Vec<SeedCutout> {
    let (w, h) = frame.pixels.dimensions();
    let mask = foreground_mask(frame, cfg);
    let pad = cfg.padding_px as i64;
    let mut cutouts = Vec::new();
    for comp in connected_components(&mask, w, h) {
        let area = comp.pixels.len() as u64;
        if area < cfg.min_area_px || area > cfg.max_area_px {
            continue;
        }
        let ox = comp.x0 as i64 - pad;
        let oy = comp.y0 as i64 - pad;
        let cw = (comp.x1 - comp.x0) as i64 + 2 * pad;
        let ch = (comp.y1 - comp.y0) as i64 + 2 * pad;
        let mut inside = vec![false; (cw * ch) as usize];
        for &i in &comp.pixels {
            let lx = (i as i64 % w as i64) - ox;
            let ly = (i as i64 / w as i64) - oy;
            inside[(ly * cw + lx) as usize] = true;
        }
        let pixels = RgbaImage::from_fn(cw as u32, ch as u32, |lx, ly| {
            let fx = ox + lx as i64;
            let fy = oy + ly as i64;
            if fx < 0 || fy < 0 || fx >= w as i64 || fy >= h as i64 {
                return Rgba([0, 0, 0, 0]);
            }
            let p = frame.pixels.get_pixel(fx as u32, fy as u32);
            let a = if inside[(ly as i64 * cw + lx as i64) as usize] {
                255
            } else {
                0
            };
            Rgba([p[0], p[1], p[2], a])
        });
        cutouts.push(SeedCutout {
            id: format!("{}_s{:03}", frame.id, cutouts.len()),
            pixels,
            class_label: class_label.clone(),
            capture_height_m,
            source_frame: frame.id.clone(),
            area_px: area,
        });
    }
    cutouts
}
