//! Synthetic lightbox footage: frames of well-separated seed blobs with a
//! per-class shape and colour, and plain lightbox canvases. Used for demos,
//! tests, and as a stand-in when no real footage is available.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::extract::{segment_frame, SeedCutout, SegmentationConfig};
use crate::imaging::{clamp_u8, save_png_rgb};
use crate::ingest::{select_frame, Frame, FrameSet};
use crate::label::{ClassLabel, HeightBucket};
use crate::seed::{hash64, SeedPart, SeedRng};
use crate::synth::BackgroundCanvas;

pub const SEEDS_PER_FRAME: usize = 30;
const GRID_COLS: u32 = 6;
const GRID_ROWS: u32 = 5;
const LIGHTBOX: [f64; 3] = [238.0, 236.0, 230.0];

/// Blob shape at 0.3 m: semi-axes in pixels, base colour, and whether a dark
/// crease runs along the major axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobStyle {
    pub semi_major: f64,
    pub semi_minor: f64,
    pub rgb: [f64; 3],
    pub crease: bool,
}

pub fn style_for(class: &ClassLabel) -> BlobStyle {
    let s = |a, b, rgb, crease| BlobStyle {
        semi_major: a,
        semi_minor: b,
        rgb,
        crease,
    };
    match class.as_str() {
        "canola" => s(7.0, 7.0, [38.0, 28.0, 26.0], false),
        "rough_rice" => s(17.0, 6.0, [225.0, 200.0, 150.0], false),
        "sorghum" => s(10.0, 9.0, [130.0, 58.0, 40.0], false),
        "soy" => s(14.0, 13.0, [190.0, 160.0, 90.0], false),
        "wheat" => s(13.0, 7.5, [160.0, 114.0, 66.0], true),
        other => {
            let h = hash64(&[SeedPart::Str("fixture-style"), SeedPart::Str(other)]);
            let mut rng = SeedRng::new(h);
            let a = rng.uniform(6.0, 16.0);
            s(
                a,
                a * rng.uniform(0.4, 1.0),
                [
                    rng.uniform(30.0, 200.0),
                    rng.uniform(30.0, 200.0),
                    rng.uniform(30.0, 200.0),
                ],
                rng.coin(0.5),
            )
        }
    }
}

fn frame_dims(style: &BlobStyle, height: HeightBucket) -> (u32, u32) {
    let cell = cell_size(style, height);
    (GRID_COLS * cell, GRID_ROWS * cell)
}

fn cell_size(style: &BlobStyle, height: HeightBucket) -> u32 {
    let scale = 0.3 / height.meters();
    (2.0 * style.semi_major * scale * 1.1).ceil() as u32 + 12
}

/// One lightbox frame with a 6×5 grid of blobs. `blur` passes of a 3×3 box
/// filter soften it so frame selection has something to reject.
pub fn render_frame(class: &ClassLabel, height: HeightBucket, variant: u64, blur: u32) -> RgbImage {
    let style = style_for(class);
    let scale = 0.3 / height.meters();
    let cell = cell_size(&style, height);
    let (w, h) = frame_dims(&style, height);
    let mut rng = SeedRng::new(hash64(&[
        SeedPart::Str("fixture-frame"),
        SeedPart::Str(class.as_str()),
        SeedPart::Str(height.tag()),
        SeedPart::U64(variant),
    ]));
    let mut img = RgbImage::from_fn(w, h, |_, _| Rgb(LIGHTBOX.map(clamp_u8)));
    for gy in 0..GRID_ROWS {
        for gx in 0..GRID_COLS {
            let a = style.semi_major * scale * rng.uniform(0.9, 1.1);
            let b = (style.semi_minor * scale * rng.uniform(0.9, 1.1)).min(a);
            let theta = rng.uniform(0.0, std::f64::consts::PI);
            let tone = rng.uniform(0.9, 1.1);
            let cx = (gx * cell) as f64 + cell as f64 / 2.0 + rng.uniform(-2.0, 2.0);
            let cy = (gy * cell) as f64 + cell as f64 / 2.0 + rng.uniform(-2.0, 2.0);
            let (sin, cos) = theta.sin_cos();
            for py in gy * cell..(gy + 1) * cell {
                for px in gx * cell..(gx + 1) * cell {
                    let dx = px as f64 + 0.5 - cx;
                    let dy = py as f64 + 0.5 - cy;
                    let u = (dx * cos + dy * sin) / a;
                    let v = (-dx * sin + dy * cos) / b;
                    let r2 = u * u + v * v;
                    if r2 > 1.0 {
                        continue;
                    }
                    let mut shade = tone * (1.0 - 0.25 * r2);
                    if style.crease && v.abs() < 0.18 && u.abs() < 0.8 {
                        shade *= 0.6;
                    }
                    img.put_pixel(px, py, Rgb(style.rgb.map(|c| clamp_u8(c * shade))));
                }
            }
        }
    }
    for _ in 0..blur {
        img = box3(&img);
    }
    img
}

fn box3(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    RgbImage::from_fn(w, h, |x, y| {
        let mut acc = [0u32; 3];
        let mut n = 0;
        for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
            for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                let p = img.get_pixel(xx, yy);
                for c in 0..3 {
                    acc[c] += p[c] as u32;
                }
                n += 1;
            }
        }
        Rgb(acc.map(|a| ((a + n / 2) / n) as u8))
    })
}

/// Three frames per class and height: one sharp, two progressively blurred.
pub fn frame_set(class: &ClassLabel, height: HeightBucket) -> FrameSet {
    let frames = (0..3)
        .map(|i| Frame {
            id: format!("{class}_{}_f{i:03}", height.tag()),
            pixels: render_frame(class, height, 0, [2, 0, 4][i]),
            source: PathBuf::from(format!("frame_{i:06}.png")),
            capture_height_m: Some(height.meters()),
        })
        .collect();
    FrameSet {
        frames,
        metadata: Default::default(),
    }
}

/// Writes `<root>/<class>/<height>/frame_NNNNNN.png` for every class and height.
pub fn write_frames(root: &Path, classes: &[ClassLabel]) -> std::io::Result<Vec<(ClassLabel, HeightBucket, PathBuf)>> {
    let mut dirs = Vec::new();
    for class in classes {
        for h in HeightBucket::ALL {
            let dir = root.join(class.as_str()).join(h.tag());
            fs::create_dir_all(&dir)?;
            for f in frame_set(class, h).frames {
                save_png_rgb(&f.pixels, &dir.join(&f.source)).map_err(std::io::Error::other)?;
            }
            dirs.push((class.clone(), h, dir));
        }
    }
    Ok(dirs)
}

/// Cutout pools extracted from the sharpest fixture frame of each class and
/// height: 30 cutouts per pool with default segmentation.
pub fn cutouts(classes: &[ClassLabel]) -> Vec<SeedCutout> {
    let cfg = SegmentationConfig::default();
    let mut out = Vec::new();
    for class in classes {
        for h in HeightBucket::ALL {
            let best = select_frame(&frame_set(class, h), 1).expect("nonempty fixture");
            out.extend(segment_frame(&best[0], &cfg, class, h.meters()));
        }
    }
    out
}

/// Lightbox canvases with a faint vignette and sensor noise.
pub fn canvases(count: usize, side: u32) -> Vec<BackgroundCanvas> {
    (0..count)
        .map(|i| {
            let mut rng = SeedRng::new(hash64(&[SeedPart::Str("fixture-canvas"), SeedPart::U64(i as u64)]));
            let c = (side as f64 - 1.0) / 2.0;
            let warm = rng.uniform(-6.0, 6.0);
            let img = RgbImage::from_fn(side, side, |x, y| {
                let r2 = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)) / (c * c);
                let fall = 10.0 * r2 + rng.uniform(-2.0, 2.0);
                Rgb([
                    clamp_u8(LIGHTBOX[0] + warm - fall),
                    clamp_u8(LIGHTBOX[1] - fall),
                    clamp_u8(LIGHTBOX[2] - warm - fall),
                ])
            });
            BackgroundCanvas::new(format!("lightbox_{i:02}"), img).expect("canvas at least 224 px")
        })
        .collect()
}

pub fn write_canvases(dir: &Path, count: usize, side: u32) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    for c in canvases(count, side) {
        save_png_rgb(&c.pixels, &dir.join(format!("{}.png", c.id))).map_err(std::io::Error::other)?;
    }
    Ok(())
}
