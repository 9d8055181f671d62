//! Randomized per-seed augmentation: brightness, horizontal flip, vertical
//! flip, rotation, scaling, always applied in that order.
//!
//! Parameters are sampled up front from an explicit seed ([`sample_params`])
//! and the transforms themselves are pure functions of the raster and the
//! parameters, so a scene can be re-rendered from its recipe alone.
//!
//! Rotation and scaling resample bilinearly on premultiplied alpha.

use image::{imageops, Rgba, RgbaImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::SeedCutout;
use crate::imaging::{clamp_u8, opaque_count};
use crate::seed::{SeedHasher, SeedRng};

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("augmented cutout {0} has no opaque pixels")]
    DegenerateCutout(String),
}

/// Closed real interval, serialized as `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    fn valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }
}

impl From<[f64; 2]> for Interval {
    fn from([lo, hi]: [f64; 2]) -> Self {
        Self { lo, hi }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationRanges {
    /// Additive offset in 8-bit pixel units.
    pub brightness_delta: Interval,
    pub p_hflip: f64,
    pub p_vflip: f64,
    pub rotation_deg: Interval,
    pub scale: Interval,
    pub p_brightness: f64,
    pub p_rotation: f64,
    pub p_scale: f64,
}

impl Default for AugmentationRanges {
    fn default() -> Self {
        Self {
            brightness_delta: Interval::new(-40.0, 40.0),
            p_hflip: 0.5,
            p_vflip: 0.5,
            rotation_deg: Interval::new(0.0, 360.0),
            scale: Interval::new(0.6, 1.4),
            p_brightness: 1.0,
            p_rotation: 1.0,
            p_scale: 1.0,
        }
    }
}

impl AugmentationRanges {
    pub fn validate(&self) -> Result<(), String> {
        for (name, i) in [
            ("brightness_delta", self.brightness_delta),
            ("rotation_deg", self.rotation_deg),
            ("scale", self.scale),
        ] {
            if !i.valid() {
                return Err(format!("augmentation.{name} must be a finite [lo, hi] with lo <= hi"));
            }
        }
        if self.scale.lo <= 0.0 {
            return Err("augmentation.scale must be strictly positive".into());
        }
        for (name, p) in [
            ("p_hflip", self.p_hflip),
            ("p_vflip", self.p_vflip),
            ("p_brightness", self.p_brightness),
            ("p_rotation", self.p_rotation),
            ("p_scale", self.p_scale),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("augmentation.{name} must lie in [0, 1], got {p}"));
            }
        }
        Ok(())
    }

    /// Ranges that leave every cutout untouched.
    pub fn identity() -> Self {
        Self {
            p_hflip: 0.0,
            p_vflip: 0.0,
            p_brightness: 0.0,
            p_rotation: 0.0,
            p_scale: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentationParams {
    pub brightness_delta: Option<f64>,
    pub hflip: bool,
    pub vflip: bool,
    pub rotation_deg: Option<f64>,
    pub scale: Option<f64>,
}

impl AugmentationParams {
    /// Stable 64-bit digest used to tag augmented cutout ids.
    pub fn digest(&self) -> u64 {
        let mut h = SeedHasher::new();
        h.str("augment");
        for v in [self.brightness_delta, self.rotation_deg, self.scale] {
            match v {
                None => h.u64(0),
                Some(x) => h.u64(1).u64(x.to_bits()),
            };
        }
        h.u64(self.hflip as u64).u64(self.vflip as u64);
        h.finish()
    }

    pub fn within(&self, ranges: &AugmentationRanges) -> bool {
        self.brightness_delta
            .is_none_or(|v| ranges.brightness_delta.contains(v))
            && self.rotation_deg.is_none_or(|v| ranges.rotation_deg.contains(v))
            && self.scale.is_none_or(|v| ranges.scale.contains(v))
    }
}

/// Draws augmentation parameters from a generator seeded with `rng_seed`.
///
/// Draw order is fixed: for brightness, hflip, vflip, rotation and scale in
/// turn, an inclusion coin against the transform's probability and then, for
/// included valued transforms, a uniform value from its interval.
pub fn sample_params(rng_seed: u64, ranges: &AugmentationRanges) -> AugmentationParams {
    let mut rng = SeedRng::new(rng_seed);
    let valued = |rng: &mut SeedRng, p: f64, i: Interval| rng.coin(p).then(|| rng.uniform(i.lo, i.hi));
    let brightness_delta = valued(&mut rng, ranges.p_brightness, ranges.brightness_delta);
    let hflip = rng.coin(ranges.p_hflip);
    let vflip = rng.coin(ranges.p_vflip);
    let rotation_deg = valued(&mut rng, ranges.p_rotation, ranges.rotation_deg);
    let scale = valued(&mut rng, ranges.p_scale, ranges.scale);
    AugmentationParams {
        brightness_delta,
        hflip,
        vflip,
        rotation_deg,
        scale,
    }
}

pub fn apply_brightness(img: &RgbaImage, delta: f64) -> RgbaImage {
    let mut out = img.clone();
    for p in out.pixels_mut() {
        for c in 0..3 {
            p.0[c] = clamp_u8(p.0[c] as f64 + delta);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlipAxis {
    /// Mirror about the vertical centre line (left-right).
    Horizontal,
    /// Mirror about the horizontal centre line (top-bottom).
    Vertical,
}

pub fn apply_flip(img: &RgbaImage, axis: FlipAxis) -> RgbaImage {
    match axis {
        FlipAxis::Horizontal => imageops::flip_horizontal(img),
        FlipAxis::Vertical => imageops::flip_vertical(img),
    }
}

fn right_angle_quarter_turns(angle_deg: f64) -> Option<u8> {
    let a = angle_deg.rem_euclid(360.0);
    [0.0, 90.0, 180.0, 270.0].iter().position(|&r| a == r).map(|i| i as u8)
}

/// Dimensions of the bounding box of a `w × h` raster rotated by `angle_deg`.
pub fn rotated_dims(w: u32, h: u32, angle_deg: f64) -> (u32, u32) {
    match right_angle_quarter_turns(angle_deg) {
        Some(0) | Some(2) => (w, h),
        Some(_) => (h, w),
        None => {
            let (s, c) = angle_deg.to_radians().sin_cos();
            let (wf, hf) = (w as f64, h as f64);
            let nw = (wf * c.abs() + hf * s.abs() - 1e-9).ceil().max(1.0);
            let nh = (wf * s.abs() + hf * c.abs() - 1e-9).ceil().max(1.0);
            (nw as u32, nh as u32)
        }
    }
}

pub fn scaled_dims(w: u32, h: u32, factor: f64) -> (u32, u32) {
    let nw = (w as f64 * factor).round().max(1.0);
    let nh = (h as f64 * factor).round().max(1.0);
    (nw as u32, nh as u32)
}

/// Output dimensions of [`augment`] without rendering.
pub fn augmented_dims(w: u32, h: u32, params: &AugmentationParams) -> (u32, u32) {
    let (mut w, mut h) = (w, h);
    if let Some(a) = params.rotation_deg {
        (w, h) = rotated_dims(w, h, a);
    }
    if let Some(f) = params.scale {
        (w, h) = scaled_dims(w, h, f);
    }
    (w, h)
}

/// Premultiplied-alpha copy of a raster in `f64`.
struct Premultiplied {
    w: usize,
    h: usize,
    data: Vec<[f64; 4]>,
}

#[derive(Clone, Copy)]
enum Edge {
    Transparent,
    Clamp,
}

impl Premultiplied {
    fn new(img: &RgbaImage) -> Self {
        let data = img
            .pixels()
            .map(|Rgba([r, g, b, a])| {
                let af = *a as f64 / 255.0;
                [*r as f64 * af, *g as f64 * af, *b as f64 * af, *a as f64]
            })
            .collect();
        Self {
            w: img.width() as usize,
            h: img.height() as usize,
            data,
        }
    }

    fn tap(&self, x: i64, y: i64, edge: Edge) -> [f64; 4] {
        let (x, y) = match edge {
            Edge::Clamp => (x.clamp(0, self.w as i64 - 1), y.clamp(0, self.h as i64 - 1)),
            Edge::Transparent => {
                if x < 0 || y < 0 || x >= self.w as i64 || y >= self.h as i64 {
                    return [0.0; 4];
                }
                (x, y)
            }
        };
        self.data[y as usize * self.w + x as usize]
    }

    /// Bilinear sample at continuous pixel-centre coordinates `(u, v)`.
    fn sample(&self, u: f64, v: f64, edge: Edge) -> [f64; 4] {
        let x0 = u.floor();
        let y0 = v.floor();
        let fx = u - x0;
        let fy = v - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let p00 = self.tap(x0, y0, edge);
        let p10 = self.tap(x0 + 1, y0, edge);
        let p01 = self.tap(x0, y0 + 1, edge);
        let p11 = self.tap(x0 + 1, y0 + 1, edge);
        let mut out = [0.0; 4];
        for c in 0..4 {
            let top = p00[c] + (p10[c] - p00[c]) * fx;
            let bottom = p01[c] + (p11[c] - p01[c]) * fx;
            out[c] = top + (bottom - top) * fy;
        }
        out
    }
}

fn unpremultiply(p: [f64; 4]) -> Rgba<u8> {
    let a = clamp_u8(p[3]);
    if a == 0 {
        return Rgba([0, 0, 0, 0]);
    }
    let scale = 255.0 / p[3];
    Rgba([
        clamp_u8(p[0] * scale),
        clamp_u8(p[1] * scale),
        clamp_u8(p[2] * scale),
        a,
    ])
}

/// Rotates about the raster centre by `angle_deg`, positive angles turning
/// the +x axis toward +y in pixel coordinates (y down). The canvas grows to
/// the rotated bounding box; samples falling outside the source are
/// transparent. Multiples of 90° are exact pixel permutations, with a
/// quarter turn mapping `output(x, y) = input(y, H - 1 - x)`.
pub fn apply_rotation(img: &RgbaImage, angle_deg: f64) -> RgbaImage {
    match right_angle_quarter_turns(angle_deg) {
        Some(0) => return img.clone(),
        Some(1) => return imageops::rotate90(img),
        Some(2) => return imageops::rotate180(img),
        Some(3) => return imageops::rotate270(img),
        _ => {}
    }
    let (w, h) = img.dimensions();
    let (nw, nh) = rotated_dims(w, h, angle_deg);
    let src = Premultiplied::new(img);
    let (s, c) = angle_deg.to_radians().sin_cos();
    let (half_w, half_h) = (w as f64 / 2.0, h as f64 / 2.0);
    let (half_nw, half_nh) = (nw as f64 / 2.0, nh as f64 / 2.0);
    RgbaImage::from_fn(nw, nh, |ox, oy| {
        let px = ox as f64 + 0.5 - half_nw;
        let py = oy as f64 + 0.5 - half_nh;
        let sx = px * c + py * s;
        let sy = -px * s + py * c;
        unpremultiply(src.sample(sx + half_w - 0.5, sy + half_h - 0.5, Edge::Transparent))
    })
}

/// Resizes to `(round(W·factor), round(H·factor))`, at least 1×1.
pub fn apply_scale(img: &RgbaImage, factor: f64) -> RgbaImage {
    let (w, h) = img.dimensions();
    let (nw, nh) = scaled_dims(w, h, factor);
    if (nw, nh) == (w, h) {
        return img.clone();
    }
    let src = Premultiplied::new(img);
    let rx = w as f64 / nw as f64;
    let ry = h as f64 / nh as f64;
    RgbaImage::from_fn(nw, nh, |ox, oy| {
        let u = (ox as f64 + 0.5) * rx - 0.5;
        let v = (oy as f64 + 0.5) * ry - 0.5;
        unpremultiply(src.sample(u, v, Edge::Clamp))
    })
}

/// Applies the present transforms in order without the opacity check.
pub fn augment_raster(img: &RgbaImage, params: &AugmentationParams) -> RgbaImage {
    let mut out = match params.brightness_delta {
        Some(d) => apply_brightness(img, d),
        None => img.clone(),
    };
    if params.hflip {
        out = apply_flip(&out, FlipAxis::Horizontal);
    }
    if params.vflip {
        out = apply_flip(&out, FlipAxis::Vertical);
    }
    if let Some(a) = params.rotation_deg {
        out = apply_rotation(&out, a);
    }
    if let Some(f) = params.scale {
        out = apply_scale(&out, f);
    }
    out
}

/// Augments a cutout; the result's id is tagged with the parameter digest.
pub fn augment(cutout: &SeedCutout, params: &AugmentationParams) -> Result<SeedCutout, AugmentError> {
    let pixels = augment_raster(&cutout.pixels, params);
    let id = format!("{}~{:016x}", cutout.id, params.digest());
    let area_px = opaque_count(&pixels);
    if area_px == 0 {
        return Err(AugmentError::DegenerateCutout(id));
    }
    Ok(SeedCutout {
        id,
        pixels,
        class_label: cutout.class_label.clone(),
        capture_height_m: cutout.capture_height_m,
        source_frame: cutout.source_frame.clone(),
        area_px,
    })
}
