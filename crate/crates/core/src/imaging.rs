//! Pixel-level helpers shared across stages.

use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage, Rgba, RgbaImage};

/// Luma scaled by 1000: `299 R + 587 G + 114 B`. Exact in integers.
#[inline]
pub fn luma_milli(r: u8, g: u8, b: u8) -> i64 {
    299 * r as i64 + 587 * g as i64 + 114 * b as i64
}

/// Luma `0.299 R + 0.587 G + 0.114 B` in `[0, 255]`.
#[inline]
pub fn luma(r: u8, g: u8, b: u8) -> f64 {
    luma_milli(r, g, b) as f64 / 1000.0
}

/// Luma rounded to the nearest 8-bit level.
#[inline]
pub fn luma_u8(r: u8, g: u8, b: u8) -> u8 {
    ((luma_milli(r, g, b) + 500) / 1000) as u8
}

pub fn gray_levels(img: &RgbImage) -> Vec<u8> {
    img.pixels().map(|Rgb([r, g, b])| luma_u8(*r, *g, *b)).collect()
}

/// Count of pixels with alpha above 127.
pub fn opaque_count(img: &RgbaImage) -> u64 {
    img.pixels().filter(|p| p.0[3] > 127).count() as u64
}

#[inline]
pub fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Bounding box `(x0, y0, x1, y1)` (exclusive end) of pixels with alpha above 127.
pub fn opaque_bbox(img: &RgbaImage) -> Option<(u32, u32, u32, u32)> {
    let mut bbox: Option<(u32, u32, u32, u32)> = None;
    for (x, y, Rgba(p)) in img.enumerate_pixels() {
        if p[3] > 127 {
            bbox = Some(match bbox {
                None => (x, y, x + 1, y + 1),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)),
            });
        }
    }
    bbox
}

pub fn save_png_rgb(img: &RgbImage, path: &Path) -> image::ImageResult<()> {
    img.save_with_format(path, ImageFormat::Png)
}

pub fn save_png_rgba(img: &RgbaImage, path: &Path) -> image::ImageResult<()> {
    img.save_with_format(path, ImageFormat::Png)
}

pub fn load_rgb(path: &Path) -> image::ImageResult<RgbImage> {
    Ok(image::open(path)?.to_rgb8())
}

pub fn load_rgba(path: &Path) -> image::ImageResult<RgbaImage> {
    Ok(image::open(path)?.to_rgba8())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn luma_weights() {
        assert_eq!(luma_milli(255, 255, 255), 255_000);
        assert_eq!(luma_u8(255, 255, 255), 255);
        assert_eq!(luma_u8(0, 0, 0), 0);
        assert!((luma(100, 0, 0) - 29.9).abs() < 1e-12);
    }

    #[test]
    fn bbox_of_single_pixel() {
        let mut img = RgbaImage::new(5, 4);
        img.put_pixel(3, 2, Rgba([1, 2, 3, 200]));
        assert_eq!(opaque_bbox(&img), Some((3, 2, 4, 3)));
        assert_eq!(opaque_count(&img), 1);
    }
}
