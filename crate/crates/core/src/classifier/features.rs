use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::ClassifierError;
use crate::imaging::luma_milli;
use crate::synth::OUTPUT_SIZE;

/// Side of the square feature grid.
pub const FEATURE_GRID: u32 = 32;
pub const FEATURE_DIM: usize = (FEATURE_GRID * FEATURE_GRID) as usize;
const BLOCK: u32 = OUTPUT_SIZE / FEATURE_GRID;

/// How an image becomes a feature vector. Every mode yields `FEATURE_DIM` values in `[0, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// The 32×32 block-average grid of [`featurize`].
    #[default]
    Grid,
    /// The grid values sorted ascending; discards position.
    SortedGrid,
    /// Evenly spaced quantiles of the full-resolution luma; discards position.
    LumaQuantiles,
}

pub fn featurize_with(image: &RgbImage, mode: FeatureMode) -> Result<Vec<f64>, ClassifierError> {
    match mode {
        FeatureMode::Grid => featurize(image),
        FeatureMode::SortedGrid => {
            let mut f = featurize(image)?;
            f.sort_by(f64::total_cmp);
            Ok(f)
        }
        FeatureMode::LumaQuantiles => {
            check_size(image)?;
            let mut lumas: Vec<i64> = image.pixels().map(|p| luma_milli(p[0], p[1], p[2])).collect();
            lumas.sort_unstable();
            let n = lumas.len();
            Ok((0..FEATURE_DIM)
                .map(|j| lumas[(2 * j + 1) * n / (2 * FEATURE_DIM)] as f64 / 255_000.0)
                .collect())
        }
    }
}

fn check_size(image: &RgbImage) -> Result<(), ClassifierError> {
    if image.dimensions() != (OUTPUT_SIZE, OUTPUT_SIZE) {
        let (w, h) = image.dimensions();
        return Err(ClassifierError::Shape(format!(
            "featurize expects {OUTPUT_SIZE}x{OUTPUT_SIZE}, got {w}x{h}"
        )));
    }
    Ok(())
}

/// Luma of a 224×224 image, area-averaged over 7×7 blocks to a 32×32 grid,
/// row-major, scaled to `[0, 1]`.
pub fn featurize(image: &RgbImage) -> Result<Vec<f64>, ClassifierError> {
    check_size(image)?;
    let mut out = Vec::with_capacity(FEATURE_DIM);
    let norm = (BLOCK * BLOCK) as f64 * 1000.0 * 255.0;
    for by in 0..FEATURE_GRID {
        for bx in 0..FEATURE_GRID {
            let mut acc: i64 = 0;
            for y in by * BLOCK..(by + 1) * BLOCK {
                for x in bx * BLOCK..(bx + 1) * BLOCK {
                    let p = image.get_pixel(x, y);
                    acc += luma_milli(p[0], p[1], p[2]);
                }
            }
            out.push(acc as f64 / norm);
        }
    }
    Ok(out)
}
