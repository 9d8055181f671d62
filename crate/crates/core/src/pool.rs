//! On-disk cutout pools: one RGBA PNG per cutout plus a JSON Lines index.
//!
//! Each index line is an object with exactly the fields `id`, `file`,
//! `class_label`, `capture_height_m` and `area_px`. `file` is relative to the
//! directory holding the index.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::SeedCutout;
use crate::imaging::{load_rgba, opaque_count, save_png_rgba};
use crate::label::ClassLabel;

pub const INDEX_FILE: &str = "index.jsonl";

#[derive(Debug, Error)]
pub enum PoolError {
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
    #[error("missing pool asset {0}")]
    MissingAsset(PathBuf),
    #[error("corrupt pool {index}: {reason}")]
    CorruptPool { index: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PoolError + '_ {
    move |source| PoolError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolRecord {
    pub id: String,
    pub file: String,
    pub class_label: ClassLabel,
    pub capture_height_m: f64,
    pub area_px: u64,
}

/// Writes the cutouts and their index into `dir`, replacing any existing index.
/// Returns the index path.
pub fn write_cutout_pool(cutouts: &[SeedCutout], dir: &Path) -> Result<PathBuf, PoolError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let index_path = dir.join(INDEX_FILE);
    let file = File::create(&index_path).map_err(io_err(&index_path))?;
    let mut out = BufWriter::new(file);
    for c in cutouts {
        let file_name = format!("{}.png", c.id);
        let png_path = dir.join(&file_name);
        save_png_rgba(&c.pixels, &png_path).map_err(|source| PoolError::Image {
            path: png_path.clone(),
            source,
        })?;
        let record = PoolRecord {
            id: c.id.clone(),
            file: file_name,
            class_label: c.class_label.clone(),
            capture_height_m: c.capture_height_m,
            area_px: c.area_px,
        };
        let line = serde_json::to_string(&record).expect("pool record serializes");
        writeln!(out, "{line}").map_err(io_err(&index_path))?;
    }
    out.flush().map_err(io_err(&index_path))?;
    Ok(index_path)
}

/// Reads a pool back in index order, re-verifying each cutout's opaque area.
///
/// `source_frame` is not part of the index; it is set to the cutout's file name.
pub fn read_cutout_pool(index_path: &Path) -> Result<Vec<SeedCutout>, PoolError> {
    let base = index_path.parent().unwrap_or(Path::new("."));
    let file = File::open(index_path).map_err(io_err(index_path))?;
    let mut cutouts = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(index_path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PoolRecord = serde_json::from_str(&line).map_err(|e| PoolError::CorruptPool {
            index: index_path.to_path_buf(),
            reason: format!("line {}: {e}", lineno + 1),
        })?;
        let png_path = base.join(&record.file);
        if !png_path.is_file() {
            return Err(PoolError::MissingAsset(png_path));
        }
        let pixels = load_rgba(&png_path).map_err(|source| PoolError::Image {
            path: png_path.clone(),
            source,
        })?;
        let actual = opaque_count(&pixels);
        if actual != record.area_px {
            return Err(PoolError::CorruptPool {
                index: index_path.to_path_buf(),
                reason: format!(
                    "cutout {} declares area {} but has {} opaque pixels",
                    record.id, record.area_px, actual
                ),
            });
        }
        if actual == 0 {
            return Err(PoolError::CorruptPool {
                index: index_path.to_path_buf(),
                reason: format!("cutout {} is fully transparent", record.id),
            });
        }
        cutouts.push(SeedCutout {
            id: record.id,
            pixels,
            class_label: record.class_label,
            capture_height_m: record.capture_height_m,
            source_frame: record.file,
            area_px: actual,
        });
    }
    Ok(cutouts)
}

/// Builds an index for a directory of hand-made RGBA PNGs, all of one class
/// and capture height. Files are indexed in lexicographic order and ids are
/// the file stems. Fully transparent images are skipped.
pub fn index_directory(dir: &Path, class_label: &ClassLabel, capture_height_m: f64) -> Result<PathBuf, PoolError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("png"))
        .collect();
    files.sort();
    let index_path = dir.join(INDEX_FILE);
    let file = File::create(&index_path).map_err(io_err(&index_path))?;
    let mut out = BufWriter::new(file);
    for path in files {
        let pixels = load_rgba(&path).map_err(|source| PoolError::Image {
            path: path.clone(),
            source,
        })?;
        let area_px = opaque_count(&pixels);
        if area_px == 0 {
            log::warn!("skipping fully transparent {}", path.display());
            continue;
        }
        let file_name = path.file_name().unwrap().to_string_lossy().into_owned();
        let record = PoolRecord {
            id: path.file_stem().unwrap().to_string_lossy().into_owned(),
            file: file_name,
            class_label: class_label.clone(),
            capture_height_m,
            area_px,
        };
        writeln!(out, "{}", serde_json::to_string(&record).unwrap()).map_err(io_err(&index_path))?;
    }
    out.flush().map_err(io_err(&index_path))?;
    Ok(index_path)
}

/// Finds every pool index beneath `root`, in sorted path order.
pub fn find_pool_indexes(root: &Path) -> Result<Vec<PathBuf>, PoolError> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().and_then(|n| n.to_str()) == Some(INDEX_FILE) {
                found.push(path);
            }
        }
    }
    found.sort();
    Ok(found)
}

/// Reads every pool beneath `root` into one list, in sorted index-path order.
pub fn read_pool_tree(root: &Path) -> Result<Vec<SeedCutout>, PoolError> {
    let mut all = Vec::new();
    for index in find_pool_indexes(root)? {
        all.extend(read_cutout_pool(&index)?);
    }
    Ok(all)
}
