//! Model file layout, all integers and reals little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `SEEDHEAD` |
//! | 4 | format version (u32, currently 1) |
//! | 4 | header length `n` (u32) |
//! | n | UTF-8 JSON header: config, class list, input dimension, layer widths |
//! | 8 × P | parameters as f64; per layer, weights row-major (`inputs × outputs`) then bias |
//! | 16 × D | when `normalized`: input shift then input scale, D values each |

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ndarray::Array1;

use super::model::{HeadModel, InputNorm};
use super::{ClassifierError, EpochStats, HeadConfig};
use crate::label::ClassLabel;

pub const MAGIC: &[u8; 8] = b"SEEDHEAD";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: HeadConfig,
    class_list: Vec<ClassLabel>,
    input_dim: usize,
    hidden_widths: Vec<usize>,
    normalized: bool,
    #[serde(default)]
    history: Vec<EpochStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub config: HeadConfig,
    pub class_list: Vec<ClassLabel>,
    pub model: HeadModel,
    pub history: Vec<EpochStats>,
}

pub fn save_model(saved: &SavedModel, path: &Path) -> Result<(), ClassifierError> {
    let widths = saved.model.hidden_widths();
    if widths.len() != 3 || saved.model.num_classes() != saved.class_list.len() {
        return Err(ClassifierError::Shape("model does not match its class list".into()));
    }
    let header = Header {
        config: saved.config.clone(),
        class_list: saved.class_list.clone(),
        input_dim: saved.model.input_dim(),
        hidden_widths: widths,
        normalized: saved.model.norm.is_some(),
        history: saved.history.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut params = saved.model.flat();
    if let Some(n) = &saved.model.norm {
        params.extend(n.shift.iter().chain(n.scale.iter()));
    }
    let mut buf = Vec::with_capacity(16 + json.len() + 8 * params.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, buf).map_err(|source| ClassifierError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<SavedModel, ClassifierError> {
    let bytes = fs::read(path).map_err(|source| ClassifierError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes).map_err(|reason| ClassifierError::Format {
        path: PathBuf::from(path),
        reason,
    })
}

fn decode(bytes: &[u8]) -> Result<SavedModel, String> {
    let u32_at = |at: usize| -> Result<u32, String> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| "truncated preamble".to_string())
    };
    if bytes.get(..8) != Some(&MAGIC[..]) {
        return Err("bad magic".into());
    }
    let version = u32_at(8)?;
    if version != FORMAT_VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let n = u32_at(12)? as usize;
    let json = bytes.get(16..16 + n).ok_or("truncated header")?;
    let header: Header = serde_json::from_slice(json).map_err(|e| format!("header: {e}"))?;
    let widths: [usize; 3] = header
        .hidden_widths
        .as_slice()
        .try_into()
        .map_err(|_| "expected three hidden layers".to_string())?;
    let mut model = HeadModel::zeros(header.input_dim, widths, header.class_list.len());
    let body = &bytes[16 + n..];
    let d = header.input_dim;
    let expected = model.parameter_count() + if header.normalized { 2 * d } else { 0 };
    if body.len() != expected * 8 {
        return Err(format!("expected {expected} reals, found {} bytes", body.len()));
    }
    let mut values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    for p in model.flat_mut() {
        *p = values.next().expect("length checked");
    }
    if header.normalized {
        let shift: Array1<f64> = values.by_ref().take(d).collect();
        let scale: Array1<f64> = values.collect();
        model.norm = Some(InputNorm { shift, scale });
    }
    Ok(SavedModel {
        config: header.config,
        class_list: header.class_list,
        model,
        history: header.history,
    })
}
