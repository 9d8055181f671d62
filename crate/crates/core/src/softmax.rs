//! Softmax exchange files: the JSON Lines format through which any classifier
//! (the native baseline or an external CNN) takes part in ensembling and
//! evaluation.
//!
//! Line 1 is `{"class_list": [...]}`; every following line is
//! `{"image_id": "...", "probs": [p0, p1, ...]}` with one probability per class.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::ClassLabel;

#[derive(Debug, Error)]
pub enum SoftmaxError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed softmax file {path} line {line}: {reason}")]
    Malformed { path: PathBuf, line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftmaxRecord {
    pub image_id: String,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    class_list: Vec<ClassLabel>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SoftmaxFile {
    pub class_list: Vec<ClassLabel>,
    pub records: Vec<SoftmaxRecord>,
}

impl SoftmaxFile {
    /// Largest `|Σ probs − 1|` over all records (0 for an empty file).
    pub fn max_normalization_error(&self) -> f64 {
        self.records
            .iter()
            .map(|r| (r.probs.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Checks that every record is a probability vector of the right length
    /// summing to 1 within `tol`.
    pub fn validate_normalized(&self, tol: f64) -> Result<(), String> {
        let k = self.class_list.len();
        for r in &self.records {
            if r.probs.len() != k {
                return Err(format!(
                    "{}: {} probabilities for {k} classes",
                    r.image_id,
                    r.probs.len()
                ));
            }
            if r.probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(format!("{}: probability outside [0, 1]", r.image_id));
            }
            let err = (r.probs.iter().sum::<f64>() - 1.0).abs();
            if err > tol {
                return Err(format!("{}: probabilities sum off by {err:e}", r.image_id));
            }
        }
        Ok(())
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn write_softmax(file: &SoftmaxFile, path: &Path) -> Result<(), SoftmaxError> {
    let io = |source| SoftmaxError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    let header = Header {
        class_list: file.class_list.clone(),
    };
    writeln!(out, "{}", serde_json::to_string(&header).unwrap()).map_err(io)?;
    for r in &file.records {
        writeln!(out, "{}", serde_json::to_string(r).unwrap()).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Reads a softmax file. Record lengths must match the class list; values
/// are not required to be normalized so ensemble sums can be read back.
pub fn read_softmax(path: &Path) -> Result<SoftmaxFile, SoftmaxError> {
    let io = |source| SoftmaxError::Io {
        path: path.to_path_buf(),
        source,
    };
    let malformed = |line: usize, reason: String| SoftmaxError::Malformed {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut lines = reader.lines().enumerate();
    let header: Header = match lines.next() {
        Some((_, line)) => serde_json::from_str(&line.map_err(io)?).map_err(|e| malformed(1, e.to_string()))?,
        None => return Err(malformed(1, "missing class_list header".into())),
    };
    let k = header.class_list.len();
    let mut records = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let r: SoftmaxRecord = serde_json::from_str(&line).map_err(|e| malformed(i + 1, e.to_string()))?;
        if r.probs.len() != k {
            return Err(malformed(i + 1, format!("{} values for {k} classes", r.probs.len())));
        }
        if r.probs.iter().any(|p| !p.is_finite()) {
            return Err(malformed(i + 1, "non-finite value".into()));
        }
        records.push(r);
    }
    Ok(SoftmaxFile {
        class_list: header.class_list,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_to_lowest_index() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5, 0.1]), 1);
        assert_eq!(argmax(&[1.0, 1.0]), 0);
        assert_eq!(argmax(&[0.0, 0.1]), 1);
    }

    #[test]
    fn file_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        let f = SoftmaxFile {
            class_list: vec![ClassLabel::new("a").unwrap(), ClassLabel::new("b").unwrap()],
            records: vec![
                SoftmaxRecord {
                    image_id: "x.png".into(),
                    probs: vec![0.1 + 0.2, 1.0 - (0.1 + 0.2)],
                },
                SoftmaxRecord {
                    image_id: "y.png".into(),
                    probs: vec![1.0 / 3.0, 2.0 / 3.0],
                },
            ],
        };
        write_softmax(&f, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("{\"class_list\":[\"a\",\"b\"]}\n"));
        assert_eq!(read_softmax(&path).unwrap(), f);
        assert!(f.validate_normalized(1e-6).is_ok());
    }

    #[test]
    fn wrong_length_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        std::fs::write(
            &path,
            "{\"class_list\":[\"a\",\"b\"]}\n{\"image_id\":\"x\",\"probs\":[1.0]}\n",
        )
        .unwrap();
        assert!(matches!(
            read_softmax(&path),
            Err(SoftmaxError::Malformed { line: 2, .. })
        ));
    }
}
