//! Softmax-sum ensembling, confusion matrices and one-vs-rest metrics.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::ClassLabel;
use crate::manifest::{DatasetManifest, Split};
use crate::softmax::{argmax, SoftmaxFile, SoftmaxRecord};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no softmax files given")]
    NoInputs,
    #[error("class lists differ: {expected:?} vs {found:?}")]
    ClassListMismatch {
        expected: Vec<ClassLabel>,
        found: Vec<ClassLabel>,
    },
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("{weights} weights given for {files} files")]
    WeightCount { weights: usize, files: usize },
    #[error("ensemble weight {0} is not a finite positive number")]
    InvalidWeight(f64),
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("malformed report: {0}")]
    MalformedReport(String),
}

/// Prediction per image id.
pub type Predictions = BTreeMap<String, usize>;

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    /// Weighted sums in the record order of the first file; not normalized.
    pub combined: SoftmaxFile,
    pub predictions: Predictions,
}

/// Argmax prediction per record of a single file.
pub fn predictions_of(file: &SoftmaxFile) -> Result<Predictions, EvalError> {
    let mut out = Predictions::new();
    for r in &file.records {
        if out.insert(r.image_id.clone(), argmax(&r.probs)).is_some() {
            return Err(EvalError::Alignment(format!("duplicate image id {}", r.image_id)));
        }
    }
    Ok(out)
}

/// Sums member outputs per image, `combined[k] = Σ_m w_m · p_m[k]`.
///
/// Addends are summed in sorted order so the result, and hence the
/// lowest-index tie-break, does not depend on the order of `files`.
pub fn ensemble_predict(files: &[SoftmaxFile], weights: Option<&[f64]>) -> Result<Ensemble, EvalError> {
    let first = files.first().ok_or(EvalError::NoInputs)?;
    let ones = vec![1.0; files.len()];
    let weights = weights.unwrap_or(&ones);
    if weights.len() != files.len() {
        return Err(EvalError::WeightCount {
            weights: weights.len(),
            files: files.len(),
        });
    }
    if let Some(&w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(EvalError::InvalidWeight(w));
    }
    for f in &files[1..] {
        if f.class_list != first.class_list {
            return Err(EvalError::ClassListMismatch {
                expected: first.class_list.clone(),
                found: f.class_list.clone(),
            });
        }
    }
    let k = first.class_list.len();
    let mut indexes: Vec<HashMap<&str, &SoftmaxRecord>> = Vec::with_capacity(files.len());
    for f in files {
        let mut idx = HashMap::with_capacity(f.records.len());
        for r in &f.records {
            if idx.insert(r.image_id.as_str(), r).is_some() {
                return Err(EvalError::Alignment(format!("duplicate image id {}", r.image_id)));
            }
        }
        if idx.len() != first.records.len() {
            return Err(EvalError::Alignment(format!(
                "files hold {} and {} images",
                first.records.len(),
                idx.len()
            )));
        }
        indexes.push(idx);
    }

    let mut records = Vec::with_capacity(first.records.len());
    let mut predictions = Predictions::new();
    let mut addends = vec![0.0; files.len()];
    for r in &first.records {
        let members: Vec<&SoftmaxRecord> = indexes
            .iter()
            .map(|idx| {
                idx.get(r.image_id.as_str())
                    .copied()
                    .ok_or_else(|| EvalError::Alignment(format!("image {} missing from a file", r.image_id)))
            })
            .collect::<Result<_, _>>()?;
        let mut sums = Vec::with_capacity(k);
        for c in 0..k {
            for (a, (m, w)) in addends.iter_mut().zip(members.iter().zip(weights)) {
                *a = w * m.probs[c];
            }
            addends.sort_by(f64::total_cmp);
            sums.push(addends.iter().sum::<f64>());
        }
        predictions.insert(r.image_id.clone(), argmax(&sums));
        records.push(SoftmaxRecord {
            image_id: r.image_id.clone(),
            probs: sums,
        });
    }
    Ok(Ensemble {
        combined: SoftmaxFile {
            class_list: first.class_list.clone(),
            records,
        },
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_list: Vec<ClassLabel>,
    /// `counts[t][p]`: samples of true class `t` predicted as `p`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(class_list: Vec<ClassLabel>) -> Self {
        let k = class_list.len();
        Self {
            class_list,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }
}

/// Tallies predictions against manifest labels for every record of `split`.
pub fn confusion(
    predictions: &Predictions,
    manifest: &DatasetManifest,
    split: Split,
) -> Result<ConfusionMatrix, EvalError> {
    let mut cm = ConfusionMatrix::zeros(manifest.class_list.clone());
    let k = cm.class_list.len();
    for r in manifest.records_in(split) {
        let p = *predictions
            .get(&r.image_path)
            .ok_or_else(|| EvalError::Alignment(format!("no prediction for {}", r.image_path)))?;
        if p >= k {
            return Err(EvalError::Alignment(format!(
                "prediction {p} for {} out of range",
                r.image_path
            )));
        }
        let t = manifest
            .class_index(&r.class_label)
            .ok_or_else(|| EvalError::Alignment(format!("class {} not in class list", r.class_label)))?;
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    /// `tp + fp = 0`; precision is reported as 0.
    pub precision_zero_denominator: bool,
    /// `tp + fn = 0`; recall is reported as 0.
    pub recall_zero_denominator: bool,
}

pub fn one_vs_rest_metrics(cm: &ConfusionMatrix, k: usize) -> Result<ClassMetrics, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyEvaluation);
    }
    let tp = cm.counts[k][k];
    let fp: u64 = (0..cm.counts.len()).filter(|&t| t != k).map(|t| cm.counts[t][k]).sum();
    let fn_: u64 = (0..cm.counts.len()).filter(|&p| p != k).map(|p| cm.counts[k][p]).sum();
    let tn = total - tp - fp - fn_;
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Ok(ClassMetrics {
        tp,
        fp,
        fn_,
        tn,
        accuracy: ratio(tp + tn, total),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        precision_zero_denominator: tp + fp == 0,
        recall_zero_denominator: tp + fn_ == 0,
    })
}

pub fn overall_accuracy(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    match cm.total() {
        0 => Err(EvalError::EmptyEvaluation),
        total => Ok(cm.trace() as f64 / total as f64),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class_label: ClassLabel,
    #[serde(flatten)]
    pub metrics: ClassMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassRow>,
    pub overall_accuracy: f64,
    pub total: u64,
}

impl MetricsReport {
    pub fn get(&self, label: &str) -> Option<&ClassMetrics> {
        self.per_class
            .iter()
            .find(|r| r.class_label.as_str() == label)
            .map(|r| &r.metrics)
    }

    /// Fixed-width table with values to two decimals.
    pub fn render_text(&self) -> String {
        let width = self
            .per_class
            .iter()
            .map(|r| r.class_label.as_str().len())
            .chain(["Overall".len()])
            .max()
            .unwrap_or(7);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<width$}  {:>8}  {:>9}  {:>6}",
            "Class", "Accuracy", "Precision", "Recall"
        );
        for r in &self.per_class {
            let m = &r.metrics;
            let _ = writeln!(
                s,
                "{:<width$}  {:>8.2}  {:>9.2}  {:>6.2}",
                r.class_label.as_str(),
                m.accuracy,
                m.precision,
                m.recall
            );
        }
        let _ = writeln!(s, "{:<width$}  {:>8.2}", "Overall", self.overall_accuracy);
        s
    }

    /// `class,accuracy,precision,recall` rows plus an `overall` row, values at
    /// full round-trip precision.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,accuracy,precision,recall\n");
        for r in &self.per_class {
            let m = &r.metrics;
            let _ = writeln!(s, "{},{},{},{}", r.class_label, m.accuracy, m.precision, m.recall);
        }
        let _ = writeln!(s, "overall,{},,", self.overall_accuracy);
        s
    }
}

/// One parsed row of a report CSV; precision and recall are absent on the overall row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub class: String,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

pub fn parse_report_csv(text: &str) -> Result<Vec<CsvRow>, EvalError> {
    let bad = |m: String| EvalError::MalformedReport(m);
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["class", "accuracy", "precision", "recall"] {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let num = |s: &str| -> Result<Option<f64>, EvalError> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| bad(format!("not a number: {s:?}")))
        }
    };
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        rows.push(CsvRow {
            class: rec[0].to_string(),
            accuracy: num(&rec[1])?.ok_or_else(|| bad("missing accuracy".into()))?,
            precision: num(&rec[2])?,
            recall: num(&rec[3])?,
        });
    }
    Ok(rows)
}

pub fn report(cm: &ConfusionMatrix) -> Result<MetricsReport, EvalError> {
    let per_class = (0..cm.class_list.len())
        .map(|k| {
            Ok(ClassRow {
                class_label: cm.class_list[k].clone(),
                metrics: one_vs_rest_metrics(cm, k)?,
            })
        })
        .collect::<Result<_, EvalError>>()?;
    Ok(MetricsReport {
        per_class,
        overall_accuracy: overall_accuracy(cm)?,
        total: cm.total(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Vec<ClassLabel> {
        (0..n).map(|i| ClassLabel::new(format!("c{i}")).unwrap()).collect()
    }

    fn cm(counts: Vec<Vec<u64>>) -> ConfusionMatrix {
        ConfusionMatrix {
            class_list: labels(counts.len()),
            counts,
        }
    }

    fn file(rows: &[(&str, &[f64])]) -> SoftmaxFile {
        SoftmaxFile {
            class_list: labels(rows[0].1.len()),
            records: rows
                .iter()
                .map(|(id, p)| SoftmaxRecord {
                    image_id: id.to_string(),
                    probs: p.to_vec(),
                })
                .collect(),
        }
    }

    #[test]
    fn two_class_worked_example() {
        let m = one_vs_rest_metrics(&cm(vec![vec![2, 0], vec![1, 1]]), 0).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_, m.tn), (2, 1, 0, 1));
        assert_eq!(m.accuracy, 0.75);
        assert_eq!(m.precision, 2.0 / 3.0);
        assert_eq!(m.recall, 1.0);
        assert_eq!(overall_accuracy(&cm(vec![vec![2, 0], vec![1, 1]])).unwrap(), 0.75);
    }

    #[test]
    fn absent_class_is_flagged() {
        let c = cm(vec![vec![3, 0, 0], vec![0, 2, 0], vec![0, 0, 0]]);
        let m = one_vs_rest_metrics(&c, 2).unwrap();
        assert!(m.recall_zero_denominator && m.precision_zero_denominator);
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.tn, 5);
    }

    #[test]
    fn uniform_and_empty() {
        assert_eq!(overall_accuracy(&cm(vec![vec![1; 5]; 5])).unwrap(), 0.2);
        assert_eq!(
            overall_accuracy(&cm(vec![vec![0; 2]; 2])),
            Err(EvalError::EmptyEvaluation)
        );
        assert_eq!(
            one_vs_rest_metrics(&cm(vec![vec![0; 2]; 2]), 0),
            Err(EvalError::EmptyEvaluation)
        );
    }

    #[test]
    fn text_table_rounds_to_two_places() {
        let r = report(&cm(vec![vec![2, 0], vec![1, 1]])).unwrap();
        let text = r.render_text();
        let row = text.lines().nth(1).unwrap();
        assert_eq!(
            row.split_whitespace().collect::<Vec<_>>(),
            ["c0", "0.75", "0.67", "1.00"]
        );
        assert!(text.lines().last().unwrap().ends_with("0.75"));
    }

    #[test]
    fn csv_round_trips_exactly() {
        let r = report(&cm(vec![vec![5, 1, 2], vec![0, 7, 3], vec![4, 1, 9]])).unwrap();
        let rows = parse_report_csv(&r.to_csv()).unwrap();
        assert_eq!(rows.len(), 4);
        for (row, cr) in rows.iter().zip(&r.per_class) {
            assert_eq!(row.class, cr.class_label.as_str());
            assert_eq!(row.accuracy, cr.metrics.accuracy);
            assert_eq!(row.precision, Some(cr.metrics.precision));
            assert_eq!(row.recall, Some(cr.metrics.recall));
        }
        assert_eq!(rows[3].class, "overall");
        assert_eq!(rows[3].accuracy, r.overall_accuracy);
        assert_eq!(rows[3].precision, None);
    }

    #[test]
    fn two_model_sum() {
        let a = file(&[("x", &[0.6, 0.4])]);
        let b = file(&[("x", &[0.3, 0.7])]);
        let e = ensemble_predict(&[a, b], None).unwrap();
        assert_eq!(e.combined.records[0].probs, vec![0.6 + 0.3, 0.4 + 0.7]);
        assert_eq!(e.predictions["x"], 1);
    }

    #[test]
    fn mismatches_are_reported() {
        let a = file(&[("x", &[0.6, 0.4])]);
        let b = file(&[("y", &[0.3, 0.7])]);
        assert!(matches!(
            ensemble_predict(&[a.clone(), b], None),
            Err(EvalError::Alignment(_))
        ));
        let mut c = a.clone();
        c.class_list.reverse();
        assert!(matches!(
            ensemble_predict(&[a.clone(), c], None),
            Err(EvalError::ClassListMismatch { .. })
        ));
        assert!(matches!(ensemble_predict(&[], None), Err(EvalError::NoInputs)));
        assert!(matches!(
            ensemble_predict(std::slice::from_ref(&a), Some(&[1.0, 2.0])),
            Err(EvalError::WeightCount { .. })
        ));
        assert!(matches!(
            ensemble_predict(&[a], Some(&[-1.0])),
            Err(EvalError::InvalidWeight(_))
        ));
    }
}
