use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{featurize_with, FeatureMode};
use super::model::{forward_batch, loss_grad_probs, Dropout, HeadModel, InputNorm};
use super::{ClassifierError, HeadConfig, Optimizer};
use crate::imaging::load_rgb;
use crate::label::ClassLabel;
use crate::manifest::{DatasetManifest, Split};
use crate::seed::{hash64, SeedPart, SeedRng};
use crate::softmax::{SoftmaxFile, SoftmaxRecord};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Rows per inference chunk. Fixed so results do not depend on thread count.
const INFER_CHUNK: usize = 64;

/// Learning rate in effect at optimizer step `step`.
pub fn lr_at(step: u64, cfg: &HeadConfig) -> f64 {
    match &cfg.decay {
        None => cfg.learning_rate,
        Some(d) if d.staircase => cfg.learning_rate * d.decay_rate.powi((step / d.decay_steps) as i32),
        Some(d) => cfg.learning_rate * d.decay_rate.powf(step as f64 / d.decay_steps as f64),
    }
}

/// Feature matrix (one row per sample) with class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatures {
    pub ids: Vec<String>,
    pub x: Array2<f64>,
    pub y: Vec<usize>,
}

impl LabeledFeatures {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// Loads and featurizes every image of `split`, in manifest order.
pub fn featurize_split(
    manifest: &DatasetManifest,
    root: &Path,
    split: Split,
    mode: FeatureMode,
) -> Result<LabeledFeatures, ClassifierError> {
    let records: Vec<_> = manifest.records_in(split).collect();
    let rows: Vec<Vec<f64>> = records
        .par_iter()
        .map(|r| {
            let path = DatasetManifest::resolve(root, r);
            let img = load_rgb(&path).map_err(|source| ClassifierError::Image { path, source })?;
            featurize_with(&img, mode)
        })
        .collect::<Result<_, _>>()?;
    let dim = rows.first().map_or(super::FEATURE_DIM, Vec::len);
    let x =
        Array2::from_shape_vec((rows.len(), dim), rows.concat()).map_err(|e| ClassifierError::Shape(e.to_string()))?;
    let y = records
        .iter()
        .map(|r| manifest.class_index(&r.class_label).expect("validated manifest"))
        .collect();
    Ok(LabeledFeatures {
        ids: records.iter().map(|r| r.image_path.clone()).collect(),
        x,
        y,
    })
}

fn evaluate(model: &HeadModel, data: &LabeledFeatures) -> Result<(f64, f64), ClassifierError> {
    let probs = infer(model, data.x.view())?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (row, &y) in probs.rows().into_iter().zip(&data.y) {
        loss -= row[y].max(f64::MIN_POSITIVE).ln();
        if crate::softmax::argmax(row.as_slice().expect("standard layout")) == y {
            correct += 1;
        }
    }
    let n = data.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Dropout-free class probabilities, computed over fixed-size row chunks in parallel.
fn infer(model: &HeadModel, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, ClassifierError> {
    let chunks: Vec<Array2<f64>> = x
        .axis_chunks_iter(Axis(0), INFER_CHUNK)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|c| forward_batch(model, c, None).map(|f| f.probs))
        .collect::<Result<_, _>>()?;
    let views: Vec<_> = chunks.iter().map(|c| c.view()).collect();
    if views.is_empty() {
        return Ok(Array2::zeros((0, model.num_classes())));
    }
    ndarray::concatenate(Axis(0), &views).map_err(|e| ClassifierError::Shape(e.to_string()))
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Trains a head from He initialization. Training is sequential over batches;
/// batch order and dropout masks are derived from `init_seed`.
pub fn train(
    train_set: &LabeledFeatures,
    val_set: &LabeledFeatures,
    cfg: &HeadConfig,
) -> Result<(HeadModel, Vec<EpochStats>), ClassifierError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(ClassifierError::EmptySplit("train".into()));
    }
    if val_set.is_empty() {
        return Err(ClassifierError::EmptySplit("val".into()));
    }
    let dim = train_set.x.ncols();
    if val_set.x.ncols() != dim {
        return Err(ClassifierError::Shape("train and val feature dimensions differ".into()));
    }
    let k = cfg
        .num_classes
        .unwrap_or_else(|| train_set.y.iter().chain(&val_set.y).max().map_or(1, |m| m + 1));
    let mut model = HeadModel::he_init(dim, cfg.widths(), k, cfg.init_seed);
    if cfg.standardize {
        model.norm = Some(InputNorm::fit(train_set.x.view()));
    }
    let n_params = model.parameter_count();
    let mut adam = AdamState {
        m: vec![0.0; n_params],
        v: vec![0.0; n_params],
    };
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step: u64 = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut rng = SeedRng::new(hash64(&[
            SeedPart::U64(cfg.init_seed),
            SeedPart::Str("shuffle"),
            SeedPart::U64(epoch as u64),
        ]));
        order.sort_unstable();
        rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let xb = train_set.x.select(Axis(0), batch);
            let yb: Vec<usize> = batch.iter().map(|&i| train_set.y[i]).collect();
            let dropout = Dropout {
                rate: cfg.dropout,
                seed: hash64(&[
                    SeedPart::U64(cfg.init_seed),
                    SeedPart::Str("dropout"),
                    SeedPart::U64(step),
                ]),
            };
            let (loss, grad, probs) = loss_grad_probs(&model, xb.view(), &yb, Some(dropout))?;
            if !loss.is_finite() {
                return Err(ClassifierError::Divergence { step });
            }
            loss_sum += loss * batch.len() as f64;
            for (row, &y) in probs.rows().into_iter().zip(&yb) {
                if crate::softmax::argmax(row.as_slice().expect("standard layout")) == y {
                    correct += 1;
                }
            }

            let lr = lr_at(step, cfg);
            let t = (step + 1) as i32;
            let g = grad.flat();
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (p, gi) in model.flat_mut().zip(&g) {
                        *p -= lr * gi;
                    }
                }
                Optimizer::Adam => {
                    let c1 = 1.0 - ADAM_BETA1.powi(t);
                    let c2 = 1.0 - ADAM_BETA2.powi(t);
                    for (((p, gi), m), v) in model.flat_mut().zip(&g).zip(&mut adam.m).zip(&mut adam.v) {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * gi;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * gi * gi;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
            if !model.is_finite() {
                return Err(ClassifierError::Divergence { step });
            }
            step += 1;
        }

        let (val_loss, val_accuracy) = evaluate(&model, val_set)?;
        let n = train_set.len() as f64;
        let stats = EpochStats {
            epoch: epoch + 1,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_loss,
            val_accuracy,
        };
        log::debug!(
            "epoch {}: train loss {:.4} acc {:.4}, val loss {:.4} acc {:.4}",
            stats.epoch,
            stats.train_loss,
            stats.train_accuracy,
            stats.val_loss,
            stats.val_accuracy
        );
        history.push(stats);
    }
    Ok((model, history))
}

/// Softmax records for pre-computed features, dropout disabled.
pub fn predict_batch(
    model: &HeadModel,
    data: &LabeledFeatures,
    class_list: &[ClassLabel],
) -> Result<SoftmaxFile, ClassifierError> {
    if class_list.len() != model.num_classes() {
        return Err(ClassifierError::Shape(format!(
            "model has {} outputs but the class list has {}",
            model.num_classes(),
            class_list.len()
        )));
    }
    let probs = infer(model, data.x.view())?;
    let records = data
        .ids
        .iter()
        .zip(probs.rows())
        .map(|(id, p)| SoftmaxRecord {
            image_id: id.clone(),
            probs: p.to_vec(),
        })
        .collect();
    Ok(SoftmaxFile {
        class_list: class_list.to_vec(),
        records,
    })
}

/// Featurizes `split` and predicts it; one record per manifest record, in order.
pub fn predict_split(
    model: &HeadModel,
    mode: FeatureMode,
    manifest: &DatasetManifest,
    root: &Path,
    split: Split,
) -> Result<SoftmaxFile, ClassifierError> {
    let data = featurize_split(manifest, root, split, mode)?;
    if !data.is_empty() && data.x.ncols() != model.input_dim() {
        return Err(ClassifierError::Shape(format!(
            "features have dimension {} but the model expects {}",
            data.x.ncols(),
            model.input_dim()
        )));
    }
    predict_batch(model, &data, &manifest.class_list)
}
