use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use super::ClassifierError;
use crate::seed::SeedRng;

/// Number of trained hidden layers in the head.
pub const HIDDEN_LAYERS: usize = 3;

/// Fully connected layer; `weights` is `inputs × outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }
}

/// Per-feature affine map `(x − shift) · scale` applied before the first layer.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm {
    pub shift: Array1<f64>,
    pub scale: Array1<f64>,
}

impl InputNorm {
    /// Standardizes each column of `x`; standard deviations below `MIN_STD` are clamped.
    pub fn fit(x: ArrayView2<'_, f64>) -> Self {
        const MIN_STD: f64 = 1e-2;
        let n = x.nrows().max(1) as f64;
        let shift = x.sum_axis(Axis(0)) / n;
        let mut var = Array1::<f64>::zeros(x.ncols());
        for row in x.rows() {
            Zip::from(&mut var)
                .and(&row)
                .and(&shift)
                .for_each(|v, &xi, &m| *v += (xi - m) * (xi - m));
        }
        let scale = var.mapv(|v| 1.0 / (v / n).sqrt().max(MIN_STD));
        Self { shift, scale }
    }
}

/// Three ReLU hidden layers followed by a linear output layer and softmax.
/// The same type doubles as the gradient container; `norm` is fitted, not
/// trained, and has no gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadModel {
    pub norm: Option<InputNorm>,
    pub layers: Vec<Dense>,
}

impl HeadModel {
    pub fn zeros(input_dim: usize, widths: [usize; HIDDEN_LAYERS], num_classes: usize) -> Self {
        let mut dims = vec![input_dim];
        dims.extend(widths);
        dims.push(num_classes);
        Self {
            norm: None,
            layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    /// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases. Weights are
    /// drawn layer by layer in row-major order from `SeedRng(seed)`.
    pub fn he_init(input_dim: usize, widths: [usize; HIDDEN_LAYERS], num_classes: usize, seed: u64) -> Self {
        let mut model = Self::zeros(input_dim, widths, num_classes);
        let mut rng = SeedRng::new(seed);
        for layer in &mut model.layers {
            let std = (2.0 / layer.inputs() as f64).sqrt();
            layer.weights.iter_mut().for_each(|w| *w = rng.normal() * std);
        }
        model
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            norm: None,
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs(), l.outputs()))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map(Dense::outputs).unwrap_or(0)
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(Dense::outputs)
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        let norm_ok = self
            .norm
            .as_ref()
            .is_none_or(|n| n.shift.iter().chain(n.scale.iter()).all(|v| v.is_finite()));
        norm_ok
            && self
                .layers
                .iter()
                .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// All parameters in storage order: per layer, weights row-major then bias.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn flat_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    fn check_shapes(&self) -> Result<(), ClassifierError> {
        for pair in self.layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(ClassifierError::Shape("inconsistent layer shapes".into()));
            }
        }
        if let Some(n) = &self.norm {
            if n.shift.len() != self.input_dim() || n.scale.len() != self.input_dim() {
                return Err(ClassifierError::Shape(
                    "input normalization does not match input dimension".into(),
                ));
            }
        }
        if self.layers.len() != HIDDEN_LAYERS + 1 || self.layers.iter().any(|l| l.bias.len() != l.outputs()) {
            return Err(ClassifierError::Shape(
                "head must have three hidden layers and an output layer".into(),
            ));
        }
        Ok(())
    }
}

/// Inverted-dropout masks for one batch: entries are 0 or `1 / (1 − rate)`.
pub fn dropout_masks(seed: u64, rate: f64, batch: usize, widths: &[usize]) -> Vec<Array2<f64>> {
    let mut rng = SeedRng::new(seed);
    let keep = 1.0 / (1.0 - rate);
    widths
        .iter()
        .map(|&w| Array2::from_shape_fn((batch, w), |_| if rng.unit() < rate { 0.0 } else { keep }))
        .collect()
}

/// Intermediate values of a forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Input to each layer: the batch, then each hidden activation after dropout.
    pub inputs: Vec<Array2<f64>>,
    /// Hidden pre-activations.
    pub pre: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut probs = logits.clone();
    for mut row in probs.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|z| (z - m).exp());
        let s = row.sum();
        row.mapv_inplace(|e| e / s);
    }
    probs
}

pub fn forward_batch(
    model: &HeadModel,
    x: ArrayView2<'_, f64>,
    masks: Option<&[Array2<f64>]>,
) -> Result<Forward, ClassifierError> {
    model.check_shapes()?;
    if x.ncols() != model.input_dim() {
        return Err(ClassifierError::Shape(format!(
            "feature dimension {} does not match model input {}",
            x.ncols(),
            model.input_dim()
        )));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(ClassifierError::Numeric("non-finite input feature".into()));
    }
    if !model.is_finite() {
        return Err(ClassifierError::Numeric("non-finite model parameter".into()));
    }
    let hidden = model.layers.len() - 1;
    let mut x0 = x.to_owned();
    if let Some(n) = &model.norm {
        x0 -= &n.shift;
        x0 *= &n.scale;
    }
    let mut inputs = vec![x0];
    let mut pre = Vec::with_capacity(hidden);
    for (l, layer) in model.layers[..hidden].iter().enumerate() {
        let z = inputs[l].dot(&layer.weights) + &layer.bias;
        let mut a = z.mapv(|v| v.max(0.0));
        if let Some(masks) = masks {
            a *= &masks[l];
        }
        pre.push(z);
        inputs.push(a);
    }
    let out = &model.layers[hidden];
    let logits = inputs[hidden].dot(&out.weights) + &out.bias;
    let probs = softmax_rows(&logits);
    Ok(Forward {
        inputs,
        pre,
        logits,
        probs,
    })
}

/// Class probabilities for one feature vector, optionally with per-layer
/// dropout masks (each of the layer's width).
pub fn forward(
    model: &HeadModel,
    x: &[f64],
    dropout_mask: Option<&[Array1<f64>]>,
) -> Result<Vec<f64>, ClassifierError> {
    let xv = ArrayView2::from_shape((1, x.len()), x).expect("contiguous slice");
    let masks: Option<Vec<Array2<f64>>> =
        dropout_mask.map(|ms| ms.iter().map(|m| m.clone().insert_axis(Axis(0))).collect());
    let f = forward_batch(model, xv, masks.as_deref())?;
    Ok(f.probs.row(0).to_vec())
}

/// Dropout applied during a training step.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub rate: f64,
    pub seed: u64,
}

/// Mean categorical cross-entropy over the batch and its exact gradient.
pub fn loss_and_grad(
    model: &HeadModel,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    dropout: Option<Dropout>,
) -> Result<(f64, HeadModel), ClassifierError> {
    let (loss, grad, _) = loss_grad_probs(model, x, labels, dropout)?;
    Ok((loss, grad))
}

pub(crate) fn loss_grad_probs(
    model: &HeadModel,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    dropout: Option<Dropout>,
) -> Result<(f64, HeadModel, Array2<f64>), ClassifierError> {
    let k = model.num_classes();
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(ClassifierError::Label { label: bad, classes: k });
    }
    if labels.len() != x.nrows() {
        return Err(ClassifierError::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            x.nrows()
        )));
    }
    let batch = x.nrows();
    let hidden = model.layers.len() - 1;
    let masks = dropout
        .filter(|d| d.rate > 0.0)
        .map(|d| dropout_masks(d.seed, d.rate, batch, &model.hidden_widths()));
    let fwd = forward_batch(model, x, masks.as_deref())?;

    let mut loss = 0.0;
    for (row, &y) in fwd.logits.rows().into_iter().zip(labels) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = row.iter().map(|z| (z - m).exp()).sum::<f64>().ln() + m;
        loss += lse - row[y];
    }
    loss /= batch as f64;

    let mut grad = model.zeros_like();
    let mut delta = fwd.probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        delta[[i, y]] -= 1.0;
    }
    delta /= batch as f64;
    for l in (0..=hidden).rev() {
        grad.layers[l].weights = fwd.inputs[l].t().dot(&delta);
        grad.layers[l].bias = delta.sum_axis(Axis(0));
        if l == 0 {
            break;
        }
        let mut upstream = delta.dot(&model.layers[l].weights.t());
        if let Some(masks) = &masks {
            upstream *= &masks[l - 1];
        }
        Zip::from(&mut upstream).and(&fwd.pre[l - 1]).for_each(|g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
        delta = upstream;
    }
    Ok((loss, grad, fwd.probs))
}
