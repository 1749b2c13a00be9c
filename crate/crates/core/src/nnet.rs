//! Fully-connected binary detector: ReLU hidden layers, two-logit softmax
//! output, hand-written forward and backward passes.
//!
//! Weights are row-major `out x in`. Training is single-threaded so that a
//! fixed seed reproduces the loss curve bit for bit; inference helpers fan out
//! across samples.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{Dataset, Label, Normalization};
use crate::defense::PaddingScheme;
use crate::{par, seed};

pub const DEFAULT_HIDDEN: [usize; 2] = [128, 64];

/// Gain on the output layer's initial weights, keeping fresh logits close to
/// symmetric so the initial loss sits near `ln 2`.
const OUTPUT_INIT_GAIN: f64 = 0.1;

#[derive(Debug, Error)]
pub enum NnetError {
    #[error("dimension mismatch: model expects {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("model file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    #[inline]
    fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            (0..self.outputs).map(|o| self.biases[o] + dot(self.row(o), x)),
        );
    }

    /// `dx = W^T dy`.
    fn back(&self, dy: &[f64], dx: &mut Vec<f64>) {
        dx.clear();
        dx.resize(self.inputs, 0.0);
        for (o, &g) in dy.iter().enumerate() {
            if g != 0.0 {
                axpy(g, self.row(o), dx);
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    /// `(input_dim, hidden..., 2)`.
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub layers: Vec<Dense>,
    /// Feature standardization the model was trained under.
    pub normalization: Option<Normalization>,
    /// Digest of the training configuration, once trained.
    pub train_digest: Option<String>,
    /// Present on defended models; inputs are padded to `m + p`.
    pub padding: Option<PaddingScheme>,
}

/// Gradients of every weight and bias, laid out like the model.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub layers: Vec<Dense>,
}

impl ParamGrads {
    fn zeros_like(model: &DetectorModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    fn clear(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.biases.iter_mut().for_each(|b| *b = 0.0);
        }
    }
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Default)]
struct Tape {
    /// `acts[0]` is the input, `acts[l]` the post-activation output of layer `l-1`.
    acts: Vec<Vec<f64>>,
    /// Output logits.
    logits: Vec<f64>,
    probs: [f64; 2],
}

fn softmax2(l: &[f64]) -> [f64; 2] {
    let mx = l[0].max(l[1]);
    let e0 = (l[0] - mx).exp();
    let e1 = (l[1] - mx).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Cross entropy `-log p_target` computed from logits without underflow.
fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let mx = logits[0].max(logits[1]);
    let lse = mx + ((logits[0] - mx).exp() + (logits[1] - mx).exp()).ln();
    lse - logits[target]
}

pub fn init_model(input_dim: usize, hidden: &[usize], seed: u64) -> DetectorModel {
    let mut dims = vec![input_dim];
    dims.extend_from_slice(hidden);
    dims.push(2);
    let mut rng = seed::rng(seed, "init", 0);
    let n_layers = dims.len() - 1;
    let layers = (0..n_layers)
        .map(|l| {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let mut scale = (2.0 / fan_in as f64).sqrt();
            if l + 1 == n_layers {
                scale *= OUTPUT_INIT_GAIN;
            }
            let dist = Normal::new(0.0, scale).expect("positive scale");
            let mut layer = Dense::zeros(fan_in, fan_out);
            layer.weights.iter_mut().for_each(|w| *w = dist.sample(&mut rng));
            layer
        })
        .collect();
    DetectorModel {
        layer_dims: dims,
        activation: Activation::Relu,
        layers,
        normalization: None,
        train_digest: None,
        padding: None,
    }
}

impl DetectorModel {
    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    fn check(&self, features: &[f64]) -> Result<(), NnetError> {
        if features.len() != self.input_dim() {
            return Err(NnetError::Dimension {
                expected: self.input_dim(),
                got: features.len(),
            });
        }
        Ok(())
    }

    fn run(&self, x: &[f64], tape: &mut Tape) {
        tape.acts.resize_with(self.layers.len(), Vec::new);
        tape.acts[0].clear();
        tape.acts[0].extend_from_slice(x);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            if l == last {
                layer.apply(&tape.acts[l], &mut tape.logits);
            } else {
                let (head, tail) = tape.acts.split_at_mut(l + 1);
                layer.apply(&head[l], &mut tail[0]);
                tail[0].iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        tape.probs = softmax2(&tape.logits);
    }

    /// Backpropagates `dlogits` through the tape. Accumulates parameter
    /// gradients when `grads` is given; returns the input gradient when
    /// `want_input` is set.
    fn backprop(
        &self,
        tape: &Tape,
        dlogits: [f64; 2],
        mut grads: Option<&mut ParamGrads>,
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let mut dy: Vec<f64> = dlogits.to_vec();
        let mut dx = Vec::new();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &tape.acts[l];
            if let Some(g) = grads.as_deref_mut() {
                let gl = &mut g.layers[l];
                for (o, &d) in dy.iter().enumerate() {
                    gl.biases[o] += d;
                    if d != 0.0 {
                        axpy(d, input, &mut gl.weights[o * layer.inputs..(o + 1) * layer.inputs]);
                    }
                }
            }
            if l == 0 && !want_input {
                return None;
            }
            layer.back(&dy, &mut dx);
            if l > 0 {
                // ReLU mask: the stored activation is positive iff the unit was active.
                for (d, a) in dx.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            std::mem::swap(&mut dy, &mut dx);
        }
        Some(dy)
    }

    /// Class probabilities `(p0, p1)`.
    pub fn forward(&self, features: &[f64]) -> Result<[f64; 2], NnetError> {
        self.check(features)?;
        let mut tape = Tape::default();
        self.run(features, &mut tape);
        Ok(tape.probs)
    }

    pub fn logits(&self, features: &[f64]) -> Result<[f64; 2], NnetError> {
        self.check(features)?;
        let mut tape = Tape::default();
        self.run(features, &mut tape);
        Ok([tape.logits[0], tape.logits[1]])
    }

    /// Cross-entropy of `target` at `features`.
    pub fn loss(&self, features: &[f64], target: Label) -> Result<f64, NnetError> {
        let l = self.logits(features)?;
        Ok(cross_entropy(&l, target.index()))
    }

    /// Gradient of the cross-entropy of `target` with respect to the input.
    pub fn input_gradient(&self, features: &[f64], target: Label) -> Result<Vec<f64>, NnetError> {
        Ok(self.loss_and_input_gradient(features, target)?.1)
    }

    pub fn loss_and_input_gradient(
        &self,
        features: &[f64],
        target: Label,
    ) -> Result<(f64, Vec<f64>), NnetError> {
        self.check(features)?;
        let mut tape = Tape::default();
        self.run(features, &mut tape);
        let t = target.index();
        let mut d = tape.probs;
        d[t] -= 1.0;
        let loss = cross_entropy(&tape.logits, t);
        let g = self.backprop(&tape, d, None, true).expect("input gradient requested");
        Ok((loss, g))
    }

    /// Loss and parameter gradients for one sample.
    pub fn param_gradient(&self, features: &[f64], target: Label) -> Result<(f64, ParamGrads), NnetError> {
        self.check(features)?;
        let mut tape = Tape::default();
        self.run(features, &mut tape);
        let t = target.index();
        let mut d = tape.probs;
        d[t] -= 1.0;
        let mut grads = ParamGrads::zeros_like(self);
        self.backprop(&tape, d, Some(&mut grads), false);
        Ok((cross_entropy(&tape.logits, t), grads))
    }

    /// Activations of the last hidden layer.
    pub fn embedding(&self, features: &[f64]) -> Result<Vec<f64>, NnetError> {
        self.check(features)?;
        let mut tape = Tape::default();
        self.run(features, &mut tape);
        Ok(tape.acts.last().cloned().unwrap_or_default())
    }

    pub fn predict(&self, features: &[f64]) -> Result<Label, NnetError> {
        Ok(Label::from_probs(self.forward(features)?))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, NnetError> {
        let model: DetectorModel =
            serde_json::from_str(text).map_err(|e| NnetError::Format(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<(), NnetError> {
        let dims = &self.layer_dims;
        if dims.len() < 2 || *dims.last().unwrap() != 2 || self.layers.len() != dims.len() - 1 {
            return Err(NnetError::Format(format!("bad layer dims {dims:?}")));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.inputs != dims[l]
                || layer.outputs != dims[l + 1]
                || layer.weights.len() != layer.inputs * layer.outputs
                || layer.biases.len() != layer.outputs
            {
                return Err(NnetError::Format(format!("layer {l} shape disagrees with dims")));
            }
            if layer.weights.iter().chain(&layer.biases).any(|v| !v.is_finite()) {
                return Err(NnetError::Format(format!("layer {l} has non-finite parameters")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    SgdMomentum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 0.01,
            seed: 0,
            optimizer: Optimizer::SgdMomentum,
            momentum: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex_digest(text.as_bytes())
    }

    fn check(&self, train_len: usize) -> Result<(), NnetError> {
        if self.epochs == 0 {
            return Err(NnetError::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 || self.batch_size > train_len {
            return Err(NnetError::Config(format!(
                "batch_size {} must be in 1..={train_len}",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnetError::Config("learning_rate must be positive".into()));
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(NnetError::Config("momentum must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// Row 0 is the untrained model evaluated on the training set; row `e` holds
/// the mean mini-batch loss of epoch `e` and validation metrics after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub padding: usize,
    pub points: Vec<EpochStats>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
}

impl LossCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_accuracy\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.epoch, p.train_loss, p.val_loss, p.val_accuracy
            ));
        }
        out
    }

    pub fn initial_loss(&self) -> f64 {
        self.points[0].train_loss
    }

    pub fn final_loss(&self) -> f64 {
        self.points.last().map(|p| p.train_loss).unwrap_or(f64::NAN)
    }
}

/// Mean loss and accuracy of a model over a dataset, in parallel.
pub fn loss_and_accuracy(model: &DetectorModel, data: &Dataset) -> Result<(f64, f64), NnetError> {
    if data.is_empty() {
        return Err(NnetError::EmptyDataset);
    }
    let per: Vec<Result<(f64, bool), NnetError>> = par::map_slice(&data.samples, |_, s| {
        let logits = model.logits(&s.features)?;
        let probs = softmax2(&logits);
        Ok((
            cross_entropy(&logits, s.label.index()),
            Label::from_probs(probs) == s.label,
        ))
    });
    let mut loss = 0.0;
    let mut correct = 0usize;
    for r in per {
        let (l, ok) = r?;
        loss += l;
        correct += ok as usize;
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Mini-batch SGD with momentum on the cross-entropy. Returns the parameters
/// from the epoch with the best validation accuracy.
pub fn train(
    model: &DetectorModel,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<(DetectorModel, LossCurve), NnetError> {
    cfg.check(train.len())?;
    if val.is_empty() {
        return Err(NnetError::EmptyDataset);
    }
    for d in [train, val] {
        if d.feature_dim != model.input_dim() {
            return Err(NnetError::Dimension {
                expected: model.input_dim(),
                got: d.feature_dim,
            });
        }
    }

    let mut model = model.clone();
    model.train_digest = Some(cfg.digest());
    let mut velocity = ParamGrads::zeros_like(&model);
    let mut grads = ParamGrads::zeros_like(&model);
    let mut tape = Tape::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = seed::rng(cfg.seed, "shuffle", 0);

    let (train0, _) = loss_and_accuracy(&model, train)?;
    let (val0, acc0) = loss_and_accuracy(&model, val)?;
    let mut points = vec![EpochStats {
        epoch: 0,
        train_loss: train0,
        val_loss: val0,
        val_accuracy: acc0,
    }];
    let mut best = (acc0, 0usize, model.clone());

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.clear();
            for &i in batch {
                let s = &train.samples[i];
                model.run(&s.features, &mut tape);
                let t = s.label.index();
                total += cross_entropy(&tape.logits, t);
                let mut d = tape.probs;
                d[t] -= 1.0;
                model.backprop(&tape, d, Some(&mut grads), false);
            }
            let scale = 1.0 / batch.len() as f64;
            for ((layer, g), v) in model
                .layers
                .iter_mut()
                .zip(&grads.layers)
                .zip(&mut velocity.layers)
            {
                for ((w, gw), vw) in layer.weights.iter_mut().zip(&g.weights).zip(&mut v.weights) {
                    *vw = cfg.momentum * *vw + gw * scale;
                    *w -= cfg.learning_rate * *vw;
                }
                for ((b, gb), vb) in layer.biases.iter_mut().zip(&g.biases).zip(&mut v.biases) {
                    *vb = cfg.momentum * *vb + gb * scale;
                    *b -= cfg.learning_rate * *vb;
                }
            }
        }
        let train_loss = total / train.len() as f64;
        if !train_loss.is_finite() {
            return Err(NnetError::Diverged {
                epoch,
                loss: train_loss,
            });
        }
        let (val_loss, val_accuracy) = loss_and_accuracy(&model, val)?;
        points.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        });
        if val_accuracy > best.0 {
            best = (val_accuracy, epoch, model.clone());
        }
    }

    let curve = LossCurve {
        padding: model.padding.as_ref().map_or(0, |s| s.p),
        points,
        best_epoch: best.1,
    };
    Ok((best.2, curve))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
}

impl Metrics {
    /// Metrics from `(predicted, actual)` pairs; label 1 is the positive class.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (pred, actual) in pairs {
            match (pred, actual) {
                (Label::False, Label::False) => tp += 1,
                (Label::False, Label::Normal) => fp += 1,
                (Label::Normal, Label::Normal) => tn += 1,
                (Label::Normal, Label::False) => fn_ += 1,
            }
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics {
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            precision,
            recall,
            f1,
            true_positive: tp,
            false_positive: fp,
            true_negative: tn,
            false_negative: fn_,
        }
    }
}

pub fn predict_all(model: &DetectorModel, data: &Dataset) -> Result<Vec<Label>, NnetError> {
    par::map_slice(&data.samples, |_, s| model.predict(&s.features))
        .into_iter()
        .collect()
}

pub fn evaluate(model: &DetectorModel, data: &Dataset) -> Result<Metrics, NnetError> {
    if data.is_empty() {
        return Err(NnetError::EmptyDataset);
    }
    let preds = predict_all(model, data)?;
    Ok(Metrics::from_pairs(
        preds.into_iter().zip(data.samples.iter().map(|s| s.label)),
    ))
}
