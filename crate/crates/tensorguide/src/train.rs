//! Exact reverse-mode gradients for the fixed adapter pipelines, the two
//! optimizers, and the training loop.
//!
//! The gradient chain is written out by hand: cross-entropy to logits
//! (`softmax - onehot`, averaged over the batch), then through the adapter's
//! correction path, and for the tensor-train variants through the chain
//! contraction down to per-core gradients. Accumulation runs in fixed sample
//! order so every result is bit-deterministic.

use crate::adapters::{Adapter, FrozenBackbone};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tasks::Dataset;
use crate::tensor::{matmul, DenseTensor, Shape};
use crate::tt::{tt_apply_backward, tt_apply_with_tape};
use serde::{Deserialize, Serialize};

const SHUFFLE_STREAM: u64 = 0x53_48_55_46;
const RESAMPLE_STREAM: u64 = 0x52_45_53_41;

/// Named gradients, one entry per trainable parameter, in the adapter's
/// canonical parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    entries: Vec<(String, DenseTensor)>,
}

impl GradientSet {
    pub fn new(entries: Vec<(String, DenseTensor)>) -> Self {
        GradientSet { entries }
    }

    pub fn entries(&self) -> &[(String, DenseTensor)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&DenseTensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, g)| g)
    }

    /// All gradient values concatenated in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (_, g) in &self.entries {
            out.extend_from_slice(g.values());
        }
        out
    }

    /// Check the one-entry-per-parameter invariant against an adapter.
    pub fn matches(&self, adapter: &Adapter) -> bool {
        let names = adapter.param_names();
        let params = adapter.params();
        names.len() == self.entries.len()
            && self
                .entries
                .iter()
                .zip(names.iter().zip(params))
                .all(|((n, g), (want, p))| n == want && g.shape() == p.shape())
    }
}

/// Stable softmax of one logit row.
fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Mean cross-entropy with log-sum-exp stabilization.
pub fn cross_entropy(logits: &DenseTensor, labels: &[usize]) -> Result<f64> {
    if logits.shape().rank() != 2 || logits.rows() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} logit rows for {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    let q = logits.cols();
    let mut total = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        if label >= q {
            return Err(Error::LabelOutOfRange { label, classes: q });
        }
        let row = logits.row(b);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[label];
    }
    Ok(total / labels.len() as f64)
}

/// `(softmax - onehot) / batch`, the gradient of mean cross-entropy in the
/// logits.
fn cross_entropy_dlogits(logits: &DenseTensor, labels: &[usize]) -> DenseTensor {
    let (batch, q) = (logits.rows(), logits.cols());
    let mut d = DenseTensor::zeros(Shape::new(vec![batch, q]).expect("valid dlogits shape"));
    let scale = 1.0 / batch as f64;
    for b in 0..batch {
        let probs = softmax_row(logits.row(b));
        let drow = &mut d.values_mut()[b * q..(b + 1) * q];
        for (j, p) in probs.iter().enumerate() {
            drow[j] = p * scale;
        }
        drow[labels[b]] -= scale;
    }
    d
}

/// Gradients of `sum_{b,j} dlogits[b,j] * logits[b,j]` with respect to every
/// trainable parameter, from precomputed features. This is the shared spine:
/// the loss gradient uses `dlogits = (softmax - onehot)/batch`, the NTK
/// Jacobian a one-hot row.
pub fn backward_from_dlogits(
    adapter: &Adapter,
    features: &DenseTensor,
    dlogits: &DenseTensor,
) -> Result<GradientSet> {
    let entries = match adapter {
        Adapter::Lora(a) => {
            let u = matmul(features, &a.w1)?; // [B x r]
            let dw2 = matmul(&u.transpose()?, dlogits)?;
            let du = matmul(dlogits, &a.w2.transpose()?)?;
            let dw1 = matmul(&features.transpose()?, &du)?;
            vec![("w1".to_string(), dw1), ("w2".to_string(), dw2)]
        }
        Adapter::TtLora(a) => {
            let k1 = a.tt1.cores().len();
            let k2 = a.tt2.cores().len();
            let mut g1: Vec<DenseTensor> = (0..k1)
                .map(|k| DenseTensor::zeros(Shape::new(a.tt1.format().core_shape(k).to_vec()).expect("core shape")))
                .collect();
            let mut g2: Vec<DenseTensor> = (0..k2)
                .map(|k| DenseTensor::zeros(Shape::new(a.tt2.format().core_shape(k).to_vec()).expect("core shape")))
                .collect();
            let d = features.cols();
            let q = dlogits.cols();
            for b in 0..features.rows() {
                let x = DenseTensor::new(Shape::new(vec![d])?, features.row(b).to_vec())?;
                let (u, tape1) = tt_apply_with_tape(&a.tt1, &x)?;
                let (_y, tape2) = tt_apply_with_tape(&a.tt2, &u)?;
                let dy = DenseTensor::new(Shape::new(vec![q])?, dlogits.row(b).to_vec())?;
                let (gb2, du) = tt_apply_backward(&a.tt2, &tape2, &dy)?;
                let (gb1, _dx) = tt_apply_backward(&a.tt1, &tape1, &du)?;
                for (acc, gb) in g1.iter_mut().zip(&gb1) {
                    *acc = acc.add(gb)?;
                }
                for (acc, gb) in g2.iter_mut().zip(&gb2) {
                    *acc = acc.add(gb)?;
                }
            }
            let mut entries: Vec<(String, DenseTensor)> = g1
                .into_iter()
                .enumerate()
                .map(|(k, g)| (format!("tt1.core{k}"), g))
                .collect();
            entries.extend(
                g2.into_iter()
                    .enumerate()
                    .map(|(k, g)| (format!("tt2.core{k}"), g)),
            );
            entries
        }
        Adapter::TensorGuide(a) => {
            let (y, tape) = tt_apply_with_tape(&a.tt, &a.z)?;
            let (w1, w2) = a.slice_generated(&y)?;
            let pre = matmul(features, &w1)?; // [B x M]
            let mut h = pre.clone();
            for v in h.values_mut() {
                *v = a.activation.apply(*v);
            }
            let dw2 = matmul(&h.transpose()?, dlogits)?;
            let dh = matmul(dlogits, &w2.transpose()?)?;
            let mut dpre = dh;
            for (dv, pv) in dpre.values_mut().iter_mut().zip(pre.values()) {
                *dv *= a.activation.derivative(*pv);
            }
            let dw1 = matmul(&features.transpose()?, &dpre)?;
            // Upstream gradient of the generated vector, in slice order.
            let mut dy = dw1.values().to_vec();
            dy.extend_from_slice(dw2.values());
            let dy = DenseTensor::new(Shape::new(vec![dy.len()])?, dy)?;
            let (core_grads, _dz) = tt_apply_backward(&a.tt, &tape, &dy)?;
            core_grads
                .into_iter()
                .enumerate()
                .map(|(k, g)| (format!("core{k}"), g))
                .collect()
        }
    };
    Ok(GradientSet::new(entries))
}

/// Loss, correct-prediction count, and gradients in one pass over features.
fn backward_features(
    adapter: &Adapter,
    backbone: &FrozenBackbone,
    features: &DenseTensor,
    labels: &[usize],
) -> Result<(f64, usize, GradientSet)> {
    let logits = adapter.forward_features(backbone, features)?;
    let loss = cross_entropy(&logits, labels)?;
    let correct = count_correct(&logits, labels);
    let dlogits = cross_entropy_dlogits(&logits, labels);
    let grads = backward_from_dlogits(adapter, features, &dlogits)?;
    Ok((loss, correct, grads))
}

/// Exact gradients of mean cross-entropy over a raw batch.
pub fn backward(
    adapter: &Adapter,
    backbone: &FrozenBackbone,
    batch: &DenseTensor,
    labels: &[usize],
) -> Result<(f64, GradientSet)> {
    let features = backbone.features(batch)?;
    let (loss, _, grads) = backward_features(adapter, backbone, &features, labels)?;
    Ok((loss, grads))
}

fn count_correct(logits: &DenseTensor, labels: &[usize]) -> usize {
    let q = logits.cols();
    labels
        .iter()
        .enumerate()
        .filter(|&(b, &label)| {
            let row = logits.row(b);
            let mut best = 0usize;
            for j in 1..q {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best == label
        })
        .count()
}

/// Optimizer family; Adam uses `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(
                "learning_rate must be finite and >= 0".into(),
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs and batch_size must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// First/second-moment state for Adam; empty and unused under SGD.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    m: Vec<DenseTensor>,
    v: Vec<DenseTensor>,
    step: u64,
}

impl OptimizerState {
    pub fn new(adapter: &Adapter) -> Self {
        let zeros: Vec<DenseTensor> = adapter
            .params()
            .iter()
            .map(|p| DenseTensor::zeros(p.shape().clone()))
            .collect();
        OptimizerState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// Apply one optimizer update in place.
pub fn step(
    adapter: &mut Adapter,
    grads: &GradientSet,
    state: &mut OptimizerState,
    config: &TrainConfig,
) -> Result<()> {
    if !grads.matches(adapter) {
        return Err(Error::ShapeMismatch(
            "gradient set does not match adapter parameters".into(),
        ));
    }
    let lr = config.learning_rate;
    match config.optimizer {
        Optimizer::Sgd => {
            for (param, (_, grad)) in adapter.params_mut().into_iter().zip(grads.entries()) {
                for (p, g) in param.values_mut().iter_mut().zip(grad.values()) {
                    *p -= lr * g;
                }
            }
        }
        Optimizer::Adam => {
            state.step += 1;
            let t = state.step as i32;
            let bc1 = 1.0 - ADAM_BETA1.powi(t);
            let bc2 = 1.0 - ADAM_BETA2.powi(t);
            for (idx, (param, (_, grad))) in adapter
                .params_mut()
                .into_iter()
                .zip(grads.entries())
                .enumerate()
            {
                let m = state.m[idx].values_mut();
                let v = state.v[idx].values_mut();
                for (i, (p, g)) in param.values_mut().iter_mut().zip(grad.values()).enumerate() {
                    m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                    v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
    Ok(())
}

/// Per-epoch metrics row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    /// exp(test_loss), the perplexity-style score.
    pub exp_loss: f64,
}

/// Trace of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub param_count: usize,
    pub seed: u64,
    /// Wall-clock duration; excluded from serialization and comparisons so
    /// identical configs produce identical reports.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl TrainReport {
    pub fn final_metrics(&self) -> &EpochMetrics {
        self.epochs.last().expect("at least one epoch")
    }

    /// CSV with the stable header
    /// `epoch,train_loss,train_acc,test_loss,test_acc,exp_loss`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,test_loss,test_acc,exp_loss\n");
        for row in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.epoch, row.train_loss, row.train_acc, row.test_loss, row.test_acc, row.exp_loss
            ));
        }
        out
    }
}

/// Loss and accuracy over a featurized set, batched to bound memory.
fn evaluate(
    adapter: &Adapter,
    backbone: &FrozenBackbone,
    features: &DenseTensor,
    labels: &[usize],
    batch_size: usize,
) -> Result<(f64, f64)> {
    let n = labels.len();
    let d = features.cols();
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut start = 0usize;
    while start < n {
        let end = (start + batch_size).min(n);
        let rows = end - start;
        let batch = DenseTensor::new(
            Shape::new(vec![rows, d])?,
            features.values()[start * d..end * d].to_vec(),
        )?;
        let logits = adapter.forward_features(backbone, &batch)?;
        let batch_labels = &labels[start..end];
        loss_sum += cross_entropy(&logits, batch_labels)? * rows as f64;
        correct += count_correct(&logits, batch_labels);
        start = end;
    }
    Ok((loss_sum / n as f64, correct as f64 / n as f64))
}

/// Run the training loop: per epoch, a seeded shuffle into minibatches (the
/// final short batch is used), one backward+step per batch, then a full
/// evaluation on the test set. The backbone stays frozen; with per-batch
/// latent resampling on, evaluation still uses the latent the adapter was
/// constructed with.
pub fn train(
    adapter: &mut Adapter,
    backbone: &FrozenBackbone,
    train_set: &Dataset,
    test_set: &Dataset,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    for ds in [train_set, test_set] {
        if ds.input_len() != backbone.input_len() {
            return Err(Error::ShapeMismatch(format!(
                "dataset input length {} vs backbone {}",
                ds.input_len(),
                backbone.input_len()
            )));
        }
        if ds.num_classes != backbone.num_classes() {
            return Err(Error::ShapeMismatch(format!(
                "dataset classes {} vs backbone {}",
                ds.num_classes,
                backbone.num_classes()
            )));
        }
    }
    let started = std::time::Instant::now();

    // The feature map is frozen, so featurize once up front.
    let train_features = backbone.features(&train_set.inputs)?;
    let test_features = backbone.features(&test_set.inputs)?;
    let d = train_features.cols();
    let n = train_set.len();

    let eval_latent = match adapter {
        Adapter::TensorGuide(a) if a.resample_per_batch => Some(a.z.clone()),
        _ => None,
    };
    let resample_base = rng::derive(config.seed, RESAMPLE_STREAM);
    let mut resample_counter: u64 = 0;

    let mut state = OptimizerState::new(adapter);
    let mut report_rows = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        if config.shuffle {
            let mut shuffle_rng = Rng::new(rng::derive(
                rng::derive(config.seed, SHUFFLE_STREAM),
                epoch as u64,
            ));
            shuffle_rng.shuffle(&mut order);
        }
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if let Adapter::TensorGuide(a) = adapter {
                if a.resample_per_batch {
                    a.resample_latent(rng::derive(resample_base, resample_counter));
                    resample_counter += 1;
                }
            }
            let rows = chunk.len();
            let mut values = Vec::with_capacity(rows * d);
            let mut labels = Vec::with_capacity(rows);
            for &i in chunk {
                values.extend_from_slice(train_features.row(i));
                labels.push(train_set.labels[i]);
            }
            let batch = DenseTensor::new(Shape::new(vec![rows, d])?, values)?;
            let (loss, batch_correct, grads) =
                backward_features(adapter, backbone, &batch, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("training loss".into()));
            }
            loss_sum += loss * rows as f64;
            correct += batch_correct;
            step(adapter, &grads, &mut state, config)?;
        }

        if let (Adapter::TensorGuide(a), Some(z0)) = (&mut *adapter, &eval_latent) {
            a.z = z0.clone();
        }
        let (test_loss, test_acc) = evaluate(
            adapter,
            backbone,
            &test_features,
            &test_set.labels,
            config.batch_size,
        )?;
        if !test_loss.is_finite() {
            return Err(Error::NonFinite("test loss".into()));
        }
        report_rows.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            test_loss,
            test_acc,
            exp_loss: test_loss.exp(),
        });
    }

    Ok(TrainReport {
        epochs: report_rows,
        param_count: adapter.param_count(),
        seed: config.seed,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

/// Central-difference check of the analytic gradients over every trainable
/// scalar: returns `max |analytic - numeric| / max(|numeric|, 1e-8)`.
pub fn finite_diff_check(
    adapter: &mut Adapter,
    backbone: &FrozenBackbone,
    inputs: &DenseTensor,
    labels: &[usize],
    eps: f64,
) -> Result<f64> {
    if eps <= 0.0 {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    let features = backbone.features(inputs)?;
    let (_, _, grads) = backward_features(adapter, backbone, &features, labels)?;
    let analytic = grads.flatten();

    let mut max_rel = 0.0f64;
    let mut flat_idx = 0usize;
    let param_count = adapter.params().len();
    for pi in 0..param_count {
        let len = adapter.params()[pi].len();
        for i in 0..len {
            let orig = adapter.params()[pi].values()[i];
            adapter.params_mut()[pi].values_mut()[i] = orig + eps;
            let up = cross_entropy(&adapter.forward_features(backbone, &features)?, labels)?;
            adapter.params_mut()[pi].values_mut()[i] = orig - eps;
            let down = cross_entropy(&adapter.forward_features(backbone, &features)?, labels)?;
            adapter.params_mut()[pi].values_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let rel = (analytic[flat_idx] - numeric).abs() / numeric.abs().max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
            flat_idx += 1;
        }
    }
    Ok(max_rel)
}
