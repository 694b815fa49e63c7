//! Training and evaluation: balanced batches of augmented samples, an
//! adaptive-moment optimizer under a lookahead wrapper, a halving learning
//! rate schedule, validation-based checkpoint selection, and
//! classification metrics with exact integer-arithmetic definitions.

pub mod corpus;
pub mod manifest;
pub mod optim;

use std::path::PathBuf;

use ndarray::{Array3, ArrayD, IxDyn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use textile_autograd::{bce_with_logits, Tape};
use thiserror::Error;

pub use corpus::{generate_positive, generate_synthetic_corpus, Family, SyntheticCorpusConfig};
pub use manifest::{load_manifest, DatasetManifest, ManifestEntry, Split};
pub use optim::{LookaheadConfig, NAdamConfig, Optimizer};

use crate::augment::{make_sample, AugmentPolicy, RngState};
use crate::img::{self, ImageError, TextureImage};
use crate::metric::{textile_score, MetricConfig, MetricError};
use crate::net::{save_checkpoint, CheckpointError, NetError, Network};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: u64, loss: f64 },
    #[error("split {0} has no samples")]
    EmptySplit(String),
    #[error("AUC is undefined when every label is the same class ({0})")]
    SingleClass(String),
    #[error("bad training config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// The training run configuration. The learning rate starts at
/// `initial_lr` and halves every `lr_halving_period` epochs; batches hold
/// `batch_size` samples split evenly between classes (±1 when odd);
/// every sample is augmented down to `train_resolution` pixels per side.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub initial_lr: f64,
    pub lr_halving_period: usize,
    pub batch_size: usize,
    pub train_resolution: usize,
    pub nadam: NAdamConfig,
    pub lookahead: LookaheadConfig,
    /// Simulates reduced-precision gradient storage: gradients are scaled
    /// by `grad_scale`, rounded to f32, and rescaled. Off by default;
    /// full-precision runs are the reference behavior.
    pub mixed_precision: bool,
    pub grad_scale: f64,
    pub seed: u64,
    pub checkpoint_path: Option<PathBuf>,
    pub history_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            initial_lr: 0.002,
            lr_halving_period: 33,
            batch_size: 24,
            train_resolution: 384,
            nadam: NAdamConfig::default(),
            lookahead: LookaheadConfig::default(),
            mixed_precision: false,
            grad_scale: 1024.0,
            seed: 0,
            checkpoint_path: None,
            history_path: None,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::BadConfig("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(TrainError::BadConfig(
                "batch size must be at least 2".into(),
            ));
        }
        if self.lr_halving_period == 0 {
            return Err(TrainError::BadConfig(
                "lr halving period must be at least 1".into(),
            ));
        }
        if !(self.initial_lr > 0.0) {
            return Err(TrainError::BadConfig("initial lr must be positive".into()));
        }
        Ok(())
    }
}

/// The schedule as a pure function: `initial_lr * 0.5^(epoch / period)`.
/// At the defaults this yields 0.002, 0.001, 0.0005, 0.00025 at epochs 0,
/// 33, 66, 99.
pub fn learning_rate(cfg: &TrainConfig, epoch: usize) -> f64 {
    cfg.initial_lr * 0.5f64.powi((epoch / cfg.lr_halving_period) as i32)
}

/// Per-epoch history row, also serialized as JSON lines when
/// `history_path` is set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_bce: Option<f64>,
    pub val_accuracy: Option<f64>,
}

/// What a training run produced: the history and, when a validation split
/// existed, the best validation loss (whose weights the network now holds).
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_val_bce: Option<f64>,
}

/// Trains the network in place. Each step draws a class-balanced batch,
/// augments every source through [`make_sample`] at `train_resolution`,
/// and minimizes binary cross-entropy on the raw logits. When the
/// manifest has a validation split, the epoch with the lowest validation
/// BCE decides the final weights.
pub fn train(
    net: &mut Network,
    manifest: &DatasetManifest,
    policy: &AugmentPolicy,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let mut policy = policy.clone();
    policy.train_size = cfg.train_resolution;

    let train_set = load_split(manifest, Split::Train)?;
    let val_set = match manifest.split(Split::Val).is_empty() {
        true => Vec::new(),
        false => load_split(manifest, Split::Val)?,
    };
    let pos: Vec<usize> = (0..train_set.len()).filter(|&i| train_set[i].1).collect();
    let neg: Vec<usize> = (0..train_set.len()).filter(|&i| !train_set[i].1).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(TrainError::Manifest(format!(
            "training needs both classes, got {} positive / {} negative",
            pos.len(),
            neg.len()
        )));
    }

    let per_class = pos.len().max(neg.len());
    let batches_per_epoch = (2 * per_class).div_ceil(cfg.batch_size).max(1);
    let mut shuffler = RngState::for_stream(cfg.seed, SHUFFLE_STREAM);
    let mut sample_stream = 0u64;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Vec<ArrayD<f64>>)> = None;
    let mut opt = Optimizer::new(net.params(), cfg.nadam, cfg.lookahead);

    for epoch in 0..cfg.epochs {
        let lr = learning_rate(cfg, epoch);
        let mut pos_order = pos.clone();
        let mut neg_order = neg.clone();
        pos_order.shuffle(&mut shuffler);
        neg_order.shuffle(&mut shuffler);
        let (mut pos_cursor, mut neg_cursor) = (0usize, 0usize);

        let mut epoch_loss = 0.0;
        for batch_index in 0..batches_per_epoch {
            let (want_pos, want_neg) = batch_class_counts(cfg.batch_size, batch_index);
            let mut images = Vec::with_capacity(cfg.batch_size);
            let mut labels = Vec::with_capacity(cfg.batch_size);
            for _ in 0..want_pos {
                let idx = pos_order[pos_cursor % pos_order.len()];
                pos_cursor += 1;
                push_sample(
                    &train_set[idx],
                    &policy,
                    cfg.seed,
                    &mut sample_stream,
                    &mut images,
                    &mut labels,
                );
            }
            for _ in 0..want_neg {
                let idx = neg_order[neg_cursor % neg_order.len()];
                neg_cursor += 1;
                push_sample(
                    &train_set[idx],
                    &policy,
                    cfg.seed,
                    &mut sample_stream,
                    &mut images,
                    &mut labels,
                );
            }

            let batch = stack_batch(&images, cfg.train_resolution);
            let targets = ArrayD::from_shape_vec(IxDyn(&[labels.len()]), labels.clone())
                .expect("label vector");
            let tape = Tape::new();
            let out = net.forward_var(&tape, tape.leaf(batch))?;
            let loss = bce_with_logits(out.logits, &targets).mean_all();
            let loss_value = loss.value().sum();
            if !loss_value.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    step: opt.step_count(),
                    loss: loss_value,
                });
            }
            epoch_loss += loss_value;

            let mut grads = tape.backward(loss);
            let grad_list: Vec<ArrayD<f64>> = out
                .params
                .iter()
                .zip(net.params())
                .map(|(var, param)| {
                    grads
                        .take(*var)
                        .unwrap_or_else(|| ArrayD::zeros(param.value.raw_dim()))
                })
                .collect();
            let grad_list = if cfg.mixed_precision {
                grad_list
                    .into_iter()
                    .map(|g| quantize_grad(g, cfg.grad_scale))
                    .collect()
            } else {
                grad_list
            };
            drop(grads);
            opt.step(net.params_mut(), &grad_list, lr);
            net.set_train_steps(net.train_steps() + 1);
        }

        let train_loss = epoch_loss / batches_per_epoch as f64;
        let (val_bce, val_accuracy) = if val_set.is_empty() {
            (None, None)
        } else {
            let (bce, acc) = validate(net, &val_set, &policy, cfg, epoch)?;
            if best.as_ref().is_none_or(|(b, _)| bce < *b) {
                best = Some((bce, net.params().iter().map(|p| p.value.clone()).collect()));
            }
            (Some(bce), Some(acc))
        };
        log::info!("epoch {epoch}: lr {lr:.6}, train loss {train_loss:.4}, val bce {val_bce:?}");
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_bce,
            val_accuracy,
        });
    }

    let best_val_bce = best.as_ref().map(|(b, _)| *b);
    if let Some((_, weights)) = best {
        for (param, value) in net.params_mut().iter_mut().zip(weights) {
            param.value = value;
        }
    }
    net.set_policy_hash(policy.hash());

    if let Some(path) = &cfg.history_path {
        let mut out = String::new();
        for record in &history {
            out.push_str(&serde_json::to_string(record)?);
            out.push('\n');
        }
        std::fs::write(path, out)?;
    }
    if let Some(path) = &cfg.checkpoint_path {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        save_checkpoint(net, path)?;
    }
    Ok(TrainOutcome {
        history,
        best_val_bce,
    })
}

const SHUFFLE_STREAM: u64 = u64::MAX;
const VALIDATION_STREAM_BASE: u64 = u64::MAX / 2;

/// Class counts for one batch: as even as the size allows, with the odd
/// slot alternating between classes across batches.
fn batch_class_counts(batch_size: usize, batch_index: usize) -> (usize, usize) {
    let half = batch_size / 2;
    if batch_size % 2 == 0 {
        (half, half)
    } else if batch_index % 2 == 0 {
        (half + 1, half)
    } else {
        (half, half + 1)
    }
}

fn load_split(
    manifest: &DatasetManifest,
    split: Split,
) -> Result<Vec<(TextureImage, bool)>, TrainError> {
    let entries = manifest.split(split);
    if entries.is_empty() {
        return Err(TrainError::EmptySplit(split.to_string()));
    }
    entries
        .iter()
        .map(|e| Ok((ensure_rgb(img::load_texture(&e.path)?)?, e.is_positive())))
        .collect()
}

fn push_sample(
    source: &(TextureImage, bool),
    policy: &AugmentPolicy,
    seed: u64,
    sample_stream: &mut u64,
    images: &mut Vec<TextureImage>,
    labels: &mut Vec<f64>,
) {
    let mut rng = RngState::for_stream(seed, *sample_stream);
    *sample_stream += 1;
    let sample = make_sample(&source.0, source.1, &mut rng, policy);
    labels.push(sample.label);
    images.push(sample.image);
}

fn stack_batch(images: &[TextureImage], side: usize) -> ArrayD<f64> {
    let mut batch = ArrayD::zeros(IxDyn(&[images.len(), side, side, 3]));
    for (i, image) in images.iter().enumerate() {
        debug_assert_eq!(
            (image.height(), image.width(), image.channels()),
            (side, side, 3)
        );
        batch
            .index_axis_mut(ndarray::Axis(0), i)
            .assign(&image.data().view().into_dyn());
    }
    batch
}

fn ensure_rgb(image: TextureImage) -> Result<TextureImage, ImageError> {
    if image.channels() == 3 {
        return Ok(image);
    }
    let d = image.data();
    TextureImage::new(Array3::from_shape_fn(
        (image.height(), image.width(), 3),
        |(y, x, _)| d[(y, x, 0)],
    ))
}

/// Numerically stable binary cross-entropy for one logit/target pair.
fn bce_scalar(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Validation pass: every holdout source goes through the same
/// augmentation pipeline (deterministic per epoch and index), and the
/// network's raw logits are scored against the sample labels.
fn validate(
    net: &Network,
    val_set: &[(TextureImage, bool)],
    policy: &AugmentPolicy,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(f64, f64), TrainError> {
    let mut total_bce = 0.0;
    let mut correct = 0usize;
    for (i, source) in val_set.iter().enumerate() {
        let stream = VALIDATION_STREAM_BASE + (epoch * val_set.len() + i) as u64;
        let mut rng = RngState::for_stream(cfg.seed, stream);
        let sample = make_sample(&source.0, source.1, &mut rng, policy);
        let logit = net.logits(std::slice::from_ref(&sample.image))?[0];
        total_bce += bce_scalar(logit, sample.label);
        let predicted_positive = logit >= 0.0;
        if predicted_positive == (sample.label > 0.5) {
            correct += 1;
        }
    }
    let n = val_set.len() as f64;
    Ok((total_bce / n, correct as f64 / n))
}

/// One evaluated sample: where it came from, its label, and the score the
/// metric assigned.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplePrediction {
    pub path: String,
    pub label: u8,
    pub score: f64,
}

/// Split-level classification report. Accuracy and F1 threshold the score
/// at 0.5; AUC is the probability that a random positive outscores a
/// random negative, counting ties as half.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub bce_error: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub auc: f64,
    pub predictions: Vec<SamplePrediction>,
}

/// Classification metrics from raw (score, label) pairs. All three are
/// assembled from integer pair/confusion counts, so they are exactly
/// reproducible by brute-force enumeration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub f1: f64,
    pub auc: f64,
}

/// Computes accuracy (threshold 0.5, midpoint counts as positive), F1,
/// and rank-statistic AUC. Errors when labels are single-class, which
/// leaves AUC undefined.
pub fn classification_metrics(scores: &[f64], labels: &[bool]) -> Result<ClassMetrics, TrainError> {
    assert_eq!(scores.len(), labels.len(), "score/label length mismatch");
    if scores.is_empty() {
        return Err(TrainError::EmptySplit("score set".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(TrainError::SingleClass(format!(
            "{positives} positive / {negatives} negative"
        )));
    }

    let (mut tp, mut tn, mut fp, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for (&s, &l) in scores.iter().zip(labels) {
        let predicted = s >= 0.5;
        match (predicted, l) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    let accuracy = (tp + tn) as f64 / scores.len() as f64;
    let f1_denominator = 2 * tp + fp + fn_;
    let f1 = if f1_denominator == 0 {
        0.0
    } else {
        (2 * tp) as f64 / f1_denominator as f64
    };

    // doubled pair count so ties stay in integer arithmetic: a positive
    // strictly above a negative adds 2, a tie adds 1
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut numerator_2x = 0u64;
    let mut negatives_below = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let tied_pos = order[i..j].iter().filter(|&&k| labels[k]).count() as u64;
        let tied_neg = (j - i) as u64 - tied_pos;
        numerator_2x += tied_pos * (2 * negatives_below + tied_neg);
        negatives_below += tied_neg;
        i = j;
    }
    let auc = numerator_2x as f64 / (2 * positives * negatives) as f64;
    Ok(ClassMetrics { accuracy, f1, auc })
}

/// Scores every image in a split through the full inference path and
/// reports BCE, accuracy, F1, and AUC against the manifest labels.
pub fn evaluate(
    net: &Network,
    manifest: &DatasetManifest,
    split: Split,
    metric_cfg: &MetricConfig,
) -> Result<EvalReport, TrainError> {
    let entries = manifest.split(split);
    if entries.is_empty() {
        return Err(TrainError::EmptySplit(split.to_string()));
    }
    let mut predictions = Vec::with_capacity(entries.len());
    let mut total_bce = 0.0;
    for entry in &entries {
        let image = img::load_texture(&entry.path)?;
        let score = textile_score(net, &image, metric_cfg)?;
        total_bce += bce_scalar(
            metric_cfg.lambda_logistic * score.logit,
            f64::from(entry.label),
        );
        predictions.push(SamplePrediction {
            path: entry.path.display().to_string(),
            label: entry.label,
            score: score.value,
        });
    }
    let scores: Vec<f64> = predictions.iter().map(|p| p.score).collect();
    let labels: Vec<bool> = predictions.iter().map(|p| p.label == 1).collect();
    let metrics = classification_metrics(&scores, &labels).map_err(|e| match e {
        TrainError::SingleClass(_) => TrainError::SingleClass(split.to_string()),
        other => other,
    })?;
    Ok(EvalReport {
        bce_error: total_bce / entries.len() as f64,
        accuracy: metrics.accuracy,
        f1: metrics.f1,
        auc: metrics.auc,
        predictions,
    })
}

fn quantize_grad(grad: ArrayD<f64>, scale: f64) -> ArrayD<f64> {
    grad.mapv(|g| (g * scale) as f32 as f64 / scale)
}

#[cfg(test)]
mod tests;
