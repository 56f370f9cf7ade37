//! Single-worker training loop: stable binary cross-entropy on logits, Adam
//! with step-decayed learning rate, deterministic per-epoch shuffling,
//! evaluation with inference-rate capture, and transfer-learning fine-tuning
//! on top of checkpoints.

use std::ops::Range;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{ConfigError, Model};
use crate::data::{Dataset, PatchSample};
use crate::metrics::{self, LabelSet, MetricsError, MetricsReport, PredictionSet};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tape::{Mode, SyncHandle, Tape};
use crate::tensor::{ShapeError, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss became NaN at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("train config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub decay_epoch: usize,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            base_lr: 1e-3,
            decay_epoch: 24,
            decay_factor: 0.1,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Short-run config keeping the decay step inside the epoch range.
    pub fn for_epochs(epochs: usize, base_lr: f64, batch_size: usize, seed: u64) -> Self {
        let decay_epoch = if epochs > 1 {
            (epochs - 1).min(24)
        } else {
            0
        };
        Self {
            epochs,
            base_lr,
            decay_epoch,
            batch_size,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch_size must be >= 1".into()));
        }
        if self.epochs > 0 && self.decay_epoch >= self.epochs {
            return Err(TrainError::BadConfig(format!(
                "decay_epoch {} must be < epochs {}",
                self.decay_epoch, self.epochs
            )));
        }
        if !(self.base_lr > 0.0) || !(self.decay_factor > 0.0) {
            return Err(TrainError::BadConfig("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// Step decay: base learning rate until `decay_epoch`, scaled by the decay
/// factor from then on (a single step).
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch >= cfg.decay_epoch {
        cfg.base_lr * cfg.decay_factor
    } else {
        cfg.base_lr
    }
}

/// Adam state aligned with a parameter set.
#[derive(Debug, Clone)]
pub struct Adam<E> {
    m: Vec<Vec<E>>,
    v: Vec<Vec<E>>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl<E: Scalar> Adam<E> {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        }
    }

    /// One update over all trainable entries; entries without a gradient
    /// (or filtered out) keep their value while their moments stay put.
    pub fn step(
        &mut self,
        params: &mut ParamSet<E>,
        grads: &[Option<Vec<E>>],
        lr: f64,
        update: impl Fn(&str) -> bool,
    ) {
        if self.m.len() != params.len() {
            self.m = params.entries().iter().map(|e| vec![E::ZERO; e.data.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let t = self.t as i32;
        let b1 = E::from_f64c(self.beta1);
        let b2 = E::from_f64c(self.beta2);
        let eps = E::from_f64c(self.eps);
        let lr = E::from_f64c(lr);
        let bc1 = E::ONE - E::from_f64c(self.beta1).powi(t);
        let bc2 = E::ONE - E::from_f64c(self.beta2).powi(t);
        for (idx, entry) in params.entries_mut().iter_mut().enumerate() {
            if !entry.trainable || !update(&entry.name) {
                continue;
            }
            let Some(g) = grads[idx].as_ref() else {
                continue;
            };
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (E::ONE - b1) * g[i];
                v[i] = b2 * v[i] + (E::ONE - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                entry.data[i] = entry.data[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainStats {
    pub wall_seconds: f64,
    pub per_epoch_loss: Vec<f64>,
    pub steps: usize,
}

impl TrainStats {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss\n");
        for (e, l) in self.per_epoch_loss.iter().enumerate() {
            s.push_str(&format!("{e},{l:.6}\n"));
        }
        s
    }
}

/// Deterministic epoch ordering: a seeded Fisher-Yates shuffle of sample
/// indices, re-seeded per epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9)));
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Stacks samples into an NCHW batch plus flat 0/1 targets.
pub fn batch_tensors<E: Scalar>(
    samples: &[&PatchSample],
    num_classes: usize,
) -> (Tensor<E>, Vec<E>, Vec<LabelSet>) {
    let shape = samples[0].pixels.shape();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let mut data = Vec::with_capacity(samples.len() * c * h * w);
    let mut targets = Vec::with_capacity(samples.len() * num_classes);
    let mut labels = Vec::with_capacity(samples.len());
    for s in samples {
        data.extend(s.pixels.data().iter().map(|&v| E::from_f64c(v as f64)));
        for k in 0..num_classes {
            targets.push(if s.labels.contains(k) { E::ONE } else { E::ZERO });
        }
        labels.push(s.labels);
    }
    (
        Tensor::new(vec![samples.len(), c, h, w], data).expect("batch shape"),
        targets,
        labels,
    )
}

/// Full training batches for one epoch (trailing partial batch dropped; a
/// dataset smaller than one batch trains as a single short batch).
pub fn epoch_batches(order: &[usize], batch: usize) -> Vec<Vec<usize>> {
    if order.is_empty() {
        return Vec::new();
    }
    if order.len() < batch {
        return vec![order.to_vec()];
    }
    order
        .chunks_exact(batch)
        .map(|c| c.to_vec())
        .collect()
}

/// Incremental trainer so callers can interleave evaluation with epochs
/// while keeping one optimizer state.
pub struct Trainer<E: Scalar> {
    pub cfg: TrainConfig,
    pub adam: Adam<E>,
    pub next_epoch: usize,
    pub head_only: bool,
    pub sync: Option<SyncHandle<E>>,
}

impl<E: Scalar> Trainer<E> {
    pub fn new(cfg: TrainConfig) -> Self {
        let adam = Adam::new(&cfg);
        Self {
            cfg,
            adam,
            next_epoch: 0,
            head_only: false,
            sync: None,
        }
    }

    /// Runs the epochs in `range` and returns the mean loss per epoch.
    pub fn run_epochs(
        &mut self,
        model: &mut Model<E>,
        data: &Dataset,
        range: Range<usize>,
    ) -> Result<Vec<f64>, TrainError> {
        let num_classes = model.config.num_classes;
        let mut losses = Vec::new();
        for epoch in range {
            let order = epoch_order(data.len(), self.cfg.seed, epoch);
            let lr = lr_schedule(epoch, &self.cfg);
            let mut epoch_loss = 0.0;
            let mut batches = 0usize;
            for (bi, batch_idx) in epoch_batches(&order, self.cfg.batch_size).iter().enumerate() {
                let samples: Vec<&PatchSample> =
                    batch_idx.iter().map(|&i| &data.samples[i]).collect();
                let (x, targets, _) = batch_tensors::<E>(&samples, num_classes);
                let loss = self.step(model, x, &targets, lr)?;
                if !loss.is_finite() {
                    return Err(TrainError::NanLoss { epoch, batch: bi });
                }
                epoch_loss += loss;
                batches += 1;
            }
            losses.push(epoch_loss / batches.max(1) as f64);
            self.next_epoch = epoch + 1;
        }
        Ok(losses)
    }

    /// One optimizer step on one batch; returns the loss value.
    pub fn step(
        &mut self,
        model: &mut Model<E>,
        x: Tensor<E>,
        targets: &[E],
        lr: f64,
    ) -> Result<f64, TrainError> {
        let mut tape = match &self.sync {
            Some(h) => Tape::with_sync(h.clone()),
            None => Tape::new(),
        };
        let binding = model.bind(&mut tape);
        let xid = tape.leaf(x);
        let mode = if self.head_only { Mode::Eval } else { Mode::Train };
        let logits = model.forward_bound(&mut tape, &binding, xid, mode)?;
        let loss = tape.bce_with_logits(logits, targets)?;
        let loss_val = tape.data(loss)[0].to_f64c();
        tape.backward(loss)?;
        let grads: Vec<Option<Vec<E>>> = binding
            .nodes()
            .iter()
            .map(|&n| tape.grad(n).map(|g| g.to_vec()))
            .collect();
        let head_only = self.head_only;
        self.adam.step(&mut model.params, &grads, lr, |name| {
            !head_only || name.starts_with("head.")
        });
        Ok(loss_val)
    }
}

/// Trains for `cfg.epochs` epochs. Deterministic given the seed at worker
/// count 1; wall time covers the epoch loop only.
pub fn train<E: Scalar>(
    model: &mut Model<E>,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainStats, TrainError> {
    if cfg.epochs == 0 {
        return Ok(TrainStats {
            wall_seconds: 0.0,
            per_epoch_loss: Vec::new(),
            steps: 0,
        });
    }
    cfg.validate()?;
    let start = Instant::now();
    let mut trainer = Trainer::new(*cfg);
    let losses = trainer.run_epochs(model, data, 0..cfg.epochs)?;
    let steps = losses.len() * epoch_batches(&epoch_order(data.len(), cfg.seed, 0), cfg.batch_size).len();
    Ok(TrainStats {
        wall_seconds: start.elapsed().as_secs_f64(),
        per_epoch_loss: losses,
        steps,
    })
}

/// Metrics plus throughput for one model/dataset pair.
pub fn evaluate<E: Scalar>(
    model: &mut Model<E>,
    data: &Dataset,
    tau: f64,
) -> Result<(MetricsReport, f64), TrainError> {
    let num_classes = model.config.num_classes;
    let mut preds = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    let start = Instant::now();
    for chunk in data.samples.chunks(64) {
        let samples: Vec<&PatchSample> = chunk.iter().collect();
        let (x, _, batch_labels) = batch_tensors::<E>(&samples, num_classes);
        let logits = model.forward(&x, Mode::Eval)?;
        for row in logits.data().chunks(num_classes) {
            let probs: Vec<f64> = row.iter().map(|&z| z.to_f64c().max(-700.0).sigmoid()).collect();
            preds.push(PredictionSet::new(probs)?);
        }
        labels.extend(batch_labels);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let rate = data.len() as f64 / elapsed.max(1e-9);
    Ok((metrics::compute_report(&preds, &labels, tau)?, rate))
}

/// Fine-tunes a pretrained parameter set on a new task: the classifier head
/// is replaced by a fresh one sized for `new_num_classes`, backbone weights
/// are transplanted, and (optionally) frozen during training.
pub fn finetune<E: Scalar>(
    pretrained: &Model<E>,
    data: &Dataset,
    new_num_classes: usize,
    freeze_backbone: bool,
    cfg: &TrainConfig,
) -> Result<(Model<E>, TrainStats), TrainError> {
    let mut config = pretrained.config.clone();
    config.num_classes = new_num_classes;
    let mut model = Model::build(config, cfg.seed)?;
    model.load_backbone_from(&pretrained.params);
    if cfg.epochs == 0 {
        return Ok((
            model,
            TrainStats {
                wall_seconds: 0.0,
                per_epoch_loss: Vec::new(),
                steps: 0,
            },
        ));
    }
    cfg.validate()?;
    let start = Instant::now();
    let mut trainer = Trainer::new(*cfg);
    trainer.head_only = freeze_backbone;
    let losses = trainer.run_epochs(&mut model, data, 0..cfg.epochs)?;
    Ok((
        model,
        TrainStats {
            wall_seconds: start.elapsed().as_secs_f64(),
            per_epoch_loss: losses,
            steps: 0,
        },
    ))
}
