//! Sharpness-aware training loop, learning-rate schedule and checkpointed
//! resumption.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::MAX_EDITS;
use crate::metrics::{evaluate, LabeledImage};
use crate::model::{save_checkpoint, CheckpointFile, FaithModel, ParamGroup, TrainingState};
use crate::numerics::Tensor;

/// Update rule applied to the sharpness-aware gradient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BaseOptimizer {
    /// `w ← w − lr·g'`.
    Sgd,
    /// Bias-corrected Adam moments over `g'`.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl BaseOptimizer {
    pub fn adam() -> Self {
        BaseOptimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub decay_interval: usize,
    pub decay_factor: f64,
    pub lr_transformer: f64,
    pub lr_backbone: f64,
    pub batch_size: usize,
    /// SAM neighbourhood radius.
    pub rho: f64,
    pub optimizer: BaseOptimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            warmup_epochs: 1,
            decay_interval: 8,
            decay_factor: 0.1,
            lr_transformer: 3e-3,
            lr_backbone: 3e-3,
            batch_size: 8,
            rho: 0.05,
            optimizer: BaseOptimizer::adam(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// The schedule of the full-scale runs: 170 epochs with 20 of warm-up,
    /// decay every 50, learning rates 1e-3 (transformer) and 1e-4 (backbone),
    /// batch 40.
    pub fn paper() -> Self {
        TrainConfig {
            epochs: 170,
            warmup_epochs: 20,
            decay_interval: 50,
            lr_transformer: 1e-3,
            lr_backbone: 1e-4,
            batch_size: 40,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.warmup_epochs >= self.epochs {
            return Err(Error::invalid(format!(
                "need 0 ≤ warmup ({}) < epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.decay_interval == 0 || self.batch_size == 0 {
            return Err(Error::invalid("decay interval and batch size must be positive"));
        }
        if !(self.lr_transformer > 0.0 && self.lr_backbone > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if !(self.decay_factor > 0.0) || !(self.rho >= 0.0) {
            return Err(Error::invalid("decay factor must be positive and rho non-negative"));
        }
        Ok(())
    }
}

/// `(lr_transformer, lr_backbone)` at `epoch`: linear warm-up to the base
/// rate, then step decay every `decay_interval` epochs.
pub fn lr_at(config: &TrainConfig, epoch: usize) -> Result<(f64, f64)> {
    if epoch >= config.epochs {
        return Err(Error::Index { index: epoch, size: config.epochs });
    }
    let mult = if epoch < config.warmup_epochs {
        (epoch + 1) as f64 / config.warmup_epochs as f64
    } else {
        let k = (epoch - config.warmup_epochs) / config.decay_interval;
        config.decay_factor.powi(k as i32)
    };
    Ok((config.lr_transformer * mult, config.lr_backbone * mult))
}

fn global_norm(ts: &[Tensor]) -> f64 {
    ts.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
}

fn check_finite(loss: f64, grads: &[Tensor], what: &str) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("{what}: loss is {loss}")));
    }
    if let Some(i) = grads.iter().position(|g| !g.all_finite()) {
        return Err(Error::NonFinite(format!("{what}: gradient of parameter {i}")));
    }
    Ok(())
}

/// Loss and gradient at the point where it is evaluated.
pub type LossGrad = (f64, Vec<Tensor>);

/// What one optimizer step observed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    /// Loss at the pre-step weights.
    pub loss: f64,
    pub grad_norm: f64,
}

/// Two-pass sharpness-aware minimization over any base update rule.
#[derive(Clone, Debug, PartialEq)]
pub struct SamOptimizer {
    pub rho: f64,
    pub base: BaseOptimizer,
    step: u64,
    /// Adam first then second moments, one tensor per parameter each.
    moments: Vec<Tensor>,
}

impl SamOptimizer {
    pub fn new(rho: f64, base: BaseOptimizer) -> Self {
        SamOptimizer { rho, base, step: 0, moments: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn state(&self) -> &[Tensor] {
        &self.moments
    }

    pub fn restore(&mut self, step: u64, moments: Vec<Tensor>) {
        self.step = step;
        self.moments = moments;
    }

    /// `g = ∇L(w)`, `ε = ρ·g/‖g‖`, `g' = ∇L(w+ε)`, then the base update with
    /// `g'` and each parameter's `lr`. A zero gradient skips the ascent.
    pub fn step<F>(&mut self, params: &mut [Tensor], lrs: &[f64], mut loss_grad: F) -> Result<StepInfo>
    where
        F: FnMut(&[Tensor]) -> Result<LossGrad>,
    {
        if lrs.len() != params.len() {
            return Err(Error::invalid(format!(
                "{} learning rates for {} parameters",
                lrs.len(),
                params.len()
            )));
        }
        let (loss, g) = loss_grad(params)?;
        check_finite(loss, &g, "first SAM pass")?;
        if g.len() != params.len() {
            return Err(Error::invalid("gradient count does not match parameters"));
        }
        let norm = global_norm(&g);
        let g_sharp = if norm > 0.0 && self.rho > 0.0 {
            let k = self.rho / norm;
            let perturbed = params
                .iter()
                .zip(&g)
                .map(|(w, gi)| w.zip_with(gi, |a, b| a + k * b))
                .collect::<Result<Vec<_>>>()?;
            let (l2, g2) = loss_grad(&perturbed)?;
            check_finite(l2, &g2, "second SAM pass")?;
            g2
        } else {
            g
        };
        self.apply(params, lrs, &g_sharp)?;
        Ok(StepInfo { loss, grad_norm: norm })
    }

    fn apply(&mut self, params: &mut [Tensor], lrs: &[f64], g: &[Tensor]) -> Result<()> {
        self.step += 1;
        match self.base {
            BaseOptimizer::Sgd => {
                for ((w, gi), &lr) in params.iter_mut().zip(g).zip(lrs) {
                    *w = w.zip_with(gi, |a, b| a - lr * b)?;
                }
            }
            BaseOptimizer::Adam { beta1, beta2, eps } => {
                let n = params.len();
                if self.moments.is_empty() {
                    self.moments = params
                        .iter()
                        .chain(params.iter())
                        .map(|p| Tensor::zeros(p.shape()))
                        .collect();
                }
                if self.moments.len() != 2 * n {
                    return Err(Error::invalid("optimizer state does not match parameters"));
                }
                let t = self.step as i32;
                let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
                let (m, v) = self.moments.split_at_mut(n);
                for i in 0..n {
                    let gi = g[i].data();
                    let (md, vd) = (m[i].data_mut(), v[i].data_mut());
                    let lr = lrs[i];
                    for (j, w) in params[i].data_mut().iter_mut().enumerate() {
                        md[j] = beta1 * md[j] + (1.0 - beta1) * gi[j];
                        vd[j] = beta2 * vd[j] + (1.0 - beta2) * gi[j] * gi[j];
                        *w -= lr * (md[j] / c1) / ((vd[j] / c2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Single SAM step with plain gradient descent as the base rule.
pub fn sam_step<F>(params: &mut [Tensor], lrs: &[f64], rho: f64, loss_grad: F) -> Result<StepInfo>
where
    F: FnMut(&[Tensor]) -> Result<LossGrad>,
{
    if !(rho >= 0.0) {
        return Err(Error::invalid(format!("rho {rho} must be non-negative")));
    }
    SamOptimizer::new(rho, BaseOptimizer::Sgd).step(params, lrs, loss_grad)
}

/// Mean training loss and gradient of `model` with weights `params` over a
/// batch. Per-sample work runs in parallel; the reduction is sequential in
/// batch order so the result does not depend on the thread count.
pub fn batch_loss_grad(model: &FaithModel, params: &[Tensor], batch: &[&LabeledImage]) -> Result<LossGrad> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut m = model.clone();
    m.params_mut().set_tensors(params.to_vec())?;
    let parts = batch
        .par_iter()
        .map(|s| m.loss_and_grads(&s.image, &s.gt))
        .collect::<Result<Vec<_>>>()?;
    let k = 1.0 / batch.len() as f64;
    let mut iter = parts.into_iter();
    let (mut loss, mut grads) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        for (acc, gi) in grads.iter_mut().zip(g) {
            for (a, b) in acc.data_mut().iter_mut().zip(gi.data()) {
                *a += b;
            }
        }
    }
    for g in &mut grads {
        for a in g.data_mut() {
            *a *= k;
        }
    }
    Ok((loss * k, grads))
}

/// Shuffles each length bucket and interleaves buckets round-robin (lengths
/// 0..=4) so consecutive batches mix all lengths while any remain.
pub fn epoch_order(samples: &[LabeledImage], seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03));
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); MAX_EDITS + 1];
    for (i, s) in samples.iter().enumerate() {
        buckets[s.gt.len()].push(i);
    }
    for b in &mut buckets {
        b.shuffle(&mut rng);
    }
    let mut order = Vec::with_capacity(samples.len());
    let mut pos = vec![0usize; buckets.len()];
    while order.len() < samples.len() {
        for (b, p) in buckets.iter().zip(pos.iter_mut()) {
            if *p < b.len() {
                order.push(b[*p]);
                *p += 1;
            }
        }
    }
    order
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr_transformer: f64,
    pub lr_backbone: f64,
    pub train_loss: f64,
    pub val_fixed_acc: Option<f64>,
    pub val_adaptive_acc: Option<f64>,
    pub val_full_acc: Option<f64>,
}

/// Mutable training context: weights, optimizer state and progress.
pub struct Trainer {
    config: TrainConfig,
    model: FaithModel,
    optimizer: SamOptimizer,
    epoch: usize,
    best_val_full_acc: Option<f64>,
    best_epoch: Option<usize>,
}

impl Trainer {
    pub fn new(model: FaithModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = SamOptimizer::new(config.rho, config.optimizer);
        Ok(Trainer { config, model, optimizer, epoch: 0, best_val_full_acc: None, best_epoch: None })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(ckpt: CheckpointFile) -> Result<Self> {
        let state = ckpt
            .training
            .ok_or_else(|| Error::Format("checkpoint carries no training state".into()))?;
        let config: TrainConfig = serde_json::from_value(state.train_config)
            .map_err(|e| Error::Format(format!("training config: {e}")))?;
        let mut t = Trainer::new(ckpt.model, config)?;
        t.optimizer.restore(state.optimizer_step, state.optimizer_tensors);
        t.epoch = state.epoch;
        t.best_val_full_acc = state.best_val_full_acc;
        t.best_epoch = state.best_epoch;
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &FaithModel {
        &self.model
    }

    pub fn into_model(self) -> FaithModel {
        self.model
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    pub fn best_val_full_acc(&self) -> Option<f64> {
        self.best_val_full_acc
    }

    pub fn checkpoint(&self) -> CheckpointFile {
        CheckpointFile {
            model: self.model.clone(),
            training: Some(TrainingState {
                train_config: serde_json::to_value(&self.config).expect("config serializes"),
                epoch: self.epoch,
                rng_seed: self.config.seed,
                optimizer_step: self.optimizer.steps_taken(),
                best_val_full_acc: self.best_val_full_acc,
                best_epoch: self.best_epoch,
                optimizer_tensors: self.optimizer.state().to_vec(),
            }),
        }
    }

    /// One pass over `train` followed by validation on `val` (skipped when
    /// empty). The returned flag is true when validation Full-Acc improved.
    pub fn run_epoch(&mut self, train: &[LabeledImage], val: &[LabeledImage]) -> Result<(EpochLog, bool)> {
        if train.is_empty() {
            return Err(Error::invalid("empty training split"));
        }
        if self.is_done() {
            return Err(Error::invalid("all epochs already completed"));
        }
        let epoch = self.epoch;
        let (lr_t, lr_b) = lr_at(&self.config, epoch)?;
        let lrs: Vec<f64> = self
            .model
            .params()
            .groups()
            .into_iter()
            .map(|g| match g {
                ParamGroup::Transformer => lr_t,
                ParamGroup::Backbone => lr_b,
            })
            .collect();
        let order = epoch_order(train, self.config.seed, epoch);
        let mut params = self.model.params().tensors();
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&LabeledImage> = chunk.iter().map(|&i| &train[i]).collect();
            let model = &self.model;
            let info = self
                .optimizer
                .step(&mut params, &lrs, |w| batch_loss_grad(model, w, &batch))
                .map_err(|e| match e {
                    Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}, batch {b}: {msg}")),
                    other => other,
                })?;
            loss_sum += info.loss;
            batches += 1;
        }
        self.model.params_mut().set_tensors(params)?;
        self.epoch += 1;

        let mut log = EpochLog {
            epoch,
            lr_transformer: lr_t,
            lr_backbone: lr_b,
            train_loss: loss_sum / batches as f64,
            val_fixed_acc: None,
            val_adaptive_acc: None,
            val_full_acc: None,
        };
        let mut improved = false;
        if !val.is_empty() {
            let report = evaluate(&self.model, val, "val")?;
            log.val_fixed_acc = Some(report.average.fixed_acc);
            log.val_adaptive_acc = Some(report.average.adaptive_acc);
            log.val_full_acc = Some(report.average.full_acc);
            let full = report.average.full_acc;
            if self.best_val_full_acc.is_none_or(|b| full > b) {
                self.best_val_full_acc = Some(full);
                self.best_epoch = Some(epoch);
                improved = true;
            }
        }
        Ok((log, improved))
    }
}

/// Files written by [`train`] inside its output directory.
pub const LOG_FILE: &str = "train_log.jsonl";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

pub struct TrainOutcome {
    pub model: FaithModel,
    /// Best-by-validation weights; the final weights when no validation split.
    pub best: FaithModel,
    pub log: Vec<EpochLog>,
}

/// Runs `trainer` to completion. With `out_dir`, appends one JSON line per
/// epoch to the log and rewrites `last.ckpt` (and `best.ckpt` on
/// improvement) after every epoch.
pub fn train(
    mut trainer: Trainer,
    train: &[LabeledImage],
    val: &[LabeledImage],
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let path = |name: &str| -> Option<PathBuf> { out_dir.map(|d| d.join(name)) };
    let mut best = trainer.model().clone();
    let mut log = Vec::new();
    while !trainer.is_done() {
        let (entry, improved) = trainer.run_epoch(train, val)?;
        if improved || val.is_empty() {
            best = trainer.model().clone();
        }
        if let Some(p) = path(LOG_FILE) {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&p)
                .map_err(|e| Error::io(&p, e))?;
            let line = serde_json::to_string(&entry).expect("log entry serializes");
            writeln!(f, "{line}").map_err(|e| Error::io(&p, e))?;
        }
        if let Some(p) = path(LAST_CHECKPOINT) {
            save_checkpoint(&p, &trainer.checkpoint())?;
        }
        if improved || val.is_empty() {
            if let Some(p) = path(BEST_CHECKPOINT) {
                save_checkpoint(&p, &trainer.checkpoint())?;
            }
        }
        log.push(entry);
    }
    Ok(TrainOutcome { model: trainer.into_model(), best, log })
}
