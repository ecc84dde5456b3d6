//! Masked-reconstruction pre-training.

mod adamw;
mod eval;
mod schedule;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adamw::{AdamW, AdamWConfig};
pub use eval::{evaluate_reconstruction, mask_rng_for, masked_batches, ReconstructionStats};
pub use schedule::lr_at;

use crate::corpus::{build_batch, sample_window, EmbeddingSequence, DEFAULT_MIN_WINDOW};
use crate::error::{Error, Result};
use crate::masking::{apply_mask, make_plan, MaskStrategy};
use crate::model::{save_checkpoint, LvMae};
use crate::numerics::{Scalar, Tape, Tensor, Var};

/// `(1/M) Σ_m ‖pred[rows[m]] − target[m]‖²` over the masked rows only.
pub fn masked_mse<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    rows: Vec<usize>,
    targets: Tensor<T>,
) -> Result<Var> {
    tape.masked_mse(pred, rows, targets)
}

/// RNG stream purposes under one seed.
pub(crate) const STREAM_DATA: u64 = 1;
pub(crate) const STREAM_MASK: u64 = 2;

pub(crate) fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub batch_size: usize,
    pub warmup_epochs: f64,
    pub epochs: usize,
    pub max_tokens: usize,
    pub segment_len_s: f64,
    pub mask_strategy: MaskStrategy,
    pub mask_ratio: f64,
    pub min_window: usize,
    /// Also write the checkpoint every this many epochs.
    pub checkpoint_every: Option<usize>,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            base_lr: 1.5e-4,
            weight_decay: 0.05,
            betas: (0.9, 0.95),
            batch_size: 16,
            warmup_epochs: 40.0,
            epochs: 150,
            max_tokens: 256,
            segment_len_s: 5.0,
            mask_strategy: MaskStrategy::Random,
            mask_ratio: MaskStrategy::Random.default_ratio(),
            min_window: DEFAULT_MIN_WINDOW,
            checkpoint_every: None,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Contract(format!("pretrain config: {m}")));
        if self.batch_size == 0 || self.epochs == 0 || self.max_tokens == 0 {
            return bad("batch_size, epochs and max_tokens must be positive".into());
        }
        if !(self.warmup_epochs >= 0.0 && self.warmup_epochs < self.epochs as f64) {
            return bad(format!(
                "warmup_epochs {} must lie in [0, epochs={})",
                self.warmup_epochs, self.epochs
            ));
        }
        if !(self.base_lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("base_lr and weight_decay must be non-negative".into());
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return bad(format!("mask_ratio {} outside (0, 1)", self.mask_ratio));
        }
        if self.min_window < 2 {
            return bad("min_window must be at least 2".into());
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint_every must be positive".into());
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: f64) -> f64 {
        lr_at(epoch, self.base_lr, self.warmup_epochs, self.epochs as f64)
    }

    fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            betas: self.betas,
            eps: 1e-8,
            weight_decay: self.weight_decay,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Learning rate at the start of the epoch.
    pub lr: f64,
    pub wall_time_s: f64,
    pub grad_norm: f64,
    pub steps: usize,
    /// Tokens entering the encoder over the epoch, CLS included.
    pub encoder_tokens: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for r in &self.epochs {
            let line = serde_json::to_string(r).expect("plain record");
            writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|r| r.mean_loss)
    }
}

/// Train `model` in place. Each epoch visits every sequence once in shuffled
/// order, drawing one random window per visit and a fresh mask per window.
pub fn pretrain(
    model: &mut LvMae<f32>,
    corpus: &[EmbeddingSequence],
    cfg: &PretrainConfig,
    checkpoint: Option<&Path>,
) -> Result<TrainLog> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::contract("pretrain needs a nonempty corpus"));
    }
    let d = model.config().d_model;
    for s in corpus {
        if s.dim() != d {
            return Err(Error::DimMismatch {
                context: format!("sequence {}", s.video_id),
                expected: d,
                found: s.dim(),
            });
        }
        if s.len() < 2 {
            return Err(Error::contract(format!(
                "sequence {} has {} segment(s); masking needs two",
                s.video_id,
                s.len()
            )));
        }
    }
    let max_tokens = cfg.max_tokens.min(model.config().max_tokens);
    let mut data_rng = stream(cfg.seed, STREAM_DATA);
    let mut mask_rng = stream(cfg.seed, STREAM_MASK);
    let mut opt = AdamW::new(cfg.adamw(), &model.params);
    let steps_per_epoch = corpus.len().div_ceil(cfg.batch_size);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut log = TrainLog::default();
    let start = Instant::now();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut data_rng);
        let (mut loss_sum, mut gn_sum, mut enc_tokens) = (0.0, 0.0, 0);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut windows = Vec::with_capacity(chunk.len());
            let mut plans = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let mut w = sample_window(&corpus[i], cfg.min_window, &mut data_rng);
                if w.len() > max_tokens {
                    warn!("{}: window of {} truncated to {max_tokens}", w.video_id, w.len());
                    w = w.slice(0, max_tokens)?;
                }
                plans.push(make_plan(cfg.mask_strategy, &w.embeddings, cfg.mask_ratio, &mut mask_rng)?);
                windows.push(w);
            }
            let mb = apply_mask(&build_batch(&windows, max_tokens)?, &plans)?;
            enc_tokens += mb.encoder_tokens();

            let lr = cfg.lr_at(epoch as f64 + bi as f64 / steps_per_epoch as f64);
            let diverged = |e: Error| Error::Diverged {
                step,
                source: Box::new(e),
            };
            let mut tape = Tape::new();
            let fwd = model.forward_masked(&mut tape, &mb).map_err(diverged)?;
            let loss = tape.value(fwd.loss).item() as f64;
            model.params.zero_grad();
            tape.backward_into(fwd.loss, &mut model.params).map_err(diverged)?;
            gn_sum += model.params.grad_norm();
            opt.step(&mut model.params, lr).map_err(|e| match e {
                Error::Diverged { source, .. } => Error::Diverged { step, source },
                other => other,
            })?;
            loss_sum += loss;
            step += 1;
        }
        let rec = EpochRecord {
            epoch,
            mean_loss: loss_sum / steps_per_epoch as f64,
            lr: cfg.lr_at(epoch as f64),
            wall_time_s: start.elapsed().as_secs_f64(),
            grad_norm: gn_sum / steps_per_epoch as f64,
            steps: steps_per_epoch,
            encoder_tokens: enc_tokens,
        };
        info!(
            "epoch {epoch}: loss {:.5} lr {:.3e} grad {:.3}",
            rec.mean_loss, rec.lr, rec.grad_norm
        );
        log.epochs.push(rec);
        if let (Some(path), Some(k)) = (checkpoint, cfg.checkpoint_every) {
            if (epoch + 1) % k == 0 {
                save_checkpoint(model, path)?;
            }
        }
    }
    if let Some(path) = checkpoint {
        save_checkpoint(model, path)?;
    }
    Ok(log)
}
