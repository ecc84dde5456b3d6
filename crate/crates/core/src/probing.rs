//! Heads trained on frozen latents: linear and regression heads on the
//! mean of segment latents, and an attentive head reading the CLS row after
//! one extra transformer block.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::model::{Linear, LvMae, Norm, TransformerBlock};
use crate::numerics::{AttnLayout, ParamStore, RowRef, Tape, Tensor, Var};
use crate::par;
use crate::training::{AdamW, AdamWConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Linear,
    Attentive,
    Regression,
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeKind::Linear => "linear",
            ProbeKind::Attentive => "attentive",
            ProbeKind::Regression => "regression",
        })
    }
}

impl FromStr for ProbeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ProbeKind::Linear),
            "attentive" => Ok(ProbeKind::Attentive),
            "regression" => Ok(ProbeKind::Regression),
            other => Err(Error::contract(format!("unknown probe head {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub kind: ProbeKind,
    /// Output width; 1 for regression.
    pub num_classes: usize,
    pub lr: f64,
    pub betas: (f64, f64),
    pub batch_size: usize,
    pub epochs: usize,
    /// Per-epoch multiplicative learning-rate decay.
    pub lr_gamma: Option<f64>,
    pub weight_decay: f64,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    pub eps: f64,
    pub seed: u64,
}

impl ProbeConfig {
    pub fn linear(num_classes: usize) -> Self {
        ProbeConfig {
            kind: ProbeKind::Linear,
            num_classes,
            lr: 1e-4,
            betas: (0.9, 0.999),
            batch_size: 16,
            epochs: 30,
            lr_gamma: None,
            weight_decay: 0.0,
            num_heads: 8,
            mlp_ratio: 4,
            eps: 1e-6,
            seed: 0,
        }
    }

    pub fn attentive(num_classes: usize) -> Self {
        ProbeConfig {
            kind: ProbeKind::Attentive,
            lr: 1e-3,
            epochs: 20,
            lr_gamma: Some(0.9),
            ..ProbeConfig::linear(num_classes)
        }
    }

    pub fn regression() -> Self {
        ProbeConfig {
            kind: ProbeKind::Regression,
            ..ProbeConfig::linear(1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Contract(format!("probe config: {m}")));
        if self.num_classes == 0 || (self.kind == ProbeKind::Regression && self.num_classes != 1) {
            return bad("num_classes must be positive (exactly 1 for regression)");
        }
        if self.batch_size == 0 || self.num_heads == 0 || self.mlp_ratio == 0 {
            return bad("batch_size, num_heads and mlp_ratio must be positive");
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) || !(self.eps > 0.0) {
            return bad("lr and weight_decay must be non-negative, eps positive");
        }
        Ok(())
    }

    /// Learning rate during `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_gamma.map_or(1.0, |g| g.powi(epoch as i32))
    }
}

/// Supervision for a probe.
#[derive(Clone, Copy, Debug)]
pub enum Targets<'a> {
    Classes(&'a [usize]),
    Values(&'a [f64]),
}

impl Targets<'_> {
    fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.len(),
        }
    }
}

/// Exact top-1 count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
}

impl Accuracy {
    pub fn value(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Mean of the segment rows of `(N+1) × d` latents; the CLS row is skipped.
pub fn mean_pool(latents: &Tensor<f32>) -> Result<Vec<f32>> {
    if latents.rows() < 2 {
        return Err(Error::contract("mean_pool needs at least one segment row"));
    }
    let d = latents.cols();
    let mut acc = vec![0.0f64; d];
    for i in 1..latents.rows() {
        for (a, &v) in acc.iter_mut().zip(latents.row(i)) {
            *a += v as f64;
        }
    }
    let n = (latents.rows() - 1) as f64;
    Ok(acc.into_iter().map(|a| (a / n) as f32).collect())
}

/// Raw embeddings in latent layout, with an all-zero row standing in for CLS.
pub fn raw_latents(seq: &EmbeddingSequence) -> Tensor<f32> {
    let d = seq.dim();
    let mut data = vec![0.0; d];
    data.extend_from_slice(seq.embeddings.data());
    Tensor::matrix(seq.len() + 1, d, data).expect("finite rows")
}

/// Frozen-backbone latents for a set of sequences.
pub fn extract_latents(model: &LvMae<f32>, seqs: &[EmbeddingSequence]) -> Result<Vec<Tensor<f32>>> {
    model.represent_many(seqs)
}

#[derive(Clone, Debug)]
enum Body {
    Pooled { out: Linear },
    Attentive { block: TransformerBlock, norm: Norm, out: Linear },
}

/// A trainable head over latents of width `d`.
#[derive(Clone, Debug)]
pub struct ProbeHead {
    pub cfg: ProbeConfig,
    pub params: ParamStore<f32>,
    dim: usize,
    body: Body,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeLog {
    pub epoch_loss: Vec<f64>,
}

impl ProbeHead {
    pub fn new(cfg: ProbeConfig, dim: usize) -> Result<Self> {
        cfg.validate()?;
        if cfg.kind == ProbeKind::Attentive && dim % cfg.num_heads != 0 {
            return Err(Error::contract(format!(
                "latent width {dim} not divisible by {} heads",
                cfg.num_heads
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParamStore::new();
        let body = match cfg.kind {
            ProbeKind::Linear | ProbeKind::Regression => Body::Pooled {
                out: Linear::register(&mut params, "probe.out", dim, cfg.num_classes, true, &mut rng),
            },
            ProbeKind::Attentive => Body::Attentive {
                block: TransformerBlock::register(&mut params, "probe.block", dim, cfg.mlp_ratio, &mut rng),
                norm: Norm::register(&mut params, "probe.norm", dim),
                out: Linear::register(&mut params, "probe.out", dim, cfg.num_classes, true, &mut rng),
            },
        };
        Ok(ProbeHead {
            cfg,
            params,
            dim,
            body,
        })
    }

    fn check_latents(&self, latents: &[&Tensor<f32>]) -> Result<()> {
        for l in latents {
            if l.cols() != self.dim {
                return Err(Error::DimMismatch {
                    context: "probe latents".into(),
                    expected: self.dim,
                    found: l.cols(),
                });
            }
            if l.rows() < 2 {
                return Err(Error::contract("latents need a CLS row and at least one segment"));
            }
        }
        Ok(())
    }

    /// `[B × num_classes]` outputs for a batch of latents.
    fn forward(&self, tape: &mut Tape<f32>, store: &ParamStore<f32>, latents: &[&Tensor<f32>]) -> Result<Var> {
        let d = self.dim;
        match &self.body {
            Body::Pooled { out } => {
                let mut pooled = Vec::with_capacity(latents.len() * d);
                for l in latents {
                    pooled.extend(mean_pool(l)?);
                }
                let x = tape.constant(Tensor::matrix(latents.len(), d, pooled)?);
                out.forward(tape, store, x)
            }
            Body::Attentive { block, norm, out } => {
                let len = latents.iter().map(|l| l.rows()).max().unwrap_or(0);
                let mut data = vec![0.0f32; latents.len() * len * d];
                let mut keep = vec![false; latents.len() * len];
                for (b, l) in latents.iter().enumerate() {
                    data[b * len * d..(b * len + l.rows()) * d].copy_from_slice(l.data());
                    keep[b * len..b * len + l.rows()].iter_mut().for_each(|k| *k = true);
                }
                let x = tape.constant(Tensor::matrix(latents.len() * len, d, data)?);
                let layout = Arc::new(AttnLayout::new(latents.len(), len, self.cfg.num_heads, keep)?);
                let h = block.forward(tape, store, x, &layout, self.cfg.eps)?;
                let cls = tape.gather_rows(&[h], (0..latents.len()).map(|b| RowRef::new(0, b * len)).collect())?;
                let cls = norm.forward(tape, store, cls, self.cfg.eps)?;
                out.forward(tape, store, cls)
            }
        }
    }

    /// Raw outputs, one row per example.
    pub fn predict_raw(&self, latents: &[Tensor<f32>]) -> Result<Tensor<f32>> {
        let refs: Vec<&Tensor<f32>> = latents.iter().collect();
        self.check_latents(&refs)?;
        let c = self.cfg.num_classes;
        let chunks: Vec<&[&Tensor<f32>]> = refs.chunks(self.cfg.batch_size.max(1)).collect();
        let outs = par::try_map_indexed(chunks.len(), |i| -> Result<Vec<f32>> {
            let mut tape = Tape::new();
            let y = self.forward(&mut tape, &self.params, chunks[i])?;
            Ok(tape.value(y).data().to_vec())
        })?;
        Tensor::matrix(latents.len(), c, outs.concat())
    }

    pub fn predict_classes(&self, latents: &[Tensor<f32>]) -> Result<Vec<usize>> {
        let y = self.predict_raw(latents)?;
        Ok((0..y.rows())
            .map(|i| {
                let row = y.row(i);
                (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
            })
            .collect())
    }

    pub fn accuracy(&self, latents: &[Tensor<f32>], labels: &[usize]) -> Result<Accuracy> {
        if latents.len() != labels.len() {
            return Err(Error::contract("latent and label counts differ"));
        }
        let pred = self.predict_classes(latents)?;
        Ok(Accuracy {
            correct: pred.iter().zip(labels).filter(|(p, l)| p == l).count(),
            total: labels.len(),
        })
    }

    pub fn mse(&self, latents: &[Tensor<f32>], targets: &[f64]) -> Result<f64> {
        if latents.len() != targets.len() || targets.is_empty() {
            return Err(Error::contract("latent and target counts differ"));
        }
        let y = self.predict_raw(latents)?;
        Ok(y.data()
            .iter()
            .zip(targets)
            .map(|(&p, &t)| (p as f64 - t).powi(2))
            .sum::<f64>()
            / targets.len() as f64)
    }

    /// Fit the head. Latents are read only.
    pub fn fit(&mut self, latents: &[Tensor<f32>], targets: Targets<'_>) -> Result<ProbeLog> {
        if latents.len() != targets.len() || latents.is_empty() {
            return Err(Error::contract(format!(
                "{} latents for {} targets",
                latents.len(),
                targets.len()
            )));
        }
        let refs: Vec<&Tensor<f32>> = latents.iter().collect();
        self.check_latents(&refs)?;
        match (self.cfg.kind, targets) {
            (ProbeKind::Regression, Targets::Values(v)) => {
                if v.iter().any(|t| !t.is_finite()) {
                    return Err(Error::contract("regression targets must be finite"));
                }
            }
            (ProbeKind::Regression, Targets::Classes(_)) => {
                return Err(Error::contract("regression probe needs real-valued targets"))
            }
            (_, Targets::Classes(c)) => {
                if let Some(&bad) = c.iter().find(|&&l| l >= self.cfg.num_classes) {
                    return Err(Error::contract(format!(
                        "label {bad} outside {} classes",
                        self.cfg.num_classes
                    )));
                }
            }
            (_, Targets::Values(_)) => {
                return Err(Error::contract("classification probe needs class labels"))
            }
        }
        let mut opt = AdamW::new(
            AdamWConfig {
                betas: self.cfg.betas,
                eps: 1e-8,
                weight_decay: self.cfg.weight_decay,
            },
            &self.params,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(1);
        let mut order: Vec<usize> = (0..latents.len()).collect();
        let mut log = ProbeLog::default();
        for epoch in 0..self.cfg.epochs {
            order.shuffle(&mut rng);
            let lr = self.cfg.lr_at(epoch);
            let mut total = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(self.cfg.batch_size) {
                let xs: Vec<&Tensor<f32>> = chunk.iter().map(|&i| &latents[i]).collect();
                let mut tape = Tape::new();
                let y = self.forward(&mut tape, &self.params, &xs)?;
                let loss = match targets {
                    Targets::Classes(c) => {
                        let labels: Vec<usize> = chunk.iter().map(|&i| c[i]).collect();
                        tape.cross_entropy(y, &labels)?
                    }
                    Targets::Values(v) => {
                        let t = chunk.iter().map(|&i| v[i] as f32).collect();
                        tape.masked_mse(y, (0..chunk.len()).collect(), Tensor::matrix(chunk.len(), 1, t)?)?
                    }
                };
                total += tape.value(loss).item() as f64;
                batches += 1;
                self.params.zero_grad();
                tape.backward_into(loss, &mut self.params)?;
                opt.step(&mut self.params, lr)?;
            }
            log.epoch_loss.push(total / batches as f64);
        }
        Ok(log)
    }
}

fn train(latents: &[Tensor<f32>], targets: Targets<'_>, cfg: ProbeConfig, kind: ProbeKind) -> Result<ProbeHead> {
    if cfg.kind != kind {
        return Err(Error::contract(format!("{} config passed to the {kind} probe", cfg.kind)));
    }
    let mut head = ProbeHead::new(cfg, dim_of(latents)?)?;
    head.fit(latents, targets)?;
    Ok(head)
}

pub fn linear_probe_train(latents: &[Tensor<f32>], labels: &[usize], cfg: ProbeConfig) -> Result<ProbeHead> {
    train(latents, Targets::Classes(labels), cfg, ProbeKind::Linear)
}

pub fn attentive_probe_train(latents: &[Tensor<f32>], labels: &[usize], cfg: ProbeConfig) -> Result<ProbeHead> {
    train(latents, Targets::Classes(labels), cfg, ProbeKind::Attentive)
}

pub fn regression_probe_train(latents: &[Tensor<f32>], targets: &[f64], cfg: ProbeConfig) -> Result<ProbeHead> {
    train(latents, Targets::Values(targets), cfg, ProbeKind::Regression)
}

fn dim_of(latents: &[Tensor<f32>]) -> Result<usize> {
    latents
        .first()
        .map(|l| l.cols())
        .ok_or_else(|| Error::contract("no latents to probe"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_hyperparameters() {
        let l = ProbeConfig::linear(3);
        assert_eq!((l.lr, l.betas, l.batch_size, l.epochs), (1e-4, (0.9, 0.999), 16, 30));
        let a = ProbeConfig::attentive(3);
        assert_eq!((a.lr, a.epochs, a.lr_gamma), (1e-3, 20, Some(0.9)));
        assert!((a.lr_at(2) - 1e-3 * 0.81).abs() < 1e-15);
    }

    #[test]
    fn mean_pool_skips_cls() {
        let t = Tensor::matrix(3, 2, vec![100.0, 100.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(mean_pool(&t).unwrap(), vec![2.0, 3.0]);
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let t = vec![Tensor::matrix(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap()];
        assert!(matches!(
            linear_probe_train(&t, &[2], ProbeConfig::linear(2)),
            Err(Error::Contract(_))
        ));
    }
}
