//! Asymmetric masked-embedding autoencoder.
//!
//! The encoder sees only visible segment embeddings plus a learned CLS
//! token. The decoder is narrower, fills masked slots with one shared
//! learned mask token, and predicts every slot in original order.

mod block;
mod checkpoint;

use std::sync::Arc;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use block::{Linear, Norm, TransformerBlock};
pub use checkpoint::{
    load_checkpoint, load_checkpoint_expecting, save_checkpoint, CheckpointHeader, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

use crate::corpus::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::masking::{DecoderLayout, DecoderSlot, MaskedBatch, VisibleBatch};
use crate::numerics::{AttnLayout, ParamId, ParamStore, RowRef, Scalar, Tape, Tensor, Var};
use crate::par;

/// Base of the sinusoidal position frequencies.
pub const POSITION_BASE: f64 = 10_000.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    /// 0 builds an identity encoder (ablation only).
    pub enc_depth: usize,
    pub dec_depth: usize,
    pub dec_dim: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    pub max_tokens: usize,
    pub eps: f64,
}

impl ModelConfig {
    pub fn new(d_model: usize) -> Self {
        ModelConfig {
            d_model,
            enc_depth: 32,
            dec_depth: 4,
            dec_dim: (d_model / 2).max(32),
            num_heads: 8,
            mlp_ratio: 4,
            max_tokens: 256,
            eps: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Contract(format!("model config: {m}")));
        if self.d_model == 0 || self.dec_dim == 0 || self.num_heads == 0 {
            return bad("d_model, dec_dim and num_heads must be positive".into());
        }
        if self.d_model % self.num_heads != 0 {
            return bad(format!("d_model {} not divisible by {} heads", self.d_model, self.num_heads));
        }
        if self.dec_dim % self.num_heads != 0 {
            return bad(format!("dec_dim {} not divisible by {} heads", self.dec_dim, self.num_heads));
        }
        if self.d_model % 2 != 0 || self.dec_dim % 2 != 0 {
            return bad("d_model and dec_dim must be even".into());
        }
        if self.dec_depth == 0 {
            return bad("dec_depth must be at least 1".into());
        }
        if self.mlp_ratio == 0 || self.max_tokens == 0 {
            return bad("mlp_ratio and max_tokens must be positive".into());
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps {} must be positive", self.eps));
        }
        Ok(())
    }
}

/// Fixed `max_len × dim` table with `[i, 2j] = sin(i·ω_j)` and
/// `[i, 2j+1] = cos(i·ω_j)`, `ω_j = 10000^(−2j/dim)`.
pub fn positional_table<T: Scalar>(max_len: usize, dim: usize) -> Result<Tensor<T>> {
    if dim % 2 != 0 {
        return Err(Error::contract(format!("positional table needs an even dim, got {dim}")));
    }
    let mut data = Vec::with_capacity(max_len * dim);
    for i in 0..max_len {
        for j in 0..dim / 2 {
            let w = POSITION_BASE.powf(-((2 * j) as f64) / dim as f64);
            let a = i as f64 * w;
            data.push(T::of(a.sin()));
            data.push(T::of(a.cos()));
        }
    }
    Tensor::matrix(max_len, dim, data)
}

/// Graph handles of one masked forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// `[batch·(visible_len+1), d_model]`, CLS first in each sequence.
    pub z: Var,
    /// `[batch·decoder_len, d_model]`.
    pub pred: Var,
    pub loss: Var,
}

#[derive(Clone, Debug)]
pub struct LvMae<T> {
    cfg: ModelConfig,
    pub params: ParamStore<T>,
    cls: ParamId,
    mask_token: ParamId,
    enc_blocks: Vec<TransformerBlock>,
    enc_norm: Option<Norm>,
    dec_embed: Linear,
    dec_blocks: Vec<TransformerBlock>,
    dec_norm: Norm,
    dec_pred: Linear,
    enc_pos: Tensor<T>,
    dec_pos: Tensor<T>,
    positions_enabled: bool,
}

impl<T: Scalar> LvMae<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, dd) = (cfg.d_model, cfg.dec_dim);
        let mut params = ParamStore::new();
        let token = |rng: &mut ChaCha8Rng, n: usize| {
            let dist = Normal::new(0.0, 0.02).expect("valid std");
            Tensor::matrix(1, n, (0..n).map(|_| T::of(dist.sample(rng))).collect())
        };
        let cls = params.add("cls_token", token(&mut rng, d)?, false);
        let mask_token = params.add("mask_token", token(&mut rng, dd)?, false);
        let enc_blocks = (0..cfg.enc_depth)
            .map(|i| TransformerBlock::register(&mut params, &format!("enc.{i}"), d, cfg.mlp_ratio, &mut rng))
            .collect();
        let enc_norm = (cfg.enc_depth > 0).then(|| Norm::register(&mut params, "enc.norm", d));
        let dec_embed = Linear::register(&mut params, "dec.embed", d, dd, true, &mut rng);
        let dec_blocks = (0..cfg.dec_depth)
            .map(|i| TransformerBlock::register(&mut params, &format!("dec.{i}"), dd, cfg.mlp_ratio, &mut rng))
            .collect();
        let dec_norm = Norm::register(&mut params, "dec.norm", dd);
        let dec_pred = Linear::register(&mut params, "dec.pred", dd, d, true, &mut rng);
        Ok(LvMae {
            enc_pos: positional_table(cfg.max_tokens, d)?,
            dec_pos: positional_table(cfg.max_tokens, dd)?,
            cfg,
            params,
            cls,
            mask_token,
            enc_blocks,
            enc_norm,
            dec_embed,
            dec_blocks,
            dec_norm,
            dec_pred,
            positions_enabled: true,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn mask_token_id(&self) -> ParamId {
        self.mask_token
    }

    pub fn cls_token_id(&self) -> ParamId {
        self.cls
    }

    /// Test hook: with positions disabled, nothing distinguishes one masked
    /// slot from another at the decoder input.
    pub fn set_positions_enabled(&mut self, on: bool) {
        self.positions_enabled = on;
    }

    /// Same weights at another precision.
    pub fn cast<U: Scalar>(&self) -> LvMae<U> {
        LvMae {
            cfg: self.cfg.clone(),
            params: self.params.cast(),
            cls: self.cls,
            mask_token: self.mask_token,
            enc_blocks: self.enc_blocks.clone(),
            enc_norm: self.enc_norm,
            dec_embed: self.dec_embed,
            dec_blocks: self.dec_blocks.clone(),
            dec_norm: self.dec_norm,
            dec_pred: self.dec_pred,
            enc_pos: self.enc_pos.cast(),
            dec_pos: self.dec_pos.cast(),
            positions_enabled: self.positions_enabled,
        }
    }

    fn position_row<'a>(&self, table: &'a Tensor<T>, pos: usize, real: bool) -> Result<&'a [T]> {
        if pos < table.rows() {
            Ok(table.row(pos))
        } else if real {
            Err(Error::contract(format!(
                "position {pos} exceeds max_tokens {}",
                self.cfg.max_tokens
            )))
        } else {
            Ok(table.row(pos % table.rows()))
        }
    }

    fn check_store(&self, store: &ParamStore<T>) -> Result<()> {
        if store.len() != self.params.len() {
            return Err(Error::contract(format!(
                "parameter store has {} entries, model expects {}",
                store.len(),
                self.params.len()
            )));
        }
        Ok(())
    }

    pub fn encode(&self, tape: &mut Tape<T>, vis: &VisibleBatch<T>) -> Result<Var> {
        self.encode_with(tape, &self.params, vis)
    }

    pub fn decode(&self, tape: &mut Tape<T>, z: Var, dec: &DecoderLayout) -> Result<Var> {
        self.decode_with(tape, &self.params, z, dec)
    }

    pub fn forward_masked(&self, tape: &mut Tape<T>, mb: &MaskedBatch<T>) -> Result<Forward> {
        self.forward_masked_with(tape, &self.params, mb)
    }

    /// Encoder over `[CLS] ++ (eᵢ + p_posᵢ)`; returns
    /// `[batch·(len+1), d_model]` with CLS at slot 0 of each sequence.
    pub fn encode_with(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        vis: &VisibleBatch<T>,
    ) -> Result<Var> {
        self.check_store(store)?;
        let d = self.cfg.d_model;
        if vis.tokens.cols() != d {
            return Err(Error::DimMismatch {
                context: "encoder input".into(),
                expected: d,
                found: vis.tokens.cols(),
            });
        }
        if let Some(b) = vis.counts().iter().position(|&c| c == 0) {
            return Err(Error::contract(format!("sequence {b} has an empty visible set")));
        }
        let mut x = vis.tokens.clone();
        if self.positions_enabled {
            for r in 0..vis.batch * vis.len {
                let p = self.position_row(&self.enc_pos, vis.positions[r], vis.keep[r])?;
                for (v, &pv) in x.data_mut()[r * d..(r + 1) * d].iter_mut().zip(p) {
                    *v = *v + pv;
                }
            }
        }
        let tokens = tape.constant(x);
        let cls = tape.param(store, self.cls);
        let len = vis.len + 1;
        let mut refs = Vec::with_capacity(vis.batch * len);
        let mut keep = Vec::with_capacity(vis.batch * len);
        for b in 0..vis.batch {
            refs.push(RowRef::new(1, 0));
            keep.push(true);
            for i in 0..vis.len {
                refs.push(RowRef::new(0, b * vis.len + i));
                keep.push(vis.keep[b * vis.len + i]);
            }
        }
        let mut h = tape.gather_rows(&[tokens, cls], refs)?;
        let layout = Arc::new(AttnLayout::new(vis.batch, len, self.cfg.num_heads, keep)?);
        for blk in &self.enc_blocks {
            h = blk.forward(tape, store, h, &layout, self.cfg.eps)?;
        }
        if let Some(norm) = &self.enc_norm {
            h = norm.forward(tape, store, h, self.cfg.eps)?;
        }
        Ok(h)
    }

    /// Decoder over `dec.len` slots per sequence in original order; returns
    /// `[batch·len, d_model]`.
    pub fn decode_with(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        z: Var,
        dec: &DecoderLayout,
    ) -> Result<Var> {
        self.check_store(store)?;
        let dd = self.cfg.dec_dim;
        if dec.slots.len() != dec.batch * dec.len || dec.n_real.len() != dec.batch {
            return Err(Error::contract("decoder layout is inconsistent"));
        }
        for (b, &n) in dec.n_real.iter().enumerate() {
            let seq = &dec.slots[b * dec.len..(b + 1) * dec.len];
            if n > dec.len || seq.iter().take(n).any(|s| *s == DecoderSlot::Pad) {
                return Err(Error::contract(format!(
                    "decoder layout of sequence {b} disagrees with its {n} real tokens"
                )));
            }
        }
        let zp = self.dec_embed.forward(tape, store, z)?;
        let mask = tape.param(store, self.mask_token);
        let n_pad = dec.slots.iter().filter(|s| **s == DecoderSlot::Pad).count();
        let mut parts = vec![zp, mask];
        if n_pad > 0 {
            let fill = match dec.pad_seed {
                None => Tensor::zeros(vec![n_pad, dd]),
                Some(seed) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    Tensor::matrix(
                        n_pad,
                        dd,
                        (0..n_pad * dd).map(|_| T::of(rng.random_range(-10.0..10.0))).collect(),
                    )?
                }
            };
            parts.push(tape.constant(fill));
        }
        let mut pad_i = 0;
        let refs = dec
            .slots
            .iter()
            .map(|s| match *s {
                DecoderSlot::Visible(r) => RowRef::new(0, r),
                DecoderSlot::Mask => RowRef::new(1, 0),
                DecoderSlot::Pad => {
                    pad_i += 1;
                    RowRef::new(2, pad_i - 1)
                }
            })
            .collect();
        let mut h = tape.gather_rows(&parts, refs)?;
        if self.positions_enabled {
            let mut pos = Vec::with_capacity(dec.slots.len() * dd);
            for (r, s) in dec.slots.iter().enumerate() {
                let real = *s != DecoderSlot::Pad;
                pos.extend_from_slice(self.position_row(&self.dec_pos, r % dec.len, real)?);
            }
            let pos = tape.constant(Tensor::matrix(dec.slots.len(), dd, pos)?);
            h = tape.add(h, pos)?;
        }
        let layout = Arc::new(AttnLayout::new(dec.batch, dec.len, self.cfg.num_heads, dec.keep())?);
        for blk in &self.dec_blocks {
            h = blk.forward(tape, store, h, &layout, self.cfg.eps)?;
        }
        let h = self.dec_norm.forward(tape, store, h, self.cfg.eps)?;
        self.dec_pred.forward(tape, store, h)
    }

    /// Encode, decode and score one masked batch.
    pub fn forward_masked_with(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        mb: &MaskedBatch<T>,
    ) -> Result<Forward> {
        let z = self.encode_with(tape, store, &mb.visible)?;
        let pred = self.decode_with(tape, store, z, &mb.decoder)?;
        let loss = tape.masked_mse(pred, mb.target_rows.clone(), mb.targets.clone())?;
        Ok(Forward { z, pred, loss })
    }

    /// Reconstructions of the masked slots, `[M × d_model]` in target order.
    pub fn reconstruct(&self, mb: &MaskedBatch<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let z = self.encode(&mut tape, &mb.visible)?;
        let pred = self.decode(&mut tape, z, &mb.decoder)?;
        let p = tape.value(pred);
        let d = self.cfg.d_model;
        let mut out = Vec::with_capacity(mb.target_rows.len() * d);
        for &r in &mb.target_rows {
            out.extend_from_slice(p.row(r));
        }
        Tensor::matrix(mb.target_rows.len(), d, out)
    }

    /// Unmasked latents `(N+1) × d_model`: CLS row, then one row per segment.
    pub fn represent(&self, seq: &EmbeddingSequence) -> Result<Tensor<T>> {
        let mut emb: Tensor<T> = seq.embeddings.cast();
        if seq.len() > self.cfg.max_tokens {
            warn!(
                "{}: {} segments truncated to {}",
                seq.video_id,
                seq.len(),
                self.cfg.max_tokens
            );
            let d = seq.dim();
            let data = emb.data()[..self.cfg.max_tokens * d].to_vec();
            emb = Tensor::matrix(self.cfg.max_tokens, d, data)?;
        }
        let vis = VisibleBatch::from_sequences(&[&emb])?;
        let mut tape = Tape::new();
        let z = self.encode(&mut tape, &vis)?;
        Ok(tape.value(z).clone())
    }

    /// [`LvMae::represent`] for many sequences, parallel across sequences.
    pub fn represent_many(&self, seqs: &[EmbeddingSequence]) -> Result<Vec<Tensor<T>>> {
        par::try_map_indexed(seqs.len(), |i| self.represent(&seqs[i]))
    }

    /// Sequential [`LvMae::represent_many`], for comparison benches.
    pub fn represent_many_seq(&self, seqs: &[EmbeddingSequence]) -> Result<Vec<Tensor<T>>> {
        seqs.iter().map(|s| self.represent(s)).collect()
    }
}
