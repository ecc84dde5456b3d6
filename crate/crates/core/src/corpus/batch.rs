use super::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Fill value of padded slots. Padding is neutralized by the attention
/// mask, so the value itself carries no meaning.
pub const PAD_VALUE: f32 = 0.0;

/// Padded batch of `B` sequences of at most `L` tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `[B, L, d]`.
    pub tokens: Tensor<f32>,
    /// `attn_keep[b·L + i]` is true iff `i < real_len[b]`.
    pub attn_keep: Vec<bool>,
    pub positions: Vec<usize>,
    pub real_len: Vec<usize>,
    /// Number of windows cut down to `max_tokens`.
    pub truncated: usize,
}

impl Batch {
    pub fn batch_size(&self) -> usize {
        self.real_len.len()
    }

    pub fn max_len(&self) -> usize {
        self.tokens.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.tokens.shape()[2]
    }

    /// Token `i` of sequence `b`.
    pub fn token(&self, b: usize, i: usize) -> &[f32] {
        let (l, d) = (self.max_len(), self.dim());
        &self.tokens.data()[(b * l + i) * d..(b * l + i + 1) * d]
    }
}

/// Pad windows to a common length. Windows longer than `max_tokens` keep
/// their first `max_tokens` segments.
pub fn build_batch(windows: &[EmbeddingSequence], max_tokens: usize) -> Result<Batch> {
    let first = windows
        .first()
        .ok_or_else(|| Error::contract("build_batch needs at least one window"))?;
    if max_tokens == 0 {
        return Err(Error::contract("max_tokens must be positive"));
    }
    let d = first.dim();
    let mut truncated = 0;
    let real_len: Vec<usize> = windows
        .iter()
        .map(|w| {
            if w.len() > max_tokens {
                truncated += 1;
            }
            w.len().min(max_tokens)
        })
        .collect();
    if truncated > 0 {
        log::warn!("{truncated} window(s) truncated to {max_tokens} tokens");
    }
    let l = *real_len.iter().max().expect("non-empty");
    let b = windows.len();
    let mut data = vec![PAD_VALUE; b * l * d];
    let mut keep = vec![false; b * l];
    let mut positions = vec![0usize; b * l];
    for (bi, w) in windows.iter().enumerate() {
        if w.dim() != d {
            return Err(Error::DimMismatch {
                context: format!("window {}", w.video_id),
                expected: d,
                found: w.dim(),
            });
        }
        let n = real_len[bi];
        data[bi * l * d..(bi * l + n) * d].copy_from_slice(&w.embeddings.data()[..n * d]);
        for i in 0..l {
            positions[bi * l + i] = i;
            keep[bi * l + i] = i < n;
        }
    }
    Ok(Batch {
        tokens: Tensor::new(vec![b, l, d], data)?,
        attn_keep: keep,
        positions,
        real_len,
        truncated,
    })
}
