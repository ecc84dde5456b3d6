#![allow(dead_code)]

use lvmae::corpus::{build_batch, EmbeddingSequence};
use lvmae::masking::{apply_mask, random_mask, MaskedBatch};
use lvmae::model::ModelConfig;
use lvmae::numerics::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn tiny_config(d: usize, enc_depth: usize, dec_depth: usize, heads: usize) -> ModelConfig {
    let mut c = ModelConfig::new(d);
    c.enc_depth = enc_depth;
    c.dec_depth = dec_depth;
    c.num_heads = heads;
    c
}

pub fn random_sequence(rng: &mut ChaCha8Rng, id: &str, n: usize, d: usize) -> EmbeddingSequence {
    let data = (0..n * d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let mut s = EmbeddingSequence::new(id, Tensor::matrix(n, d, data).unwrap()).unwrap();
    s.normalize_rows().unwrap();
    s
}

/// Batch of `lens.len()` random sequences, randomly masked at `ratio`.
pub fn random_masked_batch(
    rng: &mut ChaCha8Rng,
    lens: &[usize],
    d: usize,
    ratio: f64,
) -> MaskedBatch<f32> {
    let seqs: Vec<_> = lens
        .iter()
        .enumerate()
        .map(|(i, &n)| random_sequence(rng, &format!("s{i}"), n, d))
        .collect();
    let batch = build_batch(&seqs, 256).unwrap();
    let plans: Vec<_> = lens
        .iter()
        .map(|&n| random_mask(n, ratio, rng).unwrap())
        .collect();
    apply_mask(&batch, &plans).unwrap()
}
