use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_batch, cosine, EmbeddingSequence};
use crate::error::{Error, Result};
use crate::masking::{apply_mask, make_plan, MaskStrategy, MaskedBatch};
use crate::model::LvMae;
use crate::par;

/// Mask RNG of sequence `index` under `seed`, independent of batching.
pub fn mask_rng_for(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 << 32 | index as u64);
    rng
}

/// Mask whole sequences (no windowing) with per-sequence seeded plans and
/// group them into batches of at most `batch_size`.
pub fn masked_batches(
    seqs: &[EmbeddingSequence],
    strategy: MaskStrategy,
    ratio: f64,
    seed: u64,
    batch_size: usize,
    max_tokens: usize,
) -> Result<Vec<MaskedBatch<f32>>> {
    if batch_size == 0 {
        return Err(Error::contract("batch_size must be positive"));
    }
    let seqs: Vec<EmbeddingSequence> = seqs
        .iter()
        .map(|s| if s.len() > max_tokens { s.slice(0, max_tokens) } else { Ok(s.clone()) })
        .collect::<Result<_>>()?;
    let plans = seqs
        .iter()
        .enumerate()
        .map(|(i, s)| make_plan(strategy, &s.embeddings, ratio, &mut mask_rng_for(seed, i)))
        .collect::<Result<Vec<_>>>()?;
    seqs.chunks(batch_size)
        .zip(plans.chunks(batch_size))
        .map(|(s, p)| apply_mask(&build_batch(s, max_tokens)?, p))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionStats {
    pub masked_slots: usize,
    /// Mean squared error per masked slot.
    pub mean_loss: f64,
    pub mean_cosine: f64,
    /// Mean cosine of copying the nearest preceding visible embedding
    /// (the following one when none precedes).
    pub copy_prev_cosine: f64,
}

/// Reconstruction quality on masked slots of whole sequences.
pub fn evaluate_reconstruction(
    model: &LvMae<f32>,
    seqs: &[EmbeddingSequence],
    strategy: MaskStrategy,
    ratio: f64,
    seed: u64,
) -> Result<ReconstructionStats> {
    let batches = masked_batches(seqs, strategy, ratio, seed, 16, model.config().max_tokens)?;
    let per_batch = par::try_map_indexed(batches.len(), |bi| -> Result<Vec<(f64, f64, f64)>> {
        let mb = &batches[bi];
        let rec = model.reconstruct(mb)?;
        let mut out = Vec::with_capacity(rec.rows());
        let mut m = 0;
        for (b, plan) in mb.plans.iter().enumerate() {
            let visible = plan.visible_idx();
            let dec_len = mb.decoder.len;
            for &i in &plan.masked_idx {
                let target = mb.targets.row(m);
                debug_assert_eq!(mb.target_rows[m], b * dec_len + i);
                let pred = rec.row(m);
                let sq: f64 = pred
                    .iter()
                    .zip(target)
                    .map(|(&p, &t)| (p as f64 - t as f64).powi(2))
                    .sum();
                let j = visible
                    .iter()
                    .rev()
                    .find(|&&j| j < i)
                    .or_else(|| visible.first())
                    .copied()
                    .expect("plans keep one visible");
                let vis_row = mb
                    .visible
                    .tokens
                    .row(b * mb.visible.len + visible.iter().position(|&v| v == j).expect("visible"));
                out.push((
                    sq,
                    cosine(pred, target).unwrap_or(0.0),
                    cosine(vis_row, target).unwrap_or(0.0),
                ));
                m += 1;
            }
        }
        Ok(out)
    })?;
    let all: Vec<_> = per_batch.into_iter().flatten().collect();
    let n = all.len() as f64;
    let sum = |f: fn(&(f64, f64, f64)) -> f64| all.iter().map(f).sum::<f64>() / n;
    Ok(ReconstructionStats {
        masked_slots: all.len(),
        mean_loss: sum(|r| r.0),
        mean_cosine: sum(|r| r.1),
        copy_prev_cosine: sum(|r| r.2),
    })
}
