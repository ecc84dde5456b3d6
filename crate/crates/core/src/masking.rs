//! Choosing which segment embeddings to hide, and splitting a batch into
//! encoder input and reconstruction targets.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{cosine, Batch};
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskStrategy {
    Random,
    Semantic,
}

impl fmt::Display for MaskStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskStrategy::Random => "random",
            MaskStrategy::Semantic => "semantic",
        })
    }
}

impl FromStr for MaskStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(MaskStrategy::Random),
            "semantic" => Ok(MaskStrategy::Semantic),
            other => Err(Error::contract(format!(
                "unknown mask strategy {other:?} (expected random or semantic)"
            ))),
        }
    }
}

impl MaskStrategy {
    /// Ratio that worked best for each strategy in the masking-ratio ablation.
    pub fn default_ratio(self) -> f64 {
        match self {
            MaskStrategy::Random => 0.4,
            MaskStrategy::Semantic => 0.5,
        }
    }
}

/// Masked index set of one sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    /// Sorted, unique, each `< n_real`.
    pub masked_idx: Vec<usize>,
    pub strategy: MaskStrategy,
    pub ratio: f64,
    pub n_real: usize,
}

impl MaskPlan {
    /// Validate a hand-built plan.
    pub fn new(n_real: usize, masked_idx: Vec<usize>, strategy: MaskStrategy, ratio: f64) -> Result<Self> {
        let plan = MaskPlan {
            masked_idx,
            strategy,
            ratio,
            n_real,
        };
        plan.check(n_real)?;
        Ok(plan)
    }

    pub fn check(&self, n_real: usize) -> Result<()> {
        if self.n_real != n_real {
            return Err(Error::contract(format!(
                "plan built for {} tokens applied to {n_real}",
                self.n_real
            )));
        }
        if self.masked_idx.is_empty() {
            return Err(Error::contract("mask plan is empty"));
        }
        if self.masked_idx.len() >= n_real {
            return Err(Error::contract("mask plan leaves no visible token"));
        }
        for w in self.masked_idx.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::contract("mask indices must be sorted and unique"));
            }
        }
        if let Some(&last) = self.masked_idx.last() {
            if last >= n_real {
                return Err(Error::contract(format!(
                    "mask index {last} out of range for {n_real} tokens"
                )));
            }
        }
        Ok(())
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.masked_idx.binary_search(&i).is_ok()
    }

    pub fn visible_idx(&self) -> Vec<usize> {
        (0..self.n_real).filter(|&i| !self.is_masked(i)).collect()
    }

    pub fn num_visible(&self) -> usize {
        self.n_real - self.masked_idx.len()
    }
}

/// `floor(ratio·n)`, at least 1 and at most `n − 1`.
pub fn mask_count(n_real: usize, ratio: f64) -> usize {
    // The epsilon absorbs representation error such as 0.29·100 = 28.999…
    let raw = (ratio * n_real as f64 + 1e-9).floor() as usize;
    raw.max(1).min(n_real.saturating_sub(1))
}

fn check_args(n_real: usize, ratio: f64) -> Result<()> {
    if n_real < 2 {
        return Err(Error::contract(format!(
            "nothing maskable: sequence has {n_real} token(s)"
        )));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::contract(format!("mask ratio {ratio} outside (0, 1)")));
    }
    Ok(())
}

/// Uniform sample without replacement of `mask_count(n_real, ratio)` indices.
pub fn random_mask<R: Rng + ?Sized>(n_real: usize, ratio: f64, rng: &mut R) -> Result<MaskPlan> {
    check_args(n_real, ratio)?;
    let mut idx = sample(rng, n_real, mask_count(n_real, ratio)).into_vec();
    idx.sort_unstable();
    Ok(MaskPlan {
        masked_idx: idx,
        strategy: MaskStrategy::Random,
        ratio,
        n_real,
    })
}

/// Cosine similarity of each embedding with its predecessor; the first
/// token scores `+1`.
pub fn predecessor_similarity(embeddings: &Tensor<f32>) -> Result<Vec<f64>> {
    let n = embeddings.rows();
    let mut s = Vec::with_capacity(n);
    for i in 0..n {
        if i == 0 {
            if embeddings.row(0).iter().all(|&v| v == 0.0) {
                return Err(Error::contract("embedding 0 has zero norm"));
            }
            s.push(1.0);
            continue;
        }
        let c = cosine(embeddings.row(i), embeddings.row(i - 1))
            .ok_or_else(|| Error::contract(format!("embedding {} or {} has zero norm", i - 1, i)))?;
        s.push(c);
    }
    Ok(s)
}

/// Mask the embeddings least similar to their predecessor, i.e. the most
/// abrupt changes. Ties go to the lower index. Deterministic.
pub fn semantic_mask(embeddings: &Tensor<f32>, ratio: f64) -> Result<MaskPlan> {
    let n = embeddings.rows();
    check_args(n, ratio)?;
    let s = predecessor_similarity(embeddings)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]).then(a.cmp(&b)));
    let mut idx: Vec<usize> = order[..mask_count(n, ratio)].to_vec();
    idx.sort_unstable();
    Ok(MaskPlan {
        masked_idx: idx,
        strategy: MaskStrategy::Semantic,
        ratio,
        n_real: n,
    })
}

pub fn make_plan<R: Rng + ?Sized>(
    strategy: MaskStrategy,
    embeddings: &Tensor<f32>,
    ratio: f64,
    rng: &mut R,
) -> Result<MaskPlan> {
    match strategy {
        MaskStrategy::Random => random_mask(embeddings.rows(), ratio, rng),
        MaskStrategy::Semantic => semantic_mask(embeddings, ratio),
    }
}

/// Interleave visible and masked items back into original index order.
pub fn reassemble<T: Clone>(plan: &MaskPlan, visible: &[T], masked: &[T]) -> Result<Vec<T>> {
    if visible.len() != plan.num_visible() || masked.len() != plan.masked_idx.len() {
        return Err(Error::contract("reassemble: counts do not match the plan"));
    }
    let (mut v, mut m) = (visible.iter(), masked.iter());
    Ok((0..plan.n_real)
        .map(|i| {
            if plan.is_masked(i) {
                m.next().expect("counted").clone()
            } else {
                v.next().expect("counted").clone()
            }
        })
        .collect())
}

/// Encoder input: only visible tokens, padded to the longest visible set.
#[derive(Clone, Debug, PartialEq)]
pub struct VisibleBatch<T> {
    /// `[batch·len, d]`; padded rows hold arbitrary finite values.
    pub tokens: Tensor<T>,
    /// Original segment index of each row (used for positional encoding).
    pub positions: Vec<usize>,
    pub keep: Vec<bool>,
    pub batch: usize,
    pub len: usize,
}

impl<T: Scalar> VisibleBatch<T> {
    /// Every row of every sequence visible.
    pub fn from_sequences(seqs: &[&Tensor<T>]) -> Result<Self> {
        let first = seqs
            .first()
            .ok_or_else(|| Error::contract("empty visible batch"))?;
        let d = first.cols();
        let len = seqs.iter().map(|s| s.rows()).max().unwrap_or(0);
        if len == 0 {
            return Err(Error::contract("encoder input has an empty visible set"));
        }
        let mut data = vec![T::zero(); seqs.len() * len * d];
        let mut keep = vec![false; seqs.len() * len];
        let mut positions = vec![0; seqs.len() * len];
        for (b, s) in seqs.iter().enumerate() {
            if s.cols() != d {
                return Err(Error::DimMismatch {
                    context: "visible batch".into(),
                    expected: d,
                    found: s.cols(),
                });
            }
            data[b * len * d..(b * len + s.rows()) * d].copy_from_slice(s.data());
            for i in 0..len {
                keep[b * len + i] = i < s.rows();
                positions[b * len + i] = i;
            }
        }
        Ok(VisibleBatch {
            tokens: Tensor::new(vec![seqs.len() * len, d], data)?,
            positions,
            keep,
            batch: seqs.len(),
            len,
        })
    }

    pub fn cast<U: Scalar>(&self) -> VisibleBatch<U> {
        VisibleBatch {
            tokens: self.tokens.cast(),
            positions: self.positions.clone(),
            keep: self.keep.clone(),
            batch: self.batch,
            len: self.len,
        }
    }

    /// Real tokens per sequence, excluding CLS.
    pub fn counts(&self) -> Vec<usize> {
        self.keep
            .chunks(self.len)
            .map(|c| c.iter().filter(|&&k| k).count())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderSlot {
    /// Row of the encoder output (`[batch·(len+1), d]`, CLS first).
    Visible(usize),
    /// Filled with the shared mask token.
    Mask,
    Pad,
}

/// Decoder input layout: `batch` sequences of `len` slots in original order.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderLayout {
    pub batch: usize,
    pub len: usize,
    pub slots: Vec<DecoderSlot>,
    pub n_real: Vec<usize>,
    /// Filler for PAD slots: zeros when `None`, seeded noise otherwise.
    pub pad_seed: Option<u64>,
}

impl DecoderLayout {
    pub fn keep(&self) -> Vec<bool> {
        self.slots.iter().map(|s| !matches!(s, DecoderSlot::Pad)).collect()
    }
}

/// A batch split by its mask plans.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedBatch<T> {
    pub visible: VisibleBatch<T>,
    pub decoder: DecoderLayout,
    /// Original masked embeddings, ordered by (sequence, index).
    pub targets: Tensor<T>,
    /// Decoder output row of each target.
    pub target_rows: Vec<usize>,
    pub plans: Vec<MaskPlan>,
}

impl<T: Scalar> MaskedBatch<T> {
    pub fn cast<U: Scalar>(&self) -> MaskedBatch<U> {
        MaskedBatch {
            visible: self.visible.cast(),
            decoder: self.decoder.clone(),
            targets: self.targets.cast(),
            target_rows: self.target_rows.clone(),
            plans: self.plans.clone(),
        }
    }

    /// Tokens the encoder attends over: visible segments plus one CLS each.
    pub fn encoder_tokens(&self) -> usize {
        self.plans.iter().map(|p| p.num_visible() + 1).sum()
    }

    /// Append `extra` PAD slots to both the encoder and decoder sides and
    /// overwrite every PAD row (old and new) with seeded noise.
    pub fn with_extra_padding(&self, extra: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = &self.visible;
        let d = v.tokens.cols();
        let new_len = v.len + extra;
        let mut data = Vec::with_capacity(v.batch * new_len * d);
        let mut keep = Vec::with_capacity(v.batch * new_len);
        let mut positions = Vec::with_capacity(v.batch * new_len);
        for b in 0..v.batch {
            for i in 0..new_len {
                if i < v.len && v.keep[b * v.len + i] {
                    data.extend_from_slice(v.tokens.row(b * v.len + i));
                    keep.push(true);
                    positions.push(v.positions[b * v.len + i]);
                } else {
                    data.extend((0..d).map(|_| T::of(rng.random_range(-10.0..10.0))));
                    keep.push(false);
                    positions.push(i);
                }
            }
        }
        let dec = &self.decoder;
        let dec_len = dec.len + extra;
        let mut slots = Vec::with_capacity(dec.batch * dec_len);
        for b in 0..dec.batch {
            for i in 0..dec_len {
                slots.push(match dec.slots.get(b * dec.len + i).filter(|_| i < dec.len) {
                    Some(&DecoderSlot::Visible(r)) => {
                        DecoderSlot::Visible(b * (new_len + 1) + r % (v.len + 1))
                    }
                    Some(&s) => s,
                    None => DecoderSlot::Pad,
                });
            }
        }
        let target_rows = self
            .target_rows
            .iter()
            .map(|&r| (r / dec.len) * dec_len + r % dec.len)
            .collect();
        Ok(MaskedBatch {
            visible: VisibleBatch {
                tokens: Tensor::new(vec![v.batch * new_len, d], data)?,
                positions,
                keep,
                batch: v.batch,
                len: new_len,
            },
            decoder: DecoderLayout {
                batch: dec.batch,
                len: dec_len,
                slots,
                n_real: dec.n_real.clone(),
                pad_seed: Some(rng.random()),
            },
            targets: self.targets.clone(),
            target_rows,
            plans: self.plans.clone(),
        })
    }
}

/// Split `batch` into encoder input, decoder layout and targets.
pub fn apply_mask(batch: &Batch, plans: &[MaskPlan]) -> Result<MaskedBatch<f32>> {
    let bsz = batch.batch_size();
    if plans.len() != bsz {
        return Err(Error::contract(format!(
            "{} plans for a batch of {bsz}",
            plans.len()
        )));
    }
    let d = batch.dim();
    for (plan, &n) in plans.iter().zip(&batch.real_len) {
        plan.check(n)?;
    }
    let vis_len = plans.iter().map(MaskPlan::num_visible).max().unwrap_or(0);
    let dec_len = batch.real_len.iter().copied().max().unwrap_or(0);

    let mut vis = vec![crate::corpus::PAD_VALUE; bsz * vis_len * d];
    let mut vis_keep = vec![false; bsz * vis_len];
    let mut vis_pos = vec![0usize; bsz * vis_len];
    let mut slots = vec![DecoderSlot::Pad; bsz * dec_len];
    let mut targets = Vec::new();
    let mut target_rows = Vec::new();

    for (b, plan) in plans.iter().enumerate() {
        let mut rank = 0;
        for i in 0..plan.n_real {
            let tok = batch.token(b, i);
            if plan.is_masked(i) {
                slots[b * dec_len + i] = DecoderSlot::Mask;
                targets.extend_from_slice(tok);
                target_rows.push(b * dec_len + i);
            } else {
                let row = b * vis_len + rank;
                vis[row * d..(row + 1) * d].copy_from_slice(tok);
                vis_keep[row] = true;
                vis_pos[row] = batch.positions[b * batch.max_len() + i];
                slots[b * dec_len + i] = DecoderSlot::Visible(b * (vis_len + 1) + 1 + rank);
                rank += 1;
            }
        }
        for r in rank..vis_len {
            vis_pos[b * vis_len + r] = r;
        }
    }
    let m = target_rows.len();
    Ok(MaskedBatch {
        visible: VisibleBatch {
            tokens: Tensor::new(vec![bsz * vis_len, d], vis)?,
            positions: vis_pos,
            keep: vis_keep,
            batch: bsz,
            len: vis_len,
        },
        decoder: DecoderLayout {
            batch: bsz,
            len: dec_len,
            slots,
            n_real: batch.real_len.clone(),
            pad_seed: None,
        },
        targets: Tensor::new(vec![m, d], targets)?,
        target_rows,
        plans: plans.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_batch, EmbeddingSequence};
    use proptest::prelude::*;

    fn rows(v: &[[f32; 2]]) -> Tensor<f32> {
        Tensor::matrix(v.len(), 2, v.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn counts_follow_floor_with_minimum_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(random_mask(10, 0.5, &mut rng).unwrap().masked_idx.len(), 5);
        assert_eq!(random_mask(3, 0.1, &mut rng).unwrap().masked_idx.len(), 1);
        assert_eq!(mask_count(100, 0.29), 29);
        assert!(matches!(random_mask(1, 0.5, &mut rng), Err(Error::Contract(_))));
        assert!(random_mask(5, 0.0, &mut rng).is_err());
        assert!(random_mask(5, 1.0, &mut rng).is_err());
    }

    #[test]
    fn semantic_alternating_sequence() {
        let e = rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]);
        let p = semantic_mask(&e, 0.5).unwrap();
        // 0-based: similarities [+1, 0, 0, 0] → lowest two by index are 1, 2
        assert_eq!(p.masked_idx, vec![1, 2]);
    }

    #[test]
    fn semantic_constant_sequence_ties_to_lower_index() {
        let e = rows(&[[1.0, 0.0]; 4]);
        assert_eq!(semantic_mask(&e, 0.5).unwrap().masked_idx, vec![0, 1]);
    }

    #[test]
    fn semantic_zero_norm_is_an_error() {
        let e = rows(&[[1.0, 0.0], [0.0, 0.0], [1.0, 0.0]]);
        assert!(matches!(semantic_mask(&e, 0.5), Err(Error::Contract(_))));
    }

    #[test]
    fn semantic_always_catches_the_scene_cut() {
        // Smoothly drifting sequence with one hard cut at index 5.
        let mut v = Vec::new();
        for i in 0..10 {
            let a = if i < 5 { 0.05 * i as f32 } else { 1.5 + 0.05 * i as f32 };
            v.push([a.cos(), a.sin()]);
        }
        let e = rows(&v);
        for ratio in [0.05, 0.1, 0.3, 0.5, 0.9] {
            assert!(semantic_mask(&e, ratio).unwrap().is_masked(5), "ratio {ratio}");
        }
    }

    #[test]
    fn apply_mask_splits_visible_and_targets() {
        let seq = EmbeddingSequence::new(
            "v",
            rows(&[[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]]),
        )
        .unwrap();
        let batch = build_batch(&[seq], 8).unwrap();
        let plan = MaskPlan::new(4, vec![1, 2], MaskStrategy::Random, 0.5).unwrap();
        let mb = apply_mask(&batch, &[plan]).unwrap();
        assert_eq!(mb.visible.len, 2);
        assert_eq!(mb.visible.tokens.data(), &[1.0, 1.0, 4.0, 4.0]);
        assert_eq!(mb.visible.positions, vec![0, 3]);
        assert_eq!(mb.targets.data(), &[2.0, 2.0, 3.0, 3.0]);
        assert_eq!(mb.target_rows, vec![1, 2]);
        assert_eq!(
            mb.decoder.slots,
            vec![
                DecoderSlot::Visible(1),
                DecoderSlot::Mask,
                DecoderSlot::Mask,
                DecoderSlot::Visible(2)
            ]
        );
        assert_eq!(mb.encoder_tokens(), 3);
    }

    #[test]
    fn invalid_plans_are_rejected() {
        assert!(MaskPlan::new(4, vec![], MaskStrategy::Random, 0.5).is_err());
        assert!(MaskPlan::new(4, vec![4], MaskStrategy::Random, 0.5).is_err());
        assert!(MaskPlan::new(4, vec![2, 1], MaskStrategy::Random, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn visible_and_masked_partition(n in 2usize..64, ratio in 0.05f64..0.95, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_mask(n, ratio, &mut rng).unwrap();
            let vis = p.visible_idx();
            prop_assert_eq!(vis.len() + p.masked_idx.len(), n);
            let back = reassemble(&p, &vis, &p.masked_idx).unwrap();
            prop_assert_eq!(back, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn semantic_is_scale_invariant(
            data in proptest::collection::vec(-1.0f32..1.0, 8 * 3),
            scale in 0.01f32..100.0,
        ) {
            let e = Tensor::matrix(8, 3, data.clone()).unwrap();
            prop_assume!((0..8).all(|i| e.row(i).iter().any(|v| v.abs() > 1e-3)));
            let scaled = Tensor::matrix(8, 3, data.iter().map(|v| v * scale).collect()).unwrap();
            let a = semantic_mask(&e, 0.4).unwrap();
            let b = semantic_mask(&scaled, 0.4).unwrap();
            // cosine ties can be broken differently only at the last ulp
            let sa = predecessor_similarity(&e).unwrap();
            let mut sorted = sa.clone();
            sorted.sort_by(f64::total_cmp);
            let k = a.masked_idx.len();
            prop_assume!(k >= sorted.len() || (sorted[k] - sorted[k - 1]).abs() > 1e-9);
            prop_assert_eq!(a.masked_idx, b.masked_idx);
        }
    }
}
