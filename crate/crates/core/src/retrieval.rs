//! Interpreting reconstructions by nearest-caption lookup.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{cosine, EmbeddingSequence};
use crate::error::{Error, Result};
use crate::masking::{MaskStrategy, MaskedBatch};
use crate::model::LvMae;
use crate::numerics::Tensor;
use crate::par;
use crate::training::masked_batches;

/// Captions with text embeddings in the segment-embedding space.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionBank {
    ids: Vec<String>,
    texts: Vec<String>,
    embeddings: Tensor<f32>,
    index: HashMap<String, usize>,
}

pub fn build_caption_bank(
    captions: &[(String, String)],
    embeddings: &Tensor<f32>,
    normalize: bool,
) -> Result<CaptionBank> {
    if embeddings.shape().len() != 2 || captions.len() != embeddings.rows() {
        return Err(Error::contract(format!(
            "{} captions for an embedding matrix of shape {:?}",
            captions.len(),
            embeddings.shape()
        )));
    }
    let d = embeddings.cols();
    let mut index = HashMap::with_capacity(captions.len());
    let mut data = Vec::with_capacity(embeddings.numel());
    for (i, (id, _)) in captions.iter().enumerate() {
        if index.insert(id.clone(), i).is_some() {
            return Err(Error::contract(format!("duplicate caption id {id:?}")));
        }
        let row = embeddings.row(i);
        let norm = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::contract(format!("caption {id:?} has a zero embedding")));
        }
        if normalize {
            data.extend(row.iter().map(|&v| (v as f64 / norm) as f32));
        } else {
            data.extend_from_slice(row);
        }
    }
    Ok(CaptionBank {
        ids: captions.iter().map(|c| c.0.clone()).collect(),
        texts: captions.iter().map(|c| c.1.clone()).collect(),
        embeddings: Tensor::matrix(captions.len(), d, data)?,
        index,
    })
}

impl CaptionBank {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn text(&self, id: &str) -> Option<&str> {
        self.index.get(id).map(|&i| self.texts[i].as_str())
    }

    pub fn embedding(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| self.embeddings.row(i))
    }
}

/// `k` best captions by cosine, descending; equal scores order by id.
pub fn retrieve_topk(query: &[f32], bank: &CaptionBank, k: usize) -> Result<Vec<(String, f64)>> {
    if k == 0 || k > bank.len() {
        return Err(Error::contract(format!("k={k} outside 1..={}", bank.len())));
    }
    if query.len() != bank.dim() {
        return Err(Error::DimMismatch {
            context: "retrieval query".into(),
            expected: bank.dim(),
            found: query.len(),
        });
    }
    if query.iter().all(|&v| v == 0.0) {
        return Err(Error::contract("zero-norm retrieval query"));
    }
    let mut scored: Vec<(usize, f64)> = (0..bank.len())
        .map(|i| (i, cosine(query, bank.embeddings.row(i)).expect("nonzero rows")))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| bank.ids[a.0].cmp(&bank.ids[b.0])));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(i, s)| (bank.ids[i].clone(), s))
        .collect())
}

/// Anything that predicts the masked rows of a batch, `[M × d]` in target
/// order.
pub trait Reconstructor: Sync {
    fn reconstruct(&self, mb: &MaskedBatch<f32>) -> Result<Tensor<f32>>;
    fn max_tokens(&self) -> usize;
}

impl Reconstructor for LvMae<f32> {
    fn reconstruct(&self, mb: &MaskedBatch<f32>) -> Result<Tensor<f32>> {
        LvMae::reconstruct(self, mb)
    }

    fn max_tokens(&self) -> usize {
        self.config().max_tokens
    }
}

/// Returns the ground-truth embeddings. Test hook for the scoring path.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleDecoder;

impl Reconstructor for OracleDecoder {
    fn reconstruct(&self, mb: &MaskedBatch<f32>) -> Result<Tensor<f32>> {
        Ok(mb.targets.clone())
    }

    fn max_tokens(&self) -> usize {
        usize::MAX
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotResult {
    pub video_id: String,
    pub index: usize,
    pub truth: String,
    pub top: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub k: usize,
    pub strategy: MaskStrategy,
    pub ratio: f64,
    pub seed: u64,
    pub slots: Vec<SlotResult>,
}

impl RetrievalReport {
    pub fn hits_at(&self, k: usize) -> usize {
        self.slots
            .iter()
            .filter(|s| s.top.iter().take(k).any(|(id, _)| *id == s.truth))
            .count()
    }

    /// Fraction of masked slots whose caption is among the first `k`
    /// retrieved (`k` is capped at the report's depth).
    pub fn recall_at(&self, k: usize) -> f64 {
        if self.slots.is_empty() {
            return 0.0;
        }
        self.hits_at(k.min(self.k)) as f64 / self.slots.len() as f64
    }

    /// One line per masked slot: video, index, truth, then `id:score` pairs.
    pub fn write_text(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = format!(
            "# strategy={} ratio={} seed={} k={} slots={}\n",
            self.strategy,
            self.ratio,
            self.seed,
            self.k,
            self.slots.len()
        );
        for k in 1..=self.k {
            out.push_str(&format!("# R@{k}={:.6}\n", self.recall_at(k)));
        }
        for s in &self.slots {
            out.push_str(&format!("{}\t{}\t{}", s.video_id, s.index, s.truth));
            for (id, score) in &s.top {
                out.push_str(&format!("\t{id}:{score:.6}"));
            }
            out.push('\n');
        }
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Mask every sequence, reconstruct, and retrieve the top `k` captions for
/// each masked slot.
#[allow(clippy::too_many_arguments)]
pub fn recall_at_k<R: Reconstructor>(
    model: &R,
    corpus: &[EmbeddingSequence],
    bank: &CaptionBank,
    strategy: MaskStrategy,
    ratio: f64,
    seed: u64,
    k: usize,
) -> Result<RetrievalReport> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::contract(format!("mask ratio {ratio} outside (0, 1)")));
    }
    if let Some(s) = corpus.iter().find(|s| s.caption_ids.is_none()) {
        return Err(Error::contract(format!("sequence {} has no caption ids", s.video_id)));
    }
    const BATCH: usize = 16;
    let batches = masked_batches(corpus, strategy, ratio, seed, BATCH, model.max_tokens())?;
    let per_batch = par::try_map_indexed(batches.len(), |bi| -> Result<Vec<SlotResult>> {
        let mb = &batches[bi];
        let rec = model.reconstruct(mb)?;
        let mut out = Vec::with_capacity(rec.rows());
        let mut m = 0;
        for (b, plan) in mb.plans.iter().enumerate() {
            let seq = &corpus[bi * BATCH + b];
            let ids = seq.caption_ids.as_ref().expect("checked above");
            for &i in &plan.masked_idx {
                out.push(SlotResult {
                    video_id: seq.video_id.clone(),
                    index: i,
                    truth: ids[i].clone(),
                    top: retrieve_topk(rec.row(m), bank, k)?,
                });
                m += 1;
            }
        }
        Ok(out)
    })?;
    Ok(RetrievalReport {
        k,
        strategy,
        ratio,
        seed,
        slots: per_batch.into_iter().flatten().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank() -> CaptionBank {
        let caps = vec![
            ("b".to_string(), "second".to_string()),
            ("a".to_string(), "first".to_string()),
            ("c".to_string(), "third".to_string()),
        ];
        let emb = Tensor::matrix(3, 2, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        build_caption_bank(&caps, &emb, false).unwrap()
    }

    #[test]
    fn self_retrieval_and_tie_break() {
        let b = bank();
        let top = retrieve_topk(&[0.0, 2.0], &b, 1).unwrap();
        assert_eq!(top[0].0, "c");
        assert!((top[0].1 - 1.0).abs() < 1e-12);
        let top = retrieve_topk(&[1.0, 0.0], &b, 3).unwrap();
        let ids: Vec<_> = top.iter().map(|t| t.0.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn bank_validation() {
        let caps = vec![("a".to_string(), String::new()), ("a".to_string(), String::new())];
        let emb = Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap();
        assert!(build_caption_bank(&caps, &emb, false).is_err());
        assert!(build_caption_bank(&caps[..1], &emb, false).is_err());
        let b = bank();
        assert_eq!(b.len(), 3);
        assert_eq!(b.text("a"), Some("first"));
    }

    #[test]
    fn bad_queries() {
        let b = bank();
        assert!(matches!(retrieve_topk(&[0.0, 0.0], &b, 1), Err(Error::Contract(_))));
        assert!(retrieve_topk(&[1.0, 0.0], &b, 4).is_err());
        assert!(retrieve_topk(&[1.0, 0.0, 0.0], &b, 1).is_err());
    }
}
