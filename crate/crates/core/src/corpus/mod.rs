//! Embedding sequences, their on-disk format, synthetic generation, window
//! sampling and padded batching.

mod batch;
mod format;
mod schedule;
mod synth;

use std::collections::BTreeMap;

pub use batch::{build_batch, Batch, PAD_VALUE};
pub use format::{
    corpus_digest, read_blob, read_caption_files, read_corpus, write_blob, write_caption_files,
    write_corpus, Corpus, CorpusHeader, ManifestEntry, BLOB_MAGIC, FORMAT_VERSION,
};
pub use schedule::{resegment, sample_window, segment_schedule, DEFAULT_MIN_WINDOW};
pub use synth::{synth_generate, synth_order_pairs, SynthConfig, SynthCorpus, ORDER_FIRST, ORDER_SECOND};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Default short-segment length in seconds.
pub const DEFAULT_SEGMENT_LEN_S: f64 = 5.0;

/// One long video as the ordered embeddings of its consecutive segments.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSequence {
    pub video_id: String,
    /// `N×d`, one row per segment.
    pub embeddings: Tensor<f32>,
    pub segment_len_s: f64,
    pub encoder_id: String,
    /// Caption reference per segment, when known.
    pub caption_ids: Option<Vec<String>>,
    /// Downstream labels keyed by task name.
    pub labels: BTreeMap<String, f64>,
}

impl EmbeddingSequence {
    pub fn new(video_id: impl Into<String>, embeddings: Tensor<f32>) -> Result<Self> {
        let video_id = video_id.into();
        if embeddings.shape().len() != 2 || embeddings.rows() == 0 || embeddings.cols() == 0 {
            return Err(Error::contract(format!(
                "sequence {video_id}: embeddings must be a non-empty N×d matrix, got {:?}",
                embeddings.shape()
            )));
        }
        Ok(EmbeddingSequence {
            video_id,
            embeddings,
            segment_len_s: DEFAULT_SEGMENT_LEN_S,
            encoder_id: String::from("unknown"),
            caption_ids: None,
            labels: BTreeMap::new(),
        })
    }

    pub fn with_caption_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.len() {
            return Err(Error::contract(format!(
                "sequence {}: {} caption ids for {} segments",
                self.video_id,
                ids.len(),
                self.len()
            )));
        }
        self.caption_ids = Some(ids);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.embeddings.row(i)
    }

    /// Contiguous sub-sequence `[start, start+len)`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.len() {
            return Err(Error::contract(format!(
                "slice [{start}, {}) outside sequence of length {}",
                start + len,
                self.len()
            )));
        }
        let d = self.dim();
        let data = self.embeddings.data()[start * d..(start + len) * d].to_vec();
        Ok(EmbeddingSequence {
            embeddings: Tensor::matrix(len, d, data)?,
            caption_ids: self
                .caption_ids
                .as_ref()
                .map(|ids| ids[start..start + len].to_vec()),
            ..self.clone()
        })
    }

    /// Scale every row to unit L2 norm. Zero rows are an error.
    pub fn normalize_rows(&mut self) -> Result<()> {
        let d = self.dim();
        for (i, row) in self.embeddings.data_mut().chunks_mut(d).enumerate() {
            let norm = row.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::contract(format!("row {i} has zero norm")));
            }
            row.iter_mut().for_each(|v| *v = (*v as f64 / norm) as f32);
        }
        Ok(())
    }

    pub fn has_unit_rows(&self, tol: f64) -> bool {
        (0..self.len()).all(|i| {
            let n = self.row(i).iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            (n - 1.0).abs() <= tol
        })
    }
}

/// Cosine similarity in f64. Returns `None` when either vector has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> Option<f64> {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some(dot / (na.sqrt() * nb.sqrt()))
    }
}
