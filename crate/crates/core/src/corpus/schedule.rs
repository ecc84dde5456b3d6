use rand::Rng;

use super::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Shortest window drawn by [`sample_window`].
pub const DEFAULT_MIN_WINDOW: usize = 2;

/// Split `[0, duration_s)` into consecutive `segment_len_s` intervals. The
/// final interval keeps any shorter remainder.
pub fn segment_schedule(duration_s: f64, segment_len_s: f64) -> Result<Vec<(f64, f64)>> {
    if !(duration_s > 0.0 && segment_len_s > 0.0) || !duration_s.is_finite() || !segment_len_s.is_finite() {
        return Err(Error::contract(format!(
            "segment_schedule needs positive finite inputs, got ({duration_s}, {segment_len_s})"
        )));
    }
    let count = (duration_s / segment_len_s).ceil() as usize;
    Ok((0..count)
        .map(|i| {
            let start = i as f64 * segment_len_s;
            (start, ((i + 1) as f64 * segment_len_s).min(duration_s))
        })
        .collect())
}

/// Draw a contiguous window: length uniform on `{min_len, …, N}`, start
/// uniform over the valid offsets. Sequences shorter than two segments are
/// returned whole.
pub fn sample_window<R: Rng + ?Sized>(
    seq: &EmbeddingSequence,
    min_len: usize,
    rng: &mut R,
) -> EmbeddingSequence {
    let n = seq.len();
    if n < 2 {
        return seq.clone();
    }
    let lo = min_len.clamp(1, n);
    let k = rng.random_range(lo..=n);
    let start = rng.random_range(0..=n - k);
    seq.slice(start, k).expect("window within bounds")
}

/// Merge every `factor` consecutive segments into one by averaging and
/// renormalizing, emulating a longer segment length.
pub fn resegment(seq: &EmbeddingSequence, factor: usize) -> Result<EmbeddingSequence> {
    if factor == 0 {
        return Err(Error::contract("resegment factor must be at least 1"));
    }
    if factor == 1 {
        return Ok(seq.clone());
    }
    let d = seq.dim();
    let n_out = seq.len().div_ceil(factor);
    let mut data = Vec::with_capacity(n_out * d);
    let mut caption_ids = Vec::with_capacity(n_out);
    for g in 0..n_out {
        let rows = g * factor..((g + 1) * factor).min(seq.len());
        let mut acc = vec![0.0f64; d];
        for r in rows.clone() {
            for (a, &v) in acc.iter_mut().zip(seq.row(r)) {
                *a += v as f64;
            }
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        let norm = if norm > 0.0 { norm } else { 1.0 };
        data.extend(acc.iter().map(|v| (v / norm) as f32));
        if let Some(ids) = &seq.caption_ids {
            caption_ids.push(ids[rows.start].clone());
        }
    }
    let mut out = seq.clone();
    out.embeddings = Tensor::matrix(n_out, d, data)?;
    out.segment_len_s = seq.segment_len_s * factor as f64;
    out.caption_ids = seq.caption_ids.as_ref().map(|_| caption_ids);
    Ok(out)
}
