//! Synthetic corpora with planted temporal structure.
//!
//! `K` unit-norm prototype vectors play the role of recurring scene types.
//! Each video is a Markov walk over prototypes that prefers to stay in the
//! current scene and otherwise moves "forward" (`k → k+1 mod K` most likely,
//! sharpened by the temperature). A segment embedding is its prototype plus
//! isotropic Gaussian noise of expected norm `noise`, renormalized.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Prototype whose first appearance defines the order-sensitive label.
pub const ORDER_FIRST: usize = 0;
/// Prototype it is compared against.
pub const ORDER_SECOND: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_prototypes: usize,
    pub embedding_dim: usize,
    pub num_videos: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability of staying on the current prototype.
    pub self_transition: f64,
    /// Temperature of the forward-offset distribution for moves.
    pub temperature: f64,
    /// Expected L2 norm of the noise added to each segment.
    pub noise: f64,
    /// Seeds the prototypes.
    pub seed: u64,
    /// Selects an independent draw of videos over the same prototypes.
    pub split: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_prototypes: 8,
            embedding_dim: 64,
            num_videos: 200,
            min_len: 8,
            max_len: 32,
            self_transition: 0.6,
            temperature: 0.25,
            noise: 0.1,
            seed: 7,
            split: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::contract(format!("synth config: {m}")));
        if self.num_prototypes < 2 {
            return bad("need at least two prototypes");
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive");
        }
        if self.min_len < 2 || self.max_len < self.min_len {
            return bad("need 2 <= min_len <= max_len");
        }
        if !(0.0..=1.0).contains(&self.self_transition) {
            return bad("self_transition must be a probability");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if !(self.noise >= 0.0) {
            return bad("noise must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub sequences: Vec<EmbeddingSequence>,
    /// `K×d`, unit rows.
    pub prototypes: Tensor<f32>,
    /// `(caption_id, text)` per prototype, aligned with `prototypes`.
    pub captions: Vec<(String, String)>,
    /// Prototype index of every segment.
    pub walks: Vec<Vec<usize>>,
}

pub fn caption_id(k: usize) -> String {
    format!("prototype_{k}")
}

fn draw_prototypes(cfg: &SynthConfig) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let (k, d) = (cfg.num_prototypes, cfg.embedding_dim);
    let mut data = Vec::with_capacity(k * d);
    for _ in 0..k {
        let v: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        data.extend(v.iter().map(|x| (x / norm) as f32));
    }
    Tensor::from_parts(vec![k, d], data)
}

fn video_rng(cfg: &SynthConfig, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1 + 2 * cfg.split + purpose);
    rng
}

/// One Markov step over `k` states.
fn step<R: Rng>(state: usize, k: usize, cfg: &SynthConfig, rng: &mut R) -> usize {
    if k == 1 || rng.random::<f64>() < cfg.self_transition {
        return state;
    }
    let weights: Vec<f64> = (1..k)
        .map(|o| (-((o - 1) as f64) / cfg.temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return (state + i + 1) % k;
        }
        u -= w;
    }
    (state + k - 1) % k
}

fn walk<R: Rng>(len: usize, k: usize, cfg: &SynthConfig, rng: &mut R) -> Vec<usize> {
    let mut s = rng.random_range(0..k);
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        if i > 0 {
            s = step(s, k, cfg, rng);
        }
        out.push(s);
    }
    out
}

fn embed_segment<R: Rng>(proto: &[f32], cfg: &SynthConfig, rng: &mut R, out: &mut Vec<f32>) {
    if cfg.noise == 0.0 {
        out.extend_from_slice(proto);
        return;
    }
    let d = proto.len();
    let normal = Normal::new(0.0, cfg.noise / (d as f64).sqrt()).expect("valid sigma");
    let v: Vec<f64> = proto
        .iter()
        .map(|&p| p as f64 + normal.sample(rng))
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    out.extend(v.iter().map(|x| (x / norm) as f32));
}

fn labels_for(walk: &[usize], k: usize) -> BTreeMap<String, f64> {
    let mut counts = vec![0usize; k];
    for &s in walk {
        counts[s] += 1;
    }
    let dominant = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let first = |p: usize| walk.iter().position(|&s| s == p).unwrap_or(usize::MAX);
    let a = first(ORDER_FIRST);
    let b = first(ORDER_SECOND);
    let order = if a != usize::MAX && a < b { 1.0 } else { 0.0 };
    let mut labels = BTreeMap::new();
    labels.insert("dominant".to_string(), dominant as f64);
    labels.insert("order".to_string(), order);
    labels
}

fn assemble(
    id: String,
    walk: &[usize],
    rows: Vec<f32>,
    d: usize,
    labels: BTreeMap<String, f64>,
) -> Result<EmbeddingSequence> {
    let mut seq = EmbeddingSequence::new(id, Tensor::matrix(walk.len(), d, rows)?)?;
    seq.encoder_id = "synthetic".into();
    seq.labels = labels;
    seq.with_caption_ids(walk.iter().map(|&k| caption_id(k)).collect())
}

fn captions(k: usize) -> Vec<(String, String)> {
    (0..k)
        .map(|i| (caption_id(i), format!("synthetic scene type {i}")))
        .collect()
}

/// Generate a corpus, its caption bank and per-video labels.
///
/// Labels: `dominant` (most frequent prototype), `order` (1 when prototype
/// [`ORDER_FIRST`] first appears before [`ORDER_SECOND`]) and `split`
/// (every fifth video is held out with value 1).
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let prototypes = draw_prototypes(cfg);
    let (k, d) = (cfg.num_prototypes, cfg.embedding_dim);
    let mut rng = video_rng(cfg, 0);
    let mut sequences = Vec::with_capacity(cfg.num_videos);
    let mut walks = Vec::with_capacity(cfg.num_videos);
    for v in 0..cfg.num_videos {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let w = walk(len, k, cfg, &mut rng);
        let mut rows = Vec::with_capacity(len * d);
        for &s in &w {
            embed_segment(prototypes.row(s), cfg, &mut rng, &mut rows);
        }
        let mut labels = labels_for(&w, k);
        labels.insert("split".into(), if v % 5 == 4 { 1.0 } else { 0.0 });
        sequences.push(assemble(
            format!("synth_{}_{v:05}", cfg.split),
            &w,
            rows,
            d,
            labels,
        )?);
        walks.push(w);
    }
    Ok(SynthCorpus {
        sequences,
        prototypes,
        captions: captions(k),
        walks,
    })
}

/// Order-sensitive task with matched content.
///
/// Each pair shares one background walk (over prototypes other than
/// [`ORDER_FIRST`] and [`ORDER_SECOND`]) and one run of each of the two
/// marked prototypes. The twins differ only in which run comes first; their
/// rows are the same multiset, so any function of the mean embedding gives
/// both twins the same answer while their `order` labels differ.
pub fn synth_order_pairs(cfg: &SynthConfig, num_pairs: usize) -> Result<SynthCorpus> {
    cfg.validate()?;
    if cfg.num_prototypes < 3 {
        return Err(Error::contract("order pairs need at least three prototypes"));
    }
    let prototypes = draw_prototypes(cfg);
    let (k, d) = (cfg.num_prototypes, cfg.embedding_dim);
    let mut rng = video_rng(cfg, 1);
    let mut sequences = Vec::with_capacity(2 * num_pairs);
    let mut walks = Vec::with_capacity(2 * num_pairs);
    let min_len = cfg.min_len.max(6);
    let max_len = cfg.max_len.max(min_len);
    for p in 0..num_pairs {
        let len = rng.random_range(min_len..=max_len);
        let ra = rng.random_range(2..=3);
        let rb = rng.random_range(2..=3);
        let bg_len = len - ra - rb;
        let bg: Vec<usize> = walk(bg_len, k - 2, cfg, &mut rng)
            .into_iter()
            .map(|s| s + 2)
            .collect();
        let x = rng.random_range(0..=bg_len);
        let y = rng.random_range(x..=bg_len);

        let mut emb = |ids: &[usize]| {
            let mut rows = Vec::with_capacity(ids.len() * d);
            for &s in ids {
                embed_segment(prototypes.row(s), cfg, &mut rng, &mut rows);
            }
            rows
        };
        let bg_rows = emb(&bg);
        let a_rows = emb(&vec![ORDER_FIRST; ra]);
        let b_rows = emb(&vec![ORDER_SECOND; rb]);

        let build = |first: (&[f32], usize, usize), second: (&[f32], usize, usize)| {
            let mut rows = Vec::with_capacity(len * d);
            let mut w = Vec::with_capacity(len);
            rows.extend_from_slice(&bg_rows[..x * d]);
            w.extend_from_slice(&bg[..x]);
            rows.extend_from_slice(first.0);
            w.extend(std::iter::repeat_n(first.1, first.2));
            rows.extend_from_slice(&bg_rows[x * d..y * d]);
            w.extend_from_slice(&bg[x..y]);
            rows.extend_from_slice(second.0);
            w.extend(std::iter::repeat_n(second.1, second.2));
            rows.extend_from_slice(&bg_rows[y * d..]);
            w.extend_from_slice(&bg[y..]);
            (rows, w)
        };
        let a = (&a_rows[..], ORDER_FIRST, ra);
        let b = (&b_rows[..], ORDER_SECOND, rb);
        for (twin, (rows, w)) in [build(a, b), build(b, a)].into_iter().enumerate() {
            let mut labels = labels_for(&w, k);
            labels.insert("split".into(), if p % 5 == 4 { 1.0 } else { 0.0 });
            labels.insert("pair".into(), p as f64);
            sequences.push(assemble(
                format!("order_{}_{p:05}_{twin}", cfg.split),
                &w,
                rows,
                d,
                labels,
            )?);
            walks.push(w);
        }
    }
    Ok(SynthCorpus {
        sequences,
        prototypes,
        captions: captions(k),
        walks,
    })
}
