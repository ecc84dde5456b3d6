//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

mod common;

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use common::{random_masked_batch, tiny_config};
use lvmae::cli::{read_records, run_argv};
use lvmae::corpus::{
    read_corpus, segment_schedule, synth_generate, synth_order_pairs, write_corpus, EmbeddingSequence, SynthConfig,
    SynthCorpus,
};
use lvmae::masking::{random_mask, semantic_mask, MaskStrategy};
use lvmae::model::{load_checkpoint, save_checkpoint, LvMae, ModelConfig};
use lvmae::numerics::{finite_difference_check, Tape, Tensor};
use lvmae::probing::{
    attentive_probe_train, extract_latents, linear_probe_train, raw_latents, ProbeConfig,
};
use lvmae::retrieval::{build_caption_bank, recall_at_k, OracleDecoder};
use lvmae::training::{evaluate_reconstruction, lr_at, masked_mse, pretrain, PretrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

/// Settings calibrated by the pilot runs in `examples/pilot.rs`.
fn desk_model() -> ModelConfig {
    let mut mc = ModelConfig::new(64);
    mc.enc_depth = 1;
    mc.dec_depth = 1;
    mc.num_heads = 2;
    mc.dec_dim = 64;
    mc
}

fn desk_pretrain() -> PretrainConfig {
    PretrainConfig {
        base_lr: 2e-3,
        warmup_epochs: 2.0,
        epochs: 30,
        batch_size: 4,
        mask_strategy: MaskStrategy::Random,
        mask_ratio: 0.4,
        seed: 7,
        ..PretrainConfig::default()
    }
}

const EVAL_SEED: u64 = 99;

struct Trained {
    corpus: SynthCorpus,
    held: SynthCorpus,
    untrained: LvMae<f32>,
    model: LvMae<f32>,
    final_loss: f64,
}

fn train_on(k: usize) -> Trained {
    let sc = SynthConfig { num_prototypes: k, ..SynthConfig::default() };
    let corpus = synth_generate(&sc).unwrap();
    let held = synth_generate(&SynthConfig { num_videos: 60, split: 1, ..sc }).unwrap();
    let untrained = LvMae::<f32>::new(desk_model(), 7).unwrap();
    let mut model = untrained.clone();
    let log = pretrain(&mut model, &corpus.sequences, &desk_pretrain(), None).unwrap();
    Trained { corpus, held, untrained, model, final_loss: log.final_loss().unwrap() }
}

/// Standard corpus: K=8, d=64, 200 videos, noise 0.1, seed 7.
fn standard() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| train_on(8))
}

fn token_efficiency() -> Check {
    let s = ok(segment_schedule(120.0, 5.0))?;
    ensure!(s.len() == 24, "{} segments", s.len());
    Ok("120 s at 5 s -> 24 segments".into())
}

fn gradient_fidelity() -> Check {
    let model = ok(LvMae::<f64>::new(tiny_config(8, 2, 1, 2), 11))?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mb = random_masked_batch(&mut rng, &[6], 8, 0.5).cast::<f64>();
    let mut store = model.params.clone();
    let report = ok(finite_difference_check(&mut store, 1e-5, 0, 13, |tape, params| {
        Ok(model.forward_masked_with(tape, params, &mb)?.loss)
    }))?;
    ensure!(report.max_rel_error <= 1e-4, "max relative error {:.3e}", report.max_rel_error);
    Ok(format!("max rel error {:.2e} over {} coords", report.max_rel_error, report.coords_checked))
}

fn padding_invariance() -> Check {
    let model = ok(LvMae::<f32>::new(tiny_config(16, 2, 1, 4), 3))?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        let lens: Vec<usize> = (0..rng.random_range(1..5)).map(|_| rng.random_range(2..14)).collect();
        let ratio = rng.random_range(0.1..0.9);
        let mb = random_masked_batch(&mut rng, &lens, 16, ratio);
        let padded = ok(mb.with_extra_padding(rng.random_range(0..=8), trial))?;
        let mut t1 = Tape::new();
        let f1 = ok(model.forward_masked(&mut t1, &mb))?;
        let mut t2 = Tape::new();
        let f2 = ok(model.forward_masked(&mut t2, &padded))?;
        for (b, plan) in mb.plans.iter().enumerate() {
            for i in 0..=plan.num_visible() {
                let (r1, r2) = (b * (mb.visible.len + 1) + i, b * (padded.visible.len + 1) + i);
                worst = worst.max(max_diff(t1.value(f1.z).row(r1), t2.value(f2.z).row(r2)));
            }
            for i in 0..lens[b] {
                let (r1, r2) = (b * mb.decoder.len + i, b * padded.decoder.len + i);
                worst = worst.max(max_diff(t1.value(f1.pred).row(r1), t2.value(f2.pred).row(r2)));
            }
        }
        let (l1, l2) = (t1.value(f1.loss).item(), t2.value(f2.loss).item());
        ensure!(l1.to_bits() == l2.to_bits(), "trial {trial}: loss {l1} vs {l2}");
    }
    ensure!(worst <= 1e-6, "output moved by {worst:.3e}");
    Ok(format!("100 batches, max output change {worst:.1e}, loss bit-identical"))
}

fn max_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).fold(0.0, f64::max)
}

/// Every subset of `0..n` of size `k`, in lexicographic order.
fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

fn oracle_similarity(e: &Tensor<f32>) -> Vec<f64> {
    let mut s = vec![1.0];
    for i in 1..e.rows() {
        let (a, b) = (e.row(i), e.row(i - 1));
        let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
        let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum();
        let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum();
        s.push(dot / (na * nb).sqrt());
    }
    s
}

/// Subset of size `m` with the smallest similarity sum; among equal sums the
/// lexicographically smallest.
fn oracle_semantic(e: &Tensor<f32>, m: usize) -> Vec<usize> {
    let s = oracle_similarity(e);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for sub in subsets(e.rows(), m) {
        let total: f64 = sub.iter().map(|&i| s[i]).sum();
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, sub));
        }
    }
    best.unwrap().1
}

fn mask_sets() -> Check {
    let (n, ratio, draws) = (10usize, 0.4, 100_000usize);
    let all = subsets(n, 4);
    let index: HashMap<Vec<usize>, usize> = all.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    let mut counts = vec![0u64; all.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..draws {
        let plan = ok(random_mask(n, ratio, &mut rng))?;
        ensure!(plan.masked_idx.len() == 4, "drew {} indices", plan.masked_idx.len());
        let slot = index.get(&plan.masked_idx).ok_or("indices not a sorted distinct subset")?;
        counts[*slot] += 1;
    }
    let expected = draws as f64 / all.len() as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ok(ChiSquared::new((all.len() - 1) as f64))?.cdf(chi2);
    ensure!(p > 0.01, "chi-square {chi2:.1}, p = {p:.4}");

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let grid: Vec<Vec<f32>> = (0..6)
        .map(|_| (0..4).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect())
        .collect();
    let mut ties = 0;
    for t in 0..1000 {
        let len = rng.random_range(2..=11);
        let r = rng.random_range(0.05..0.95);
        let e = if t % 2 == 0 {
            // Rows with entries ±1 make every cosine a multiple of 1/4, so
            // equal similarities are exact in any evaluation order.
            let rows: Vec<Vec<f32>> = (0..len).map(|_| grid[rng.random_range(0..grid.len())].clone()).collect();
            ok(Tensor::from_rows(&rows))?
        } else {
            let data = (0..len * 4).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            ok(Tensor::matrix(len, 4, data))?
        };
        let sims = oracle_similarity(&e);
        let mut sorted = sims.clone();
        sorted.sort_by(f64::total_cmp);
        ties += sorted.windows(2).any(|w| w[0] == w[1]) as usize;
        let got = ok(semantic_mask(&e, r))?;
        let m = got.masked_idx.len();
        let want = oracle_semantic(&e, m);
        ensure!(got.masked_idx == want, "sequence {t}: {:?} vs oracle {want:?}", got.masked_idx);
    }
    ensure!(ties >= 300, "only {ties} sequences exercised ties");
    Ok(format!("chi-square p = {p:.3}; semantic oracle agrees on 1000 sequences ({ties} with ties)"))
}

fn loss_locality() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (n, d) = (12usize, 6usize);
    let rand_mat = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect() };
    let pred = rand_mat(&mut rng);
    let target = rand_mat(&mut rng);
    let plan = ok(random_mask(n, 0.5, &mut rng))?;
    let rows = plan.masked_idx.clone();
    let eval = |pred: &[f64], target: &[f64]| -> Result<(f64, Vec<f64>), String> {
        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(ok(Tensor::matrix(n, d, pred.to_vec()))?);
        let gathered: Vec<f64> = rows.iter().flat_map(|&i| target[i * d..(i + 1) * d].to_vec()).collect();
        let l = ok(masked_mse(&mut tape, p, rows.clone(), ok(Tensor::matrix(rows.len(), d, gathered))?))?;
        let g = ok(tape.backward(l))?;
        let grad = g.get(p).ok_or("no gradient for predictions")?.to_vec();
        Ok((tape.value(l).item(), grad))
    };
    let (base, grad) = eval(&pred, &target)?;
    let oracle: f64 = rows
        .iter()
        .map(|&i| (0..d).map(|j| (pred[i * d + j] - target[i * d + j]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / rows.len() as f64;
    ensure!((base - oracle).abs() <= 1e-12 * oracle.max(1.0), "loss {base} vs oracle {oracle}");
    for i in plan.visible_idx() {
        ensure!(grad[i * d..(i + 1) * d].iter().all(|&g| g == 0.0), "visible row {i} has gradient");
    }
    for _ in 0..50 {
        let (mut p2, mut t2) = (pred.clone(), target.clone());
        for i in plan.visible_idx() {
            for j in 0..d {
                p2[i * d + j] = rng.random_range(-1e6..1e6);
                t2[i * d + j] = rng.random_range(-1e6..1e6);
            }
        }
        let (l2, _) = eval(&p2, &t2)?;
        ensure!(l2.to_bits() == base.to_bits(), "loss moved to {l2}");
    }
    Ok("loss and gradients ignore visible slots".into())
}

fn schedule() -> Check {
    let f = |e: f64| lr_at(e, 1.5e-4, 40.0, 150.0);
    ensure!(f(0.0) == 0.0, "lr(0) = {}", f(0.0));
    ensure!((f(40.0) - 1.5e-4).abs() <= 1e-18, "lr(40) = {}", f(40.0));
    ensure!(f(150.0).abs() <= 1e-18, "lr(150) = {}", f(150.0));
    ensure!((f(95.0) - 0.75e-4).abs() <= 1e-9, "lr(95) = {}", f(95.0));
    Ok("0, 1.5e-4, 0 and base/2 at the decay midpoint".into())
}

fn synthetic_pretraining() -> Check {
    let t = standard();
    let init = ok(evaluate_reconstruction(&t.untrained, &t.corpus.sequences, MaskStrategy::Random, 0.4, EVAL_SEED))?;
    let before = ok(evaluate_reconstruction(&t.untrained, &t.held.sequences, MaskStrategy::Random, 0.4, EVAL_SEED))?;
    let after = ok(evaluate_reconstruction(&t.model, &t.held.sequences, MaskStrategy::Random, 0.4, EVAL_SEED))?;
    ensure!(
        t.final_loss < 0.25 * init.mean_loss,
        "final loss {:.3} vs initial {:.3}",
        t.final_loss,
        init.mean_loss
    );
    let (m_untrained, m_copy) = (after.mean_cosine - before.mean_cosine, after.mean_cosine - after.copy_prev_cosine);
    ensure!(m_untrained >= 0.15, "cosine gain over untrained {m_untrained:.3}");
    ensure!(m_copy >= 0.15, "cosine gain over copy-previous {m_copy:.3}");
    Ok(format!(
        "loss {:.2} -> {:.3}; held-out cosine {:.3} (untrained {:.3}, copy-prev {:.3})",
        init.mean_loss, t.final_loss, after.mean_cosine, before.mean_cosine, after.copy_prev_cosine
    ))
}

fn retrieval() -> Check {
    let t = train_on(32);
    let bank = ok(build_caption_bank(&t.corpus.captions, &t.corpus.prototypes, false))?;
    let held = &t.held.sequences;
    let chance = ok(recall_at_k(&t.untrained, held, &bank, MaskStrategy::Random, 0.4, EVAL_SEED, 1))?;
    let p = 1.0 / 32.0;
    let n = chance.slots.len() as f64;
    let sigma = (p * (1.0 - p) / n).sqrt();
    let r1 = chance.recall_at(1);
    ensure!((r1 - p).abs() <= 3.0 * sigma, "untrained R@1 {r1:.4}, chance {p:.4} ± {:.4}", 3.0 * sigma);
    let oracle = ok(recall_at_k(&OracleDecoder, held, &bank, MaskStrategy::Random, 0.4, EVAL_SEED, 1))?;
    ensure!(oracle.recall_at(1) == 1.0, "oracle R@1 {}", oracle.recall_at(1));
    let trained = ok(recall_at_k(&t.model, held, &bank, MaskStrategy::Random, 0.4, EVAL_SEED, 32))?;
    let r5 = trained.recall_at(5);
    ensure!(r5 >= 0.6, "trained R@5 {r5:.3}");
    let curve: Vec<f64> = (1..=32).map(|k| trained.recall_at(k)).collect();
    ensure!(curve.windows(2).all(|w| w[0] <= w[1]), "R@k not monotone");
    Ok(format!("untrained R@1 {r1:.3} (n = {n}); oracle R@1 1.0; trained R@1 {:.3}, R@5 {r5:.3}", curve[0]))
}

struct ProbeData {
    train: Vec<EmbeddingSequence>,
    test: Vec<EmbeddingSequence>,
    ytr: Vec<usize>,
    yte: Vec<usize>,
}

fn order_pairs() -> &'static ProbeData {
    static CELL: OnceLock<ProbeData> = OnceLock::new();
    CELL.get_or_init(|| {
        let op = synth_order_pairs(&SynthConfig::default(), 300).unwrap();
        let (test, train): (Vec<_>, Vec<_>) = op.sequences.into_iter().partition(|s| s.labels["split"] == 1.0);
        let labels = |v: &[EmbeddingSequence]| v.iter().map(|s| s.labels["order"] as usize).collect();
        ProbeData { ytr: labels(&train), yte: labels(&test), train, test }
    })
}

fn probing_separation() -> Check {
    let t = standard();
    let d = order_pairs();
    let rtr: Vec<_> = d.train.iter().map(raw_latents).collect();
    let rte: Vec<_> = d.test.iter().map(raw_latents).collect();
    let lp = ok(linear_probe_train(&rtr, &d.ytr, ProbeConfig::linear(2)))?;
    let lp_acc = ok(lp.accuracy(&rte, &d.yte))?.value();
    ensure!(lp_acc <= 0.55, "linear probe on raw embeddings {lp_acc:.3}");
    let ztr = ok(extract_latents(&t.model, &d.train))?;
    let zte = ok(extract_latents(&t.model, &d.test))?;
    let ap = ok(attentive_probe_train(&ztr, &d.ytr, ProbeConfig::attentive(2)))?;
    let ap_acc = ok(ap.accuracy(&zte, &d.yte))?.value();
    ensure!(ap_acc >= 0.90, "attentive probe on latents {ap_acc:.3}");
    Ok(format!("LP raw {lp_acc:.3} vs AP latents {ap_acc:.3} on {} test videos", d.yte.len()))
}

fn frozen_backbone() -> Check {
    let t = standard();
    let d = order_pairs();
    let before = t.model.params.digest();
    let ztr = ok(extract_latents(&t.model, &d.train))?;
    let mut cfg = ProbeConfig::attentive(2);
    cfg.epochs = 2;
    ok(attentive_probe_train(&ztr, &d.ytr, cfg))?;
    let mut cfg = ProbeConfig::linear(2);
    cfg.epochs = 2;
    ok(linear_probe_train(&ztr, &d.ytr, cfg))?;
    let after = t.model.params.digest();
    ensure!(before == after, "digest {before} became {after}");

    let dir = ok(tempfile::tempdir())?;
    let ckpt = dir.path().join("m.ckpt");
    ok(save_checkpoint(&t.model, &ckpt))?;
    let corpus = dir.path().join("pairs");
    cli(&["gen-synth", "--out", s(&corpus), "--order-pairs", "60"])?;
    let bytes = ok(std::fs::read(&ckpt))?;
    cli(&["probe", "--ckpt", s(&ckpt), "--corpus", s(&corpus), "--task", "order", "--head", "linear"])?;
    ensure!(ok(std::fs::read(&ckpt))? == bytes, "checkpoint file changed");
    Ok(format!("digest {}… unchanged", &before[..12]))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn cli(args: &[&str]) -> Result<(), String> {
    let code = run_argv(std::iter::once("lvmae").chain(args.iter().copied()));
    ensure!(code == 0, "lvmae {} exited with {code}", args.join(" "));
    Ok(())
}

fn ablation_harness() -> Check {
    let dir = ok(tempfile::tempdir())?;
    let corpus = dir.path().join("corpus");
    cli(&["gen-synth", "--out", s(&corpus)])?;
    let desk = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.toml");
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        cli(&[
            "sweep", "--corpus", s(&corpus), "--out", s(&out), "--config", desk, "--epochs", "1",
            "--mask-ratio", "0.1:0.9:0.1", "--depths", "16,24,32", "--segment-lens", "5,10,15",
        ])?;
        runs.push(ok(read_records(&out.join("results.jsonl")))?);
    }
    let cells = |axis: &str| {
        runs[0].iter().filter(|r| r.metric == "heldout_cosine" && r.params["axis"] == axis).count()
    };
    ensure!(cells("mask_ratio") == 9, "{} ratio cells", cells("mask_ratio"));
    ensure!(cells("enc_depth") == 3, "{} depth cells", cells("enc_depth"));
    ensure!(cells("segment_len_s") == 3, "{} segment-length cells", cells("segment_len_s"));
    ensure!(runs[0].iter().all(|r| r.value.is_finite()), "non-finite metric");
    ensure!(runs[0] == runs[1], "repeated sweep differs");
    Ok(format!("15 cells, {} records, repeat identical", runs[0].len()))
}

fn format_round_trips() -> Check {
    let specials = [
        0.0f32, -0.0, f32::MIN_POSITIVE, -f32::MIN_POSITIVE, f32::from_bits(1), f32::from_bits(0x8000_0001),
        f32::MAX, f32::MIN, f32::EPSILON, 1.0 + f32::EPSILON, 1e-30, -3.4e38,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let finite_bits = |rng: &mut ChaCha8Rng| loop {
        let v = f32::from_bits(rng.random());
        if v.is_finite() {
            return v;
        }
    };
    let mut seqs = Vec::new();
    for v in 0..6 {
        let n = rng.random_range(1..20);
        let data: Vec<f32> = (0..n * 7)
            .map(|i| if i < specials.len() && v == 0 { specials[i] } else { finite_bits(&mut rng) })
            .collect();
        let mut s = ok(EmbeddingSequence::new(format!("video_{v}"), ok(Tensor::matrix(n, 7, data))?))?;
        s.labels.insert("order".into(), v as f64 * 0.1);
        if v % 2 == 0 {
            s = ok(s.with_caption_ids((0..n).map(|i| format!("cap_{i}")).collect()))?;
        }
        seqs.push(s);
    }
    let dir = ok(tempfile::tempdir())?;
    ok(write_corpus(&seqs, dir.path(), false))?;
    let back = ok(read_corpus(dir.path()))?;
    ensure!(back.sequences.len() == seqs.len(), "{} sequences read back", back.sequences.len());
    for (a, b) in seqs.iter().zip(&back.sequences) {
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure!(bits(&a.embeddings) == bits(&b.embeddings), "{} payload changed", a.video_id);
        ensure!(a.labels == b.labels && a.caption_ids == b.caption_ids, "{} metadata changed", a.video_id);
    }

    let mut model = ok(LvMae::<f32>::new(tiny_config(8, 2, 1, 2), 4))?;
    let mut k = 0;
    for p in model.params.iter_mut() {
        for v in p.value.data_mut() {
            *v = if k < specials.len() { specials[k] } else { finite_bits(&mut rng) };
            k += 1;
        }
    }
    let path = dir.path().join("m.ckpt");
    ok(save_checkpoint(&model, &path))?;
    let loaded = ok(load_checkpoint(&path))?;
    ensure!(loaded.config() == model.config(), "config changed");
    ensure!(loaded.params.digest() == model.params.digest(), "parameter bits changed");
    Ok(format!("{} sequences and {k} parameters bit-exact", seqs.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 12] = [
        ("token efficiency", token_efficiency),
        ("gradient fidelity", gradient_fidelity),
        ("padding invariance", padding_invariance),
        ("mask-set correctness", mask_sets),
        ("loss locality", loss_locality),
        ("schedule", schedule),
        ("synthetic pre-training", synthetic_pretraining),
        ("retrieval", retrieval),
        ("probing separation", probing_separation),
        ("frozen backbone", frozen_backbone),
        ("ablation harness", ablation_harness),
        ("format round-trips", format_round_trips),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<24} {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<24} {why} [{secs:.1}s]");
            }
        }
    }
    println!("{} of {} criteria passed", 12 - failed, 12);
    if failed > 0 {
        std::process::exit(1);
    }
}
