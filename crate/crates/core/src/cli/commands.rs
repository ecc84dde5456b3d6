use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::records::{append_records, overlay, read_records, FileConfig, ResultRecord, RunConfig};
use super::{CheckFailed, ConfigError, GenSynthArgs, GradcheckArgs, IngestArgs, PretrainArgs, ProbeArgs, ReportArgs, RetrieveArgs, SweepArgs};
use crate::corpus::{
    build_batch, corpus_digest, read_caption_files, read_corpus, resegment, synth_generate, synth_order_pairs,
    write_caption_files, write_corpus, EmbeddingSequence, SynthConfig,
};
use crate::error::Error;
use crate::masking::{apply_mask, random_mask};
use crate::model::{load_checkpoint_expecting, LvMae, ModelConfig};
use crate::numerics::{finite_difference_check, Tensor};
use crate::par;
use crate::probing::{extract_latents, ProbeConfig, ProbeHead, ProbeKind, Targets};
use crate::retrieval::{build_caption_bank, recall_at_k};
use crate::training::{evaluate_reconstruction, pretrain as train, PretrainConfig};

const SPLIT_LABEL: &str = "split";
const HELD_OUT: f64 = 1.0;

fn is_held_out(s: &EmbeddingSequence) -> bool {
    s.labels.get(SPLIT_LABEL) == Some(&HELD_OUT)
}

fn out_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn model_config(d: usize, file: &FileConfig) -> Result<ModelConfig> {
    let mc = overlay(ModelConfig::new(d), file.model.as_ref(), "model")?;
    if mc.d_model != d {
        return Err(Error::DimMismatch {
            context: "[model] d_model in config".into(),
            expected: d,
            found: mc.d_model,
        }
        .into());
    }
    mc.validate()?;
    Ok(mc)
}

/// Pretrain settings from defaults, then the config file, then flags.
fn pretrain_config(
    file: &FileConfig,
    strategy: Option<crate::masking::MaskStrategy>,
    ratio: Option<f64>,
    epochs: Option<usize>,
    seed: Option<u64>,
) -> Result<PretrainConfig> {
    let mut pc = overlay(PretrainConfig::default(), file.pretrain.as_ref(), "pretrain")?;
    if let Some(s) = strategy {
        pc.mask_strategy = s;
        let ratio_in_file = file.pretrain.as_ref().is_some_and(|t| t.contains_key("mask_ratio"));
        if ratio.is_none() && !ratio_in_file {
            pc.mask_ratio = s.default_ratio();
        }
    }
    if let Some(r) = ratio {
        pc.mask_ratio = r;
    }
    if let Some(e) = epochs {
        pc.epochs = e;
        if pc.warmup_epochs >= e as f64 {
            let w = pc.warmup_epochs;
            pc.warmup_epochs = (e as f64 / 4.0).floor();
            warn!("warmup of {w} epochs shortened to {} for a {e}-epoch run", pc.warmup_epochs);
        }
    }
    if let Some(s) = seed {
        pc.seed = s;
    }
    pc.validate()?;
    Ok(pc)
}

/// Merge consecutive segments so sequences match `target` seconds per
/// segment. Sequences left with fewer than two segments are dropped.
fn at_segment_len(seqs: &[EmbeddingSequence], base: f64, target: f64) -> Result<Vec<EmbeddingSequence>> {
    let f = target / base;
    let k = f.round();
    if !(k >= 1.0) || (f - k).abs() > 1e-9 {
        return Err(Error::Contract(format!(
            "segment length {target} s is not a multiple of the corpus segment length {base} s"
        ))
        .into());
    }
    let mut out = Vec::with_capacity(seqs.len());
    for s in seqs {
        let r = resegment(s, k as usize)?;
        if r.len() < 2 {
            warn!("{}: only {} segment(s) at {target} s, skipped", s.video_id, r.len());
            continue;
        }
        out.push(r);
    }
    Ok(out)
}

fn partition(seqs: Vec<EmbeddingSequence>) -> (Vec<EmbeddingSequence>, Vec<EmbeddingSequence>) {
    seqs.into_iter().partition(|s| !is_held_out(s))
}

pub fn gen_synth(a: GenSynthArgs, argv: Vec<String>) -> Result<()> {
    let file = FileConfig::load(a.config.as_deref())?;
    let mut cfg = overlay(SynthConfig::default(), file.synth.as_ref(), "synth")?;
    if let Some(v) = a.prototypes {
        cfg.num_prototypes = v;
    }
    if let Some(v) = a.dim {
        cfg.embedding_dim = v;
    }
    if let Some(v) = a.videos {
        cfg.num_videos = v;
    }
    if let Some(v) = a.noise {
        cfg.noise = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.split {
        cfg.split = v;
    }
    let synth = match a.order_pairs {
        Some(p) => synth_order_pairs(&cfg, p)?,
        None => synth_generate(&cfg)?,
    };
    let normalized = synth.sequences.iter().all(|s| s.has_unit_rows(1e-5));
    write_corpus(&synth.sequences, &a.out, normalized)?;
    write_caption_files(&a.out.join("bank.tsv"), &synth.captions, &synth.prototypes)?;

    let params = json!({ "synth": cfg, "order_pairs": a.order_pairs });
    let run = RunConfig::new("gen-synth", argv, params.clone(), cfg.seed, Some(corpus_digest(&a.out)?));
    run.write(&a.out)?;
    let segments: usize = synth.sequences.iter().map(|s| s.len()).sum();
    append_records(
        &a.out,
        &[
            run.record(params.clone(), "videos", synth.sequences.len() as f64),
            run.record(params, "segments", segments as f64),
        ],
    )?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IngestLine {
    video_id: String,
    embeddings: Vec<Vec<f32>>,
    #[serde(default)]
    labels: BTreeMap<String, f64>,
    #[serde(default)]
    caption_ids: Option<Vec<String>>,
}

pub fn ingest(a: IngestArgs, argv: Vec<String>) -> Result<()> {
    let f = fs::File::open(&a.input).map_err(|e| Error::Io { path: a.input.clone(), source: e })?;
    let mut seqs = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::Io { path: a.input.clone(), source: e })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: IngestLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: a.input.clone(),
            message: format!("line {}: {e}", i + 1),
        })?;
        let emb = Tensor::from_rows(&rec.embeddings)?;
        emb.check_finite(&format!("embeddings of {}", rec.video_id))?;
        let mut s = EmbeddingSequence::new(rec.video_id, emb)?;
        if let Some(ids) = rec.caption_ids {
            s = s.with_caption_ids(ids)?;
        }
        s.labels = rec.labels;
        s.segment_len_s = a.segment_len;
        s.encoder_id = a.encoder_id.clone();
        if a.normalize {
            s.normalize_rows()?;
        }
        seqs.push(s);
    }
    write_corpus(&seqs, &a.out, a.normalize)?;
    let params = json!({
        "input_sha256": file_digest(&a.input)?,
        "normalize": a.normalize,
        "encoder_id": a.encoder_id,
        "segment_len_s": a.segment_len,
    });
    let run = RunConfig::new("ingest", argv, params.clone(), 0, Some(corpus_digest(&a.out)?));
    run.write(&a.out)?;
    append_records(&a.out, &[run.record(params, "videos", seqs.len() as f64)])?;
    Ok(())
}

pub fn pretrain(a: PretrainArgs, argv: Vec<String>) -> Result<()> {
    let corpus = read_corpus(&a.corpus)?;
    let digest = corpus_digest(&a.corpus)?;
    let file = FileConfig::load(a.config.as_deref())?;
    let pc = pretrain_config(&file, a.mask_strategy, a.mask_ratio, a.epochs, a.seed)?;
    let mc = model_config(corpus.dim(), &file)?;
    let seqs = at_segment_len(&corpus.sequences, corpus.header.segment_len_s, pc.segment_len_s)?;
    let (train_set, held) = partition(seqs);
    if train_set.is_empty() {
        return Err(Error::Contract("no training sequences (all are labelled held out)".into()).into());
    }
    info!("{} training and {} held-out sequences", train_set.len(), held.len());

    let dir = out_dir(&a.out);
    let full = json!({ "model": mc, "pretrain": pc });
    let run = RunConfig::new("pretrain", argv, full, pc.seed, Some(digest));
    run.write(&dir)?;

    let mut model = LvMae::<f32>::new(mc.clone(), pc.seed)?;
    let before = if held.is_empty() {
        None
    } else {
        Some(evaluate_reconstruction(&model, &held, pc.mask_strategy, pc.mask_ratio, pc.seed)?)
    };
    let log = train(&mut model, &train_set, &pc, Some(&a.out))?;
    let stem = a.out.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    log.write_jsonl(&dir.join(format!("{stem}.train_log.jsonl")))?;

    let params = json!({
        "mask_strategy": pc.mask_strategy,
        "mask_ratio": pc.mask_ratio,
        "epochs": pc.epochs,
        "enc_depth": mc.enc_depth,
        "segment_len_s": pc.segment_len_s,
    });
    let mut recs = vec![
        run.record(params.clone(), "initial_loss", log.epochs[0].mean_loss),
        run.record(params.clone(), "final_loss", log.final_loss().unwrap_or(f64::NAN)),
    ];
    if let Some(before) = before {
        let after = evaluate_reconstruction(&model, &held, pc.mask_strategy, pc.mask_ratio, pc.seed)?;
        recs.extend([
            run.record(params.clone(), "heldout_loss_untrained", before.mean_loss),
            run.record(params.clone(), "heldout_cosine_untrained", before.mean_cosine),
            run.record(params.clone(), "heldout_loss", after.mean_loss),
            run.record(params.clone(), "heldout_cosine", after.mean_cosine),
            run.record(params, "copy_prev_cosine", after.copy_prev_cosine),
        ]);
    }
    append_records(&dir, &recs)?;
    Ok(())
}

pub fn probe(a: ProbeArgs, argv: Vec<String>) -> Result<()> {
    let corpus = read_corpus(&a.corpus)?;
    let digest = corpus_digest(&a.corpus)?;
    let model = load_checkpoint_expecting(&a.ckpt, corpus.dim())?;
    let backbone = model.params.digest();

    let labelled: Vec<EmbeddingSequence> = corpus
        .sequences
        .into_iter()
        .filter(|s| s.labels.contains_key(&a.task))
        .collect();
    if labelled.is_empty() {
        return Err(Error::Contract(format!("no sequence carries label {:?}", a.task)).into());
    }
    let (train_set, test_set) = partition(labelled);
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::Contract(format!(
            "probing needs both splits; found {} train and {} held out",
            train_set.len(),
            test_set.len()
        ))
        .into());
    }
    let values = |v: &[EmbeddingSequence]| v.iter().map(|s| s.labels[&a.task]).collect::<Vec<f64>>();
    let (ytr, yte) = (values(&train_set), values(&test_set));

    let classes = |ys: &[f64]| -> Result<Vec<usize>> {
        ys.iter()
            .map(|&y| {
                if y >= 0.0 && y.fract() == 0.0 {
                    Ok(y as usize)
                } else {
                    Err(Error::Contract(format!("label {y} of task {:?} is not a class index", a.task)).into())
                }
            })
            .collect()
    };
    let base = match a.head {
        ProbeKind::Regression => ProbeConfig::regression(),
        kind => {
            let c = classes(&ytr)?.into_iter().chain(classes(&yte)?).max().unwrap_or(0) + 1;
            if kind == ProbeKind::Linear {
                ProbeConfig::linear(c.max(2))
            } else {
                ProbeConfig::attentive(c.max(2))
            }
        }
    };
    let file = FileConfig::load(a.config.as_deref())?;
    let mut cfg = overlay(base, file.probe.as_ref(), "probe")?;
    if cfg.kind != a.head {
        return Err(ConfigError(format!("[probe] kind {} conflicts with --head {}", cfg.kind, a.head)).into());
    }
    cfg.seed = a.seed;

    let ztr = extract_latents(&model, &train_set)?;
    let zte = extract_latents(&model, &test_set)?;
    let mut head = ProbeHead::new(cfg.clone(), model.config().d_model)?;
    let dir = a.out.clone().unwrap_or_else(|| out_dir(&a.ckpt));
    let full = json!({ "task": a.task, "probe": cfg, "ckpt_sha256": file_digest(&a.ckpt)? });
    let run = RunConfig::new("probe", argv, full, a.seed, Some(digest));
    run.write(&dir)?;

    let params = json!({ "task": a.task, "head": a.head });
    let recs = if a.head == ProbeKind::Regression {
        head.fit(&ztr, Targets::Values(&ytr))?;
        vec![
            run.record(params.clone(), "train_mse", head.mse(&ztr, &ytr)?),
            run.record(params.clone(), "mse", head.mse(&zte, &yte)?),
        ]
    } else {
        let (ctr, cte) = (classes(&ytr)?, classes(&yte)?);
        head.fit(&ztr, Targets::Classes(&ctr))?;
        vec![
            run.record(params.clone(), "train_accuracy", head.accuracy(&ztr, &ctr)?.value()),
            run.record(params.clone(), "accuracy", head.accuracy(&zte, &cte)?.value()),
        ]
    };
    if model.params.digest() != backbone {
        return Err(Error::Contract("backbone parameters changed during probing".into()).into());
    }
    append_records(&dir, &recs)?;
    Ok(())
}

pub fn retrieve(a: RetrieveArgs, argv: Vec<String>) -> Result<()> {
    let corpus = read_corpus(&a.corpus)?;
    let digest = corpus_digest(&a.corpus)?;
    let model = load_checkpoint_expecting(&a.ckpt, corpus.dim())?;
    let (captions, emb) = read_caption_files(&a.bank)?;
    if emb.cols() != corpus.dim() {
        return Err(Error::DimMismatch {
            context: format!("caption bank {}", a.bank.display()),
            expected: corpus.dim(),
            found: emb.cols(),
        }
        .into());
    }
    let bank = build_caption_bank(&captions, &emb, a.normalize)?;
    if a.k == 0 || a.k > bank.len() {
        return Err(Error::Contract(format!("k = {} outside [1, {}]", a.k, bank.len())).into());
    }
    let report = recall_at_k(&model, &corpus.sequences, &bank, a.mask_strategy, a.ratio, a.seed, a.k)?;
    if let Some(parent) = a.report.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    report.write_text(&a.report)?;

    let dir = out_dir(&a.report);
    let full = json!({
        "mask_strategy": a.mask_strategy,
        "ratio": a.ratio,
        "k": a.k,
        "normalize": a.normalize,
        "ckpt_sha256": file_digest(&a.ckpt)?,
        "bank_sha256": file_digest(&a.bank)?,
    });
    let run = RunConfig::new("retrieve", argv, full, a.seed, Some(digest));
    run.write(&dir)?;
    let recs: Vec<ResultRecord> = (1..=a.k)
        .map(|k| {
            let params = json!({ "mask_strategy": a.mask_strategy, "ratio": a.ratio, "k": k });
            run.record(params, "recall", report.recall_at(k))
        })
        .collect();
    append_records(&dir, &recs)?;
    Ok(())
}

/// Tiny model and masked batch used by `gradcheck`.
pub fn gradcheck_report(seed: u64, eps: f64, samples: usize) -> crate::Result<crate::numerics::GradCheckReport> {
    let mut mc = ModelConfig::new(8);
    mc.enc_depth = 2;
    mc.dec_depth = 1;
    mc.num_heads = 2;
    let model = LvMae::<f64>::new(mc, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let data = (0..6 * 8).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let mut seq = EmbeddingSequence::new("g", Tensor::matrix(6, 8, data)?)?;
    seq.normalize_rows()?;
    let plan = random_mask(6, 0.5, &mut rng)?;
    let mb = apply_mask(&build_batch(&[seq], 256)?, &[plan])?.cast::<f64>();
    let mut store = model.params.clone();
    finite_difference_check(&mut store, eps, samples, seed, |tape, params| {
        Ok(model.forward_masked_with(tape, params, &mb)?.loss)
    })
}

pub fn gradcheck(a: GradcheckArgs, argv: Vec<String>) -> Result<()> {
    let report = gradcheck_report(a.seed, a.eps, a.samples)?;
    println!(
        "max relative error: {:.3e} ({} coordinates, worst {}[{}])",
        report.max_rel_error, report.coords_checked, report.worst_param, report.worst_index
    );
    if let Some(dir) = &a.out {
        let params = json!({ "eps": a.eps, "samples": a.samples, "tolerance": a.tolerance });
        let run = RunConfig::new("gradcheck", argv, params.clone(), a.seed, None);
        run.write(dir)?;
        append_records(dir, &[run.record(params, "max_rel_error", report.max_rel_error)])?;
    }
    if !(report.max_rel_error <= a.tolerance) {
        return Err(CheckFailed(format!(
            "max relative error {:.3e} exceeds {:.1e}",
            report.max_rel_error, a.tolerance
        ))
        .into());
    }
    Ok(())
}

/// Parse `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || anyhow::Error::from(Error::Contract(format!("bad grid {spec:?}")));
    let parts: Vec<&str> = spec.split(':').collect();
    let values: Vec<f64> = match parts.as_slice() {
        [start, stop, step] => {
            let (a, b, s): (f64, f64, f64) = (
                start.trim().parse().map_err(|_| bad())?,
                stop.trim().parse().map_err(|_| bad())?,
                step.trim().parse().map_err(|_| bad())?,
            );
            if !(s > 0.0) || !(b >= a) {
                return Err(bad());
            }
            let n = ((b - a) / s + 1e-9).floor() as usize + 1;
            (0..n).map(|i| ((a + i as f64 * s) * 1e9).round() / 1e9).collect()
        }
        [list] => list
            .split(',')
            .map(|v| v.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?,
        _ => return Err(bad()),
    };
    if values.is_empty() {
        return Err(bad());
    }
    Ok(values)
}

#[derive(Clone, Debug)]
struct Cell {
    axis: &'static str,
    mask_ratio: f64,
    enc_depth: usize,
    segment_len_s: f64,
}

pub fn sweep(a: SweepArgs, argv: Vec<String>) -> Result<()> {
    let corpus = read_corpus(&a.corpus)?;
    let digest = corpus_digest(&a.corpus)?;
    let file = FileConfig::load(a.config.as_deref())?;
    let pc = pretrain_config(&file, a.mask_strategy, None, a.epochs, a.seed)?;
    let mc = model_config(corpus.dim(), &file)?;

    let base = Cell {
        axis: "",
        mask_ratio: pc.mask_ratio,
        enc_depth: mc.enc_depth,
        segment_len_s: pc.segment_len_s,
    };
    let mut cells = Vec::new();
    if let Some(spec) = &a.mask_ratio {
        cells.extend(parse_grid(spec)?.into_iter().map(|r| Cell { axis: "mask_ratio", mask_ratio: r, ..base.clone() }));
    }
    cells.extend(a.depths.iter().map(|&d| Cell { axis: "enc_depth", enc_depth: d, ..base.clone() }));
    cells.extend(a.segment_lens.iter().map(|&s| Cell { axis: "segment_len_s", segment_len_s: s, ..base.clone() }));
    if cells.is_empty() {
        return Err(Error::Contract("sweep needs --mask-ratio, --depths or --segment-lens".into()).into());
    }

    let full = json!({
        "model": mc,
        "pretrain": pc,
        "mask_ratio": a.mask_ratio,
        "depths": a.depths,
        "segment_lens": a.segment_lens,
    });
    let run = RunConfig::new("sweep", argv, full, pc.seed, Some(digest));
    run.write(&a.out)?;

    let results = par::try_map_indexed(cells.len(), |i| -> Result<Vec<(String, f64)>> {
        let cell = &cells[i];
        let cfg = PretrainConfig { mask_ratio: cell.mask_ratio, segment_len_s: cell.segment_len_s, ..pc.clone() };
        cfg.validate()?;
        let m = ModelConfig { enc_depth: cell.enc_depth, ..mc.clone() };
        m.validate()?;
        let seqs = at_segment_len(&corpus.sequences, corpus.header.segment_len_s, cell.segment_len_s)?;
        let (train_set, held) = partition(seqs);
        if train_set.is_empty() || held.is_empty() {
            return Err(Error::Contract("sweep needs training and held-out (split = 1) sequences".into()).into());
        }
        let mut model = LvMae::<f32>::new(m, cfg.seed)?;
        let log = train(&mut model, &train_set, &cfg, None)?;
        let stats = evaluate_reconstruction(&model, &held, cfg.mask_strategy, cfg.mask_ratio, cfg.seed)?;
        info!("{} cell {i} done", cell.axis);
        Ok(vec![
            ("final_loss".into(), log.final_loss().unwrap_or(f64::NAN)),
            ("heldout_loss".into(), stats.mean_loss),
            ("heldout_cosine".into(), stats.mean_cosine),
            ("copy_prev_cosine".into(), stats.copy_prev_cosine),
        ])
    })?;

    let mut recs = Vec::new();
    for (cell, metrics) in cells.iter().zip(results) {
        let params = json!({
            "axis": cell.axis,
            "mask_strategy": pc.mask_strategy,
            "mask_ratio": cell.mask_ratio,
            "enc_depth": cell.enc_depth,
            "segment_len_s": cell.segment_len_s,
            "epochs": pc.epochs,
        });
        for (metric, value) in metrics {
            recs.push(run.record(params.clone(), &metric, value));
        }
    }
    append_records(&a.out, &recs)?;
    Ok(())
}

fn strip_seeds(v: &Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(
            m.iter()
                .filter(|(k, _)| k.as_str() != "seed")
                .map(|(k, v)| (k.clone(), strip_seeds(v)))
                .collect(),
        ),
        other => other.clone(),
    }
}

/// Group records by (subcommand, metric, params without seeds) and
/// summarize each group across seeds.
pub fn aggregate(records: &[ResultRecord]) -> String {
    let mut groups: BTreeMap<(String, String, String), Vec<&ResultRecord>> = BTreeMap::new();
    for r in records {
        let key = (r.subcommand.clone(), strip_seeds(&r.params).to_string(), r.metric.clone());
        groups.entry(key).or_default().push(r);
    }
    let mut out = String::from("subcommand\tparams\tmetric\tn\tmean\tmin\tmax\tseeds\n");
    for ((sub, params, metric), rs) in groups {
        let vals: Vec<f64> = rs.iter().map(|r| r.value).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut seeds: Vec<u64> = rs.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        let seeds: Vec<String> = seeds.iter().map(u64::to_string).collect();
        out.push_str(&format!(
            "{sub}\t{params}\t{metric}\t{}\t{mean:.6}\t{min:.6}\t{max:.6}\t{}\n",
            vals.len(),
            seeds.join(",")
        ));
    }
    out
}

pub fn report(a: ReportArgs) -> Result<()> {
    let mut records = Vec::new();
    for input in &a.inputs {
        let path = if input.is_dir() { input.join(super::RESULTS_FILE) } else { input.clone() };
        records.extend(read_records(&path)?);
    }
    let table = aggregate(&records);
    match &a.out {
        Some(p) => fs::write(p, &table).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{table}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let g = parse_grid("0.1:0.9:0.1").unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g[2], 0.3);
        assert_eq!(g[8], 0.9);
        assert_eq!(parse_grid("0.25, 0.5").unwrap(), vec![0.25, 0.5]);
        assert!(parse_grid("0.5:0.1:0.1").is_err());
        assert!(parse_grid("a:b").is_err());
    }

    #[test]
    fn aggregate_groups_across_seeds() {
        let rec = |seed: u64, v: f64| ResultRecord {
            run_id: format!("r{seed}"),
            subcommand: "probe".into(),
            params: json!({ "task": "order", "probe": { "seed": seed } }),
            metric: "accuracy".into(),
            value: v,
            seed,
            corpus_digest: None,
        };
        let t = aggregate(&[rec(0, 0.5), rec(1, 1.0)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].contains("\t2\t0.750000\t0.500000\t1.000000\t0,1"));
    }
}
