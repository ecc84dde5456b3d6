use std::fs;
use std::path::Path;

use lvmae::cli::{exit, read_records, run_argv, RunConfig};
use lvmae::model::load_checkpoint;

fn lvmae(args: &[&str]) -> i32 {
    run_argv(std::iter::once("lvmae").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_corpus(dir: &Path) -> std::path::PathBuf {
    let out = dir.join("corpus");
    assert_eq!(lvmae(&["gen-synth", "--out", s(&out), "--videos", "4", "--dim", "16"]), 0);
    out
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("tiny.toml");
    fs::write(&p, "[model]\nenc_depth = 1\ndec_depth = 1\nnum_heads = 2\n\n[pretrain]\nbatch_size = 2\nwarmup_epochs = 0.0\n").unwrap();
    p
}

#[test]
fn one_epoch_pretrain_writes_checkpoint_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(dir.path());
    let cfg = tiny_config(dir.path());
    let ckpt = dir.path().join("run/m.ckpt");
    let code = lvmae(&[
        "pretrain", "--corpus", s(&corpus), "--out", s(&ckpt), "--epochs", "1", "--seed", "3", "--config", s(&cfg),
    ]);
    assert_eq!(code, 0);
    let model = load_checkpoint(&ckpt).unwrap();
    assert_eq!(model.config().d_model, 16);
    assert_eq!(model.config().enc_depth, 1);
    let log = fs::read_to_string(dir.path().join("run/m.train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
    let recs = read_records(&dir.path().join("run/results.jsonl")).unwrap();
    assert!(recs.iter().any(|r| r.metric == "final_loss" && r.value.is_finite()));
    assert!(recs.iter().all(|r| r.seed == 3 && r.corpus_digest.is_some()));
}

#[test]
fn recorded_argv_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(dir.path());
    let cfg = tiny_config(dir.path());
    let first = dir.path().join("a/m.ckpt");
    let args = ["pretrain", "--corpus", s(&corpus), "--out", s(&first), "--epochs", "2", "--config", s(&cfg)];
    assert_eq!(lvmae(&args), 0);

    let run_file = fs::read_dir(dir.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_str().unwrap().starts_with("run-pretrain-"))
        .unwrap();
    let run: RunConfig = serde_json::from_str(&fs::read_to_string(run_file).unwrap()).unwrap();
    let second = dir.path().join("b/m.ckpt");
    let argv: Vec<String> = run
        .argv
        .iter()
        .map(|a| if a == s(&first) { s(&second).to_string() } else { a.clone() })
        .collect();
    assert_eq!(run_argv(argv), 0);
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
    let a = read_records(&dir.path().join("a/results.jsonl")).unwrap();
    let b = read_records(&dir.path().join("b/results.jsonl")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn gradcheck_passes_and_fails_by_tolerance() {
    assert_eq!(lvmae(&["gradcheck", "--samples", "4"]), exit::OK);
    assert_eq!(lvmae(&["gradcheck", "--samples", "4", "--tolerance", "1e-30"]), exit::CHECK_FAILED);
}

#[test]
fn errors_map_to_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(lvmae(&["pretrain", "--no-such-flag"]), exit::USAGE);
    assert_eq!(lvmae(&["frobnicate"]), exit::USAGE);
    let missing = dir.path().join("missing");
    assert_eq!(lvmae(&["pretrain", "--corpus", s(&missing), "--out", "x.ckpt"]), exit::IO);

    let corpus = tiny_corpus(dir.path());
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[model]\nenc_depht = 2\n").unwrap();
    let out = dir.path().join("m.ckpt");
    assert_eq!(lvmae(&["pretrain", "--corpus", s(&corpus), "--out", s(&out), "--config", s(&bad)]), exit::CONFIG);
    fs::write(&bad, "[model]\nd_model = 32\n").unwrap();
    assert_eq!(lvmae(&["pretrain", "--corpus", s(&corpus), "--out", s(&out), "--config", s(&bad)]), exit::DIMENSION);
    assert_eq!(lvmae(&["pretrain", "--corpus", s(&corpus), "--out", s(&out), "--mask-ratio", "1.5"]), exit::CONTRACT);

    let garbage = dir.path().join("garbage.ckpt");
    fs::write(&garbage, b"not a checkpoint at all").unwrap();
    let args = ["probe", "--ckpt", s(&garbage), "--corpus", s(&corpus), "--task", "order", "--head", "linear"];
    assert_eq!(lvmae(&args), exit::FORMAT);
}

#[test]
fn ingest_builds_a_normalized_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    fs::write(
        &input,
        concat!(
            r#"{"video_id": "a", "embeddings": [[3, 4], [0, 2]], "labels": {"genre": 1}}"#,
            "\n",
            r#"{"video_id": "b", "embeddings": [[1, 0], [0, 1], [1, 1]], "caption_ids": ["x", "y", "z"]}"#,
            "\n"
        ),
    )
    .unwrap();
    let out = dir.path().join("corpus");
    assert_eq!(lvmae(&["ingest", "--input", s(&input), "--out", s(&out), "--normalize"]), 0);
    let c = lvmae::corpus::read_corpus(&out).unwrap();
    assert!(c.header.normalized);
    assert_eq!(c.sequences[0].row(0), &[0.6, 0.8]);
    assert_eq!(c.sequences[0].labels["genre"], 1.0);
    assert_eq!(c.sequences[1].caption_ids.as_ref().unwrap().len(), 3);

    fs::write(&input, r#"{"video_id": "a", "embeddings": [[1, 2], [3]]}"#).unwrap();
    assert_eq!(lvmae(&["ingest", "--input", s(&input), "--out", s(&dir.path().join("c2"))]), exit::DIMENSION);
}

#[test]
fn report_aggregates_existing_records() {
    let dir = tempfile::tempdir().unwrap();
    let lines = [
        r#"{"run_id":"a","subcommand":"probe","params":{"task":"t"},"metric":"accuracy","value":0.5,"seed":0,"corpus_digest":null}"#,
        r#"{"run_id":"b","subcommand":"probe","params":{"task":"t"},"metric":"accuracy","value":0.7,"seed":1,"corpus_digest":null}"#,
    ];
    fs::write(dir.path().join("results.jsonl"), lines.join("\n")).unwrap();
    let table = dir.path().join("table.tsv");
    assert_eq!(lvmae(&["report", s(dir.path()), "--out", s(&table)]), 0);
    let text = fs::read_to_string(&table).unwrap();
    assert!(text.contains("probe\t{\"task\":\"t\"}\taccuracy\t2\t0.600000\t0.500000\t0.700000\t0,1"), "{text}");
    fs::write(dir.path().join("results.jsonl"), "{oops").unwrap();
    assert_ne!(lvmae(&["report", s(dir.path())]), 0);
}

#[test]
fn retrieve_and_probe_write_records() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    assert_eq!(lvmae(&["gen-synth", "--out", s(&corpus), "--videos", "10", "--dim", "16"]), 0);
    let cfg = tiny_config(dir.path());
    let ckpt = dir.path().join("m.ckpt");
    assert_eq!(lvmae(&["pretrain", "--corpus", s(&corpus), "--out", s(&ckpt), "--epochs", "1", "--config", s(&cfg)]), 0);
    let report = dir.path().join("ret/report.txt");
    let bank = corpus.join("bank.tsv");
    let args = ["retrieve", "--ckpt", s(&ckpt), "--corpus", s(&corpus), "--bank", s(&bank), "--k", "3", "--report", s(&report)];
    assert_eq!(lvmae(&args), 0);
    let recs = read_records(&dir.path().join("ret/results.jsonl")).unwrap();
    assert_eq!(recs.len(), 3);
    assert!(recs.windows(2).all(|w| w[0].value <= w[1].value));

    let pairs = dir.path().join("pairs");
    assert_eq!(lvmae(&["gen-synth", "--out", s(&pairs), "--dim", "16", "--order-pairs", "10"]), 0);
    let out = dir.path().join("probe");
    let args = ["probe", "--ckpt", s(&ckpt), "--corpus", s(&pairs), "--task", "order", "--head", "regression", "--out", s(&out)];
    assert_eq!(lvmae(&args), 0);
    let recs = read_records(&out.join("results.jsonl")).unwrap();
    assert!(recs.iter().any(|r| r.metric == "mse"));
}
