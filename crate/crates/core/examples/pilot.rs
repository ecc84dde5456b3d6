use std::time::Instant;

use lvmae::corpus::{synth_generate, SynthConfig};
use lvmae::masking::MaskStrategy;
use lvmae::model::{LvMae, ModelConfig};
use lvmae::retrieval::{build_caption_bank, recall_at_k};
use lvmae::training::{evaluate_reconstruction, pretrain, PretrainConfig};

fn main() -> lvmae::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let get = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let lr = get(1, 1e-3);
    let enc = get(2, 4.0) as usize;
    let dec = get(3, 2.0) as usize;
    let warm = get(4, 3.0);
    let epochs = get(5, 30.0) as usize;
    let batch = get(6, 16.0) as usize;
    let heads = get(7, 8.0) as usize;
    let dec_dim = get(8, 32.0) as usize;
    let seed = get(9, 7.0) as u64;
    let k = get(10, 8.0) as usize;

    let sc = SynthConfig { num_prototypes: k, ..SynthConfig::default() };
    let train = synth_generate(&sc)?;
    let held = synth_generate(&SynthConfig { num_videos: 60, split: 1, ..sc.clone() })?;
    let bank = build_caption_bank(&train.captions, &train.prototypes, false)?;
    let mut mc = ModelConfig::new(64);
    mc.enc_depth = enc;
    mc.dec_depth = dec;
    mc.num_heads = heads;
    mc.dec_dim = dec_dim;
    let mut model = LvMae::<f32>::new(mc, seed)?;
    let before = evaluate_reconstruction(&model, &held.sequences, MaskStrategy::Random, 0.4, 99)?;
    let before_train = evaluate_reconstruction(&model, &train.sequences, MaskStrategy::Random, 0.4, 99)?;
    let r = recall_at_k(&model, &held.sequences, &bank, MaskStrategy::Random, 0.4, 99, 5)?;
    println!("untrained R@1 {:.4} R@5 {:.4} n {}", r.recall_at(1), r.recall_at(5), r.slots.len());
    println!("untrained held-out: {before:?}\nuntrained train: {before_train:?}");
    let cfg = PretrainConfig { base_lr: lr, warmup_epochs: warm, epochs, batch_size: batch, seed, ..Default::default() };
    let t = Instant::now();
    let log = pretrain(&mut model, &train.sequences, &cfg, None)?;
    for r in &log.epochs {
        println!("{} {:.4} {:.2e} {:.2}", r.epoch, r.mean_loss, r.lr, r.grad_norm);
    }
    let after = evaluate_reconstruction(&model, &held.sequences, MaskStrategy::Random, 0.4, 99)?;
    let after_train = evaluate_reconstruction(&model, &train.sequences, MaskStrategy::Random, 0.4, 99)?;
    let r = recall_at_k(&model, &held.sequences, &bank, MaskStrategy::Random, 0.4, 99, 5)?;
    println!("trained R@1 {:.4} R@5 {:.4}", r.recall_at(1), r.recall_at(5));
    println!("trained held-out: {after:?}\ntrained train: {after_train:?}\n{:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
