use lvmae::corpus::{synth_generate, synth_order_pairs, SynthConfig};
use lvmae::model::{LvMae, ModelConfig};
use lvmae::probing::{attentive_probe_train, extract_latents, linear_probe_train, raw_latents, ProbeConfig};
use lvmae::training::{pretrain, PretrainConfig};

fn main() -> lvmae::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let get = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let pairs = get(1, 150.0) as usize;
    let heads = get(2, 8.0) as usize;
    let pretrain_epochs = get(3, 30.0) as usize;
    let probe_seed = get(4, 0.0) as u64;

    let sc = SynthConfig::default();
    let train = synth_generate(&sc)?;
    let mut mc = ModelConfig::new(64);
    mc.enc_depth = 1;
    mc.dec_depth = 1;
    mc.num_heads = 2;
    mc.dec_dim = 64;
    let mut model = LvMae::<f32>::new(mc, 7)?;
    if pretrain_epochs > 0 {
        let cfg = PretrainConfig { base_lr: 2e-3, warmup_epochs: 2.0, epochs: pretrain_epochs, batch_size: 4, seed: 7, ..Default::default() };
        pretrain(&mut model, &train.sequences, &cfg, None)?;
    }
    let op = synth_order_pairs(&sc, pairs)?;
    let (mut tr, mut te) = (vec![], vec![]);
    for s in &op.sequences {
        let lab = s.labels["order"] as usize;
        if s.labels["split"] == 1.0 { te.push((s.clone(), lab)) } else { tr.push((s.clone(), lab)) }
    }
    let split = |v: &Vec<(lvmae::corpus::EmbeddingSequence, usize)>| (v.iter().map(|x| x.0.clone()).collect::<Vec<_>>(), v.iter().map(|x| x.1).collect::<Vec<_>>());
    let (trs, trl) = split(&tr);
    let (tes, tel) = split(&te);
    let t = std::time::Instant::now();
    let ztr = extract_latents(&model, &trs)?;
    let zte = extract_latents(&model, &tes)?;
    let mut ac = ProbeConfig::attentive(2);
    ac.num_heads = heads;
    ac.seed = probe_seed;
    let head = attentive_probe_train(&ztr, &trl, ac)?;
    println!("AP latents: train {:.3} test {:.3} ({} test) {:.1}s", head.accuracy(&ztr, &trl)?.value(), head.accuracy(&zte, &tel)?.value(), tel.len(), t.elapsed().as_secs_f64());
    let rtr: Vec<_> = trs.iter().map(raw_latents).collect();
    let rte: Vec<_> = tes.iter().map(raw_latents).collect();
    let lp = linear_probe_train(&rtr, &trl, ProbeConfig::linear(2))?;
    println!("LP raw: train {:.3} test {:.3}", lp.accuracy(&rtr, &trl)?.value(), lp.accuracy(&rte, &tel)?.value());
    let lpz = linear_probe_train(&ztr, &trl, ProbeConfig::linear(2))?;
    println!("LP latents: test {:.3}", lpz.accuracy(&zte, &tel)?.value());
    let mut ac = ProbeConfig::attentive(2);
    ac.num_heads = heads;
    let head = attentive_probe_train(&rtr, &trl, ac)?;
    println!("AP raw: test {:.3}", head.accuracy(&rte, &tel)?.value());
    Ok(())
}
