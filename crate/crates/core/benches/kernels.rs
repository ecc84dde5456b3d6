use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use lvmae::corpus::{synth_generate, SynthConfig};
use lvmae::model::{LvMae, ModelConfig};
use lvmae::numerics::kernels::{matmul_par, matmul_seq};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("matmul");
    for n in [64usize, 256, 512] {
        let a: Vec<f32> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        group.bench_with_input(BenchmarkId::new("seq", n), &n, |bch, &n| {
            bch.iter(|| matmul_seq(black_box(&a), black_box(&b), n, n, n))
        });
        group.bench_with_input(BenchmarkId::new("par", n), &n, |bch, &n| {
            bch.iter(|| matmul_par(black_box(&a), black_box(&b), n, n, n))
        });
    }
    group.finish();
}

fn represent(c: &mut Criterion) {
    let corpus = synth_generate(&SynthConfig { num_videos: 32, ..SynthConfig::default() }).unwrap();
    let mut cfg = ModelConfig::new(64);
    cfg.enc_depth = 4;
    cfg.dec_depth = 1;
    let model = LvMae::<f32>::new(cfg, 0).unwrap();
    let mut group = c.benchmark_group("represent");
    group.sample_size(20);
    group.bench_function("seq", |b| b.iter(|| model.represent_many_seq(black_box(&corpus.sequences)).unwrap()));
    group.bench_function("par", |b| b.iter(|| model.represent_many(black_box(&corpus.sequences)).unwrap()));
    group.finish();
}

criterion_group!(benches, matmul, represent);
criterion_main!(benches);
