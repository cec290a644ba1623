use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;
use steglab::fld::train_fld;
use steglab::gfr::{extract, FeatureMatrix, GaborBank, GfrConfig};
use steglab::jpeg::{compress, quality_to_qtable};
use steglab::net::build_proposed;
use steglab::synth::{texture, TextureParams};
use steglab::tensor::{conv2d, ConvParams};
use steglab::{EnsembleConfig, Shape4, Tensor4};
use steglab_bench::{batch, images, pairs};

fn tensor_ops(c: &mut Criterion) {
    let x = Tensor4::from_fn(Shape4::new(16, 32, 64, 64), |n, ch, h, w| ((n + ch * 3 + h * 5 + w * 7) % 17) as f32);
    let k3 = Tensor4::from_fn(Shape4::new(64, 32, 3, 3), |o, i, h, w| ((o + i + h + w) % 5) as f32 * 0.01);
    let k1 = Tensor4::from_fn(Shape4::new(96, 32, 1, 1), |o, i, _, _| ((o * i) % 7) as f32 * 0.01);
    let p3 = ConvParams::new(k3, None, 2, 1);
    let p1 = ConvParams::new(k1, None, 1, 0);
    c.bench_function("conv3x3_s2_16x32x64x64", |b| b.iter(|| conv2d(black_box(&x), &p3).unwrap()));
    c.bench_function("conv1x1_16x32x64x64", |b| b.iter(|| conv2d(black_box(&x), &p1).unwrap()));
}

fn network(c: &mut Criterion) {
    let (imgs, labels) = images(&pairs(8, 64));
    let x = batch(&imgs);
    let mut g = c.benchmark_group("network");
    g.sample_size(10);
    let net = build_proposed(64, 64).unwrap();
    g.bench_function("predict_16x64x64", |b| b.iter(|| net.predict(black_box(&x)).unwrap()));
    g.bench_function("train_step_16x64x64", |b| {
        b.iter_batched(|| net.clone(), |mut n| n.train_step(&x, &labels).unwrap(), BatchSize::LargeInput)
    });
    g.finish();
}

fn classical(c: &mut Criterion) {
    let qt = quality_to_qtable(75).unwrap();
    let img = texture(&TextureParams::default(), 256, 1);
    c.bench_function("jpeg_compress_256", |b| b.iter(|| compress(black_box(&img), &qt).unwrap()));

    let (imgs, labels) = images(&pairs(30, 64));
    let bank = GaborBank::default();
    let cfg = GfrConfig::for_qtable(&qt);
    let mut g = c.benchmark_group("classical");
    g.sample_size(10);
    g.bench_function("gfr_extract_64", |b| b.iter(|| extract(black_box(&imgs[0]), &bank, &cfg).unwrap()));
    let rows: Vec<Vec<f32>> =
        imgs.iter().map(|i| extract(i, &bank, &cfg).unwrap().values.iter().map(|&v| v as f32).collect()).collect();
    let features = FeatureMatrix::from_rows(&rows, 0).unwrap();
    let ens = EnsembleConfig { learners: 5, d_sub: Some(100), ..EnsembleConfig::default() };
    g.bench_function("fld_5x100", |b| b.iter(|| train_fld(black_box(&features), &labels, &ens).unwrap()));
    g.finish();
}

criterion_group!(benches, tensor_ops, network, classical);
criterion_main!(benches);
