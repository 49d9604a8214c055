use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lakd::erfmeter::{fit_gnd_samples, GndParams, LmOptions};
use lakd::lakdnet::{block_forward, block_layers, NetworkConfig, ParamStore};
use lakd::nn::{conv2d_forward, ConvSpec};
use lakd::{Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("conv2d");
    let x = Tensor::uniform([4, 32, 32, 32], -1.0, 1.0, &mut rng);
    for (name, spec) in [
        ("pointwise", ConvSpec::pointwise(32, 32)),
        ("depthwise_k3", ConvSpec::depthwise(32, 3)),
        ("depthwise_k9", ConvSpec::depthwise(32, 9)),
        ("dense_k3", ConvSpec::new(32, 32, 3)),
    ] {
        let w = Tensor::uniform(spec.weight_shape(), -0.1, 0.1, &mut rng);
        let b = Tensor::zeros([spec.out_channels]);
        group.bench_function(name, |bench| {
            bench.iter(|| conv2d_forward(black_box(&x), &w, Some(&b), &spec).unwrap())
        });
    }
    group.finish();
}

fn block(c: &mut Criterion) {
    let mut group = c.benchmark_group("lakd_block_train_step");
    group.sample_size(20);
    for k in [3usize, 9] {
        let config = NetworkConfig { mixer_kernel: k, ..NetworkConfig::default() };
        let params = ParamStore::init(&block_layers("blk", 32, &config), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::uniform([2, 32, 32, 32], -1.0, 1.0, &mut rng);
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |bench, _| {
            bench.iter(|| {
                let mut g = Graph::new();
                let bound = params.bind(&mut g, true);
                let xv = g.param(x.clone());
                let y = block_forward(&mut g, xv, &bound, "blk", &config).unwrap();
                let loss = g.mean(y).unwrap();
                g.backward(loss, 1.0).unwrap();
            })
        });
    }
    group.finish();
}

fn fit(c: &mut Criterion) {
    let truth = GndParams::new(2.0, 1.5, 0.0, 0.12, 1e-4);
    let xs: Vec<f64> = (0..512).map(|i| -30.0 + 60.0 * i as f64 / 511.0).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| lakd::erfmeter::gnd_pdf(&truth, x).unwrap()).collect();
    c.bench_function("fit_gnd_512", |bench| {
        bench.iter(|| fit_gnd_samples(black_box(&xs), black_box(&ys), &LmOptions::default()).unwrap())
    });
}

criterion_group!(benches, conv, block, fit);
criterion_main!(benches);
