use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use tlhead_bench::{layer, random_matrix, SHAPES};
use tlhead_core::layers::{affine_backward_params, affine_forward_into};
use tlhead_core::optim::sgd_step;
use tlhead_core::DenseMatrix;

const BATCH: usize = 16;

fn forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("affine_forward");
    for &(name, fan_in, fan_out) in SHAPES {
        let x = random_matrix(BATCH, fan_in, 1);
        let p = layer(fan_in, fan_out, 2);
        let mut out = DenseMatrix::zeros(0, 0);
        g.throughput(Throughput::Elements((2 * BATCH * fan_in * fan_out) as u64));
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| affine_forward_into(black_box(&x), &p, &mut out, 1).unwrap())
        });
    }
    g.finish();
}

fn backward(c: &mut Criterion) {
    let mut g = c.benchmark_group("affine_backward_params");
    for &(name, fan_in, fan_out) in SHAPES {
        let x = random_matrix(BATCH, fan_in, 3);
        let d = random_matrix(BATCH, fan_out, 4);
        let mut p = layer(fan_in, fan_out, 5);
        g.throughput(Throughput::Elements((2 * BATCH * fan_in * fan_out) as u64));
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| affine_backward_params(black_box(&x), &mut p, &d, 1).unwrap())
        });
    }
    g.finish();
}

fn sgd(c: &mut Criterion) {
    let mut g = c.benchmark_group("sgd_step");
    let (fan_in, fan_out) = (4096, 4096);
    let mut p = layer(fan_in, fan_out, 6);
    g.throughput(Throughput::Elements((fan_in * fan_out) as u64));
    for momentum in [0.0, 0.9] {
        g.bench_function(BenchmarkId::new("fc7", momentum), |b| {
            b.iter(|| sgd_step(&mut p, black_box(1e-6), momentum).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, forward, backward, sgd);
criterion_main!(benches);
