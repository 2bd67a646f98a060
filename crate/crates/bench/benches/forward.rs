//! Hot-path microbenchmarks: dense matmul, the full layer forward, top-k
//! subset selection at shrinking k, and batched dispatch.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use softmoe_bench::stack;
use softmoe_core::selection::{algorithm1_forward, batched_select};
use softmoe_core::tensor::{matmul, sample_gaussian, RngStream};

fn bench_matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    let mut stream = RngStream::new(1, "bench-matmul");
    for size in [32usize, 128, 256] {
        let a = sample_gaussian(&mut stream, size, size, 0.0, 1.0).unwrap();
        let b = sample_gaussian(&mut stream, size, size, 0.0, 1.0).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(size), &size, |bencher, _| {
            bencher.iter(|| matmul(black_box(&a), black_box(&b)).unwrap())
        });
    }
    group.finish();
}

fn bench_layer_forward(c: &mut Criterion) {
    let (layers, inputs) = stack(1, 64, 8, 512, 8, 1);
    c.bench_function("layer_forward d=64 n=8 H=512 m=8", |bencher| {
        bencher.iter(|| layers[0].forward(black_box(&inputs[0])).unwrap())
    });
}

fn bench_subset_selection(c: &mut Criterion) {
    // a scaled-down version of the headline latency stack
    let (layers, inputs) = stack(2, 128, 8, 8 * 512, 16, 1);
    let mut group = c.benchmark_group("alg1_forward_stack");
    group.sample_size(20);
    for k in [8usize, 4, 2, 1] {
        group.bench_with_input(BenchmarkId::new("k", k), &k, |bencher, &k| {
            bencher.iter(|| {
                let mut tokens = inputs[0].clone();
                for layer in &layers {
                    tokens = algorithm1_forward(layer, &tokens, k).unwrap().output;
                }
                black_box(tokens)
            })
        });
    }
    group.finish();
}

fn bench_batched_dispatch(c: &mut Criterion) {
    let (layers, inputs) = stack(1, 64, 8, 512, 8, 32);
    let mut group = c.benchmark_group("dispatch_32_items");
    group.sample_size(20);
    group.bench_function("batched_select", |bencher| {
        bencher.iter(|| black_box(batched_select(&layers[0], black_box(&inputs), 2).unwrap()))
    });
    group.bench_function("per_item", |bencher| {
        bencher.iter(|| {
            for x in &inputs {
                black_box(algorithm1_forward(&layers[0], black_box(x), 2).unwrap());
            }
        })
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_matmul,
    bench_layer_forward,
    bench_subset_selection,
    bench_batched_dispatch
);
criterion_main!(benches);
