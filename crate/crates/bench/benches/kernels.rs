use criterion::{criterion_group, criterion_main, Criterion};
use protoarg_core::rng::Rng;
use protoarg_core::tensor::{Tape, Tensor};

fn conv2d_forward(c: &mut Criterion) {
    let mut rng = Rng::new(1);
    let input = Tensor::uniform(vec![14, 14, 16], -1.0, 1.0, &mut rng);
    let kernels = Tensor::uniform(vec![3, 3, 16, 32], -1.0, 1.0, &mut rng);
    c.bench_function("conv2d 14x14x16 -> 32", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let x = tape.leaf(input.clone());
            let k = tape.leaf(kernels.clone());
            tape.conv2d(x, k, 1, 1).unwrap()
        });
    });
}

fn conv2d_forward_backward(c: &mut Criterion) {
    let mut rng = Rng::new(2);
    let input = Tensor::uniform(vec![14, 14, 16], -1.0, 1.0, &mut rng);
    let kernels = Tensor::uniform(vec![3, 3, 16, 32], -1.0, 1.0, &mut rng);
    c.bench_function("conv2d fwd+bwd 14x14x16 -> 32", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let x = tape.leaf(input.clone());
            let k = tape.leaf(kernels.clone());
            let y = tape.conv2d(x, k, 1, 1).unwrap();
            let loss = tape.sum_all(y);
            tape.backward(loss).unwrap();
        });
    });
}

fn channel_wise_max(c: &mut Criterion) {
    let mut rng = Rng::new(3);
    let sm = Tensor::uniform(vec![7, 7, 64], -1.0, 1.0, &mut rng);
    c.bench_function("channel_wise_max 7x7x64", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let x = tape.leaf(sm.clone());
            tape.channel_wise_max(x).unwrap()
        });
    });
}

fn kmeans_100x64(c: &mut Criterion) {
    let mut rng = Rng::new(4);
    let rows: Vec<Vec<f64>> = (0..100).map(|_| (0..64).map(|_| rng.uniform(0.0, 1.0)).collect()).collect();
    c.bench_function("kmeans 100 neurons x 64 samples, k=20", |b| {
        b.iter(|| protoarg_core::qbaf::kmeans(&rows, 20, 7));
    });
}

criterion_group!(benches, conv2d_forward, conv2d_forward_backward, channel_wise_max, kmeans_100x64);
criterion_main!(benches);
