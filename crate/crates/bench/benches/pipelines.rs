use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use protoarg_core::model::{forward, init_params, ModelConfig};
use protoarg_core::qbaf::{forward_strengths, mlp_to_qbaf};
use protoarg_core::shapes::generate;
use protoarg_core::train::{train, TrainConfig};

fn forward_pass(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    let params = init_params(&cfg, 0).unwrap();
    let ds = generate(1, 4).unwrap();
    c.bench_function("full forward, default model", |b| {
        b.iter(|| forward(&cfg, &params, &ds.samples[0].image).unwrap());
    });
}

fn train_step(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    let ds = generate(2, 40).unwrap();
    let tcfg = TrainConfig {
        epochs: 1,
        batch_size: 32,
        projection_interval: protoarg_core::train::ProjectionInterval::Every(1000),
        ..TrainConfig::default()
    };
    c.bench_function("one epoch over 32 train samples", |b| {
        b.iter_batched(|| ds.clone(), |d| train(&cfg, &d, &tcfg).unwrap(), BatchSize::SmallInput);
    });
}

fn qbaf_eval(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    let params = init_params(&cfg, 0).unwrap();
    let qbaf = mlp_to_qbaf(&params.classifier_layers());
    c.bench_function("strength evaluation, 2-100-2 graph", |b| {
        b.iter(|| forward_strengths(&qbaf, &[0.3, -1.1]).unwrap());
    });
}

criterion_group!(benches, forward_pass, train_step, qbaf_eval);
criterion_main!(benches);
