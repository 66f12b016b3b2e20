use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use msynfd_bench::{desk_config, examples, model};
use msynfd_core::train::batch_gradient;
use msynfd_core::{Ablation, Mode, ModelConfig};

fn single_example(c: &mut Criterion) {
    let m = model(desk_config());
    let mut group = c.benchmark_group("loss_and_grads");
    for n in [16, 48, 128] {
        let ex = &examples(1, n, 3, n as u64)[0];
        group.bench_with_input(BenchmarkId::from_parameter(n), ex, |b, ex| {
            b.iter(|| m.loss_and_grads(black_box(ex)).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("inference");
    for n in [16, 128] {
        let ex = &examples(1, n, 3, n as u64)[0];
        group.bench_with_input(BenchmarkId::from_parameter(n), ex, |b, ex| {
            b.iter(|| m.predict(black_box(ex), Mode::Infer).unwrap())
        });
    }
    group.finish();
}

fn hops_and_ablations(c: &mut Criterion) {
    let mut group = c.benchmark_group("hops");
    for hops in [1, 3, 6] {
        let m = model(ModelConfig { hops, ..desk_config() });
        let ex = &examples(1, 48, hops, 7)[0];
        group.bench_with_input(BenchmarkId::from_parameter(hops), ex, |b, ex| {
            b.iter(|| m.loss_and_grads(black_box(ex)).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("ablation");
    let ex = &examples(1, 48, 3, 11)[0];
    for ab in Ablation::ALL {
        let m = model(ModelConfig {
            ablation: ab,
            ..desk_config()
        });
        group.bench_with_input(BenchmarkId::from_parameter(ab.name()), ex, |b, ex| {
            b.iter(|| m.loss_and_grads(black_box(ex)).unwrap())
        });
    }
    group.finish();
}

fn batch(c: &mut Criterion) {
    let m = model(desk_config());
    let batch = examples(32, 24, 3, 3);
    let refs: Vec<_> = batch.iter().collect();
    c.bench_function("batch_gradient/32x24", |b| {
        b.iter(|| batch_gradient(&m, black_box(&refs)).unwrap())
    });
}

criterion_group!(benches, single_example, hops_and_ablations, batch);
criterion_main!(benches);
