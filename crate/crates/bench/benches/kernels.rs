use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;
use std::hint::black_box;

use delayfb_core::logsim::{build_world, simulate_log, stream_rng, DelayLaw, WorldSpec};
use delayfb_core::metrics;
use delayfb_core::nnet::{grad, Example, LossKind, ModelParams, ModelShape, Target};
use delayfb_core::{FeatureSchema, DAY};

fn network(c: &mut Criterion) {
    let schema = FeatureSchema::new(vec![50, 40, 30]).unwrap();
    let shape = ModelShape {
        embedding_dim: 8,
        hidden: vec![32, 16],
        elapsed_window: Some(30 * DAY),
    };
    let params = ModelParams::init(&schema, &shape, &mut stream_rng(1, 0)).unwrap();
    let mut rng = stream_rng(2, 0);
    let inputs: Vec<(Vec<u32>, i64)> = (0..1024)
        .map(|_| {
            let f = vec![rng.random_range(0..50), rng.random_range(0..40), rng.random_range(0..30)];
            (f, rng.random_range(1..30 * DAY))
        })
        .collect();
    c.bench_function("forward_1024", |b| {
        b.iter(|| {
            params
                .predict_batch(inputs.iter().map(|(f, e)| (f.as_slice(), Some(*e))))
                .unwrap()
        })
    });
    let batch: Vec<Example<'_>> = inputs
        .iter()
        .map(|(f, e)| Example {
            features: f,
            elapsed: Some(*e),
            target: Target { v: 0.0, c: 1.0, w: 0.3 },
        })
        .collect();
    c.bench_function("grad_lc_1024", |b| b.iter(|| grad(black_box(&params), &batch, LossKind::Lc).unwrap()));
}

fn ranking(c: &mut Criterion) {
    let mut group = c.benchmark_group("auc_prauc");
    for n in [1_000usize, 100_000] {
        let mut rng = stream_rng(3, n as u64);
        let scores: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 100.0).round() / 100.0).collect();
        let labels: Vec<bool> = scores.iter().map(|&s| rng.random::<f64>() < s).collect();
        group.bench_with_input(BenchmarkId::new("auc", n), &n, |b, _| {
            b.iter(|| metrics::auc(&scores, &labels).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("prauc", n), &n, |b, _| {
            b.iter(|| metrics::prauc(&scores, &labels).unwrap())
        });
    }
    group.finish();
}

fn simulation(c: &mut Criterion) {
    let spec = WorldSpec {
        field_vocab: vec![50, 40, 30],
        num_contexts: 300,
        cvr_range: (0.05, 0.5),
        delay_range: (1.0 / (20.0 * DAY as f64), 1.0 / (0.5 * DAY as f64)),
        delay_law: DelayLaw::Exponential,
        w_a: 30 * DAY,
        drift: None,
    };
    let world = build_world(&spec, 4).unwrap();
    c.bench_function("simulate_50k", |b| b.iter(|| simulate_log(&world, 50_000, 23 * DAY, 5).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = network, ranking, simulation
}
criterion_main!(benches);
