use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use nasforge_bench::{conv_classifier, conv_classifier_depths, CONV_CLASSIFIER};
use nasforge_core::backend::{CGenerator, Generator};
use nasforge_core::estimators::{estimate_flops, estimate_latency, estimate_memory};
use nasforge_core::search::Study;
use nasforge_core::{
    build_model, count_configurations, enumerate_space, forward, init_params, parse_spec, replay,
    sample_architecture, DeviceModel, RandomSource, Registry, StudyConfig, Tensor,
};

fn dsl(c: &mut Criterion) {
    c.bench_function("parse", |b| {
        b.iter(|| parse_spec(black_box(CONV_CLASSIFIER)).unwrap())
    });
    let spec = conv_classifier();
    c.bench_function("count", |b| {
        b.iter(|| count_configurations(black_box(&spec)))
    });
    let small = conv_classifier_depths("[1, 2, 3]");
    c.bench_function("enumerate_1752", |b| {
        b.iter(|| enumerate_space(black_box(&small), 10_000).unwrap().count())
    });
}

fn sampling(c: &mut Criterion) {
    let spec = conv_classifier();
    let mut seed = 0;
    c.bench_function("sample", |b| {
        b.iter(|| {
            seed += 1;
            sample_architecture(&spec, &mut RandomSource::new(seed)).unwrap()
        })
    });
    let trace = sample_architecture(&spec, &mut RandomSource::new(3))
        .unwrap()
        .trace;
    c.bench_function("replay", |b| {
        b.iter(|| replay(&spec, black_box(&trace)).unwrap())
    });
}

fn model(c: &mut Criterion) {
    let spec = conv_classifier();
    let registry = Registry::builtin();
    let ir = sample_architecture(&spec, &mut RandomSource::new(11)).unwrap();
    c.bench_function("build", |b| {
        b.iter(|| build_model(&ir, &spec.input_shape, &spec.output_shape, &registry, None).unwrap())
    });
    let graph = build_model(&ir, &spec.input_shape, &spec.output_shape, &registry, None).unwrap();
    let device = DeviceModel::default();
    c.bench_function("estimators", |b| {
        b.iter(|| {
            (
                estimate_flops(&graph).value,
                estimate_memory(&graph).value,
                estimate_latency(&graph, &device).value,
            )
        })
    });
    let params = init_params(&graph, 0);
    let x = Tensor::random(vec![4, 1250], 0);
    c.bench_function("forward", |b| {
        b.iter(|| forward(&graph, &params, black_box(&x)).unwrap())
    });
    let gen = CGenerator::new();
    c.bench_function("generate_c", |b| {
        b.iter(|| gen.generate(&graph, &params).unwrap())
    });
}

fn study(c: &mut Criterion) {
    let config: StudyConfig = serde_yaml::from_str(
        "
budget: 64
seed: 0
sampler: {kind: evolutionary, population: 16, offspring: 16, mutation_rate: 0.25, elite_fraction: 0.5}
criteria:
  - {metric: accuracy_proxy, kind: objective, weight: 1.0}
  - {metric: params, kind: soft_constraint, weight: 0.5, threshold: 20000, bounds: [0, 200000]}
",
    )
    .unwrap();
    let mut group = c.benchmark_group("study");
    group.sample_size(10);
    for parallelism in [1, 4] {
        group.bench_function(format!("evolutionary_64_p{parallelism}"), |b| {
            b.iter_batched(
                || {
                    let mut cfg = config.clone();
                    cfg.parallelism = parallelism;
                    Study::new(conv_classifier(), cfg)
                },
                |s| s.run().unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, dsl, sampling, model, study);
criterion_main!(benches);
