//! Data-parallel kernels on the default rayon pool versus a one-thread pool.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use prescribe_core::causal::{effect_curve, select_features, EffectOptions};
use prescribe_core::eval::{evaluate, perturb_queries};
use prescribe_core::fixtures;
use prescribe_core::genpipeline::{categorical_values, generate_prompt_database, param_names};
use prescribe_core::nlu::{extractor_specs, DeterministicStrategy};
use prescribe_core::policy::learn_policy;
use rayon::ThreadPoolBuilder;

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    vec![
        ("sequential", ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("parallel", ThreadPoolBuilder::new().build().unwrap()),
    ]
}

fn kernels(c: &mut Criterion) {
    let (meta, table) = fixtures::bank(0);
    let features = vec!["job".to_string(), "euribor3m".to_string()];
    let values = categorical_values(&table, &meta, &features).unwrap();
    let specs = extractor_specs(&meta, &features, &values);
    let db = generate_prompt_database(&meta, &table, &features, 0, 100).unwrap();
    let strategy = DeterministicStrategy::new(&db, &meta, &specs);
    let protected = param_names(&features);
    let testset = perturb_queries(&db, 0, 238, &protected);

    let mut group = c.benchmark_group("kernels");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_with_input(BenchmarkId::new("bootstrap_effect", name), &pool, |b, pool| {
            b.iter(|| pool.install(|| effect_curve(&table, &meta, &features, &EffectOptions::with_error(0)).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("select_features", name), &pool, |b, pool| {
            b.iter(|| pool.install(|| select_features(&table, &meta, 5, 0).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("learn_policy", name), &pool, |b, pool| {
            b.iter(|| pool.install(|| learn_policy(&table, &meta, &features, 4, 3.5).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("nlu_eval", name), &pool, |b, pool| {
            b.iter(|| pool.install(|| evaluate(&strategy, &specs, &testset).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
