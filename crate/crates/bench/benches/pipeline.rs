use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use misbehave::boosted::{fit_boosted, BoostConfig};
use misbehave::explain::{tree_shap, TreeEnsemble};
use misbehave::trees::{fit_forest, ForestConfig};
use misbehave::{fit_pipeline, PipelineConfig};
use misbehave_bench::{prepared_binary, raw_binary};

fn learners(c: &mut Criterion) {
    let (train, _) = prepared_binary();
    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    group.bench_function("forest_default", |b| {
        b.iter(|| fit_forest(black_box(&train), &ForestConfig::default()).unwrap())
    });
    group.bench_function("boosted_default", |b| {
        b.iter(|| fit_boosted(black_box(&train), &BoostConfig::default()).unwrap())
    });
    group.finish();
}

fn attribution(c: &mut Criterion) {
    let (train, test) = prepared_binary();
    let rows = test.select_rows(&(0..100).collect::<Vec<_>>());
    let forest = TreeEnsemble::from_forest(&fit_forest(&train, &ForestConfig::default()).unwrap()).unwrap();
    let boosted = TreeEnsemble::from_boosted(&fit_boosted(&train, &BoostConfig::default()).unwrap()).unwrap();
    let mut group = c.benchmark_group("tree_shap_100_rows");
    group.sample_size(10);
    group.bench_function("forest", |b| b.iter(|| tree_shap(&forest, black_box(rows.rows().view())).unwrap()));
    group.bench_function("boosted", |b| b.iter(|| tree_shap(&boosted, black_box(rows.rows().view())).unwrap()));
    group.finish();
}

fn stacked_prediction(c: &mut Criterion) {
    let (train, test) = raw_binary();
    let model = fit_pipeline(&train, &PipelineConfig::default()).unwrap();
    c.bench_function("stack_predict_test_split", |b| {
        b.iter(|| model.predict_dataset(black_box(&test)).unwrap())
    });
}

criterion_group!(benches, learners, attribution, stacked_prediction);
criterion_main!(benches);
