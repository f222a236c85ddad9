use bookend_bench::stories;
use bookend_core::backends::stubs::HashEmbedder;
use bookend_core::endpoint::LmConfig;
use bookend_core::infill::infill_story;
use bookend_core::preprocessing::{build_all, PreprocessConfig};
use bookend_core::{BackendSuite, Sentence};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn infill(c: &mut Criterion) {
    let suite = BackendSuite::stubs("<mask>");
    let cfg = LmConfig::default();
    let start = Sentence::new("A husband and his wife are looking for a new home.").unwrap();
    let stop = Sentence::new("They finally found a home they loved.").unwrap();
    let mut group = c.benchmark_group("infill_story");
    for n in [5, 10, 25] {
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| {
                infill_story(
                    start.clone(),
                    stop.clone(),
                    black_box(n),
                    suite.scorer.as_ref(),
                    suite.infill_generator.as_ref(),
                    &cfg,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn preprocess(c: &mut Criterion) {
    let corpus = stories(5, 200, 5);
    let embedder = HashEmbedder::default();
    let cfg = PreprocessConfig::default();
    c.bench_function("build_all/200_stories", |b| {
        b.iter(|| build_all(black_box(&corpus), &embedder, &cfg).unwrap())
    });
}

criterion_group!(benches, infill, preprocess);
criterion_main!(benches);
