use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ecr_bench::{labelled, uniform};
use ecr_core::anchors::{kmeans, KMeansParams};
use ecr_core::codec::{encode, project, EncodeConfig, EncodeMode, RetrievalScope};
use ecr_core::retrieval::{HnswIndex, HnswParams};

fn codec(c: &mut Criterion) {
    let (emb, anchors) = labelled(50, 64);
    let h = emb.row_f64(0);
    c.bench_function("project", |b| {
        b.iter(|| project(black_box(&h), &anchors).unwrap())
    });
    let global = EncodeConfig::default();
    let topk = EncodeConfig {
        mode: EncodeMode::Retrieval {
            k: 3,
            scope: RetrievalScope::Global,
        },
        ..Default::default()
    };
    c.bench_function("encode/global", |b| {
        b.iter(|| encode(black_box(&h), &anchors, &global).unwrap())
    });
    c.bench_function("encode/top3", |b| {
        b.iter(|| encode(black_box(&h), &anchors, &topk).unwrap())
    });
}

fn hnsw(c: &mut Criterion) {
    let base = uniform(20_000, 64, 1);
    let queries = uniform(256, 64, 2);
    let index = HnswIndex::build(&base, HnswParams::default()).unwrap();
    let mut group = c.benchmark_group("hnsw_query");
    for ef in [16, 64, 128] {
        group.bench_with_input(BenchmarkId::from_parameter(ef), &ef, |b, &ef| {
            let mut i = 0;
            b.iter(|| {
                i = (i + 1) % queries.n();
                index.query(queries.row(i), 5, ef).unwrap()
            })
        });
    }
    group.finish();
}

fn clustering(c: &mut Criterion) {
    let x = uniform(2_000, 32, 3);
    let params = KMeansParams {
        k: 8,
        seed: 0,
        max_iter: 50,
        tol: 1e-8,
    };
    c.bench_function("kmeans/2000x32/k8", |b| {
        b.iter(|| kmeans(black_box(&x), &params).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = codec, hnsw, clustering
}
criterion_main!(benches);
