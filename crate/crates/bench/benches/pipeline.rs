use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use consreg::geometry::{apply_transform, axis_rotation, Axis, RigidTransform};
use consreg::matching::{
    bilateral_consensus, similarity_matrix, softmax_pool_top_k, SHARP_TEMPERATURE,
};
use consreg::registration::{register, weighted_procrustes, PipelineConfig, WeightedPairs};
use consreg::synthetic::{generate, Shape};
use consreg::{
    extract_features, farthest_point_sampling, icp, CloudRole, FeatureBackend, IcpConfig,
};

fn procrustes(c: &mut Criterion) {
    let cloud = generate(Shape::Box, 256, 1).unwrap();
    let t = RigidTransform::from_rotation(axis_rotation(Axis::Z, 120.0)).unwrap();
    let moved = apply_transform(&t, &cloud);
    let pairs = WeightedPairs::uniform(cloud.points().to_vec(), moved.points().to_vec()).unwrap();
    c.bench_function("weighted_procrustes/256", |b| {
        b.iter(|| weighted_procrustes(black_box(&pairs)))
    });
}

fn fps(c: &mut Criterion) {
    let cloud = generate(Shape::Ell, 7168, 2).unwrap();
    let mut group = c.benchmark_group("farthest_point_sampling");
    for n in [256, 1024] {
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| farthest_point_sampling(black_box(&cloud), n, 0))
        });
    }
    group.finish();
}

fn consensus(c: &mut Criterion) {
    let cloud = generate(Shape::Blobs, 256, 3)
        .unwrap()
        .with_index_correspondence();
    let backend = FeatureBackend::oracle(0);
    let fx = extract_features(&backend, &cloud, CloudRole::Source).unwrap();
    let s = similarity_matrix(&fx, &fx).unwrap();
    c.bench_function("consensus_top_k/256x256", |b| {
        b.iter(|| {
            let m = bilateral_consensus(black_box(&s), SHARP_TEMPERATURE).unwrap();
            softmax_pool_top_k(&m, 128).unwrap()
        })
    });
}

fn pipeline(c: &mut Criterion) {
    let target = generate(Shape::Ell, 1024, 4)
        .unwrap()
        .with_index_correspondence();
    let t = RigidTransform::from_rotation(axis_rotation(Axis::Z, 180.0)).unwrap();
    let source = apply_transform(&t, &target);
    let cfg = PipelineConfig {
        temperature: SHARP_TEMPERATURE,
        ..PipelineConfig::default()
    };
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    group.bench_function("oracle/1024", |b| {
        b.iter(|| register(&source, &target, &FeatureBackend::oracle(0), &cfg).unwrap())
    });
    group.bench_function("handcrafted/1024", |b| {
        b.iter(|| register(&source, &target, &FeatureBackend::handcrafted(), &cfg).unwrap())
    });
    let small = RigidTransform::from_rotation(axis_rotation(Axis::Z, 10.0)).unwrap();
    let nearby = apply_transform(&small, &target);
    group.bench_function("icp/1024", |b| {
        b.iter(|| icp(&nearby, &target, &IcpConfig::default()).unwrap())
    });
    group.finish();
}

criterion_group!(benches, procrustes, fps, consensus, pipeline);
criterion_main!(benches);
