//! Splat rendering and control-map rasterization on the corridor scene,
//! with the default thread pool against a single-thread pool.

use criterion::{criterion_group, criterion_main, Criterion};

use meshsplat::genbackend::OracleBackend;
use meshsplat::pipeline::{Pipeline, PipelineConfig};
use meshsplat::raster::render_control_maps;
use meshsplat::scene::{toy, CameraIntrinsics, CameraPath, Scene};
use meshsplat::splatter::render;
use meshsplat::surfel::GaussianField;

fn fixture() -> (Scene, CameraPath, GaussianField) {
    let corridor = toy::Corridor::default();
    let scene = Scene::new(corridor.build()).expect("corridor mesh");
    let k = CameraIntrinsics::from_horizontal_fov(256, 144, 45.0).expect("intrinsics");
    let path = corridor.path(12, 1.0, k).expect("path");
    let config = PipelineConfig { keyframe_gca: false, subsequence_gca: false, ..Default::default() };
    let field = Pipeline::new(&scene, &path, &OracleBackend, &config).and_then(|p| p.run()).expect("pipeline").field;
    (scene, path, field)
}

fn bench_render(c: &mut Criterion) {
    let (scene, path, field) = fixture();
    let pose = &path.poses[0];
    let k = &path.intrinsics;
    let mut group = c.benchmark_group("render");
    group.sample_size(20);

    #[cfg(feature = "parallel")]
    {
        group.bench_function("splat/parallel", |b| b.iter(|| render(&field, pose, k, [0.0; 3])));
        group.bench_function("control_maps/parallel", |b| b.iter(|| render_control_maps(&scene, pose, k)));
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("thread pool");
        group.bench_function("splat/sequential", |b| b.iter(|| single.install(|| render(&field, pose, k, [0.0; 3]))));
        group.bench_function("control_maps/sequential", |b| b.iter(|| single.install(|| render_control_maps(&scene, pose, k))));
    }
    #[cfg(not(feature = "parallel"))]
    {
        group.bench_function("splat/sequential", |b| b.iter(|| render(&field, pose, k, [0.0; 3])));
        group.bench_function("control_maps/sequential", |b| b.iter(|| render_control_maps(&scene, pose, k)));
    }
    group.finish();
}

criterion_group!(benches, bench_render);
criterion_main!(benches);
