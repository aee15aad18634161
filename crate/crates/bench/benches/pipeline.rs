use calibflow::camera::{rasterize_depth, PinholeIntrinsics, PointCloud};
use calibflow::correlation::{build_correlation_volume, build_pyramid, lookup, FeatureMap};
use calibflow::flow::flow_for_depth;
use calibflow::geometry::{SE3Transform, Twist, Vec3};
use calibflow::grid::Grid;
use calibflow::sim::{default_extrinsic, make_experiment, Geometry, NoiseConfig, SceneConfig};
use calibflow::solver::{
    correspondences_from_flow, pose_jacobian_wrt_targets, solve_weighted, SolveOptions,
};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn k_vga() -> PinholeIntrinsics {
    PinholeIntrinsics::new(350.0, 350.0, 319.5, 95.5, 640, 192).unwrap()
}

fn random_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = k_vga();
    let inv = default_extrinsic().inverse();
    let points = (0..n)
        .map(|_| {
            let u = rng.random_range(5.0..635.0);
            let v = rng.random_range(5.0..187.0);
            let z = rng.random_range(2.0..40.0);
            inv.transform_point(&Vec3::new(
                (u - k.cx) * z / k.fx,
                (v - k.cy) * z / k.fy,
                z,
            ))
        })
        .collect();
    PointCloud::new(points).unwrap()
}

fn bench_se3(c: &mut Criterion) {
    let mut group = c.benchmark_group("se3");
    let xi = Twist::new(Vec3::new(0.3, -0.2, 0.5), Vec3::new(0.2, 0.4, -0.1));
    group.bench_function("exp", |b| b.iter(|| SE3Transform::exp(black_box(&xi))));
    let t = SE3Transform::exp(&xi);
    group.bench_function("log", |b| b.iter(|| black_box(&t).log().unwrap()));
    group.bench_function("compose", |b| {
        b.iter(|| black_box(&t).compose(black_box(&t)))
    });
    group.finish();
}

fn bench_rasterize(c: &mut Criterion) {
    let mut group = c.benchmark_group("rasterize_depth");
    let t = default_extrinsic();
    let k = k_vga();
    for n in [10_000usize, 50_000] {
        let cloud = random_cloud(n, 1);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &cloud, |b, cloud| {
            b.iter(|| rasterize_depth(black_box(cloud), &t, &k))
        });
    }
    group.finish();
}

fn bench_flow(c: &mut Criterion) {
    let cloud = random_cloud(20_000, 2);
    let t_gt = default_extrinsic();
    let t_init = t_gt.compose(&SE3Transform::exp(&Twist::new(
        Vec3::new(0.05, -0.03, 0.02),
        Vec3::new(0.02, 0.01, -0.03),
    )));
    let k = k_vga();
    let depth = rasterize_depth(&cloud, &t_init, &k);
    c.bench_function("ground_truth_flow/20k", |b| {
        b.iter(|| flow_for_depth(black_box(&depth), &cloud, &t_gt, &k))
    });
}

fn bench_correlation(c: &mut Criterion) {
    let mut group = c.benchmark_group("correlation");
    group.sample_size(20);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = FeatureMap::from_fn(32, 32, 32, |_, _, _| rng.random_range(-1.0..1.0));
    let b_map = FeatureMap::from_fn(32, 32, 32, |_, _, _| rng.random_range(-1.0..1.0));
    group.bench_function("volume_32x32_d32", |b| {
        b.iter(|| build_correlation_volume(black_box(&a), black_box(&b_map)).unwrap())
    });
    let volume = build_correlation_volume(&a, &b_map).unwrap();
    group.bench_function("pyramid", |b| {
        b.iter(|| build_pyramid(black_box(volume.clone())).unwrap())
    });
    let pyramid = build_pyramid(volume).unwrap();
    let coords = Grid::filled(32, 32, [16.3, 15.7]);
    group.bench_function("lookup_r4", |b| {
        b.iter(|| lookup(black_box(&pyramid), &coords, 4).unwrap())
    });
    group.finish();
}

fn bench_solver(c: &mut Criterion) {
    let mut group = c.benchmark_group("solver");
    let k = k_vga();
    let scene = SceneConfig {
        n_points: 2000,
        depth_range: (2.0, 40.0),
        fov_margin: 0.05,
        geometry: Geometry::UniformFrustum,
        seed: 4,
    };
    let range = calibflow::geometry::PerturbRange::new(0.10, 5.0_f64.to_radians()).unwrap();
    let exp = make_experiment(&scene, &NoiseConfig::noiseless(1), &range, &k, 9).unwrap();
    let cs = correspondences_from_flow(&exp.depth, &exp.cloud, &exp.flow_gt, &k);
    group.throughput(Throughput::Elements(cs.len() as u64));
    group.bench_function("solve_weighted", |b| {
        b.iter(|| {
            solve_weighted(
                black_box(&exp.t_init),
                black_box(&cs),
                &k,
                &SolveOptions::default(),
            )
            .unwrap()
        })
    });
    let opts = SolveOptions {
        convergence_tol: 1e-12,
        max_iterations: 100,
        ..SolveOptions::default()
    };
    let report = solve_weighted(&exp.t_init, &cs, &k, &opts).unwrap();
    group.bench_function("pose_jacobian", |b| {
        b.iter(|| {
            pose_jacobian_wrt_targets(black_box(&report), &cs, &k, &exp.t_init, &opts).unwrap()
        })
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_se3,
    bench_rasterize,
    bench_flow,
    bench_correlation,
    bench_solver
);
criterion_main!(benches);
