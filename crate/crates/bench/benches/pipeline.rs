use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use uwsl_core::camera::undistort_fdc;
use uwsl_core::edicp::{register, RegistrationConfig};
use uwsl_core::fixtures;
use uwsl_core::fusion::{run_fusion, Method};
use uwsl_core::handeye::{calibrate, LmConfig};
use uwsl_core::recon::triangulate;
use uwsl_core::sim::{synth_inertial_acoustic, synthetic_pose_pairs, NoiseSpec, Rig, ScanMode, SpeedProfile, TrajectorySpec};
use uwsl_core::{FilterConfig, NavState, PointCloud, RigidTransform, UndistortConfig, Vec2, Vec3};

fn bench_undistort(c: &mut Criterion) {
    let d = fixtures::distortion();
    let pts: Vec<Vec2> = (0..256).map(|i| Vec2::new(-0.6 + 1.2 * (i % 16) as f64 / 15.0, -0.45 + 0.9 * (i / 16) as f64 / 15.0)).collect();
    c.bench_function("undistort_fdc_256", |b| {
        b.iter(|| {
            for p in &pts {
                black_box(undistort_fdc(black_box(p), &d, 200, 1e-8).unwrap());
            }
        })
    });
}

fn bench_triangulate(c: &mut Criterion) {
    let rig = Rig::reference();
    let cfg = UndistortConfig::default();
    let pixels: Vec<Vec2> = (0..256).map(|i| Vec2::new(1024.0 + (i as f64 - 128.0), 200.0 + 4.0 * i as f64)).collect();
    c.bench_function("triangulate_256", |b| {
        b.iter(|| {
            for p in &pixels {
                let _ = black_box(triangulate(black_box(p), &rig.intrinsics, &rig.distortion, &rig.plane, &cfg));
            }
        })
    });
}

fn bench_handeye(c: &mut Criterion) {
    let pairs = synthetic_pose_pairs(&fixtures::camera_dvl_extrinsic(), 20, 1, Some((1e-3, 1e-3)));
    let cfg = LmConfig::default();
    c.bench_function("handeye_20_pairs", |b| b.iter(|| calibrate(black_box(&pairs), &RigidTransform::identity(), &cfg).unwrap()));
}

fn bench_aekf(c: &mut Criterion) {
    let mut spec = TrajectorySpec::scan(ScanMode::Translation, SpeedProfile::variable_default(), 0.0, 0.5, 10.0);
    spec.noise = NoiseSpec { accel: 1e-2, gyro: 1e-3, dvl: 1e-2, ..Default::default() };
    let (imu, dvl, truth) = synth_inertial_acoustic(&spec, 1).unwrap();
    let cfg = FilterConfig::default();
    let traj = &truth.trajectory;
    let t0 = imu[0].t;
    let init = NavState::new(t0, traj.position(t0), traj.velocity(t0), traj.attitude(t0).to_quaternion(), cfg.p0);
    let mut g = c.benchmark_group("fusion_10s");
    g.sample_size(20);
    for (name, m) in [("dr", Method::DeadReckoning), ("ekf", Method::Ekf), ("aekf", Method::Aekf)] {
        g.bench_function(name, |b| b.iter(|| run_fusion(&imu, &dvl, init, &cfg, m, None, 1e-6).unwrap()));
    }
    g.finish();
}

fn ellipsoid(n: usize) -> PointCloud {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    PointCloud::from_points(
        (0..n)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let a = golden * i as f64;
                Vec3::new(0.12 * r * a.cos(), 0.08 * r * a.sin(), 0.05 * z)
            })
            .collect(),
    )
}

fn bench_icp(c: &mut Criterion) {
    let target = ellipsoid(10_000);
    let source = ellipsoid(7_000).transformed(&RigidTransform::from_translation(Vec3::new(2e-3, -1e-3, 1e-3)));
    let mut g = c.benchmark_group("icp_7k_to_10k");
    g.sample_size(10);
    g.bench_function("edge_weighted", |b| {
        b.iter(|| register(&source, &target, &RegistrationConfig::default(), &RigidTransform::identity()).unwrap())
    });
    g.bench_function("plain", |b| {
        b.iter(|| register(&source, &target, &RegistrationConfig::plain_icp(), &RigidTransform::identity()).unwrap())
    });
    g.finish();
}

criterion_group!(benches, bench_undistort, bench_triangulate, bench_handeye, bench_aekf, bench_icp);
criterion_main!(benches);
