use proptest::prelude::*;

use uwsl_core::fixtures;
use uwsl_core::recon::{build_cloud, gate_stripe, CannyDetector, CloudConfig, EdgeDetector, EdgePolyline, FixedPlane};
use uwsl_core::scenario::{gate_scan, run_scan, ScanScenario};
use uwsl_core::sim::{
    render, silhouette_curves, ClutterSpec, ServoSweep, PipeSegment, Rig, ScanMode, SceneSpec, SpeedProfile, SurfaceLabel, Trajectory, TrajectorySpec,
};
use uwsl_core::geom::exp_so3;
use uwsl_core::{DisplacementMode, FramePose, RigidTransform, StripeFrame, Vec2, Vec3};

fn bare_pipe() -> SceneSpec {
    SceneSpec { segments: vec![PipeSegment::on_bed(0.08, 0.3, 0.0, 0.0)], ..Default::default() }
}

#[test]
fn detected_edges_follow_true_silhouettes() {
    let spec = bare_pipe();
    let scene = uwsl_core::sim::generate_scene(&spec, 1).unwrap();
    let rig = Rig::reference();
    let traj = Trajectory::new(&TrajectorySpec::scan(ScanMode::Translation, SpeedProfile::Uniform(3e-3), -0.05, 0.51, 30.0), 1).unwrap();
    let detector = CannyDetector::default();
    let mut checked = 0;
    for t in [0.0, 15.0, 30.0] {
        let pose = traj.camera_pose(t, &rig);
        let img = render(&scene, &pose, &rig).unwrap();
        let edges = detector.detect(&img);
        assert!(!edges.is_empty());
        let curves = silhouette_curves(&spec.segments[0], &pose, &rig, 2e-3).expect("camera outside the pipe");
        for curve in &curves {
            for p in curve {
                // Skip the image border, where Canny has no full neighbourhood.
                if p.x < 5.0 || p.y < 5.0 || p.x > rig.width as f64 - 5.0 || p.y > rig.height as f64 - 5.0 {
                    continue;
                }
                let d = edges.iter().map(|e| e.distance(p)).fold(f64::INFINITY, f64::min);
                assert!(d <= 2.0, "t={t}: silhouette point {p:?} is {d:.2} px from the nearest edge");
                checked += 1;
            }
        }
    }
    assert!(checked > 50, "only {checked} silhouette samples in view");
}

#[test]
fn rotation_scan_of_flat_bed_is_planar() {
    let spec = SceneSpec { terrain_height: Some(0.0), ..Default::default() };
    let mut traj = TrajectorySpec::scan(ScanMode::Rotation, SpeedProfile::Uniform(0.0), 0.0, 0.5, 12.0);
    traj.servo = ServoSweep { min: (-30f64).to_radians(), max: 30f64.to_radians(), rate: 10f64.to_radians() };
    traj.frame_rate = 10.0;
    let mut s = ScanScenario::new(spec, traj, DisplacementMode::Uniform, 3);
    s.pixel_sigma = 0.2;
    let run = run_scan(&s).unwrap();
    let pts = &run.build.cloud.points;
    assert!(pts.len() > 10_000);
    // Total least squares plane through the cloud.
    let n = pts.len() as f64;
    let c = pts.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let mut m = nalgebra::Matrix3::zeros();
    for p in pts {
        let d = p - c;
        m += d * d.transpose();
    }
    let eig = m.symmetric_eigen();
    let k = eig.eigenvalues.imin();
    let normal = eig.eigenvectors.column(k).into_owned();
    let worst = pts.iter().map(|p| (p - c).dot(&normal).abs()).fold(0.0, f64::max);
    let rms = (pts.iter().map(|p| (p - c).dot(&normal).powi(2)).sum::<f64>() / n).sqrt();
    assert!(normal.z.abs() > 1.0 - 1e-6, "normal {normal:?}");
    assert!(c.z.abs() < 1e-3, "plane height {}", c.z);
    assert!(rms < 1e-3, "rms {rms:.2e} m, max deviation {worst:.2e} m");
    let thetas: Vec<f64> = run.scan.frames.iter().map(|f| f.theta_r).collect();
    let (lo, hi) = thetas.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t), b.max(t)));
    assert!(lo < (-29f64).to_radians() && hi > 29f64.to_radians());
}

#[test]
fn edge_gating_drops_clutter_and_keeps_pipe() {
    let mut spec = bare_pipe();
    spec.terrain_height = Some(0.0);
    spec.clutter = Some(ClutterSpec { count: 40, radius_range: (0.01, 0.03), region: [-0.4, 0.4, -0.3, 0.3], clearance: 0.02 });
    let traj = TrajectorySpec::scan(ScanMode::Translation, SpeedProfile::Uniform(fixtures::SCAN_SPEED), -0.2, 0.51, 0.4 / fixtures::SCAN_SPEED);
    let s = ScanScenario::new(spec, traj, DisplacementMode::Uniform, 9);
    let run = run_scan(&s).unwrap();
    let g = gate_scan(&run, &s.rig, &CannyDetector::default(), fixtures::EDGE_GATE_PX, 12.0).unwrap();
    let frac = |pred: fn(&SurfaceLabel) -> bool| {
        let idx: Vec<usize> = (0..run.labels.len()).filter(|&i| pred(&run.labels[i])).collect();
        assert!(!idx.is_empty());
        idx.iter().filter(|&&i| g.kept[i]).count() as f64 / idx.len() as f64
    };
    let pipe = frac(|l| matches!(l, SurfaceLabel::Pipeline(_)));
    let clutter = frac(|l| matches!(l, SurfaceLabel::Clutter(_)));
    let bed = frac(|l| matches!(l, SurfaceLabel::Terrain));
    assert!(pipe > 0.95, "pipe kept {pipe:.3}");
    assert!(clutter < pipe && bed < pipe, "clutter kept {clutter:.3}, bed kept {bed:.3}");
}

#[test]
fn clutter_far_from_pipe_silhouettes_is_gated_out() {
    let mut spec = bare_pipe();
    spec.terrain_height = Some(0.0);
    spec.clutter = Some(ClutterSpec { count: 40, radius_range: (0.01, 0.03), region: [-0.4, 0.4, -0.3, 0.3], clearance: 0.02 });
    let traj = TrajectorySpec::scan(ScanMode::Translation, SpeedProfile::Uniform(fixtures::SCAN_SPEED), -0.2, 0.51, 0.4 / fixtures::SCAN_SPEED);
    let s = ScanScenario::new(spec.clone(), traj, DisplacementMode::Uniform, 9);
    let run = run_scan(&s).unwrap();
    let eps = 30.0;
    let mut clutter_px = vec![Vec::new(); run.scan.frames.len()];
    for (i, l) in run.labels.iter().enumerate() {
        if matches!(l, SurfaceLabel::Clutter(_)) {
            clutter_px[run.build.cloud.frame_ids[i]].push(run.build.pixel_indices[i]);
        }
    }
    let (mut far, mut far_kept, mut near) = (0, 0, 0);
    for (f, frame) in run.scan.frames.iter().enumerate() {
        if clutter_px[f].is_empty() {
            continue;
        }
        let pose = run.trajectory.camera_pose(frame.t, &s.rig);
        let edges: Vec<EdgePolyline> = silhouette_curves(&spec.segments[0], &pose, &s.rig, 2e-3)
            .unwrap()
            .into_iter()
            .filter(|c| c.len() >= 2)
            .map(|c| EdgePolyline::new(c).unwrap())
            .collect();
        let g = gate_stripe(frame, &edges, eps).unwrap();
        for &p in &clutter_px[f] {
            let d = edges.iter().map(|e| e.distance(&frame.pixels[p])).fold(f64::INFINITY, f64::min);
            if d > eps {
                far += 1;
                far_kept += usize::from(g.kept.contains(&p));
            } else {
                near += 1;
            }
        }
    }
    assert!(far > 1000, "only {far} clutter pixels beyond the gate");
    assert_eq!(far_kept, 0, "{far_kept} of {far} far clutter pixels kept ({near} near)");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cloud_points_lie_on_their_frame_planes(
        u in 0.0..2048.0f64,
        v in 0.0..1536.0f64,
        w in prop::array::uniform3(-0.5..0.5f64),
        t in prop::array::uniform3(-1.0..1.0f64),
    ) {
        let rig = Rig::reference();
        let pose = RigidTransform::new(exp_so3(&Vec3::from(w)), Vec3::from(t));
        let frame = StripeFrame { id: 0, t: 0.0, pixels: vec![Vec2::new(u, v)], theta_r: 0.0, mode: DisplacementMode::Uniform };
        let poses = [FramePose { t: 0.0, camera_to_world: pose }];
        let b = build_cloud(&[frame], &poses, &FixedPlane(rig.plane), &rig.intrinsics, &rig.distortion, &CloudConfig::default());
        // Pixels whose ray misses the plane in front of the camera are dropped.
        if let Ok(b) = b {
            for p in &b.cloud.points {
                let pc = pose.inverse().transform_point(p);
                let r = rig.plane.normal().dot(&pc) + rig.plane.d;
                prop_assert!(r.abs() < 1e-9 * (1.0 + pc.norm()), "residual {r}");
            }
        }
    }
}
