//! End-to-end simulated scans: scene and trajectory synthesis, optional
//! inertial/acoustic fusion, pose chaining and cloud assembly.

use crate::edicp::{prealign, register, rmse, Pairing, RegistrationConfig};
use crate::error::{invalid, Result};
use crate::fusion::{run_fusion, FilterConfig, FusionRun, Mat6, Mat9, Method, NavState};
use crate::geom::{RigidTransform, RotationMatrix, Vec3};
use crate::recon::{
    build_cloud, calibrated_velocity, chain_poses, gate_stripe, CannyDetector, CloudBuild, CloudConfig, DisplacementMode,
    EdgeDetector, EdgePolyline, FixedPlane, FramePose, PlaneProvider, PointCloud, PoseChain, RotatingPlane, VelocityTrack,
};
use crate::sim::{
    generate_scene, render_with, simulate_scan, synth_inertial_acoustic, GroundTruth, RayTable, Rig, ScanData, ScanMode, Scene, SceneSpec,
    SurfaceLabel, Trajectory, TrajectorySpec,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ScanScenario {
    pub scene: SceneSpec,
    pub trajectory: TrajectorySpec,
    pub rig: Rig,
    pub displacement: DisplacementMode,
    /// Stripe centerline noise, pixels.
    pub pixel_sigma: f64,
    pub seed: u64,
    pub filter: FilterConfig,
    pub fusion_method: Method,
    pub sync_tol: f64,
    /// Times of the two calibration poses that fix the uniform velocity.
    pub calibration_times: (f64, f64),
    /// Servo angle of the second calibration plane.
    pub axis_calibration_angle: f64,
}

impl ScanScenario {
    pub fn new(scene: SceneSpec, trajectory: TrajectorySpec, displacement: DisplacementMode, seed: u64) -> Self {
        let filter = filter_for_noise(&trajectory);
        let end = trajectory.duration;
        Self {
            scene,
            trajectory,
            rig: Rig::reference(),
            displacement,
            pixel_sigma: 0.0,
            seed,
            filter,
            fusion_method: Method::Aekf,
            sync_tol: 1e-6,
            calibration_times: (0.0, end),
            axis_calibration_angle: 20f64.to_radians(),
        }
    }
}

/// Filter covariances matched to the simulated sensor noise, with floors so
/// a noiseless trace still gives a well-posed filter.
pub fn filter_for_noise(spec: &TrajectorySpec) -> FilterConfig {
    let n = spec.noise;
    let mut q = Mat6::zeros();
    for i in 0..3 {
        q[(i, i)] = n.accel.powi(2).max(1e-12);
        q[(i + 3, i + 3)] = n.gyro.powi(2).max(1e-14);
    }
    FilterConfig {
        q,
        r: nalgebra::Matrix3::identity() * n.dvl.powi(2).max(1e-12),
        k_m: 2.0,
        p0: Mat9::identity() * 1e-10,
        t_i_d: spec.t_i_d,
    }
}

#[derive(Debug, Clone)]
pub struct FusedTrack {
    pub run: FusionRun,
    pub track: VelocityTrack,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone)]
pub struct ScanRun {
    pub scene: Scene,
    pub trajectory: Trajectory,
    pub scan: ScanData,
    pub poses: Vec<FramePose>,
    pub build: CloudBuild,
    /// World truth point of each cloud point.
    pub truth: Vec<Vec3>,
    pub labels: Vec<SurfaceLabel>,
    pub fused: Option<FusedTrack>,
}

impl ScanRun {
    /// Indices of cloud points whose truth lies on a pipe.
    pub fn pipeline_indices(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i].is_pipeline()).collect()
    }

    /// Largest distance between a cloud point and its truth point.
    pub fn max_truth_error(&self) -> f64 {
        self.build.cloud.points.iter().zip(&self.truth).map(|(p, t)| (p - t).norm()).fold(0.0, f64::max)
    }
}

/// Runs the inertial/acoustic fusion of a trajectory from its true initial
/// state and returns the world-frame velocity track.
pub fn fuse_trajectory(spec: &TrajectorySpec, filter: &FilterConfig, method: Method, seed: u64, sync_tol: f64) -> Result<FusedTrack> {
    let (imu, dvl, truth) = synth_inertial_acoustic(spec, seed)?;
    let traj = &truth.trajectory;
    let t0 = imu[0].t;
    let init = NavState::new(t0, traj.position(t0), traj.velocity(t0), traj.attitude(t0).to_quaternion(), filter.p0);
    let run = run_fusion(&imu, &dvl, init, filter, method, None, sync_tol)?;
    let track = VelocityTrack::new(run.states.iter().map(|s| s.t).collect(), run.states.iter().map(|s| s.v).collect())?;
    Ok(FusedTrack { run, track, truth })
}

pub fn plane_provider(s: &ScanScenario) -> Result<Box<dyn PlaneProvider>> {
    Ok(match s.trajectory.mode {
        ScanMode::Translation => Box::new(FixedPlane(s.rig.plane)),
        _ => Box::new(RotatingPlane { plane: s.rig.plane, axis: s.rig.calibrated_axis(s.axis_calibration_angle)? }),
    })
}

pub fn run_scan(s: &ScanScenario) -> Result<ScanRun> {
    let scene = generate_scene(&s.scene, s.seed)?;
    let trajectory = Trajectory::new(&s.trajectory, s.seed)?;
    let scan = simulate_scan(&scene, &trajectory, &s.rig, s.displacement, s.pixel_sigma, s.seed)?;
    if scan.frames.is_empty() {
        return Err(invalid("scenario produced no frames"));
    }
    let fused = match s.displacement {
        DisplacementMode::Fused => Some(fuse_trajectory(&s.trajectory, &s.filter, s.fusion_method, s.seed, s.sync_tol)?),
        DisplacementMode::Uniform => None,
    };
    let times: Vec<f64> = scan.frames.iter().map(|f| f.t).collect();
    let modes: Vec<DisplacementMode> = scan.frames.iter().map(|f| f.mode).collect();
    let tau0 = times[0];
    let anchor = trajectory.camera_pose(tau0, &s.rig);
    let (c1, c2) = s.calibration_times;
    let calibrated = calibrated_velocity(
        &trajectory.camera_pose(c1, &s.rig).translation,
        &trajectory.camera_pose(c2, &s.rig).translation,
        c1,
        c2,
    )?;
    let chain = PoseChain {
        r_wc: anchor.rotation,
        t0: anchor.translation,
        tau0,
        calibrated,
        r_ca: RotationMatrix::identity(),
        sync_tol: s.sync_tol,
    };
    let empty = VelocityTrack::default();
    let track = fused.as_ref().map_or(&empty, |f| &f.track);
    let poses = chain_poses(&times, &modes, &chain, track)?;
    let provider = plane_provider(s)?;
    let cfg = CloudConfig { sync_tol: s.sync_tol, ..CloudConfig::default() };
    let build = build_cloud(&scan.frames, &poses, provider.as_ref(), &s.rig.intrinsics, &s.rig.distortion, &cfg)?;
    let mut truth = Vec::with_capacity(build.cloud.len());
    let mut labels = Vec::with_capacity(build.cloud.len());
    for (&fid, &pix) in build.cloud.frame_ids.iter().zip(&build.pixel_indices) {
        truth.push(scan.truth[fid][pix]);
        labels.push(scan.labels[fid][pix]);
    }
    Ok(ScanRun { scene, trajectory, scan, poses, build, truth, labels, fused })
}

/// Settings of the sweep-to-sweep registration comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationStudyConfig {
    /// Edge gating distance, pixels.
    pub eps_px: f64,
    /// Seconds between rendered edge images; each frame uses the nearest.
    pub edge_interval: f64,
    pub detector: CannyDetector,
    pub registration: RegistrationConfig,
    pub baseline: RegistrationConfig,
}

impl Default for RegistrationStudyConfig {
    fn default() -> Self {
        Self {
            eps_px: crate::fixtures::EDGE_GATE_PX,
            edge_interval: 12.0,
            detector: CannyDetector::default(),
            registration: RegistrationConfig::default(),
            baseline: RegistrationConfig::plain_icp(),
        }
    }
}

/// Per-point edge gating of a scan's cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGating {
    /// Whether each cloud point survived gating.
    pub kept: Vec<bool>,
    /// Render times and the polylines detected there.
    pub edges: Vec<(f64, Vec<EdgePolyline>)>,
}

/// Renders the true view every `interval` seconds, detects edges and gates
/// every cloud point against the edges nearest in time.
pub fn gate_scan(run: &ScanRun, rig: &Rig, detector: &dyn EdgeDetector, eps_px: f64, interval: f64) -> Result<EdgeGating> {
    if !(interval > 0.0) {
        return Err(invalid("edge interval must be positive"));
    }
    let rays = RayTable::new(rig);
    let mut edges: Vec<(f64, Vec<EdgePolyline>)> = Vec::new();
    let mut next = f64::NEG_INFINITY;
    for f in &run.scan.frames {
        if f.t >= next {
            let img = render_with(&run.scene, &run.trajectory.camera_pose(f.t, rig), &rays);
            edges.push((f.t, detector.detect(&img)));
            next = f.t + interval;
        }
    }
    let mut frame_keep = Vec::with_capacity(run.scan.frames.len());
    for f in &run.scan.frames {
        let (_, e) = edges
            .iter()
            .min_by(|a, b| (a.0 - f.t).abs().total_cmp(&(b.0 - f.t).abs()))
            .expect("at least one render");
        let g = gate_stripe(f, e, eps_px)?;
        let mut k = vec![false; f.pixels.len()];
        for i in g.kept {
            k[i] = true;
        }
        frame_keep.push(k);
    }
    let cloud = &run.build.cloud;
    let kept = cloud.frame_ids.iter().zip(&run.build.pixel_indices).map(|(&f, &p)| frame_keep[f][p]).collect();
    Ok(EdgeGating { kept, edges })
}

/// One registered pair of consecutive servo sweeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepComparison {
    pub sweep: usize,
    /// RMSE of the registered pipe points against their true positions in
    /// the target sweep frame, meters.
    pub ed_rmse: f64,
    pub plain_rmse: f64,
    pub prealign_rmse: f64,
    pub ed_iterations: usize,
    pub plain_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationStudy {
    pub sweeps: Vec<SweepComparison>,
    pub gating: EdgeGating,
    /// Clutter points in the cloud and how many survived gating.
    pub clutter: (usize, usize),
}

impl RegistrationStudy {
    pub fn mean_ed(&self) -> f64 {
        self.sweeps.iter().map(|s| s.ed_rmse).sum::<f64>() / self.sweeps.len() as f64
    }

    pub fn mean_plain(&self) -> f64 {
        self.sweeps.iter().map(|s| s.plain_rmse).sum::<f64>() / self.sweeps.len() as f64
    }

    pub fn ratio(&self) -> f64 {
        self.mean_ed() / self.mean_plain()
    }
}

/// Splits a rotating-plane scan into servo half-sweeps, expresses each in
/// the fused camera frame of its first stripe and registers every sweep
/// onto the previous one twice: edge-gated with pose prealignment, and the
/// plain baseline on all points from identity.
pub fn registration_study(run: &ScanRun, s: &ScanScenario, cfg: &RegistrationStudyConfig) -> Result<RegistrationStudy> {
    if s.trajectory.mode == ScanMode::Translation {
        return Err(invalid("registration study needs a rotating plane"));
    }
    let gating = gate_scan(run, &s.rig, &cfg.detector, cfg.eps_px, cfg.edge_interval)?;
    let cloud = &run.build.cloud;
    let half = s.trajectory.servo.half_period();
    let nsweep = (s.trajectory.duration / half).floor() as usize;
    if nsweep < 2 {
        return Err(invalid("scan covers fewer than two sweeps"));
    }
    let sweep_of = |t: f64| ((t / half).floor() as usize).min(nsweep - 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); nsweep];
    for (i, &fid) in cloud.frame_ids.iter().enumerate() {
        members[sweep_of(run.scan.frames[fid].t)].push(i);
    }
    let first_frame = |k: usize| run.scan.frames.iter().position(|f| sweep_of(f.t) == k);
    let mut sweeps = Vec::new();
    for k in 1..nsweep {
        let (Some(fs), Some(ft)) = (first_frame(k), first_frame(k - 1)) else { continue };
        let (src_pose, tgt_pose) = (run.poses[fs], run.poses[ft]);
        let local = |idx: &[usize], pose: &FramePose, gated: bool| {
            let inv = pose.camera_to_world.inverse();
            PointCloud::from_points(
                idx.iter().filter(|&&i| !gated || gating.kept[i]).map(|&i| inv.transform_point(&cloud.points[i])).collect(),
            )
        };
        let pre = prealign(&[src_pose], src_pose.t, &[tgt_pose], tgt_pose.t, s.sync_tol);
        let ed = register(
            &local(&members[k], &src_pose, true),
            &local(&members[k - 1], &tgt_pose, true),
            &cfg.registration,
            &pre.transform,
        )?;
        let plain = register(
            &local(&members[k], &src_pose, false),
            &local(&members[k - 1], &tgt_pose, false),
            &cfg.baseline,
            &RigidTransform::identity(),
        )?;
        let pipe: Vec<usize> = members[k].iter().cloned().filter(|&i| run.labels[i].is_pipeline()).collect();
        if pipe.is_empty() {
            continue;
        }
        let src_inv = src_pose.camera_to_world.inverse();
        let src_pts: Vec<Vec3> = pipe.iter().map(|&i| src_inv.transform_point(&cloud.points[i])).collect();
        let true_inv = run.scan.camera_poses[ft].inverse();
        let truth: Vec<Vec3> = pipe.iter().map(|&i| true_inv.transform_point(&run.truth[i])).collect();
        let score = |t: &RigidTransform| {
            let moved: Vec<Vec3> = src_pts.iter().map(|p| t.transform_point(p)).collect();
            rmse(&moved, &truth, Pairing::Index)
        };
        sweeps.push(SweepComparison {
            sweep: k,
            ed_rmse: score(&ed.transform)?,
            plain_rmse: score(&plain.transform)?,
            prealign_rmse: score(&pre.transform)?,
            ed_iterations: ed.iterations,
            plain_iterations: plain.iterations,
        });
    }
    if sweeps.is_empty() {
        return Err(invalid("no sweep pair contained pipe points"));
    }
    let is_clutter = |l: &SurfaceLabel| matches!(l, SurfaceLabel::Clutter(_));
    let total = run.labels.iter().filter(|l| is_clutter(l)).count();
    let kept = run.labels.iter().zip(&gating.kept).filter(|(l, &k)| k && is_clutter(l)).count();
    Ok(RegistrationStudy { sweeps, gating, clutter: (total, kept) })
}
