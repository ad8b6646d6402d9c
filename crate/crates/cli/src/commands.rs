//! The `uwsl` subcommands. Each reads its inputs from the config, writes its
//! outputs under `out` and returns the run report it also writes there.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use uwsl_core::edicp::register;
use uwsl_core::fixtures;
use uwsl_core::fusion::{axis_metrics, run_fusion, Mat9, NavState};
use uwsl_core::handeye::{calibrate, LmConfig, Termination};
use uwsl_core::metrology::{fit_cylinder, relative_error, CylinderConfig};
use uwsl_core::recon::{build_cloud, CannyDetector, CloudConfig, FixedPlane, PlaneProvider, RotatingPlane};
use uwsl_core::scenario::{gate_scan, run_scan, ScanRun, ScanScenario};
use uwsl_core::sim::{synth_inertial_acoustic, synthetic_pose_pairs, Rig, ScanMode, SurfaceLabel};
use uwsl_core::{RigidTransform, RotationQuaternion, Vec3};

use crate::config::ScenarioConfig;
use crate::error::{usage, CliError, CliResult};
use crate::io::{self, PlaneFile, LABEL_BED, LABEL_CLUTTER, LABEL_PIPE};
use crate::report::RunReport;

fn out_dir(cfg: &ScenarioConfig) -> CliResult<&Path> {
    fs::create_dir_all(&cfg.out).map_err(|e| usage(format!("cannot create {}: {e}", cfg.out.display())))?;
    Ok(&cfg.out)
}

fn finish(cfg: &ScenarioConfig, report: RunReport, name: &str) -> CliResult<RunReport> {
    report.write(&out_dir(cfg)?.join(format!("{name}_report.toml")))?;
    Ok(report)
}

fn label_code(l: &SurfaceLabel) -> i32 {
    match l {
        SurfaceLabel::Pipeline(_) => LABEL_PIPE,
        SurfaceLabel::Terrain => LABEL_BED,
        SurfaceLabel::Clutter(_) => LABEL_CLUTTER,
    }
}

/// Radius and length relative errors of a cylinder fitted to `points`
/// against the first configured pipe.
fn push_cylinder_metrics(report: &mut RunReport, stage: &str, seed: u64, cfg: &ScenarioConfig, points: &[Vec3]) {
    let Some(pipe) = cfg.scene.pipes.first() else { return };
    let fit_cfg = CylinderConfig { axis_hint: Some(Vec3::x()), ..Default::default() };
    match fit_cylinder(points, &fit_cfg) {
        Ok(fit) => {
            report.push(stage, seed, "cylinder_radius", fit.radius, "m");
            report.push(stage, seed, "cylinder_length", fit.length(), "m");
            report.push(stage, seed, "radius_relative_error", relative_error(fit.radius, pipe.radius), "1");
            report.push(stage, seed, "length_relative_error", relative_error(fit.length(), pipe.length), "1");
        }
        Err(e) => log::warn!("{stage}: cylinder fit skipped: {e}"),
    }
}

fn scenario(cfg: &ScenarioConfig) -> CliResult<ScanScenario> {
    let mut s = ScanScenario::new(cfg.scene_spec()?, cfg.trajectory_spec()?, cfg.displacement()?, cfg.seed_or_default());
    s.pixel_sigma = cfg.trajectory.pixel_sigma;
    s.filter = cfg.filter_config()?;
    s.fusion_method = cfg.method()?;
    s.sync_tol = cfg.filter.sync_tol;
    Ok(s)
}

fn write_scan_outputs(dir: &Path, s: &ScanScenario, run: &ScanRun) -> CliResult<()> {
    io::write_frames(&dir.join("frames.csv"), &run.scan.frames)?;
    io::write_poses(&dir.join("poses.csv"), &run.poses)?;
    let axis = match s.trajectory.mode {
        ScanMode::Translation => None,
        _ => Some(s.rig.calibrated_axis(s.axis_calibration_angle)?),
    };
    io::write_toml(&dir.join("plane.toml"), &PlaneFile::new(&s.rig.plane, axis.as_ref()))?;
    let labels: Vec<i32> = run.labels.iter().map(label_code).collect();
    io::write_ply(&dir.join("cloud.ply"), &run.build.cloud, None, "reconstructed cloud, world frame, meters")?;
    let mut truth = run.build.cloud.clone();
    truth.points.clone_from(&run.truth);
    io::write_ply(&dir.join("truth.ply"), &truth, Some(&labels), "true surface point of each cloud point, meters")?;
    Ok(())
}

/// Synthesizes a scan with its sensor traces, truth and hand-eye pairs.
pub fn cmd_simulate(cfg: &ScenarioConfig) -> CliResult<RunReport> {
    let dir = out_dir(cfg)?;
    let seed = cfg.seed_or_default();
    let s = scenario(cfg)?;
    let mut report = RunReport::new("simulate", cfg.to_table());

    let run = report.stage("scan", |r| {
        let run = run_scan(&s)?;
        write_scan_outputs(dir, &s, &run)?;
        r.push("scan", seed, "frames", run.scan.frames.len() as f64, "1");
        r.push("scan", seed, "points", run.build.cloud.len() as f64, "1");
        r.push("scan", seed, "max_truth_error", run.max_truth_error(), "m");
        let pipe: Vec<Vec3> = run.pipeline_indices().iter().map(|&i| run.build.cloud.points[i]).collect();
        push_cylinder_metrics(r, "scan", seed, cfg, &pipe);
        Ok(run)
    })?;

    report.stage("traces", |r| {
        let (imu, dvl, truth) = synth_inertial_acoustic(&s.trajectory, seed)?;
        io::write_imu(&dir.join("imu.csv"), &imu)?;
        io::write_dvl(&dir.join("dvl.csv"), &dvl)?;
        let states: Vec<NavState> = imu
            .iter()
            .zip(&truth.imu_poses)
            .zip(&truth.imu_velocities)
            .map(|((s, p), v)| {
                NavState::new(s.t, p.translation, *v, RotationQuaternion::from_rotation_matrix(&p.rotation), Mat9::zeros())
            })
            .collect();
        io::write_states(&dir.join("trajectory_truth.csv"), &states)?;
        r.push("traces", seed, "imu_samples", imu.len() as f64, "1");
        r.push("traces", seed, "dvl_samples", dvl.len() as f64, "1");
        r.push("traces", seed, "dvl_unhealthy", dvl.iter().filter(|d| !d.healthy).count() as f64, "1");
        Ok(())
    })?;

    report.stage("pairs", |r| {
        let c = &cfg.calibration;
        let noise = (c.sigma_t > 0.0 || c.sigma_r_deg > 0.0).then(|| (c.sigma_t, c.sigma_r_deg.to_radians()));
        let pairs = synthetic_pose_pairs(&fixtures::camera_dvl_extrinsic(), c.pairs, seed, noise);
        io::write_pairs(&dir.join("pairs.csv"), &pairs)?;
        r.push("pairs", seed, "pairs", pairs.len() as f64, "1");
        Ok(())
    })?;

    if cfg.registration.gate {
        report.stage("gating", |r| {
            let g = gate_scan(&run, &s.rig, &CannyDetector::default(), cfg.registration.eps_px, cfg.registration.edge_interval)?;
            let kept: Vec<usize> = (0..g.kept.len()).filter(|&i| g.kept[i]).collect();
            io::write_ply(&dir.join("cloud_gated.ply"), &run.build.cloud.select(&kept), None, "edge-gated cloud, meters")?;
            r.push("gating", seed, "kept_points", kept.len() as f64, "1");
            r.push("gating", seed, "edge_images", g.edges.len() as f64, "1");
            Ok(())
        })?;
    }
    finish(cfg, report, "simulate")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub extrinsic: ExtrinsicFile,
    pub solver: SolverFile,
}

/// Camera → DVL rigid transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicFile {
    pub rotation: [[f64; 3]; 3],
    pub translation_m: [f64; 3],
    pub quaternion_wxyz: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverFile {
    pub final_cost: f64,
    pub iterations: usize,
    pub termination: String,
}

impl ExtrinsicFile {
    pub fn new(x: &RigidTransform) -> Self {
        let m = x.rotation.matrix();
        let q = RotationQuaternion::from_rotation_matrix(&x.rotation);
        Self {
            rotation: [0, 1, 2].map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]]),
            translation_m: x.translation.into(),
            quaternion_wxyz: [q.w(), q.x(), q.y(), q.z()],
        }
    }

    pub fn transform(&self) -> CliResult<RigidTransform> {
        let q = self.quaternion_wxyz;
        let r = RotationQuaternion::new(q[0], q[1], q[2], q[3]).map_err(|e| usage(e.to_string()))?;
        Ok(RigidTransform::from_quaternion(&r, Vec3::from(self.translation_m)))
    }
}

/// Estimates the camera–DVL extrinsic from motion pairs.
pub fn cmd_calibrate(cfg: &ScenarioConfig) -> CliResult<RunReport> {
    let pairs = io::read_pairs(cfg.input("pairs")?)?;
    let dir = out_dir(cfg)?;
    let seed = cfg.seed_or_default();
    let mut report = RunReport::new("calibrate", cfg.to_table());
    report.stage("calibrate", |r| {
        let lm = LmConfig { max_iter: cfg.calibration.max_iter, ..LmConfig::default() };
        let res = calibrate(&pairs, &RigidTransform::identity(), &lm)?;
        if matches!(res.termination, Termination::MaxIterations | Termination::DampingOverflow) {
            return Err(CliError::Numerical(format!(
                "calibration did not converge ({:?} after {} iterations, cost {:e})",
                res.termination, res.iterations, res.final_cost
            )));
        }
        let file = CalibrationFile {
            extrinsic: ExtrinsicFile::new(&res.x),
            solver: SolverFile {
                final_cost: res.final_cost,
                iterations: res.iterations,
                termination: format!("{:?}", res.termination).to_lowercase(),
            },
        };
        io::write_toml(&dir.join("calibration.toml"), &file)?;
        let n = res.residual_norms.len() as f64;
        r.push("calibrate", seed, "pairs", pairs.len() as f64, "1");
        r.push("calibrate", seed, "final_cost", res.final_cost, "1");
        r.push("calibrate", seed, "iterations", res.iterations as f64, "1");
        r.push("calibrate", seed, "residual_rms", (res.residual_norms.iter().map(|x| x * x).sum::<f64>() / n).sqrt(), "1");
        Ok(())
    })?;
    finish(cfg, report, "calibrate")
}

/// Fuses IMU and DVL traces with the configured method.
pub fn cmd_fuse(cfg: &ScenarioConfig) -> CliResult<RunReport> {
    let method = cfg.method()?;
    let filter = cfg.filter_config()?;
    let imu = io::read_imu(cfg.input("imu")?)?;
    let dvl = io::read_dvl(cfg.input("dvl")?)?;
    let truth = cfg.inputs.trajectory_truth.as_deref().map(io::read_states).transpose()?;
    let dir = out_dir(cfg)?;
    let seed = cfg.seed_or_default();
    let mut report = RunReport::new("fuse", cfg.to_table());
    let first = imu.first().ok_or_else(|| usage("IMU trace is empty"))?;
    let init = match truth.as_ref().and_then(|t| t.first()) {
        Some(&(_, p, v, q)) => NavState::new(first.t, p, v, q, filter.p0),
        None => {
            log::warn!("fuse: no trajectory truth, starting at rest at the origin");
            NavState::new(first.t, Vec3::zeros(), Vec3::zeros(), RotationQuaternion::identity(), filter.p0)
        }
    };
    let run = report.stage("fuse", |_| Ok(run_fusion(&imu, &dvl, init, &filter, method, None, cfg.filter.sync_tol)?))?;
    io::write_states(&dir.join("trajectory.csv"), &run.states)?;
    let stage = cfg.filter.method.as_str();
    if let Some(truth) = truth {
        if truth.len() != run.states.len()
            || truth.iter().zip(&run.states).any(|(t, s)| (t.0 - s.t).abs() > cfg.filter.sync_tol)
        {
            return Err(usage("trajectory truth must have one row per IMU sample"));
        }
        let est: Vec<Vec3> = run.states.iter().map(|s| s.p).collect();
        let tp: Vec<Vec3> = truth.iter().map(|t| t.1).collect();
        report.push_axis(stage, seed, "position", &axis_metrics(&est, &tp)?, "m");
        let est: Vec<Vec3> = run.states.iter().map(|s| s.v).collect();
        let tv: Vec<Vec3> = truth.iter().map(|t| t.2).collect();
        report.push_axis(stage, seed, "velocity", &axis_metrics(&est, &tv)?, "m/s");
    }
    report.push(stage, seed, "dvl_updates", run.etas.len() as f64, "1");
    report.push(stage, seed, "covariance_repairs", run.repairs as f64, "1");
    if !run.etas.is_empty() {
        let mean = run.etas.iter().map(|e| e.1).sum::<f64>() / run.etas.len() as f64;
        report.push(stage, seed, "mean_eta", mean, "1");
    }
    finish(cfg, report, "fuse")
}

/// Triangulates stripe frames with given poses into a world cloud.
pub fn cmd_reconstruct(cfg: &ScenarioConfig) -> CliResult<RunReport> {
    let frames = io::read_frames(cfg.input("frames")?)?;
    let poses = io::read_poses(cfg.input("poses")?)?;
    let plane_file: PlaneFile = io::read_toml(cfg.input("plane")?)?;
    let plane = plane_file.plane()?;
    let provider: Box<dyn PlaneProvider> = match cfg.scan_mode()? {
        ScanMode::Translation => Box::new(FixedPlane(plane)),
        _ => {
            let axis = plane_file.axis()?.ok_or_else(|| usage("rotating modes need an [axis] in the plane file"))?;
            Box::new(RotatingPlane { plane, axis })
        }
    };
    let dir = out_dir(cfg)?;
    let seed = cfg.seed_or_default();
    let rig = Rig::reference();
    let mut report = RunReport::new("reconstruct", cfg.to_table());
    let build = report.stage("reconstruct", |_| {
        let cc = CloudConfig { sync_tol: cfg.filter.sync_tol, ..CloudConfig::default() };
        Ok(build_cloud(&frames, &poses, provider.as_ref(), &rig.intrinsics, &rig.distortion, &cc)?)
    })?;
    io::write_ply(&dir.join("cloud.ply"), &build.cloud, None, "reconstructed cloud, world frame, meters")?;
    report.push("reconstruct", seed, "points", build.cloud.len() as f64, "1");
    report.push("reconstruct", seed, "dropped_frames", build.dropped_frames as f64, "1");
    report.push("reconstruct", seed, "failed_pixels", build.failed_pixels as f64, "1");
    finish(cfg, report, "reconstruct")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformFile {
    /// Source → target.
    pub transform: ExtrinsicFile,
    pub rmse_trace_m: Vec<f64>,
    pub converged: bool,
}

/// Registers the source cloud onto the target cloud.
pub fn cmd_register(cfg: &ScenarioConfig) -> CliResult<RunReport> {
    let reg = cfg.registration_config()?;
    let source = io::read_ply(cfg.input("source")?)?.cloud;
    let target = io::read_ply(cfg.input("target")?)?.cloud;
    let dir = out_dir(cfg)?;
    let seed = cfg.seed_or_default();
    let mut report = RunReport::new("register", cfg.to_table());
    let res = report.stage("register", |_| Ok(register(&source, &target, &reg, &RigidTransform::identity())?))?;
    let file = TransformFile { transform: ExtrinsicFile::new(&res.transform), rmse_trace_m: res.rmse_trace.clone(), converged: res.converged };
    io::write_toml(&dir.join("transform.toml"), &file)?;
    io::write_ply(&dir.join("registered.ply"), &source.transformed(&res.transform), None, "source registered onto target, meters")?;
    report.push("register", seed, "final_rmse", res.final_rmse(), "m");
    report.push("register", seed, "iterations", res.iterations as f64, "1");
    report.push("register", seed, "overlap", res.overlap, "1");
    report.push("register", seed, "converged", f64::from(u8::from(res.converged)), "1");
    finish(cfg, report, "register")
}

/// Compares a cloud with its point-wise truth.
pub fn cmd_evaluate(cfg: &ScenarioConfig) -> CliResult<RunReport> {
    let cloud = io::read_ply(cfg.input("cloud")?)?.cloud;
    let truth = io::read_ply(cfg.input("truth")?)?;
    if truth.cloud.len() != cloud.len() {
        return Err(usage(format!("cloud has {} points but truth has {}", cloud.len(), truth.cloud.len())));
    }
    if cloud.is_empty() {
        return Err(usage("cloud is empty"));
    }
    let seed = cfg.seed_or_default();
    let mut report = RunReport::new("evaluate", cfg.to_table());
    report.stage("evaluate", |r| {
        let m = axis_metrics(&cloud.points, &truth.cloud.points)?;
        r.push_axis("evaluate", seed, "point", &m, "m");
        let d: Vec<f64> = cloud.points.iter().zip(&truth.cloud.points).map(|(a, b)| (a - b).norm()).collect();
        r.push("evaluate", seed, "point_rmse", (d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64).sqrt(), "m");
        r.push("evaluate", seed, "point_max_error", d.iter().cloned().fold(0.0, f64::max), "m");
        let pipe: Vec<Vec3> = match &truth.labels {
            Some(l) => (0..cloud.len()).filter(|&i| l[i] == LABEL_PIPE).map(|i| cloud.points[i]).collect(),
            None => cloud.points.clone(),
        };
        push_cylinder_metrics(r, "evaluate", seed, cfg, &pipe);
        Ok(())
    })?;
    finish(cfg, report, "evaluate")
}

/// Output path helper for tests and callers.
pub fn output(cfg: &ScenarioConfig, name: &str) -> PathBuf {
    cfg.out.join(name)
}
