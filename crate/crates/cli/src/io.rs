//! File formats: CSV traces with a unit-bearing header row, ASCII PLY clouds
//! with a frame-id property, and TOML for plane and calibration results.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use uwsl_core::fusion::{DvlSample, ImuSample, NavState};
use uwsl_core::handeye::PosePair;
use uwsl_core::lightplane::RotationAxis;
use uwsl_core::recon::{FramePose, StripeFrame};
use uwsl_core::{
    DisplacementMode, Frame, LightPlane, PointCloud, RigidTransform, RotationMatrix, RotationQuaternion, Vec2, Vec3,
};

use crate::error::{usage, CliError, CliResult};

pub const IMU_HEADER: [&str; 7] = ["t_s", "ax_mps2", "ay_mps2", "az_mps2", "gx_radps", "gy_radps", "gz_radps"];
pub const DVL_HEADER: [&str; 5] = ["t_s", "vx_mps", "vy_mps", "vz_mps", "lambda"];
pub const POSE_HEADER: [&str; 8] = ["t_s", "px_m", "py_m", "pz_m", "qw", "qx", "qy", "qz"];
pub const STATE_HEADER: [&str; 11] =
    ["t_s", "px_m", "py_m", "pz_m", "vx_mps", "vy_mps", "vz_mps", "qw", "qx", "qy", "qz"];
pub const FRAME_HEADER: [&str; 6] = ["frame", "t_s", "theta_rad", "mu", "u_px", "v_px"];
pub const PAIR_HEADER: [&str; 14] = [
    "c_px_m", "c_py_m", "c_pz_m", "c_qw", "c_qx", "c_qy", "c_qz", "d_px_m", "d_py_m", "d_pz_m", "d_qw", "d_qx", "d_qy",
    "d_qz",
];

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    usage(format!("{}: {e}", path.display()))
}

fn write_csv<const N: usize>(path: &Path, header: &[&str; N], rows: impl Iterator<Item = [f64; N]>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<const N: usize>(path: &Path, header: &[&str; N]) -> CliResult<Vec<[f64; N]>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let found = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(usage(format!(
            "{}: header {:?} does not match expected {:?}",
            path.display(),
            found.iter().collect::<Vec<_>>(),
            header
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let mut row = [0.0; N];
        for (j, (slot, field)) in row.iter_mut().zip(rec.iter()).enumerate() {
            *slot = field
                .trim()
                .parse()
                .map_err(|_| usage(format!("{}: line {}: column {} is not a number", path.display(), i + 2, header[j])))?;
        }
        out.push(row);
    }
    Ok(out)
}

fn quat(r: &RotationMatrix) -> [f64; 4] {
    let q = RotationQuaternion::from_rotation_matrix(r);
    [q.w(), q.x(), q.y(), q.z()]
}

fn rotation(q: &[f64]) -> CliResult<RotationMatrix> {
    let q = RotationQuaternion::new(q[0], q[1], q[2], q[3]).map_err(|e| usage(e.to_string()))?;
    Ok(q.to_rotation_matrix())
}

fn pose_row(t: f64, p: &RigidTransform) -> [f64; 8] {
    let q = quat(&p.rotation);
    let x = p.translation;
    [t, x.x, x.y, x.z, q[0], q[1], q[2], q[3]]
}

pub fn write_imu(path: &Path, imu: &[ImuSample]) -> CliResult<()> {
    write_csv(
        path,
        &IMU_HEADER,
        imu.iter().map(|s| [s.t, s.accel.x, s.accel.y, s.accel.z, s.gyro.x, s.gyro.y, s.gyro.z]),
    )
}

pub fn read_imu(path: &Path) -> CliResult<Vec<ImuSample>> {
    Ok(read_csv(path, &IMU_HEADER)?
        .into_iter()
        .map(|r| ImuSample { t: r[0], accel: Vec3::new(r[1], r[2], r[3]), gyro: Vec3::new(r[4], r[5], r[6]) })
        .collect())
}

pub fn write_dvl(path: &Path, dvl: &[DvlSample]) -> CliResult<()> {
    write_csv(
        path,
        &DVL_HEADER,
        dvl.iter().map(|s| [s.t, s.velocity.x, s.velocity.y, s.velocity.z, s.lambda()]),
    )
}

pub fn read_dvl(path: &Path) -> CliResult<Vec<DvlSample>> {
    Ok(read_csv(path, &DVL_HEADER)?
        .into_iter()
        .map(|r| DvlSample { t: r[0], velocity: Vec3::new(r[1], r[2], r[3]), healthy: r[4] != 0.0 })
        .collect())
}

/// Navigation states without covariance.
pub fn write_states(path: &Path, states: &[NavState]) -> CliResult<()> {
    write_csv(
        path,
        &STATE_HEADER,
        states.iter().map(|s| [s.t, s.p.x, s.p.y, s.p.z, s.v.x, s.v.y, s.v.z, s.q.w(), s.q.x(), s.q.y(), s.q.z()]),
    )
}

/// States as `(t, p, v, q)`.
pub fn read_states(path: &Path) -> CliResult<Vec<(f64, Vec3, Vec3, RotationQuaternion)>> {
    read_csv(path, &STATE_HEADER)?
        .into_iter()
        .map(|r| {
            let q = RotationQuaternion::new(r[7], r[8], r[9], r[10]).map_err(|e| usage(e.to_string()))?;
            Ok((r[0], Vec3::new(r[1], r[2], r[3]), Vec3::new(r[4], r[5], r[6]), q))
        })
        .collect()
}

pub fn write_poses(path: &Path, poses: &[FramePose]) -> CliResult<()> {
    write_csv(path, &POSE_HEADER, poses.iter().map(|p| pose_row(p.t, &p.camera_to_world)))
}

pub fn read_poses(path: &Path) -> CliResult<Vec<FramePose>> {
    read_csv(path, &POSE_HEADER)?
        .into_iter()
        .map(|r| {
            Ok(FramePose { t: r[0], camera_to_world: RigidTransform::new(rotation(&r[4..8])?, Vec3::new(r[1], r[2], r[3])) })
        })
        .collect()
}

/// One row per stripe pixel; frames without pixels are omitted.
pub fn write_frames(path: &Path, frames: &[StripeFrame]) -> CliResult<()> {
    write_csv(
        path,
        &FRAME_HEADER,
        frames.iter().flat_map(|f| {
            f.pixels.iter().map(move |p| [f.id as f64, f.t, f.theta_r, f64::from(f.mode.mu()), p.x, p.y])
        }),
    )
}

pub fn read_frames(path: &Path) -> CliResult<Vec<StripeFrame>> {
    let mut frames: Vec<StripeFrame> = Vec::new();
    for r in read_csv(path, &FRAME_HEADER)? {
        if !(r[0] >= 0.0 && r[0].fract() == 0.0) || !(r[3] == 0.0 || r[3] == 1.0) {
            return Err(usage(format!("{}: frame ids must be non-negative integers and mu 0 or 1", path.display())));
        }
        let id = r[0] as usize;
        let px = Vec2::new(r[4], r[5]);
        match frames.last_mut() {
            Some(f) if f.id == id => f.pixels.push(px),
            _ => frames.push(StripeFrame {
                id,
                t: r[1],
                pixels: vec![px],
                theta_r: r[2],
                mode: DisplacementMode::from_mu(r[3] as u8)?,
            }),
        }
    }
    Ok(frames)
}

fn pair_half(t: &RigidTransform) -> [f64; 7] {
    let q = quat(&t.rotation);
    [t.translation.x, t.translation.y, t.translation.z, q[0], q[1], q[2], q[3]]
}

pub fn write_pairs(path: &Path, pairs: &[PosePair]) -> CliResult<()> {
    write_csv(
        path,
        &PAIR_HEADER,
        pairs.iter().map(|p| {
            let mut row = [0.0; 14];
            row[..7].copy_from_slice(&pair_half(&p.t_c));
            row[7..].copy_from_slice(&pair_half(&p.t_d));
            row
        }),
    )
}

/// Pairs with the default covariance.
pub fn read_pairs(path: &Path) -> CliResult<Vec<PosePair>> {
    read_csv(path, &PAIR_HEADER)?
        .into_iter()
        .map(|r| {
            let tc = RigidTransform::new(rotation(&r[3..7])?, Vec3::new(r[0], r[1], r[2]));
            let td = RigidTransform::new(rotation(&r[10..14])?, Vec3::new(r[7], r[8], r[9]));
            Ok(PosePair::with_default_covariance(tc, td))
        })
        .collect()
}

/// Cloud with optional per-point surface labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledCloud {
    pub cloud: PointCloud,
    pub labels: Option<Vec<i32>>,
}

/// Label codes stored in the `label` property.
pub const LABEL_PIPE: i32 = 0;
pub const LABEL_BED: i32 = 1;
pub const LABEL_CLUTTER: i32 = 2;

pub fn write_ply(path: &Path, cloud: &PointCloud, labels: Option<&[i32]>, comment: &str) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply\nformat ascii 1.0\ncomment {comment}\nelement vertex {}", cloud.len())?;
    writeln!(w, "property double x\nproperty double y\nproperty double z\nproperty int frame")?;
    if labels.is_some() {
        writeln!(w, "property int label")?;
    }
    writeln!(w, "end_header")?;
    for (i, (p, f)) in cloud.points.iter().zip(&cloud.frame_ids).enumerate() {
        match labels {
            Some(l) => writeln!(w, "{} {} {} {} {}", p.x, p.y, p.z, f, l[i])?,
            None => writeln!(w, "{} {} {} {}", p.x, p.y, p.z, f)?,
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_ply(path: &Path) -> CliResult<LabeledCloud> {
    let bad = |line: usize, msg: &str| usage(format!("{}: line {line}: {msg}", path.display()));
    let file = File::open(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let mut next = || -> CliResult<Option<(usize, String)>> {
        match lines.next() {
            Some((i, l)) => Ok(Some((i + 1, l?))),
            None => Ok(None),
        }
    };
    match next()? {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(bad(1, "not a PLY file")),
    }
    let mut count = None;
    let mut props = Vec::new();
    loop {
        let (n, l) = next()?.ok_or_else(|| bad(0, "missing end_header"))?;
        let tok: Vec<&str> = l.split_whitespace().collect();
        match tok.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] | ["comment", ..] | [] => {}
            ["format", ..] => return Err(bad(n, "only ASCII PLY is supported")),
            ["element", "vertex", c] => count = Some(c.parse::<usize>().map_err(|_| bad(n, "bad vertex count"))?),
            ["element", ..] => return Err(bad(n, "only a vertex element is supported")),
            ["property", _, name] if count.is_some() => props.push(name.to_string()),
            _ => return Err(bad(n, "unexpected header line")),
        }
    }
    let count = count.ok_or_else(|| bad(0, "no vertex element"))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let (ix, iy, iz) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(bad(0, "vertex needs x, y and z")),
    };
    let (iframe, ilabel) = (col("frame"), col("label"));
    let mut out = LabeledCloud { cloud: PointCloud::default(), labels: ilabel.map(|_| Vec::with_capacity(count)) };
    for _ in 0..count {
        let (n, l) = next()?.ok_or_else(|| bad(0, "fewer vertices than declared"))?;
        let v: Vec<f64> = l
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad(n, "non-numeric vertex field"))?;
        if v.len() != props.len() {
            return Err(bad(n, "wrong number of vertex fields"));
        }
        let frame = iframe.map_or(0, |i| v[i] as usize);
        out.cloud.push(Vec3::new(v[ix], v[iy], v[iz]), frame, 1.0);
        if let (Some(i), Some(labels)) = (ilabel, out.labels.as_mut()) {
            labels.push(v[i] as i32);
        }
    }
    Ok(out)
}

/// Light-plane calibration: the zero-angle plane and, for rotating modes, the
/// servo axis. Camera frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneFile {
    pub plane: PlaneCoeffs,
    pub axis: Option<AxisFile>,
}

/// `a x + b y + c z + d = 0` with a unit normal; `d` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisFile {
    pub direction: [f64; 3],
    pub point_m: [f64; 3],
}

impl PlaneFile {
    pub fn new(plane: &LightPlane, axis: Option<&RotationAxis>) -> Self {
        Self {
            plane: PlaneCoeffs { a: plane.a, b: plane.b, c: plane.c, d: plane.d },
            axis: axis.map(|a| AxisFile { direction: a.direction.into(), point_m: a.point.into() }),
        }
    }

    pub fn plane(&self) -> CliResult<LightPlane> {
        let p = &self.plane;
        Ok(LightPlane::new(p.a, p.b, p.c, p.d, Frame::Camera)?)
    }

    pub fn axis(&self) -> CliResult<Option<RotationAxis>> {
        self.axis
            .map(|a| {
                let direction = Vec3::from(a.direction);
                if !(direction.norm() > 0.0) {
                    return Err(usage("plane file: axis direction must be nonzero"));
                }
                Ok(RotationAxis { direction: direction.normalize(), point: Vec3::from(a.point_m), fallback: false })
            })
            .transpose()
    }
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = toml::to_string(value).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("{}: {}", path.display(), e.message())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use uwsl_core::geom::exp_so3;

    #[test]
    fn traces_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let imu = vec![
            ImuSample { t: 0.0, accel: Vec3::new(0.1, -1e-17, 3.0), gyro: Vec3::new(1.0 / 3.0, 0.0, -2.5e-5) },
            ImuSample { t: 0.005, accel: Vec3::new(f64::MIN_POSITIVE, 1.0, 2.0), gyro: Vec3::zeros() },
        ];
        let p = dir.path().join("imu.csv");
        write_imu(&p, &imu).unwrap();
        assert_eq!(read_imu(&p).unwrap(), imu);
        let first = std::fs::read_to_string(&p).unwrap();
        assert!(first.starts_with("t_s,ax_mps2,"));

        let dvl = vec![DvlSample { t: 0.1, velocity: Vec3::new(3e-3, 0.0, -1e-4), healthy: false }];
        let p = dir.path().join("dvl.csv");
        write_dvl(&p, &dvl).unwrap();
        assert_eq!(read_dvl(&p).unwrap(), dvl);
    }

    #[test]
    fn frames_group_by_id() {
        let dir = tempfile::tempdir().unwrap();
        let frames = vec![
            StripeFrame { id: 0, t: 0.0, pixels: vec![Vec2::new(1.5, 2.0), Vec2::new(3.0, 4.25)], theta_r: 0.1, mode: DisplacementMode::Uniform },
            StripeFrame { id: 2, t: 0.2, pixels: vec![Vec2::new(5.0, 6.0)], theta_r: -0.1, mode: DisplacementMode::Fused },
        ];
        let p = dir.path().join("frames.csv");
        write_frames(&p, &frames).unwrap();
        assert_eq!(read_frames(&p).unwrap(), frames);
    }

    #[test]
    fn poses_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let poses = vec![FramePose {
            t: 1.25,
            camera_to_world: RigidTransform::new(exp_so3(&Vec3::new(0.3, -1.0, 2.0)), Vec3::new(0.1, 0.2, 0.5)),
        }];
        let p = dir.path().join("poses.csv");
        write_poses(&p, &poses).unwrap();
        let back = read_poses(&p).unwrap();
        assert_eq!(back[0].t, 1.25);
        assert!(back[0].camera_to_world.max_abs_diff(&poses[0].camera_to_world) < 1e-15);
    }

    #[test]
    fn ply_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut cloud = PointCloud::default();
        cloud.push(Vec3::new(0.1, -0.2, 1.0 / 3.0), 4, 1.0);
        cloud.push(Vec3::new(1e-20, 0.0, 5.0), 7, 1.0);
        let p = dir.path().join("c.ply");
        write_ply(&p, &cloud, Some(&[LABEL_PIPE, LABEL_CLUTTER]), "test").unwrap();
        let back = read_ply(&p).unwrap();
        assert_eq!(back.cloud, cloud);
        assert_eq!(back.labels, Some(vec![LABEL_PIPE, LABEL_CLUTTER]));

        std::fs::write(&p, "ply\nformat binary_little_endian 1.0\nend_header\n").unwrap();
        assert_eq!(read_ply(&p).unwrap_err().exit_code(), 2);
        std::fs::write(&p, "ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nend_header\n1 2 3\n").unwrap();
        assert!(read_ply(&p).is_err());
    }

    #[test]
    fn header_mismatch_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        std::fs::write(&p, "t,ax\n0,1\n").unwrap();
        assert_eq!(read_imu(&p).unwrap_err().exit_code(), 2);
    }
}
