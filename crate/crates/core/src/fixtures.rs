//! Reference hardware parameters used as defaults and test fixtures.

use crate::camera::{DistortionCoeffs, Intrinsics};
use crate::geom::{orthonormalize, Mat3, RigidTransform, Vec3};

pub fn intrinsics() -> Intrinsics {
    Intrinsics {
        fx: 1638.3357,
        fy: 1638.1088,
        skew: -0.2092,
        cx: 1023.1856,
        cy: 750.9077,
    }
}

pub fn distortion() -> DistortionCoeffs {
    DistortionCoeffs { k1: 0.2196, k2: 0.2110, k3: 0.9013, l1: 0.0066, l2: -0.0095 }
}

/// Image size matching [`intrinsics`], pixels.
pub const IMAGE_WIDTH: u32 = 2048;
pub const IMAGE_HEIGHT: u32 = 1536;

/// Housing glass thickness, meters.
pub const GLASS_THICKNESS: f64 = 5e-3;
pub const GLASS_INDEX: f64 = 1.458;
/// Reported optimal lens-to-glass distance, meters.
pub const GLASS_D0: f64 = 0.545e-3;

/// Nominal scan speed, m/s.
pub const SCAN_SPEED: f64 = 3e-3;

/// Pixel gating threshold around detected pipeline edges.
pub const EDGE_GATE_PX: f64 = 300.0;

/// The published rotation blocks have determinant −1 and are rounded to three
/// decimals. The third row is negated to get a proper rotation, which is then
/// projected onto SO(3).
fn from_rows(rows: [[f64; 4]; 3]) -> RigidTransform {
    let m = Mat3::new(
        rows[0][0], rows[0][1], rows[0][2], rows[1][0], rows[1][1], rows[1][2], -rows[2][0],
        -rows[2][1], -rows[2][2],
    );
    let r = orthonormalize(&m).expect("reference rotation is proper");
    RigidTransform::new(r, Vec3::new(rows[0][3], rows[1][3], rows[2][3]))
}

/// Camera–DVL extrinsic.
pub fn camera_dvl_extrinsic() -> RigidTransform {
    from_rows([
        [0.976, -0.032, -0.217, -0.124],
        [0.025, 0.999, -0.037, -0.015],
        [-0.218, -0.030, -0.976, 0.116],
    ])
}

/// Camera–IMU extrinsic.
pub fn camera_imu_extrinsic() -> RigidTransform {
    from_rows([
        [-0.996, 0.073, -0.049, -0.007],
        [0.071, -0.997, 0.026, -0.002],
        [0.051, -0.022, -0.998, -0.110],
    ])
}
