//! Numerical core of an underwater structured-light scanning toolkit.

pub mod camera;
pub mod error;
pub mod fixtures;
pub mod fusion;
pub mod geom;
pub mod handeye;
pub mod lightplane;
pub mod metrology;
pub mod recon;
pub mod scenario;
pub mod sim;
pub mod edicp;

pub use camera::{DistortionCoeffs, Intrinsics, UndistortConfig, Vec2};
pub use error::{Error, Result};
pub use fusion::{DvlSample, FilterConfig, ImuSample, NavState};
pub use geom::{
    Mat3, Quaternion, RigidTransform, RotationMatrix, RotationQuaternion, Twist, Vec3,
};
pub use lightplane::{Frame, LightPlane, PlaneEstimate, RotationAxis};
pub use recon::{DisplacementMode, FramePose, PointCloud, StripeFrame};
